//! Backing regions for strands.
//!
//! A [`Region`] is a fixed-size byte range that strands write sequentially and
//! read randomly. Regions live either in a directory (one `strand-<id>.dat`
//! file each) or in memory. Trimmed ranges always read back as zeros.
//!
//! A region tolerates one writer and any number of readers at a time.
//! Trimming needs exclusive access; callers arrange that, the region does not
//! check it.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;

use crate::error::{Error, Result};

pub const MIN_REGION_CAPACITY: u64 = 4096;

const ZERO_CHUNK: usize = 1 << 20;

/// Where a store keeps its regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StorageSpec {
    Directory(PathBuf),
    InMemory,
}

impl StorageSpec {
    pub fn directory(path: impl Into<PathBuf>) -> Self {
        StorageSpec::Directory(path.into())
    }

    pub fn is_persistent(&self) -> bool {
        matches!(self, StorageSpec::Directory(_))
    }

    pub fn dir(&self) -> Option<&Path> {
        match self {
            StorageSpec::Directory(p) => Some(p),
            StorageSpec::InMemory => None,
        }
    }

    /// Path of the file backing `region_id`, if file-backed.
    pub fn region_path(&self, region_id: u32) -> Option<PathBuf> {
        self.dir().map(|d| d.join(format!("strand-{region_id}.dat")))
    }

    /// Creates the directory (if any) and checks it accepts writes.
    pub fn prepare(&self) -> Result<()> {
        let Some(dir) = self.dir() else {
            return Ok(());
        };
        let unusable = |source| Error::SpecUnusable {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(unusable)?;
        let meta = fs::metadata(dir).map_err(unusable)?;
        if !meta.is_dir() {
            return Err(unusable(io::Error::new(
                io::ErrorKind::NotADirectory,
                "not a directory",
            )));
        }
        let probe = dir.join(".flashmap-probe");
        File::create(&probe).map_err(unusable)?;
        let _ = fs::remove_file(&probe);
        Ok(())
    }
}

enum Backing {
    // Grown lazily; bytes past the end read as zero.
    Memory(RwLock<Vec<u8>>),
    File { file: File, path: PathBuf },
}

pub struct Region {
    id: u32,
    capacity: u64,
    backing: Backing,
    trims: AtomicU64,
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let backing = match &self.backing {
            Backing::Memory(_) => "memory".to_string(),
            Backing::File { path, .. } => path.display().to_string(),
        };
        f.debug_struct("Region")
            .field("id", &self.id)
            .field("capacity", &self.capacity)
            .field("backing", &backing)
            .finish()
    }
}

/// Opens (or creates) region `region_id` of exactly `capacity` bytes.
///
/// An existing file of the same size is reopened with its contents intact;
/// a fresh region reads as zeros.
pub fn open_region(spec: &StorageSpec, region_id: u32, capacity: u64) -> Result<Region> {
    if capacity < MIN_REGION_CAPACITY {
        return Err(Error::InvalidConfig(format!(
            "region capacity {capacity} is below the {MIN_REGION_CAPACITY} byte minimum"
        )));
    }
    let backing = match spec {
        StorageSpec::InMemory => Backing::Memory(RwLock::new(Vec::new())),
        StorageSpec::Directory(dir) => {
            spec.prepare()?;
            let path = spec.region_path(region_id).expect("directory spec");
            let file = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(&path)
                .map_err(|source| Error::SpecUnusable {
                    path: dir.clone(),
                    source,
                })?;
            let len = file.metadata()?.len();
            if len == 0 {
                file.set_len(capacity)?;
            } else if len != capacity {
                return Err(Error::CapacityMismatch {
                    region: region_id,
                    expected: capacity,
                    found: len,
                });
            }
            Backing::File { file, path }
        }
    };
    Ok(Region {
        id: region_id,
        capacity,
        backing,
        trims: AtomicU64::new(0),
    })
}

impl Region {
    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn is_persistent(&self) -> bool {
        matches!(self.backing, Backing::File { .. })
    }

    /// Number of `trim_range` calls that have completed on this region.
    pub fn trim_count(&self) -> u64 {
        self.trims.load(Ordering::Relaxed)
    }

    fn check(&self, offset: u64, len: u64) -> Result<()> {
        match offset.checked_add(len) {
            Some(end) if end <= self.capacity => Ok(()),
            _ => Err(Error::OutOfBounds {
                offset,
                len,
                capacity: self.capacity,
            }),
        }
    }

    /// Writes `bytes` at `offset`. The caller owns ordering discipline.
    pub fn write_seq(&self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.check(offset, bytes.len() as u64)?;
        if bytes.is_empty() {
            return Ok(());
        }
        match &self.backing {
            Backing::Memory(buf) => {
                let mut buf = buf.write();
                let start = offset as usize;
                let end = start + bytes.len();
                if buf.len() < end {
                    buf.resize(end, 0);
                }
                buf[start..end].copy_from_slice(bytes);
            }
            Backing::File { file, .. } => file.write_all_at(bytes, offset)?,
        }
        Ok(())
    }

    /// Fills `out` with the bytes at `offset`.
    pub fn read_into(&self, offset: u64, out: &mut [u8]) -> Result<()> {
        self.check(offset, out.len() as u64)?;
        match &self.backing {
            Backing::Memory(buf) => {
                let buf = buf.read();
                let start = (offset as usize).min(buf.len());
                let end = (offset as usize + out.len()).min(buf.len());
                let present = end - start;
                out[..present].copy_from_slice(&buf[start..end]);
                out[present..].fill(0);
            }
            Backing::File { file, .. } => file.read_exact_at(out, offset)?,
        }
        Ok(())
    }

    pub fn read_at(&self, offset: u64, length: u64) -> Result<Vec<u8>> {
        self.check(offset, length)?;
        let mut out = vec![0u8; length as usize];
        self.read_into(offset, &mut out)?;
        Ok(out)
    }

    /// Marks a range stale. It reads as zeros afterwards.
    pub fn trim_range(&self, offset: u64, length: u64) -> Result<()> {
        self.check(offset, length)?;
        match &self.backing {
            Backing::Memory(buf) => {
                let mut buf = buf.write();
                let start = offset as usize;
                let end = start + length as usize;
                if end >= buf.len() {
                    if start < buf.len() {
                        buf.truncate(start);
                    }
                } else {
                    buf[start..end].fill(0);
                }
                if buf.is_empty() {
                    buf.shrink_to_fit();
                }
            }
            Backing::File { file, .. } => {
                if length > 0 && !punch_hole(file, offset, length) {
                    zero_fill(file, offset, length)?;
                }
            }
        }
        self.trims.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Makes staged writes durable. A no-op for in-memory regions.
    pub fn flush(&self) -> Result<()> {
        if let Backing::File { file, .. } = &self.backing {
            file.sync_data()?;
        }
        Ok(())
    }
}

#[cfg(target_os = "linux")]
fn punch_hole(file: &File, offset: u64, length: u64) -> bool {
    use std::os::fd::AsRawFd;
    // SAFETY: fallocate only reads its integer arguments; the fd is owned by `file`.
    let rc = unsafe {
        libc::fallocate(
            file.as_raw_fd(),
            libc::FALLOC_FL_PUNCH_HOLE | libc::FALLOC_FL_KEEP_SIZE,
            offset as libc::off_t,
            length as libc::off_t,
        )
    };
    rc == 0
}

#[cfg(not(target_os = "linux"))]
fn punch_hole(_file: &File, _offset: u64, _length: u64) -> bool {
    false
}

fn zero_fill(file: &File, offset: u64, length: u64) -> io::Result<()> {
    let zeros = vec![0u8; ZERO_CHUNK.min(length as usize)];
    let mut pos = offset;
    let end = offset + length;
    while pos < end {
        let n = ((end - pos) as usize).min(zeros.len());
        file.write_all_at(&zeros[..n], pos)?;
        pos += n as u64;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIB: u64 = 1 << 20;

    #[test]
    fn fresh_memory_region_reads_zero() {
        let r = open_region(&StorageSpec::InMemory, 0, MIB).unwrap();
        assert_eq!(r.read_at(0, 16).unwrap(), vec![0u8; 16]);
        assert_eq!(r.capacity(), MIB);
    }

    #[test]
    fn capacity_below_minimum_rejected() {
        assert!(matches!(
            open_region(&StorageSpec::InMemory, 0, 100),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn file_region_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StorageSpec::directory(dir.path().join("s"));
        let data: Vec<u8> = (0..4096u32).map(|i| (i * 7) as u8).collect();
        {
            let r = open_region(&spec, 3, 64 * MIB).unwrap();
            r.write_seq(8192, &data).unwrap();
            r.flush().unwrap();
        }
        let r = open_region(&spec, 3, 64 * MIB).unwrap();
        assert_eq!(r.read_at(8192, 4096).unwrap(), data);
        assert!(dir.path().join("s/strand-3.dat").exists());
    }

    #[test]
    fn reopen_with_other_capacity_fails() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StorageSpec::directory(dir.path());
        open_region(&spec, 0, MIB).unwrap();
        assert!(matches!(
            open_region(&spec, 0, 2 * MIB),
            Err(Error::CapacityMismatch { region: 0, .. })
        ));
    }

    #[test]
    fn unwritable_directory_is_unusable() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("plain-file");
        fs::write(&blocker, b"x").unwrap();
        let spec = StorageSpec::directory(blocker.join("nested"));
        assert!(matches!(
            open_region(&spec, 0, MIB),
            Err(Error::SpecUnusable { .. })
        ));
    }

    #[test]
    fn bounds_are_enforced() {
        let r = open_region(&StorageSpec::InMemory, 0, 4096).unwrap();
        assert!(matches!(
            r.write_seq(4095, &[1, 2]),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(r.read_at(4096, 1), Err(Error::OutOfBounds { .. })));
        assert!(matches!(r.trim_range(4000, 97), Err(Error::OutOfBounds { .. })));
        assert!(matches!(
            r.read_at(u64::MAX, 2),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn full_trim_zeroes_and_counts() {
        for spec in specs() {
            let r = open_region(&spec.0, 0, MIB).unwrap();
            r.write_seq(0, &vec![0xAB; 65536]).unwrap();
            r.flush().unwrap();
            r.trim_range(0, MIB).unwrap();
            assert_eq!(r.trim_count(), 1);
            assert!(r.read_at(0, 65536).unwrap().iter().all(|&b| b == 0));
            r.write_seq(10, b"again").unwrap();
            assert_eq!(r.read_at(10, 5).unwrap(), b"again");
        }
    }

    #[test]
    fn trimming_middle_keeps_outer_thirds() {
        for spec in specs() {
            let r = open_region(&spec.0, 1, 3 * 4096).unwrap();
            let data: Vec<u8> = (0..3 * 4096u32).map(|i| (i % 251) as u8 + 1).collect();
            r.write_seq(0, &data).unwrap();
            r.trim_range(4096, 4096).unwrap();
            let got = r.read_at(0, 3 * 4096).unwrap();
            assert_eq!(&got[..4096], &data[..4096]);
            assert!(got[4096..8192].iter().all(|&b| b == 0));
            assert_eq!(&got[8192..], &data[8192..]);
        }
    }

    #[test]
    fn flush_is_idempotent() {
        for spec in specs() {
            let r = open_region(&spec.0, 0, MIB).unwrap();
            r.flush().unwrap();
            r.flush().unwrap();
        }
    }

    #[test]
    fn sequential_chunks_then_random_reads() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let chunk = 64 * 1024;
        let count = 1000u64;
        let dir = tempfile::tempdir().unwrap();
        let spec = StorageSpec::directory(dir.path());
        let r = open_region(&spec, 0, chunk * count).unwrap();
        let mut shadow = vec![0u8; (chunk * count) as usize];
        rng.fill(&mut shadow[..]);
        for i in 0..count {
            let s = (i * chunk) as usize;
            r.write_seq(i * chunk, &shadow[s..s + chunk as usize]).unwrap();
        }
        r.flush().unwrap();
        for _ in 0..2000 {
            let off = rng.gen_range(0..(chunk * count - 4096));
            let got = r.read_at(off, 4096).unwrap();
            assert_eq!(got, &shadow[off as usize..off as usize + 4096]);
        }
    }

    struct Spec(StorageSpec, #[allow(dead_code)] Option<tempfile::TempDir>);

    fn specs() -> Vec<Spec> {
        let dir = tempfile::tempdir().unwrap();
        vec![
            Spec(StorageSpec::InMemory, None),
            Spec(StorageSpec::directory(dir.path()), Some(dir)),
        ]
    }

    #[derive(Clone, Debug)]
    enum Op {
        Write(u64, Vec<u8>),
        Trim(u64, u64),
        Flush,
    }

    const CAP: u64 = 16 * 1024;

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..CAP, prop::collection::vec(any::<u8>(), 1..2048)).prop_map(|(o, mut b)| {
                b.truncate((CAP - o) as usize);
                Op::Write(o, b)
            }),
            (0..CAP, 0..CAP).prop_map(|(o, l)| Op::Trim(o, l.min(CAP - o))),
            Just(Op::Flush),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Both backings agree with a plain byte array under the same sequence.
        #[test]
        fn matches_shadow_array(ops in prop::collection::vec(op(), 1..40)) {
            let specs = specs();
            let regions: Vec<Region> =
                specs.iter().map(|s| open_region(&s.0, 9, CAP).unwrap()).collect();
            let mut shadow = vec![0u8; CAP as usize];
            for op in &ops {
                match op {
                    Op::Write(o, b) => {
                        shadow[*o as usize..*o as usize + b.len()].copy_from_slice(b);
                        for r in &regions { r.write_seq(*o, b).unwrap(); }
                    }
                    Op::Trim(o, l) => {
                        shadow[*o as usize..(*o + *l) as usize].fill(0);
                        for r in &regions { r.trim_range(*o, *l).unwrap(); }
                    }
                    Op::Flush => for r in &regions { r.flush().unwrap(); },
                }
            }
            for r in &regions {
                prop_assert_eq!(r.read_at(0, CAP).unwrap(), shadow.clone());
            }
        }
    }
}
