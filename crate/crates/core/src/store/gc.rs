//! Copy-forward garbage collection.
//!
//! A collection copies the live records of a mounted strand into a spare,
//! mounts the spare in its place and trims the old strand, which becomes the
//! next spare. A record is live iff the index still points at it.
//!
//! Phase one copies without blocking writers. Phase two takes the slot's
//! writer lock, copies whatever was appended meanwhile (tombstones included,
//! so a key deleted mid-collection stays deleted after a crash), then swaps
//! strands and moves index entries under the `mounted` write lock.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::index::Index;
use crate::strand::{Address, Record, Strand};

use super::{Hooks, Inner};

/// Outcome of one collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcReport {
    pub slot: u32,
    /// Region that was collected (now a spare).
    pub from_region: u32,
    /// Region now mounted at the slot.
    pub to_region: u32,
    pub generation: u64,
    pub records_scanned: u64,
    pub records_copied: u64,
    pub tail_before: u64,
    pub tail_after: u64,
}

type Relocation = (Vec<u8>, Address, Address);

#[derive(Default)]
struct CopyStats {
    scanned: u64,
    copied: u64,
}

fn copy_live(
    records: impl Iterator<Item = (Address, Record)>,
    to: &Strand,
    is_live: impl Fn(&[u8], Address) -> bool,
    keep_tombstones: bool,
    relocs: &mut Vec<Relocation>,
    stats: &mut CopyStats,
) -> Result<()> {
    for (addr, rec) in records {
        stats.scanned += 1;
        if rec.is_tombstone() {
            if keep_tombstones {
                to.append_parts(None, &rec.key, None)?;
                stats.copied += 1;
            }
            continue;
        }
        if !is_live(&rec.key, addr) {
            continue;
        }
        let new = to.append_parts(None, &rec.key, rec.value.as_deref())?;
        relocs.push((rec.key, addr, new));
        stats.copied += 1;
    }
    Ok(())
}

fn relocate(index: &mut Index, relocs: Vec<Relocation>) {
    for (key, from, to) in relocs {
        if index.get(&key) == Some(from) {
            index.update(&key, to);
        }
    }
}

fn corrupt(slot: u32, at: u64) -> Error {
    Error::CorruptStore(format!(
        "slot {slot}: undecodable record at offset {at} below the tail"
    ))
}

impl Inner {
    pub(crate) fn take_spare(&self, wait: bool) -> Result<Arc<Strand>> {
        let mut pool = self.spares.lock();
        loop {
            if let Some(s) = pool.pop() {
                return Ok(s);
            }
            if !wait {
                return Err(Error::SpareBusy);
            }
            self.spare_returned.wait(&mut pool);
        }
    }

    pub(crate) fn return_spare(&self, strand: Arc<Strand>) {
        self.spares.lock().push(strand);
        self.spare_returned.notify_all();
    }

    // Trims a strand that left service and hands it back to the pool.
    fn retire(&self, strand: Arc<Strand>) -> Result<()> {
        match strand.reset() {
            Ok(()) => {
                self.return_spare(strand);
                Ok(())
            }
            Err(e) => {
                log::error!(
                    "could not reset region {}; it stays out of the spare pool: {e}",
                    strand.region().id()
                );
                Err(e)
            }
        }
    }

    /// Collects `slot_id`. The caller holds the slot's `gc_lock`.
    pub(crate) fn collect_holding(&self, slot_id: u32, wait: bool) -> Result<GcReport> {
        let spare = self.take_spare(wait)?;
        match self.copy_forward(slot_id, &spare) {
            Ok((report, old)) => {
                self.gc_runs.fetch_add(1, Ordering::Relaxed);
                self.retire(old)?;
                Ok(report)
            }
            Err(e) => {
                let _ = self.retire(spare);
                Err(e)
            }
        }
    }

    fn copy_forward(&self, slot_id: u32, spare: &Arc<Strand>) -> Result<(GcReport, Arc<Strand>)> {
        let slot = &self.slots[slot_id as usize];
        let old = slot.mounted.read().clone();
        spare.assign_slot(slot_id);
        let mut relocs = Vec::new();
        let mut stats = CopyStats::default();
        let is_live = |key: &[u8], addr: Address| slot.index.read().get(key) == Some(addr);

        let mut scan = old.scan()?;
        copy_live(scan.by_ref(), spare, is_live, false, &mut relocs, &mut stats)?;
        if scan.hit_corruption() {
            return Err(corrupt(slot_id, scan.position()));
        }
        let resume = scan.position();
        drop(scan);

        Hooks::fire(&self.hooks.gc_between_phases, slot_id);

        let _w = slot.writer.lock();
        let mut rest = old.scan_from(resume)?;
        copy_live(rest.by_ref(), spare, is_live, true, &mut relocs, &mut stats)?;
        if rest.hit_corruption() {
            return Err(corrupt(slot_id, rest.position()));
        }
        let tail_before = rest.position();
        drop(rest);

        let generation = old.generation().max(spare.generation()) + 1;
        spare.mount(slot_id, generation)?;
        {
            let mut mounted = slot.mounted.write();
            relocate(&mut slot.index.write(), relocs);
            *mounted = spare.clone();
        }
        slot.gc_floor.store(spare.tail(), Ordering::Relaxed);
        let report = GcReport {
            slot: slot_id,
            from_region: old.region().id(),
            to_region: spare.region().id(),
            generation,
            records_scanned: stats.scanned,
            records_copied: stats.copied,
            tail_before,
            tail_after: spare.tail(),
        };
        Ok((report, old))
    }

    /// Collects `slot_id` while the caller holds its writer lock and the
    /// `mounted` write guard. Used by commit when a merge fills a strand.
    pub(crate) fn collect_exclusive(&self, slot_id: u32, mounted: &mut Arc<Strand>) -> Result<GcReport> {
        let slot = &self.slots[slot_id as usize];
        let spare = self.take_spare(false)?;
        let old = mounted.clone();
        spare.assign_slot(slot_id);
        let mut relocs = Vec::new();
        let mut stats = CopyStats::default();
        let copied = (|| {
            let mut index = slot.index.write();
            let mut scan = old.scan()?;
            let live = |key: &[u8], addr: Address| index.get(key) == Some(addr);
            copy_live(scan.by_ref(), &spare, live, false, &mut relocs, &mut stats)?;
            if scan.hit_corruption() {
                return Err(corrupt(slot_id, scan.position()));
            }
            let tail_before = scan.position();
            drop(scan);
            let generation = old.generation().max(spare.generation()) + 1;
            spare.mount(slot_id, generation)?;
            relocate(&mut index, std::mem::take(&mut relocs));
            Ok((tail_before, generation))
        })();
        let (tail_before, generation) = match copied {
            Ok(v) => v,
            Err(e) => {
                let _ = self.retire(spare);
                return Err(e);
            }
        };
        *mounted = spare.clone();
        slot.gc_floor.store(spare.tail(), Ordering::Relaxed);
        self.gc_runs.fetch_add(1, Ordering::Relaxed);
        self.retire(old.clone())?;
        Ok(GcReport {
            slot: slot_id,
            from_region: old.region().id(),
            to_region: spare.region().id(),
            generation,
            records_scanned: stats.scanned,
            records_copied: stats.copied,
            tail_before,
            tail_after: spare.tail(),
        })
    }
}

/// Starts one collector thread per spare strand.
pub(super) fn spawn_workers(inner: &Arc<Inner>) -> Vec<JoinHandle<()>> {
    let (tx, rx) = crossbeam_channel::unbounded::<u32>();
    *inner.gc_tx.lock() = Some(tx);
    (0..inner.config.m_spare)
        .map(|i| {
            let inner = Arc::clone(inner);
            let rx = rx.clone();
            std::thread::Builder::new()
                .name(format!("flashmap-gc-{i}"))
                .spawn(move || {
                    lower_priority();
                    for slot_id in rx.iter() {
                        let slot = &inner.slots[slot_id as usize];
                        if inner.check_open().is_ok() {
                            let _gc = slot.gc_lock.lock();
                            if let Err(e) = inner.collect_holding(slot_id, true) {
                                log::warn!("collection of slot {slot_id} failed: {e}");
                            }
                        }
                        slot.gc_queued.store(false, Ordering::Release);
                    }
                })
                .expect("spawn collector thread")
        })
        .collect()
}

#[cfg(target_os = "linux")]
fn lower_priority() {
    // Best effort; collectors should yield to foreground operations.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, 19);
    }
}

#[cfg(not(target_os = "linux"))]
fn lower_priority() {}
