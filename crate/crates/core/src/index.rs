//! In-memory ordered index from key to record address.
//!
//! Keys compare as unsigned byte strings. With no key given, `prev` yields the
//! smallest entry and `next` the largest.

use std::collections::BTreeMap;
use std::ops::Bound;

use crate::error::{Error, Result};
use crate::strand::Address;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"FMI1";
pub const SNAPSHOT_VERSION: u32 = 1;

// B-tree leaves hold up to 11 entries and sit around 70% full under random
// inserts; a leaf is ~16 bytes of bookkeeping plus its key and value arrays.
const BTREE_CAPACITY: f64 = 11.0;
const BTREE_FILL: f64 = 0.7;
const BTREE_NODE_OVERHEAD: f64 = 16.0;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Index {
    entries: BTreeMap<Box<[u8]>, Address>,
    key_bytes: usize,
}

/// Per-slot strand state a snapshot was taken against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotMark {
    pub generation: u64,
    pub tail: u64,
}

impl Index {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Points `key` at `addr`, returning the address it replaced.
    pub fn update(&mut self, key: &[u8], addr: Address) -> Option<Address> {
        debug_assert!(!key.is_empty());
        if let Some(slot) = self.entries.get_mut(key) {
            return Some(std::mem::replace(slot, addr));
        }
        self.key_bytes += key.len();
        self.entries.insert(key.into(), addr);
        None
    }

    pub fn get(&self, key: &[u8]) -> Option<Address> {
        self.entries.get(key).copied()
    }

    pub fn lookup(&self, key: &[u8]) -> Result<Address> {
        self.get(key).ok_or(Error::KeyNotFound)
    }

    pub fn remove(&mut self, key: &[u8]) -> Option<Address> {
        let old = self.entries.remove(key);
        if old.is_some() {
            self.key_bytes -= key.len();
        }
        old
    }

    /// Smallest key strictly greater than `key`; the largest entry if `key` is `None`.
    pub fn next(&self, key: Option<&[u8]>) -> Result<(&[u8], Address)> {
        let found = match key {
            None => self.entries.last_key_value(),
            Some(k) => self
                .entries
                .range::<[u8], _>((Bound::Excluded(k), Bound::Unbounded))
                .next(),
        };
        found.map(|(k, a)| (&**k, *a)).ok_or(Error::Exhausted)
    }

    /// Largest key strictly less than `key`; the smallest entry if `key` is `None`.
    pub fn prev(&self, key: Option<&[u8]>) -> Result<(&[u8], Address)> {
        let found = match key {
            None => self.entries.first_key_value(),
            Some(k) => self
                .entries
                .range::<[u8], _>((Bound::Unbounded, Bound::Excluded(k)))
                .next_back(),
        };
        found.map(|(k, a)| (&**k, *a)).ok_or(Error::Exhausted)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = (&[u8], Address)> + '_ {
        self.entries.iter().map(|(k, a)| (&**k, *a))
    }

    /// Estimated heap bytes held by the index.
    pub fn estimated_bytes(&self) -> usize {
        let slot = (std::mem::size_of::<Box<[u8]>>() + std::mem::size_of::<Address>()) as f64;
        let per_leaf = BTREE_NODE_OVERHEAD + BTREE_CAPACITY * slot;
        let nodes = self.entries.len() as f64 / (BTREE_CAPACITY * BTREE_FILL);
        let key_allocs: usize = self.entries.keys().map(|k| malloc_size(k.len())).sum();
        (nodes * per_leaf) as usize + key_allocs
    }

    /// Average bytes of index memory per stored key.
    pub fn memory_per_key(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        Ok(self.estimated_bytes() as f64 / self.len() as f64)
    }

    pub fn serialize(&self, marks: &[SlotMark]) -> Vec<u8> {
        encode_snapshot(marks, &[self])
    }

    pub fn deserialize(bytes: &[u8]) -> Result<(Index, Vec<SlotMark>)> {
        decode_snapshot(bytes)
    }
}

fn malloc_size(n: usize) -> usize {
    // glibc: 8 bytes of chunk header, 16-byte granularity, 32-byte minimum.
    ((n + 8 + 15) & !15).max(32)
}

/// Encodes the union of `shards` (keys must be disjoint) as a snapshot.
pub fn encode_snapshot(marks: &[SlotMark], shards: &[&Index]) -> Vec<u8> {
    let count: usize = shards.iter().map(|s| s.len()).sum();
    let key_bytes: usize = shards.iter().map(|s| s.key_bytes).sum();
    let mut out = Vec::with_capacity(24 + marks.len() * 16 + count * 16 + key_bytes);
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(marks.len() as u32).to_le_bytes());
    for m in marks {
        out.extend_from_slice(&m.generation.to_le_bytes());
        out.extend_from_slice(&m.tail.to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for shard in shards {
        for (key, addr) in shard.iter() {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key);
            out.extend_from_slice(&addr.slot.to_le_bytes());
            out.extend_from_slice(&addr.offset.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::CorruptSnapshot("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(Index, Vec<SlotMark>)> {
    if bytes.len() < 4 + 4 + 4 + 8 + 4 {
        return Err(Error::CorruptSnapshot("truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32c::crc32c(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::CorruptSnapshot("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != SNAPSHOT_MAGIC {
        return Err(Error::CorruptSnapshot("bad magic"));
    }
    if r.u32()? != SNAPSHOT_VERSION {
        return Err(Error::CorruptSnapshot("unsupported version"));
    }
    let slots = r.u32()? as usize;
    let mut marks = Vec::with_capacity(slots.min(1 << 16));
    for _ in 0..slots {
        marks.push(SlotMark {
            generation: r.u64()?,
            tail: r.u64()?,
        });
    }
    let count = r.u64()?;
    let mut index = Index::new();
    for _ in 0..count {
        let key_len = r.u32()? as usize;
        if key_len == 0 {
            return Err(Error::CorruptSnapshot("empty key"));
        }
        let key = r.take(key_len)?;
        let addr = Address::new(r.u32()?, r.u64()?);
        if index.update(key, addr).is_some() {
            return Err(Error::CorruptSnapshot("duplicate key"));
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptSnapshot("trailing bytes"));
    }
    Ok((index, marks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn a(n: u64) -> Address {
        Address::new(0, n)
    }

    #[test]
    fn update_overwrites() {
        let mut idx = Index::new();
        idx.update(b"a", a(1));
        assert_eq!(idx.lookup(b"a").unwrap(), a(1));
        assert_eq!(idx.update(b"a", a(2)), Some(a(1)));
        assert_eq!(idx.lookup(b"a").unwrap(), a(2));
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn empty_lookup_and_idempotent_remove() {
        let mut idx = Index::new();
        assert!(matches!(idx.lookup(b"x"), Err(Error::KeyNotFound)));
        assert_eq!(idx.remove(b"x"), None);
        idx.update(b"x", a(5));
        idx.remove(b"x");
        assert!(matches!(idx.lookup(b"x"), Err(Error::KeyNotFound)));
        assert!(idx.is_empty());
    }

    #[test]
    fn neighbours_are_strict() {
        let mut idx = Index::new();
        idx.update(b"a", a(1));
        idx.update(b"c", a(2));
        assert_eq!(idx.next(Some(b"a")).unwrap().0, b"c");
        assert_eq!(idx.next(Some(b"b")).unwrap().0, b"c");
        assert!(matches!(idx.next(Some(b"c")), Err(Error::Exhausted)));
        assert_eq!(idx.prev(Some(b"c")).unwrap().0, b"a");
        assert_eq!(idx.prev(Some(b"b")).unwrap().0, b"a");
        assert!(matches!(idx.prev(Some(b"a")), Err(Error::Exhausted)));
    }

    #[test]
    fn omitted_key_picks_extremes() {
        let mut idx = Index::new();
        assert!(matches!(idx.prev(None), Err(Error::Exhausted)));
        assert!(matches!(idx.next(None), Err(Error::Exhausted)));
        idx.update(b"a", a(1));
        idx.update(b"c", a(2));
        assert_eq!(idx.prev(None).unwrap(), (&b"a"[..], a(1)));
        assert_eq!(idx.next(None).unwrap(), (&b"c"[..], a(2)));
    }

    #[test]
    fn byte_order_is_unsigned() {
        let mut idx = Index::new();
        idx.update(&[0x80], a(1));
        idx.update(&[0x7f], a(2));
        idx.update(&[0x7f, 0x00], a(3));
        let keys: Vec<_> = idx.iter().map(|(k, _)| k.to_vec()).collect();
        assert_eq!(keys, vec![vec![0x7f], vec![0x7f, 0x00], vec![0x80]]);
    }

    #[test]
    fn differential_against_btreemap() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        let mut idx = Index::new();
        let mut oracle: BTreeMap<Vec<u8>, Address> = BTreeMap::new();
        for i in 0..100_000u64 {
            let key: Vec<u8> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..8u8)).collect();
            match rng.gen_range(0..5) {
                0 | 1 => {
                    idx.update(&key, a(i));
                    oracle.insert(key.clone(), a(i));
                }
                2 => assert_eq!(idx.remove(&key), oracle.remove(&key)),
                3 => {
                    let want = oracle
                        .range::<Vec<u8>, _>((Bound::Excluded(&key), Bound::Unbounded))
                        .next()
                        .map(|(k, v)| (k.as_slice(), *v));
                    assert_eq!(idx.next(Some(&key)).ok(), want);
                }
                _ => {
                    let want = oracle
                        .range::<Vec<u8>, _>(..&key)
                        .next_back()
                        .map(|(k, v)| (k.as_slice(), *v));
                    assert_eq!(idx.prev(Some(&key)).ok(), want);
                }
            }
            assert_eq!(idx.get(&key), oracle.get(&key).copied());
        }
        assert_eq!(idx.len(), oracle.len());
    }

    fn random_index(n: usize, seed: u64) -> Index {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut idx = Index::new();
        for _ in 0..n {
            let key: Vec<u8> = (0..rng.gen_range(1..24)).map(|_| rng.gen()).collect();
            idx.update(&key, Address::new(rng.gen_range(0..32), rng.gen()));
        }
        idx
    }

    #[test]
    fn snapshot_round_trip() {
        let marks = vec![
            SlotMark {
                generation: 3,
                tail: 4096,
            },
            SlotMark {
                generation: 0,
                tail: 64,
            },
        ];
        let empty = Index::new();
        let (back, m) = Index::deserialize(&empty.serialize(&marks)).unwrap();
        assert!(back.is_empty());
        assert_eq!(m, marks);

        let idx = random_index(100_000, 9);
        let (back, m) = Index::deserialize(&idx.serialize(&marks)).unwrap();
        assert_eq!(m, marks);
        assert!(back.iter().eq(idx.iter()));
        assert_eq!(back, idx);
    }

    #[test]
    fn snapshot_bit_flips_detected() {
        let idx = random_index(200, 1);
        let bytes = idx.serialize(&[SlotMark {
            generation: 1,
            tail: 99,
        }]);
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        for _ in 0..2000 {
            let mut b = bytes.clone();
            let bit = rng.gen_range(0..b.len() * 8);
            b[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(
                Index::deserialize(&b),
                Err(Error::CorruptSnapshot(_))
            ));
        }
        assert!(Index::deserialize(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn memory_per_key_reports() {
        assert!(matches!(Index::new().memory_per_key(), Err(Error::EmptyIndex)));
        let mut idx = Index::new();
        idx.update(b"k", a(0));
        let m = idx.memory_per_key().unwrap();
        assert!(m.is_finite() && m > 0.0);
    }
}
