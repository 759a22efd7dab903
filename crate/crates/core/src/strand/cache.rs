use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use super::codec::Record;

const SHARDS: usize = 8;
// Rough per-entry bookkeeping beyond the key and value bytes.
const ENTRY_OVERHEAD: usize = 96;

type CacheKey = (u64, u64);

struct Shard {
    entries: LruCache<CacheKey, Arc<Record>>,
    bytes: usize,
}

/// Byte-bounded LRU of decoded records, keyed by (generation, offset).
pub(crate) struct ReadCache {
    shards: Vec<Mutex<Shard>>,
    shard_budget: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn cost(rec: &Record) -> usize {
    ENTRY_OVERHEAD + rec.key.len() + rec.value.as_ref().map_or(0, Vec::len)
}

impl ReadCache {
    pub fn new(budget_bytes: usize) -> Self {
        let shards = if budget_bytes == 0 { 0 } else { SHARDS };
        ReadCache {
            shards: (0..shards)
                .map(|_| {
                    Mutex::new(Shard {
                        entries: LruCache::unbounded(),
                        bytes: 0,
                    })
                })
                .collect(),
            shard_budget: budget_bytes / SHARDS,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    fn shard(&self, key: CacheKey) -> Option<&Mutex<Shard>> {
        if self.shards.is_empty() {
            return None;
        }
        // Records are at least 25 bytes apart, so drop the low bits.
        let i = ((key.1 >> 5) ^ key.0) as usize % self.shards.len();
        Some(&self.shards[i])
    }

    pub fn get(&self, generation: u64, offset: u64) -> Option<Arc<Record>> {
        let key = (generation, offset);
        let found = self
            .shard(key)
            .and_then(|s| s.lock().entries.get(&key).cloned());
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, generation: u64, offset: u64, rec: Arc<Record>) {
        let key = (generation, offset);
        let Some(shard) = self.shard(key) else {
            return;
        };
        let size = cost(&rec);
        if size > self.shard_budget {
            return;
        }
        let mut s = shard.lock();
        if let Some(old) = s.entries.put(key, rec) {
            s.bytes -= cost(&old);
        }
        s.bytes += size;
        while s.bytes > self.shard_budget {
            match s.entries.pop_lru() {
                Some((_, evicted)) => s.bytes -= cost(&evicted),
                None => break,
            }
        }
    }

    pub fn clear(&self) {
        for shard in &self.shards {
            let mut s = shard.lock();
            s.entries.clear();
            s.bytes = 0;
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn resident_bytes(&self) -> usize {
        self.shards.iter().map(|s| s.lock().bytes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_budget_never_hits() {
        let c = ReadCache::new(0);
        c.insert(0, 64, Arc::new(Record::new("k", "v")));
        assert!(c.get(0, 64).is_none());
    }

    #[test]
    fn stays_within_budget() {
        let c = ReadCache::new(8 * 1024);
        for i in 0..1000u64 {
            c.insert(0, 64 + i * 32, Arc::new(Record::new(i.to_le_bytes(), vec![0u8; 100])));
        }
        assert!(c.resident_bytes() <= 8 * 1024);
        // Most recent entries survive.
        assert!(c.get(0, 64 + 999 * 32).is_some());
    }

    #[test]
    fn generation_separates_entries() {
        let c = ReadCache::new(1 << 20);
        c.insert(1, 64, Arc::new(Record::new("a", "1")));
        assert!(c.get(2, 64).is_none());
        assert_eq!(c.get(1, 64).unwrap().value.as_deref(), Some(&b"1"[..]));
        assert_eq!((c.hits(), c.misses()), (1, 1));
    }
}
