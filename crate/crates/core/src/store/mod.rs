//! The key-value store: N hash-routed active strands, M spare strands for
//! copy-forward garbage collection, and an in-memory ordered index.
//!
//! Each slot has four locks, always taken in this order:
//!
//! 1. `gc_lock`: one collection of the slot at a time.
//! 2. `writer`: serializes mutations (and the final phase of a collection).
//! 3. `mounted`: readers hold it shared while they resolve an address and
//!    read the record; a collection holds it exclusively only to swap strands
//!    and relocate index entries.
//! 4. `index`: short critical sections around the map itself.
//!
//! Operations that span slots (`next`, `prev`, commit, fork) take the same
//! lock on every slot in ascending slot order.

mod config;
mod gc;
pub mod manifest;
mod route;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::Sender;
use parking_lot::{Condvar, Mutex, RwLock, RwLockReadGuard};

pub use config::{GcMode, StoreConfig};
pub use gc::GcReport;
pub use manifest::Manifest;
pub use route::HASH_NAME;

use crate::error::{Error, Result};
use crate::index::{self, Index, SlotMark};
use crate::storage::{open_region, StorageSpec};
use crate::strand::{Address, Record, Strand, StrandStats, SPARE_SLOT, STRAND_HEADER_LEN};
use manifest::write_atomically;

pub const INDEX_SNAPSHOT_FILE: &str = "index.snap";

type Hook = Arc<dyn Fn(u32) + Send + Sync>;

#[derive(Default)]
pub(crate) struct Hooks {
    pub(crate) gc_between_phases: Mutex<Option<Hook>>,
    pub(crate) merge_midpoint: Mutex<Option<Hook>>,
}

impl Hooks {
    pub(crate) fn fire(hook: &Mutex<Option<Hook>>, arg: u32) {
        let h = hook.lock().clone();
        if let Some(h) = h {
            h(arg);
        }
    }
}

pub(crate) struct Slot {
    pub(crate) gc_lock: Mutex<()>,
    pub(crate) writer: Mutex<()>,
    pub(crate) mounted: RwLock<Arc<Strand>>,
    pub(crate) index: RwLock<Index>,
    pub(crate) gc_queued: AtomicBool,
    // Tail right after the last collection.
    pub(crate) gc_floor: AtomicU64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Mutation<'a> {
    Insert(&'a [u8]),
    Update(&'a [u8]),
    Replace(&'a [u8]),
    Delete,
}

pub(crate) struct Inner {
    spec: StorageSpec,
    name: String,
    pub(crate) config: StoreConfig,
    pub(crate) slots: Vec<Slot>,
    pub(crate) spares: Mutex<Vec<Arc<Strand>>>,
    pub(crate) spare_returned: Condvar,
    pub(crate) gc_tx: Mutex<Option<Sender<u32>>>,
    closed: AtomicBool,
    pub(crate) hooks: Hooks,
    pub(crate) gc_runs: AtomicU64,
    pub(crate) commits: AtomicU64,
    pub(crate) txn_child: bool,
}

/// Point-in-time view of one slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotInfo {
    pub slot: u32,
    pub region: u32,
    pub generation: u64,
    pub tail: u64,
    pub capacity: u64,
    pub keys: usize,
    pub stats: StrandStats,
}

impl SlotInfo {
    pub fn utilization(&self) -> f64 {
        self.tail as f64 / self.capacity as f64
    }
}

/// Handle to an open store.
///
/// The handle is `Sync`; share it between threads by reference or in an
/// `Arc`. Buffered appends reach storage on [`Store::flush`] and
/// [`Store::close`]. Dropping an unclosed store stops its collectors but
/// persists nothing, which is also how a crash looks to the next `open`.
pub struct Store {
    inner: Arc<Inner>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("name", &self.inner.name)
            .field("spec", &self.inner.spec)
            .field("closed", &self.inner.closed.load(Ordering::Relaxed))
            .finish()
    }
}

impl Store {
    /// Creates or reopens the store `name` on `spec`.
    ///
    /// Reopening loads `index.snap` when it matches every strand's generation
    /// and tail, and otherwise rebuilds the index by scanning the strands.
    pub fn open(spec: StorageSpec, name: &str, config: StoreConfig) -> Result<Store> {
        Self::open_inner(spec, name, config, false)
    }

    /// Opens an existing directory store using the settings in its manifest.
    pub fn open_existing(dir: impl AsRef<Path>, name: &str, config: StoreConfig) -> Result<Store> {
        let dir = dir.as_ref();
        let manifest = Manifest::load(dir)?.ok_or_else(|| {
            Error::CorruptStore(format!("no manifest in {}", dir.display()))
        })?;
        Self::open(StorageSpec::directory(dir), name, manifest.apply_to(config))
    }

    pub(crate) fn open_inner(
        spec: StorageSpec,
        name: &str,
        config: StoreConfig,
        txn_child: bool,
    ) -> Result<Store> {
        config.validate()?;
        spec.prepare()?;
        let manifest = match spec.dir() {
            Some(dir) => Manifest::load(dir)?,
            None => None,
        };
        if let Some(m) = &manifest {
            m.check(name, &config)?;
        }
        let fresh = manifest.is_none();
        let (mounted, spares) = assemble_strands(&spec, &config, fresh)?;
        let indexes = if fresh {
            if let Some(dir) = spec.dir() {
                remove_if_exists(&dir.join(INDEX_SNAPSHOT_FILE))?;
                Manifest::new(name, &config).save(dir)?;
            }
            (0..config.n_active).map(|_| Index::new()).collect()
        } else {
            load_index(&spec, &config, &mounted)?
        };

        let slots = mounted
            .into_iter()
            .zip(indexes)
            .map(|(strand, index)| Slot {
                gc_lock: Mutex::new(()),
                writer: Mutex::new(()),
                gc_floor: AtomicU64::new(strand.tail()),
                mounted: RwLock::new(strand),
                index: RwLock::new(index),
                gc_queued: AtomicBool::new(false),
            })
            .collect();

        let inner = Arc::new(Inner {
            spec,
            name: name.to_string(),
            config,
            slots,
            spares: Mutex::new(spares),
            spare_returned: Condvar::new(),
            gc_tx: Mutex::new(None),
            closed: AtomicBool::new(false),
            hooks: Hooks::default(),
            gc_runs: AtomicU64::new(0),
            commits: AtomicU64::new(0),
            txn_child,
        });
        let workers = if inner.config.gc_mode == GcMode::Background {
            gc::spawn_workers(&inner)
        } else {
            Vec::new()
        };
        Ok(Store {
            inner,
            workers: Mutex::new(workers),
        })
    }

    /// Removes a directory store's files. Other files in the directory stay.
    pub fn destroy(spec: &StorageSpec) -> Result<()> {
        let Some(dir) = spec.dir() else {
            return Ok(());
        };
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let ours = name == manifest::MANIFEST_FILE
                || name == INDEX_SNAPSHOT_FILE
                || (name.starts_with("strand-") && name.ends_with(".dat"));
            if ours {
                fs::remove_file(entry.path())?;
            }
        }
        Ok(())
    }

    pub(crate) fn inner(&self) -> &Arc<Inner> {
        &self.inner
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn config(&self) -> &StoreConfig {
        &self.inner.config
    }

    pub fn storage(&self) -> &StorageSpec {
        &self.inner.spec
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    /// Slot that `key` routes to.
    pub fn route(&self, key: &[u8]) -> u32 {
        self.inner.route(key)
    }

    /// Stores `(key, value)`, replacing any existing value.
    pub fn insert(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.mutate(key, Mutation::Insert(value))
    }

    /// Like `insert`, but a new version is chained to the one it supersedes.
    pub fn update(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.mutate(key, Mutation::Update(value))
    }

    /// Updates an existing key; fails with `ReplaceMissing` otherwise.
    pub fn replace(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.mutate(key, Mutation::Replace(value))
    }

    /// Deletes an existing key by appending a tombstone; `DeleteMissing` otherwise.
    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.inner.mutate(key, Mutation::Delete)
    }

    pub fn lookup(&self, key: &[u8]) -> Result<Vec<u8>> {
        self.inner.check_open()?;
        let rec = self.inner.lookup_record(key)?;
        Ok(rec.value.clone().expect("index never points at tombstones"))
    }

    pub fn contains(&self, key: &[u8]) -> Result<bool> {
        match self.lookup(key) {
            Ok(_) => Ok(true),
            Err(Error::KeyNotFound) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Pair with the smallest key greater than `key`; with `None`, the pair
    /// with the largest key.
    pub fn next(&self, key: Option<&[u8]>) -> Result<(Vec<u8>, Vec<u8>)> {
        self.inner.check_open()?;
        self.inner.neighbour(key, true)
    }

    /// Pair with the largest key less than `key`; with `None`, the pair with
    /// the smallest key.
    pub fn prev(&self, key: Option<&[u8]>) -> Result<(Vec<u8>, Vec<u8>)> {
        self.inner.check_open()?;
        self.inner.neighbour(key, false)
    }

    /// Number of live keys.
    pub fn len(&self) -> usize {
        self.inner.slots.iter().map(|s| s.index.read().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All live pairs in key order.
    pub fn pairs(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.inner.check_open()?;
        let guards: Vec<_> = self.inner.slots.iter().map(|s| s.mounted.read()).collect();
        self.inner.pairs_under(&guards)
    }

    /// Current address of `key`.
    pub fn locate(&self, key: &[u8]) -> Result<Address> {
        self.inner.check_open()?;
        self.inner.slot_of(key).index.read().lookup(key)
    }

    /// Raw record at `addr`, including tombstones and superseded versions.
    pub fn read_record(&self, addr: Address) -> Result<Record> {
        self.inner.check_open()?;
        let slot = self
            .inner
            .slots
            .get(addr.slot as usize)
            .ok_or(Error::BadAddress {
                slot: addr.slot,
                offset: addr.offset,
            })?;
        let strand = slot.mounted.read();
        strand.read(addr).map(|r| (*r).clone())
    }

    /// Drains every write buffer and syncs storage.
    pub fn flush(&self) -> Result<()> {
        self.inner.check_open()?;
        self.inner.flush_all()
    }

    /// Flushes, persists the index snapshot and invalidates the handle.
    pub fn close(&self) -> Result<()> {
        if self.inner.closed.swap(true, Ordering::AcqRel) {
            return Err(Error::InvalidHandle);
        }
        self.stop_workers();
        let inner = &self.inner;
        let _gc: Vec<_> = inner.slots.iter().map(|s| s.gc_lock.lock()).collect();
        let _w: Vec<_> = inner.slots.iter().map(|s| s.writer.lock()).collect();
        inner.flush_all()?;
        if let Some(dir) = inner.spec.dir() {
            let marks: Vec<SlotMark> = inner
                .slots
                .iter()
                .map(|s| {
                    let strand = s.mounted.read();
                    SlotMark {
                        generation: strand.generation(),
                        tail: strand.tail(),
                    }
                })
                .collect();
            let shards: Vec<_> = inner.slots.iter().map(|s| s.index.read()).collect();
            let refs: Vec<&Index> = shards.iter().map(|g| &**g).collect();
            let bytes = index::encode_snapshot(&marks, &refs);
            write_atomically(dir, INDEX_SNAPSHOT_FILE, &bytes)?;
        }
        Ok(())
    }

    fn stop_workers(&self) {
        self.inner.gc_tx.lock().take();
        for h in self.workers.lock().drain(..) {
            let _ = h.join();
        }
    }

    /// Copy-forward collection of `slot` into a spare strand.
    pub fn gc(&self, slot: u32) -> Result<GcReport> {
        self.inner.check_open()?;
        self.inner.check_slot(slot)?;
        let s = &self.inner.slots[slot as usize];
        let _gc = s.gc_lock.lock();
        self.inner.collect_holding(slot, false)
    }

    /// Collects every active slot in turn.
    pub fn gc_all(&self) -> Result<Vec<GcReport>> {
        (0..self.inner.config.n_active)
            .map(|slot| {
                let s = &self.inner.slots[slot as usize];
                let _gc = s.gc_lock.lock();
                self.inner.check_open()?;
                self.inner.collect_holding(slot, true)
            })
            .collect()
    }

    /// Schedules (or, outside background mode, runs) a collection of `slot`
    /// if it is past the trigger threshold and a spare is free.
    pub fn maybe_trigger_gc(&self, slot: u32) -> bool {
        if self.inner.check_open().is_err() || self.inner.check_slot(slot).is_err() {
            return false;
        }
        self.inner.maybe_trigger(slot)
    }

    /// Blocks until no background collection is queued or running.
    pub fn wait_for_gc(&self) {
        loop {
            let busy = self
                .inner
                .slots
                .iter()
                .any(|s| s.gc_queued.load(Ordering::Acquire) || s.gc_lock.is_locked());
            if !busy {
                return;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    /// Completed collections since open.
    pub fn gc_count(&self) -> u64 {
        self.inner.gc_runs.load(Ordering::Relaxed)
    }

    pub fn spare_count(&self) -> usize {
        self.inner.spares.lock().len()
    }

    pub fn slot_info(&self, slot: u32) -> Result<SlotInfo> {
        self.inner.check_slot(slot)?;
        let s = &self.inner.slots[slot as usize];
        let strand = s.mounted.read();
        Ok(SlotInfo {
            slot,
            region: strand.region().id(),
            generation: strand.generation(),
            tail: strand.tail(),
            capacity: strand.capacity(),
            keys: s.index.read().len(),
            stats: strand.stats(),
        })
    }

    pub fn slots(&self) -> Vec<SlotInfo> {
        (0..self.inner.config.n_active)
            .map(|s| self.slot_info(s).expect("slot in range"))
            .collect()
    }

    /// Record bytes held by active strands, excluding strand headers.
    pub fn strand_bytes(&self) -> u64 {
        self.slots().iter().map(|s| s.tail - STRAND_HEADER_LEN).sum()
    }

    /// Estimated index memory per live key.
    pub fn memory_per_key(&self) -> Result<f64> {
        let (mut bytes, mut keys) = (0usize, 0usize);
        for s in &self.inner.slots {
            let idx = s.index.read();
            bytes += idx.estimated_bytes();
            keys += idx.len();
        }
        if keys == 0 {
            return Err(Error::EmptyIndex);
        }
        Ok(bytes as f64 / keys as f64)
    }

    /// Test hook run by a collection between its lock-free copy and its
    /// locked catch-up phase.
    #[doc(hidden)]
    pub fn set_gc_phase_hook(&self, hook: Option<Arc<dyn Fn(u32) + Send + Sync>>) {
        *self.inner.hooks.gc_between_phases.lock() = hook;
    }

    /// Test hook run halfway through a commit's merge, with the number of
    /// changes applied so far.
    #[doc(hidden)]
    pub fn set_merge_hook(&self, hook: Option<Arc<dyn Fn(u32) + Send + Sync>>) {
        *self.inner.hooks.merge_midpoint.lock() = hook;
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

impl Inner {
    pub(crate) fn check_open(&self) -> Result<()> {
        if self.closed.load(Ordering::Acquire) {
            Err(Error::InvalidHandle)
        } else {
            Ok(())
        }
    }

    pub(crate) fn mark_closed(&self) {
        self.closed.store(true, Ordering::Release);
    }

    fn check_slot(&self, slot: u32) -> Result<()> {
        if slot < self.config.n_active {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "slot {slot} out of range 0..{}",
                self.config.n_active
            )))
        }
    }

    pub(crate) fn route(&self, key: &[u8]) -> u32 {
        route::route(key, self.config.hash_seed, self.config.n_active)
    }

    fn slot_of(&self, key: &[u8]) -> &Slot {
        &self.slots[self.route(key) as usize]
    }

    fn mutate(&self, key: &[u8], m: Mutation<'_>) -> Result<()> {
        self.check_open()?;
        if key.is_empty() {
            return Err(Error::EmptyKey);
        }
        let slot_id = self.route(key);
        let slot = &self.slots[slot_id as usize];
        let mut attempts = 0;
        loop {
            let (res, generation, tail) = {
                let _w = slot.writer.lock();
                let strand = slot.mounted.read().clone();
                let res = apply(&strand, &slot.index, key, m);
                (res, strand.generation(), strand.tail())
            };
            match res {
                Err(Error::StrandFull { .. }) if attempts < 2 => {
                    attempts += 1;
                    self.reclaim(slot_id, generation)?;
                }
                Ok(()) => {
                    if tail >= self.config.trigger_bytes() && self.config.gc_mode != GcMode::Manual {
                        self.maybe_trigger(slot_id);
                    }
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Full-strand backstop: collect `slot` now unless someone already did
    /// since `seen_generation`.
    fn reclaim(&self, slot_id: u32, seen_generation: u64) -> Result<()> {
        let slot = &self.slots[slot_id as usize];
        let _gc = slot.gc_lock.lock();
        if slot.mounted.read().generation() != seen_generation {
            return Ok(());
        }
        self.collect_holding(slot_id, true).map(|_| ())
    }

    fn maybe_trigger(&self, slot_id: u32) -> bool {
        let slot = &self.slots[slot_id as usize];
        let tail = slot.mounted.read().tail();
        let floor = slot.gc_floor.load(Ordering::Relaxed).min(tail);
        let size = self.config.strand_size;
        // Require fresh growth since the last collection so a slot whose live
        // data alone exceeds the threshold is not collected back to back.
        if tail < self.config.trigger_bytes() || tail - floor < (size - floor) / 4 {
            return false;
        }
        if self.spares.lock().is_empty() {
            return false;
        }
        match self.config.gc_mode {
            GcMode::Background => {
                if slot.gc_queued.swap(true, Ordering::AcqRel) {
                    return false;
                }
                let sent = self
                    .gc_tx
                    .lock()
                    .as_ref()
                    .is_some_and(|tx| tx.send(slot_id).is_ok());
                if !sent {
                    slot.gc_queued.store(false, Ordering::Release);
                }
                sent
            }
            GcMode::Inline | GcMode::Manual => {
                let Some(_gc) = slot.gc_lock.try_lock() else {
                    return false;
                };
                match self.collect_holding(slot_id, false) {
                    Ok(_) => true,
                    Err(e) => {
                        log::debug!("inline collection of slot {slot_id} skipped: {e}");
                        false
                    }
                }
            }
        }
    }

    pub(crate) fn lookup_record(&self, key: &[u8]) -> Result<Arc<Record>> {
        let slot = self.slot_of(key);
        let strand = slot.mounted.read();
        let addr = slot.index.read().lookup(key)?;
        strand.read(addr)
    }

    fn neighbour(&self, key: Option<&[u8]>, forward: bool) -> Result<(Vec<u8>, Vec<u8>)> {
        let guards: Vec<_> = self.slots.iter().map(|s| s.mounted.read()).collect();
        // next(None) wants the largest key and prev(Some) the largest below.
        let want_max = forward == key.is_none();
        let mut best: Option<(Vec<u8>, Address)> = None;
        for slot in &self.slots {
            let idx = slot.index.read();
            let found = if forward { idx.next(key) } else { idx.prev(key) };
            let Ok((k, a)) = found else {
                continue;
            };
            let better = match &best {
                None => true,
                Some((b, _)) => (k > b.as_slice()) == want_max,
            };
            if better {
                best = Some((k.to_vec(), a));
            }
        }
        let (k, addr) = best.ok_or(Error::Exhausted)?;
        let rec = guards[addr.slot as usize].read(addr)?;
        Ok((k, rec.value.clone().expect("live record")))
    }

    /// Every live (key, address) pair, sorted, for slots whose `mounted`
    /// locks the caller holds.
    pub(crate) fn entries_under(&self) -> Vec<(Vec<u8>, Address)> {
        let mut out = Vec::new();
        for slot in &self.slots {
            out.extend(slot.index.read().iter().map(|(k, a)| (k.to_vec(), a)));
        }
        out.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub(crate) fn pairs_under<G>(&self, strands: &[G]) -> Result<Vec<(Vec<u8>, Vec<u8>)>>
    where
        G: std::ops::Deref<Target = Arc<Strand>>,
    {
        self.entries_under()
            .into_iter()
            .map(|(k, a)| {
                let rec = strands[a.slot as usize].read(a)?;
                Ok((k, rec.value.clone().expect("live record")))
            })
            .collect()
    }

    fn flush_all(&self) -> Result<()> {
        for slot in &self.slots {
            let strand = slot.mounted.read().clone();
            strand.flush()?;
        }
        Ok(())
    }

    pub(crate) fn read_guards(&self) -> Vec<RwLockReadGuard<'_, Arc<Strand>>> {
        self.slots.iter().map(|s| s.mounted.read()).collect()
    }
}

/// Appends the record for `m` and updates the index. The caller holds the
/// slot's writer lock (or equivalent exclusion).
pub(crate) fn apply(strand: &Strand, index: &RwLock<Index>, key: &[u8], m: Mutation<'_>) -> Result<()> {
    let prev = match m {
        Mutation::Insert(_) => None,
        _ => index.read().get(key),
    };
    let (link, value) = match m {
        Mutation::Insert(v) => (None, Some(v)),
        Mutation::Update(v) => (prev.map(|a| a.offset), Some(v)),
        Mutation::Replace(v) => (Some(prev.ok_or(Error::ReplaceMissing)?.offset), Some(v)),
        Mutation::Delete => (Some(prev.ok_or(Error::DeleteMissing)?.offset), None),
    };
    let addr = strand.append_parts(link, key, value)?;
    let mut idx = index.write();
    if value.is_some() {
        idx.update(key, addr);
    } else {
        idx.remove(key);
    }
    Ok(())
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e.into()),
    }
}

/// Opens all N + M regions and decides which strand is mounted at each slot.
fn assemble_strands(
    spec: &StorageSpec,
    config: &StoreConfig,
    fresh: bool,
) -> Result<(Vec<Arc<Strand>>, Vec<Arc<Strand>>)> {
    let n = config.n_active;
    let total = n + config.m_spare;
    let opts = config.strand_options();
    let mut claims: Vec<Option<Arc<Strand>>> = vec![None; n as usize];
    let mut spares = Vec::new();

    let blank = |region: crate::storage::Region, slot: u32| -> Result<Arc<Strand>> {
        region.trim_range(0, region.capacity())?;
        Ok(Arc::new(Strand::create(region, slot, 0, opts)?))
    };

    for id in 0..total {
        let region = open_region(spec, id, config.strand_size)?;
        if fresh {
            let slot = if id < n { id } else { SPARE_SLOT };
            let s = blank(region, slot)?;
            if id < n {
                claims[id as usize] = Some(s);
            } else {
                spares.push(s);
            }
            continue;
        }
        match Strand::read_header(&region)? {
            None => spares.push(blank(region, SPARE_SLOT)?),
            Some(h) if h.is_spare() => {
                let s = Arc::new(Strand::open(region, h, opts));
                // A spare may hold a partial copy from an interrupted collection.
                if !s.adopt_tail(STRAND_HEADER_LEN)? {
                    s.reset()?;
                }
                spares.push(s);
            }
            Some(h) if h.slot < n => {
                let s = Arc::new(Strand::open(region, h, opts));
                let entry = &mut claims[h.slot as usize];
                match entry.take() {
                    None => *entry = Some(s),
                    Some(other) => {
                        // Two claimants: a collection swapped but did not
                        // finish trimming. The newer generation wins.
                        let (winner, loser) = match s.generation().cmp(&other.generation()) {
                            std::cmp::Ordering::Greater => (s, other),
                            std::cmp::Ordering::Less => (other, s),
                            std::cmp::Ordering::Equal => {
                                return Err(Error::CorruptStore(format!(
                                    "regions {} and {} both hold slot {} generation {}",
                                    s.region().id(),
                                    other.region().id(),
                                    h.slot,
                                    h.generation
                                )))
                            }
                        };
                        loser.reset()?;
                        spares.push(loser);
                        *entry = Some(winner);
                    }
                }
            }
            Some(h) => {
                return Err(Error::CorruptStore(format!(
                    "region {id} claims slot {} but the store has {n}",
                    h.slot
                )))
            }
        }
    }
    let mounted = claims
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or_else(|| Error::CorruptStore(format!("no strand holds slot {i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((mounted, spares))
}

/// Loads the saved index if it still matches the strands, else rebuilds it
/// by replaying every active strand in append order.
fn load_index(spec: &StorageSpec, config: &StoreConfig, mounted: &[Arc<Strand>]) -> Result<Vec<Index>> {
    if let Some(dir) = spec.dir() {
        let path = dir.join(INDEX_SNAPSHOT_FILE);
        let saved = match fs::read(&path) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        if let Some(bytes) = saved {
            // Appends after this open would make the snapshot stale.
            remove_if_exists(&path)?;
            match adopt_snapshot(&bytes, config, mounted) {
                Ok(Some(shards)) => return Ok(shards),
                Ok(None) => log::info!("index snapshot is stale; rebuilding from strands"),
                Err(e) => log::warn!("ignoring index snapshot: {e}"),
            }
        }
    }
    let mut shards = Vec::with_capacity(mounted.len());
    for strand in mounted {
        let mut idx = Index::new();
        strand.recover(|addr, rec| {
            if rec.is_tombstone() {
                idx.remove(&rec.key);
            } else {
                idx.update(&rec.key, addr);
            }
        })?;
        shards.push(idx);
    }
    Ok(shards)
}

fn adopt_snapshot(bytes: &[u8], config: &StoreConfig, mounted: &[Arc<Strand>]) -> Result<Option<Vec<Index>>> {
    let (index, marks) = index::decode_snapshot(bytes)?;
    if marks.len() != mounted.len() {
        return Ok(None);
    }
    for (strand, mark) in mounted.iter().zip(&marks) {
        if strand.generation() != mark.generation {
            return Ok(None);
        }
    }
    let mut shards: Vec<Index> = (0..mounted.len()).map(|_| Index::new()).collect();
    for (key, addr) in index.iter() {
        let slot = addr.slot as usize;
        if slot >= shards.len()
            || route::route(key, config.hash_seed, config.n_active) != addr.slot
            || addr.offset >= marks[slot].tail
        {
            return Ok(None);
        }
        shards[slot].update(key, addr);
    }
    for (strand, mark) in mounted.iter().zip(&marks) {
        if !strand.adopt_tail(mark.tail)? {
            return Ok(None);
        }
    }
    Ok(Some(shards))
}
