//! Snapshot-fork transactions.
//!
//! `Store::transact` copies the parent's live pairs into a private in-memory
//! child store. The child and parent then change independently. `commit`
//! makes the parent's contents equal to the child's: identical pairs stay,
//! the child's value wins on conflicting keys, child-only pairs are added and
//! parent-only pairs are deleted. The merge holds every parent slot
//! exclusively, so readers see either the whole merge or none of it.

use std::sync::atomic::Ordering;

use crate::error::{Error, Result};
use crate::storage::StorageSpec;
use crate::store::{apply, GcMode, Hooks, Mutation, Store, StoreConfig};

const CHILD_WRITE_BUFFER: usize = 64 << 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Active,
    Committed,
    Discarded,
}

/// Counts of parent mutations made by a commit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub inserted: u64,
    pub updated: u64,
    pub deleted: u64,
    pub unchanged: u64,
}

impl MergeStats {
    pub fn changes(&self) -> u64 {
        self.inserted + self.updated + self.deleted
    }
}

/// A forked child of a store. Dropping an active transaction discards it.
pub struct Transaction<'p> {
    parent: &'p Store,
    child: Option<Store>,
    state: TxnState,
    snapshot_epoch: u64,
}

impl std::fmt::Debug for Transaction<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transaction")
            .field("parent", &self.parent.name())
            .field("state", &self.state)
            .field("snapshot_epoch", &self.snapshot_epoch)
            .finish()
    }
}

impl Store {
    /// Forks the store. The child starts with exactly the pairs visible now.
    pub fn transact(&self) -> Result<Transaction<'_>> {
        let inner = self.inner();
        inner.check_open()?;
        if inner.txn_child && !inner.config.allow_nested_transactions {
            return Err(Error::NestedTransaction);
        }
        let pairs = {
            let _w: Vec<_> = inner.slots.iter().map(|s| s.writer.lock()).collect();
            let guards = inner.read_guards();
            inner.pairs_under(&guards)?
        };
        let snapshot_epoch = inner.commits.load(Ordering::Acquire);
        let config = StoreConfig {
            write_buffer_bytes: CHILD_WRITE_BUFFER,
            read_cache_bytes: 0,
            gc_mode: GcMode::Inline,
            ..inner.config.clone()
        };
        let child = Store::open_inner(StorageSpec::InMemory, self.name(), config, true)?;
        for (k, v) in &pairs {
            child.insert(k, v)?;
        }
        Ok(Transaction {
            parent: self,
            child: Some(child),
            state: TxnState::Active,
            snapshot_epoch,
        })
    }
}

impl<'p> Transaction<'p> {
    pub fn state(&self) -> TxnState {
        self.state
    }

    /// Number of commits the parent had completed when this fork was taken.
    pub fn snapshot_epoch(&self) -> u64 {
        self.snapshot_epoch
    }

    pub fn parent(&self) -> &'p Store {
        self.parent
    }

    /// The child store; `InvalidHandle` once committed or discarded.
    pub fn store(&self) -> Result<&Store> {
        self.child.as_ref().ok_or(Error::InvalidHandle)
    }

    pub fn insert(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.store()?.insert(key, value)
    }

    pub fn update(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.store()?.update(key, value)
    }

    pub fn replace(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.store()?.replace(key, value)
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.store()?.delete(key)
    }

    pub fn lookup(&self, key: &[u8]) -> Result<Vec<u8>> {
        self.store()?.lookup(key)
    }

    pub fn next(&self, key: Option<&[u8]>) -> Result<(Vec<u8>, Vec<u8>)> {
        self.store()?.next(key)
    }

    pub fn prev(&self, key: Option<&[u8]>) -> Result<(Vec<u8>, Vec<u8>)> {
        self.store()?.prev(key)
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.store()?.len())
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.store()?.is_empty())
    }

    pub fn pairs(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.store()?.pairs()
    }

    /// Forks the child. Fails with `NestedTransaction` unless the parent was
    /// opened with `allow_nested_transactions`.
    pub fn transact(&self) -> Result<Transaction<'_>> {
        self.store()?.transact()
    }

    /// Merges the child into the parent and invalidates the handle.
    pub fn commit(&mut self) -> Result<MergeStats> {
        let child = self.child.take().ok_or(Error::InvalidHandle)?;
        self.state = TxnState::Committed;
        let wanted = child.pairs()?;
        child.inner().mark_closed();
        drop(child);
        let stats = merge(self.parent, wanted)?;
        self.parent.inner().commits.fetch_add(1, Ordering::AcqRel);
        if self.parent.config().gc_mode != GcMode::Manual {
            for slot in 0..self.parent.config().n_active {
                self.parent.maybe_trigger_gc(slot);
            }
        }
        Ok(stats)
    }

    /// Drops the child without touching the parent.
    pub fn discard(&mut self) -> Result<()> {
        let child = self.child.take().ok_or(Error::InvalidHandle)?;
        child.inner().mark_closed();
        self.state = TxnState::Discarded;
        Ok(())
    }
}

impl Drop for Transaction<'_> {
    fn drop(&mut self) {
        if self.state == TxnState::Active {
            let _ = self.discard();
        }
    }
}

/// Makes the parent's contents equal `wanted` (sorted by key).
fn merge(parent: &Store, wanted: Vec<(Vec<u8>, Vec<u8>)>) -> Result<MergeStats> {
    let inner = parent.inner();
    inner.check_open()?;
    let _gc: Vec<_> = inner.slots.iter().map(|s| s.gc_lock.lock()).collect();
    let _w: Vec<_> = inner.slots.iter().map(|s| s.writer.lock()).collect();
    let mut strands: Vec<_> = inner.slots.iter().map(|s| s.mounted.write()).collect();

    // Merge-join of the two sorted key sequences.
    let current = inner.entries_under();
    let mut ops: Vec<(Vec<u8>, Option<Vec<u8>>)> = Vec::new();
    let mut stats = MergeStats::default();
    let mut have = current.into_iter().peekable();
    let mut want = wanted.into_iter().peekable();
    loop {
        let order = match (have.peek(), want.peek()) {
            (None, None) => break,
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (Some((hk, _)), Some((wk, _))) => hk.cmp(wk),
        };
        match order {
            std::cmp::Ordering::Less => {
                let (k, _) = have.next().unwrap();
                stats.deleted += 1;
                ops.push((k, None));
            }
            std::cmp::Ordering::Greater => {
                let (k, v) = want.next().unwrap();
                stats.inserted += 1;
                ops.push((k, Some(v)));
            }
            std::cmp::Ordering::Equal => {
                let (_, addr) = have.next().unwrap();
                let (k, v) = want.next().unwrap();
                let rec = strands[addr.slot as usize].read(addr)?;
                if rec.value.as_deref() == Some(v.as_slice()) {
                    stats.unchanged += 1;
                } else {
                    stats.updated += 1;
                    ops.push((k, Some(v)));
                }
            }
        }
    }

    let half = ops.len() / 2;
    for (i, (key, value)) in ops.iter().enumerate() {
        if i == half {
            Hooks::fire(&inner.hooks.merge_midpoint, i as u32);
        }
        let slot_id = inner.route(key);
        let slot = &inner.slots[slot_id as usize];
        let m = match value {
            Some(v) => Mutation::Update(v),
            None => Mutation::Delete,
        };
        let guard = &mut strands[slot_id as usize];
        match apply(guard, &slot.index, key, m) {
            Err(Error::StrandFull { .. }) => {
                inner.collect_exclusive(slot_id, &mut *guard)?;
                apply(guard, &slot.index, key, m)?;
            }
            other => other?,
        }
    }
    Ok(stats)
}
