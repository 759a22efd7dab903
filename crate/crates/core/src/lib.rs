//! FlashMap: a log-structured key-value store built from N append-only
//! strands plus M spare strands used for copy-forward garbage collection.
//!
//! ```
//! use flashmap::{StorageSpec, Store, StoreConfig};
//!
//! let config = StoreConfig { n_active: 4, strand_size: 1 << 20, ..StoreConfig::default() };
//! let store = Store::open(StorageSpec::InMemory, "demo", config)?;
//! store.insert(b"apple", b"red")?;
//! assert_eq!(store.lookup(b"apple")?, b"red");
//! assert_eq!(store.prev(None)?.0, b"apple");
//! store.close()?;
//! # Ok::<(), flashmap::Error>(())
//! ```

pub mod error;
pub mod index;
pub mod storage;
pub mod store;
pub mod strand;
pub mod txn;
pub mod workload;

pub use error::{Error, Result};
pub use index::Index;
pub use storage::{Region, StorageSpec};
pub use store::{GcMode, GcReport, Manifest, SlotInfo, Store, StoreConfig};
pub use strand::{Address, Record, Strand, StrandOptions};
pub use txn::{MergeStats, Transaction, TxnState};
