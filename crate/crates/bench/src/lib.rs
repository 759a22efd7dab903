//! Fixtures shared by the criterion benchmarks.

use flashmap::workload::{Bench, Phase, WorkloadSpec};
use flashmap::{GcMode, StorageSpec, Store, StoreConfig};

/// In-memory store holding `pairs` generated pairs of `value_size` bytes.
pub fn loaded_store(pairs: u64, value_size: usize) -> (Store, WorkloadSpec) {
    let spec = WorkloadSpec {
        phase: Phase::Populate,
        pair_count: pairs,
        value_size,
        verify: false,
        ..WorkloadSpec::default()
    };
    let base = StoreConfig {
        strand_size: 4 << 20,
        read_cache_bytes: 64 << 20,
        gc_mode: GcMode::Inline,
        ..StoreConfig::default()
    };
    let store = Store::open(StorageSpec::InMemory, "bench", spec.store_config(base)).expect("open");
    Bench::new(&store).run(&spec).expect("populate");
    (store, spec)
}
