mod common;

use std::sync::Arc;

use common::lincheck::{self, is_linearizable, random_op, run_history, Event, Op, Ret};
use common::{contents, mem_store, Model};
use flashmap::workload::{Bench, Phase, WorkloadSpec};
use flashmap::{GcMode, StoreConfig};
use rand::{Rng, SeedableRng};

fn ev(thread: usize, op: Op, ret: Ret, invoked: u64, returned: u64) -> Event {
    Event { thread, op, ret, invoked, returned }
}

#[test]
fn checker_accepts_sequential_history() {
    let h = vec![
        ev(0, Op::Insert(0, 1), Ret::Done, 0, 1),
        ev(1, Op::Lookup(0), Ret::Value(lincheck::value(1)), 2, 3),
        ev(0, Op::Delete(0), Ret::Done, 4, 5),
        ev(1, Op::Prev(None), Ret::Exhausted, 6, 7),
    ];
    assert!(is_linearizable(&h, &Model::new()));
}

#[test]
fn checker_rejects_stale_read() {
    let h = vec![
        ev(0, Op::Insert(0, 1), Ret::Done, 0, 1),
        ev(1, Op::Lookup(0), Ret::NotFound, 2, 3),
    ];
    assert!(!is_linearizable(&h, &Model::new()));
}

#[test]
fn checker_allows_either_order_when_overlapping() {
    for seen in [Ret::NotFound, Ret::Value(lincheck::value(1))] {
        let h = vec![
            ev(0, Op::Insert(0, 1), Ret::Done, 0, 3),
            ev(1, Op::Lookup(0), seen, 1, 2),
        ];
        assert!(is_linearizable(&h, &Model::new()));
    }
}

#[test]
fn checker_rejects_impossible_pair() {
    // Two overlapping deletes of one key cannot both succeed.
    let mut initial = Model::new();
    initial.insert(lincheck::key(0), lincheck::value(0));
    let h = vec![
        ev(0, Op::Delete(0), Ret::Done, 0, 3),
        ev(1, Op::Delete(0), Ret::Done, 1, 2),
    ];
    assert!(!is_linearizable(&h, &initial));
}

#[test]
fn checker_respects_real_time_across_threads() {
    // b is written after a; a reader that then sees b must see a.
    let h = vec![
        ev(0, Op::Insert(0, 1), Ret::Done, 0, 1),
        ev(0, Op::Insert(1, 1), Ret::Done, 2, 3),
        ev(1, Op::Lookup(1), Ret::Value(lincheck::value(1)), 4, 5),
        ev(1, Op::Lookup(0), Ret::NotFound, 6, 7),
    ];
    assert!(!is_linearizable(&h, &Model::new()));
}

#[test]
fn random_small_histories_are_linearizable() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0x11ea);
    for round in 0..300 {
        let config = StoreConfig {
            n_active: rng.gen_range(1..4),
            m_spare: 1,
            strand_size: 1 << 16,
            write_buffer_bytes: 256,
            gc_mode: GcMode::Inline,
            ..StoreConfig::default()
        };
        let store = mem_store(config);
        let mut initial = Model::new();
        for k in 0..rng.gen_range(0..4u8) {
            store.insert(&lincheck::key(k), &lincheck::value(k)).unwrap();
            initial.insert(lincheck::key(k), lincheck::value(k));
        }
        let threads = rng.gen_range(2..=4);
        let programs: Vec<Vec<Op>> = (0..threads)
            .map(|_| (0..rng.gen_range(1..=6)).map(|_| random_op(&mut rng, 4)).collect())
            .collect();
        let history = run_history(&store, &programs);
        assert!(
            is_linearizable(&history, &initial),
            "round {round}: non-linearizable history {history:#?}"
        );
    }
}

#[test]
fn ordered_walks_during_background_gc() {
    let config = StoreConfig {
        n_active: 4,
        m_spare: 2,
        strand_size: 64 << 10,
        write_buffer_bytes: 4096,
        gc_mode: GcMode::Background,
        ..StoreConfig::default()
    };
    let store = Arc::new(mem_store(config));
    for i in 0..200u32 {
        store.insert(format!("{i:04}").as_bytes(), b"0").unwrap();
    }
    std::thread::scope(|s| {
        for t in 0..2u32 {
            let store = Arc::clone(&store);
            s.spawn(move || {
                for round in 0..200u32 {
                    for i in (t..200).step_by(2) {
                        store.update(format!("{i:04}").as_bytes(), &round.to_le_bytes()).unwrap();
                    }
                }
            });
        }
        let store = Arc::clone(&store);
        s.spawn(move || {
            for _ in 0..100 {
                let (fwd, _) = common::walks(&store);
                assert_eq!(fwd.len(), 200);
                assert!(fwd.windows(2).all(|w| w[0].0 < w[1].0));
            }
        });
    });
    store.wait_for_gc();
    assert!(store.gc_count() > 0);
    assert_eq!(contents(&store).len(), 200);
}

#[test]
fn mixed_soak_with_background_gc() {
    let spec = WorkloadSpec {
        pair_count: 20_000,
        threads: 8,
        ops: Some(200_000),
        ..WorkloadSpec::default()
    };
    let config = StoreConfig {
        n_active: 8,
        m_spare: 2,
        strand_size: 1 << 20,
        write_buffer_bytes: 64 << 10,
        read_cache_bytes: 1 << 20,
        gc_mode: GcMode::Background,
        ..StoreConfig::default()
    };
    let store = mem_store(config);
    let mut bench = Bench::new(&store);
    bench.run(&spec).unwrap();
    bench.run(&WorkloadSpec { phase: Phase::Mixed, ..spec.clone() }).unwrap();
    store.wait_for_gc();
    assert!(store.gc_count() > 0);
    bench.run(&WorkloadSpec { phase: Phase::LookupSeq, ..spec }).unwrap();
}
