//! Benchmark workloads: populate, ordered and random lookups, delete, a
//! mixed update/lookup load and a pair-size sweep.
//!
//! Keys and values are pure functions of the seed, so every run of a spec
//! issues the same operations and every value read back can be checked.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::store::{Store, StoreConfig};
use crate::strand::RECORD_HEADER_LEN;

/// Per-thread latency samples kept when full capture is off.
pub const RESERVOIR_SAMPLES: usize = 1 << 20;

pub const DEFAULT_THREADS: [usize; 6] = [1, 2, 4, 8, 16, 32];

pub const PERCENTILE_LEVELS: [f64; 3] = [0.95, 0.99, 0.999];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Populate,
    LookupSeq,
    LookupRand,
    Delete,
    Mixed,
    Sweep,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Populate,
        Phase::LookupSeq,
        Phase::LookupRand,
        Phase::Delete,
        Phase::Mixed,
        Phase::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Populate => "populate",
            Phase::LookupSeq => "lookup_seq",
            Phase::LookupRand => "lookup_rand",
            Phase::Delete => "delete",
            Phase::Mixed => "mixed",
            Phase::Sweep => "sweep",
        }
    }

    fn needs_data(self) -> bool {
        matches!(self, Phase::LookupSeq | Phase::LookupRand | Phase::Delete | Phase::Mixed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Phase> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown phase {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub phase: Phase,
    pub pair_count: u64,
    pub key_size: usize,
    pub value_size: usize,
    pub threads: usize,
    /// Share of updates in the mixed phase, in percent.
    pub update_pct: u8,
    /// Operations for the mixed phase; `None` means `pair_count`.
    pub ops: Option<u64>,
    pub seed: u64,
    /// Check every value read against the generator.
    pub verify: bool,
    /// Keep every latency sample instead of a per-thread reservoir.
    pub full_capture: bool,
    /// Size the read cache well below the working set.
    pub defeat_cache: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            phase: Phase::Populate,
            pair_count: 100_000,
            key_size: 16,
            value_size: 84,
            threads: 1,
            update_pct: 20,
            ops: None,
            seed: 42,
            verify: true,
            full_capture: false,
            defeat_cache: false,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.update_pct > 100 {
            return Err(Error::InvalidConfig("update_pct must be at most 100".into()));
        }
        if self.pair_count == 0 {
            return Err(Error::InvalidConfig("pair_count must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        if self.key_size < 8 {
            return Err(Error::InvalidConfig("key_size must be at least 8".into()));
        }
        Ok(())
    }

    pub fn pair_bytes(&self) -> usize {
        self.key_size + self.value_size
    }

    pub fn key(&self, seq: u64) -> Vec<u8> {
        let mut k = vec![0u8; self.key_size];
        fill_key(self.seed, seq, &mut k);
        k
    }

    pub fn value(&self, key: &[u8], version: u32) -> Vec<u8> {
        let mut v = vec![0u8; self.value_size];
        fill_value(key, version, &mut v);
        v
    }

    /// `base` with strands big enough for this workload's live data plus
    /// update headroom, and the read cache shrunk when defeating the cache.
    pub fn store_config(&self, base: StoreConfig) -> StoreConfig {
        let record = (RECORD_HEADER_LEN + self.pair_bytes()) as u64;
        let live = self.pair_count * record / base.n_active as u64;
        // Hash routing is uneven at small counts; leave room for skew and
        // for updates between collections.
        let want = (live + live / 4 + 64 * record) * 3 + (1 << 20);
        let strand_size = base.strand_size.max(want.div_ceil(4096) * 4096);
        let mut config = StoreConfig { strand_size, ..base };
        if self.defeat_cache {
            let working_set = (self.pair_count * record) as usize;
            config.read_cache_bytes = config.read_cache_bytes.min(working_set / 16);
        }
        config
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// The first 8 bytes are a bijection of seq, so keys never collide.
fn fill_key(seed: u64, seq: u64, out: &mut [u8]) {
    let head = splitmix(seq ^ seed);
    out[..8].copy_from_slice(&head.to_be_bytes());
    let mut state = head;
    for chunk in out[8..].chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes()[..chunk.len()]);
    }
}

fn fill_value(key: &[u8], version: u32, out: &mut [u8]) {
    // Values shorter than the version tag carry version 0 only.
    let (tag, version) = if out.len() >= 4 { (4, version) } else { (0, 0) };
    out[..tag].copy_from_slice(&version.to_le_bytes()[..tag]);
    let mut state = xxhash_rust::xxh3::xxh3_64_with_seed(key, version as u64);
    for chunk in out[tag..].chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes()[..chunk.len()]);
    }
}

/// Checks that `value` is some version the generator could produce for `key`.
pub fn value_is_valid(key: &[u8], value: &[u8], value_size: usize) -> bool {
    if value.len() != value_size {
        return false;
    }
    let version = if value_size >= 4 {
        u32::from_le_bytes(value[..4].try_into().unwrap())
    } else {
        0
    };
    let mut want = vec![0u8; value_size];
    fill_value(key, version, &mut want);
    want == value
}

/// Nearest-rank percentiles: for level p the ceil(p * n)-th smallest sample.
pub fn percentiles(samples: &[Duration], levels: &[f64]) -> Result<Vec<Duration>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as u128;
    Ok(levels
        .iter()
        .map(|&level| {
            // Integer arithmetic in parts per million keeps 0.95 * 100 at 95.
            let ppm = (level.clamp(0.0, 1.0) * 1e6).round() as u128;
            let rank = (ppm * n).div_ceil(1_000_000).max(1);
            sorted[(rank - 1) as usize]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub phase: Phase,
    pub threads: usize,
    pub key_size: usize,
    pub value_size: usize,
    pub ops: u64,
    /// Updates issued by the mixed phase (also counted in `ops`).
    pub updates: u64,
    pub secs: f64,
    pub ops_per_sec: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub p999_us: f64,
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "phase",
        "threads",
        "value_size",
        "ops",
        "secs",
        "ops_per_sec",
        "p95_us",
        "p99_us",
        "p999_us",
    ];

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.phase.to_string(),
            self.threads.to_string(),
            self.value_size.to_string(),
            self.ops.to_string(),
            format!("{:.6}", self.secs),
            format!("{:.1}", self.ops_per_sec),
            format!("{:.3}", self.p95_us),
            format!("{:.3}", self.p99_us),
            format!("{:.3}", self.p999_us),
        ]
    }

    /// Payload throughput in MB/s (10^6 bytes).
    pub fn mb_per_sec(&self) -> f64 {
        self.ops_per_sec * (self.key_size + self.value_size) as f64 / 1e6
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<11} threads {:>2}  ops {:>10}  {:>8.3}s  {:>12.0} ops/s  p95 {:.2}us  p99 {:.2}us  p99.9 {:.2}us",
            self.phase.name(),
            self.threads,
            self.ops,
            self.secs,
            self.ops_per_sec,
            self.p95_us,
            self.p99_us,
            self.p999_us
        )
    }
}

struct Latencies {
    samples: Vec<Duration>,
    seen: u64,
    full: bool,
    rng: StdRng,
}

impl Latencies {
    fn new(full: bool, seed: u64) -> Self {
        Latencies {
            samples: Vec::new(),
            seen: 0,
            full,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    fn record(&mut self, d: Duration) {
        self.seen += 1;
        if self.full || self.samples.len() < RESERVOIR_SAMPLES {
            self.samples.push(d);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < RESERVOIR_SAMPLES {
                self.samples[j as usize] = d;
            }
        }
    }
}

#[derive(Default)]
struct WorkerResult {
    ops: u64,
    updates: u64,
    samples: Vec<Duration>,
}

/// Runs phases against one store and remembers whether it holds data.
pub struct Bench<'s> {
    store: &'s Store,
    populated: bool,
}

impl<'s> Bench<'s> {
    pub fn new(store: &'s Store) -> Self {
        Bench {
            store,
            populated: false,
        }
    }

    pub fn store(&self) -> &'s Store {
        self.store
    }

    // A store reopened from an earlier populate counts as populated.
    fn has_data(&self, spec: &WorkloadSpec) -> Result<bool> {
        if self.populated {
            return Ok(true);
        }
        let first = self.store.contains(&spec.key(0))?;
        let last = self.store.contains(&spec.key(spec.pair_count - 1))?;
        Ok(first && last)
    }

    pub fn run(&mut self, spec: &WorkloadSpec) -> Result<BenchReport> {
        spec.validate()?;
        if spec.phase == Phase::Sweep {
            return Err(Error::InvalidConfig(
                "the sweep phase needs a store per size; use workload::sweep".into(),
            ));
        }
        if spec.phase.needs_data() && !self.has_data(spec)? {
            return Err(Error::PhaseOrderViolation(format!(
                "{} needs a populated store; run populate first",
                spec.phase
            )));
        }
        let report = run_workers(self.store, spec)?;
        match spec.phase {
            Phase::Populate => self.populated = true,
            Phase::Delete => self.populated = false,
            _ => {}
        }
        Ok(report)
    }
}

/// Runs one phase on `store`; see [`Bench`] for the ordering rules.
pub fn run_phase(spec: &WorkloadSpec, store: &Store) -> Result<BenchReport> {
    Bench::new(store).run(spec)
}

fn split(total: u64, parts: usize, i: usize) -> std::ops::Range<u64> {
    let parts = parts as u64;
    let i = i as u64;
    (total * i / parts)..(total * (i + 1) / parts)
}

fn run_workers(store: &Store, spec: &WorkloadSpec) -> Result<BenchReport> {
    let threads = spec.threads;
    let start = Instant::now();
    let results: Vec<Result<WorkerResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || worker(store, spec, t)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    let secs = start.elapsed().as_secs_f64();

    let mut ops = 0;
    let mut updates = 0;
    let mut samples = Vec::new();
    for r in results {
        let r = r?;
        ops += r.ops;
        updates += r.updates;
        samples.extend(r.samples);
    }
    let p = if samples.is_empty() {
        vec![Duration::ZERO; 3]
    } else {
        percentiles(&samples, &PERCENTILE_LEVELS)?
    };
    let us = |d: Duration| d.as_secs_f64() * 1e6;
    Ok(BenchReport {
        phase: spec.phase,
        threads,
        key_size: spec.key_size,
        value_size: spec.value_size,
        ops,
        updates,
        secs,
        ops_per_sec: if secs > 0.0 { ops as f64 / secs } else { 0.0 },
        p95_us: us(p[0]),
        p99_us: us(p[1]),
        p999_us: us(p[2]),
    })
}

fn check(spec: &WorkloadSpec, key: &[u8], got: Result<Vec<u8>>, seq: u64) -> Result<()> {
    match got {
        Ok(v) => {
            if spec.verify && !value_is_valid(key, &v, spec.value_size) {
                return Err(Error::VerificationFailed(format!(
                    "key #{seq} ({}) holds a value the generator never wrote",
                    hex(key)
                )));
            }
            Ok(())
        }
        Err(Error::KeyNotFound) => Err(Error::VerificationFailed(format!(
            "key #{seq} ({}) is missing",
            hex(key)
        ))),
        Err(e) => Err(e),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn worker(store: &Store, spec: &WorkloadSpec, t: usize) -> Result<WorkerResult> {
    let thread_seed = spec.seed ^ splitmix(t as u64 + 1);
    let mut rng = StdRng::seed_from_u64(thread_seed);
    let mut lat = Latencies::new(spec.full_capture, thread_seed.rotate_left(17));
    let mut key = vec![0u8; spec.key_size];
    let mut value = vec![0u8; spec.value_size];
    let mut out = WorkerResult::default();
    let n = spec.pair_count;

    match spec.phase {
        Phase::Populate | Phase::LookupSeq | Phase::Delete => {
            for seq in split(n, spec.threads, t) {
                fill_key(spec.seed, seq, &mut key);
                let began = Instant::now();
                match spec.phase {
                    Phase::Populate => {
                        fill_value(&key, 0, &mut value);
                        store.insert(&key, &value)?;
                    }
                    Phase::LookupSeq => {
                        let got = store.lookup(&key);
                        lat.record(began.elapsed());
                        check(spec, &key, got, seq)?;
                        out.ops += 1;
                        continue;
                    }
                    _ => store.delete(&key)?,
                }
                lat.record(began.elapsed());
                out.ops += 1;
            }
        }
        Phase::LookupRand => {
            for _ in split(n, spec.threads, t) {
                let seq = rng.gen_range(0..n);
                fill_key(spec.seed, seq, &mut key);
                let began = Instant::now();
                let got = store.lookup(&key);
                lat.record(began.elapsed());
                check(spec, &key, got, seq)?;
                out.ops += 1;
            }
        }
        Phase::Mixed => {
            let total = spec.ops.unwrap_or(n);
            let mut version = (t as u32) << 24;
            for _ in split(total, spec.threads, t) {
                let seq = rng.gen_range(0..n);
                fill_key(spec.seed, seq, &mut key);
                if rng.gen_range(0..100u8) < spec.update_pct {
                    version = version.wrapping_add(1);
                    fill_value(&key, version, &mut value);
                    let began = Instant::now();
                    store.update(&key, &value)?;
                    lat.record(began.elapsed());
                    out.updates += 1;
                } else {
                    let began = Instant::now();
                    let got = store.lookup(&key);
                    lat.record(began.elapsed());
                    check(spec, &key, got, seq)?;
                }
                out.ops += 1;
            }
        }
        Phase::Sweep => unreachable!("sweep is not a worker phase"),
    }
    out.samples = lat.samples;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub pair_size: usize,
    pub ops_per_sec: f64,
    pub mb_per_sec: f64,
    pub report: BenchReport,
}

impl SweepRow {
    pub const CSV_HEADER: [&'static str; 3] = ["size", "ops_per_sec", "mb_per_sec"];

    pub fn csv_record(&self) -> [String; 3] {
        [
            self.pair_size.to_string(),
            format!("{:.1}", self.ops_per_sec),
            format!("{:.3}", self.mb_per_sec),
        ]
    }
}

/// Runs populate then the mixed phase on a fresh store for each pair size
/// (key plus value bytes). `make_store` gets the spec for that size.
pub fn sweep<F>(pair_sizes: &[usize], base: &WorkloadSpec, mut make_store: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(&WorkloadSpec) -> Result<Store>,
{
    let mut rows = Vec::with_capacity(pair_sizes.len());
    for &size in pair_sizes {
        if size == 0 {
            return Err(Error::InvalidConfig("sweep sizes must be at least 1".into()));
        }
        let key_size = base.key_size.min(size).max(8);
        let spec = WorkloadSpec {
            key_size,
            value_size: size.saturating_sub(key_size),
            ..base.clone()
        };
        let store = make_store(&spec)?;
        let mut bench = Bench::new(&store);
        bench.run(&WorkloadSpec {
            phase: Phase::Populate,
            ..spec.clone()
        })?;
        let report = bench.run(&WorkloadSpec {
            phase: Phase::Mixed,
            ..spec.clone()
        })?;
        rows.push(SweepRow {
            pair_size: spec.pair_bytes(),
            ops_per_sec: report.ops_per_sec,
            mb_per_sec: report.mb_per_sec(),
            report,
        });
        store.close()?;
    }
    Ok(rows)
}
