use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flashmap::workload::{self, Bench, BenchReport, Phase, SweepRow, WorkloadSpec};
use flashmap::{Error, GcMode, Manifest, StorageSpec, Store, StoreConfig};

mod exit;

#[derive(Parser)]
#[command(name = "flashmap", version, about = "FlashMap key-value store tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run benchmark phases and print throughput and latency percentiles.
    Bench(BenchArgs),
    /// Inspect or modify a store.
    Kv {
        #[command(subcommand)]
        op: KvOp,
    },
}

#[derive(Args, Clone)]
struct StoreArgs {
    /// Store directory. Benchmarks run in memory when omitted.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, default_value = "flashmap")]
    name: String,
    /// Active strands (N).
    #[arg(long, default_value_t = 32)]
    strands: u32,
    /// Spare strands (M).
    #[arg(long, default_value_t = 1)]
    spares: u32,
    /// Bytes per strand; sized from the workload when omitted.
    #[arg(long)]
    strand_size: Option<u64>,
    #[arg(long, default_value_t = 32 << 20)]
    write_buffer: usize,
    #[arg(long, default_value_t = 1 << 30)]
    read_cache: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value_t = 100_000)]
    pairs: u64,
    #[arg(long, default_value_t = 84)]
    value_size: usize,
    #[arg(long, default_value_t = 16)]
    key_size: usize,
    /// Thread counts to run, e.g. 1,2,4,8,16,32.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    threads: Vec<usize>,
    /// Phases to run in order: populate, lookup_seq, lookup_rand, delete, mixed, sweep.
    #[arg(long, value_delimiter = ',', default_value = "populate,lookup_seq,lookup_rand,delete")]
    phase: Vec<Phase>,
    #[arg(long, default_value_t = 20)]
    update_pct: u8,
    /// Operations in the mixed phase (default: --pairs).
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Pair sizes (key + value bytes) for the sweep phase.
    #[arg(long, value_delimiter = ',', default_value = "100,1024,4096,65536")]
    sizes: Vec<usize>,
    /// Shrink the read cache well below the working set.
    #[arg(long)]
    defeat_cache: bool,
    /// Keep every latency sample rather than a bounded reservoir.
    #[arg(long)]
    full_latency: bool,
    /// Skip checking values read back.
    #[arg(long)]
    no_verify: bool,
    /// Write results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KvOp {
    /// Print the value stored under KEY.
    Get {
        #[command(flatten)]
        store: StoreArgs,
        key: String,
    },
    /// Store VALUE under KEY.
    Put {
        #[command(flatten)]
        store: StoreArgs,
        key: String,
        value: String,
    },
    /// Delete KEY.
    Del {
        #[command(flatten)]
        store: StoreArgs,
        key: String,
    },
    /// List every key in order with its key and value lengths.
    Scan {
        #[command(flatten)]
        store: StoreArgs,
    },
}

impl StoreArgs {
    fn config(&self) -> StoreConfig {
        StoreConfig {
            n_active: self.strands,
            m_spare: self.spares,
            strand_size: self.strand_size.unwrap_or(64 << 20),
            write_buffer_bytes: self.write_buffer,
            read_cache_bytes: self.read_cache,
            ..StoreConfig::default()
        }
    }

    fn spec(&self) -> StorageSpec {
        match &self.dir {
            Some(d) => StorageSpec::directory(d),
            None => StorageSpec::InMemory,
        }
    }

    // An existing store keeps the layout recorded in its manifest.
    fn open(&self, config: StoreConfig) -> flashmap::Result<Store> {
        if let Some(dir) = &self.dir {
            if let Some(m) = Manifest::load(dir)? {
                return Store::open(self.spec(), &self.name, m.apply_to(config));
            }
        }
        Store::open(self.spec(), &self.name, config)
    }

    fn open_for_kv(&self) -> flashmap::Result<Store> {
        if self.dir.is_none() {
            return Err(Error::InvalidConfig("kv commands need --dir".into()));
        }
        self.open(StoreConfig {
            gc_mode: GcMode::Inline,
            ..self.config()
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Kv { op } => kv(op),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flashmap: {e}");
            ExitCode::from(exit::code(&e))
        }
    }
}

fn printable(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if !s.chars().any(char::is_control) => s.to_string(),
        _ => {
            let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
            format!("0x{hex}")
        }
    }
}

fn kv(op: KvOp) -> flashmap::Result<()> {
    let mut out = io::stdout().lock();
    match op {
        KvOp::Get { store, key } => {
            let s = store.open_for_kv()?;
            let v = s.lookup(key.as_bytes())?;
            out.write_all(&v)?;
            out.write_all(b"\n")?;
            s.close()
        }
        KvOp::Put { store, key, value } => {
            let s = store.open_for_kv()?;
            s.update(key.as_bytes(), value.as_bytes())?;
            s.close()
        }
        KvOp::Del { store, key } => {
            let s = store.open_for_kv()?;
            s.delete(key.as_bytes())?;
            s.close()
        }
        KvOp::Scan { store } => {
            let s = store.open_for_kv()?;
            let mut cursor = match s.prev(None) {
                Ok(p) => Some(p),
                Err(Error::Exhausted) => None,
                Err(e) => return Err(e),
            };
            while let Some((k, v)) = cursor {
                writeln!(out, "{}\t{}\t{}", printable(&k), k.len(), v.len())?;
                cursor = match s.next(Some(&k)) {
                    Ok(p) => Some(p),
                    Err(Error::Exhausted) => None,
                    Err(e) => return Err(e),
                };
            }
            s.close()
        }
    }
}

fn bench(args: BenchArgs) -> flashmap::Result<()> {
    let base = WorkloadSpec {
        phase: Phase::Populate,
        pair_count: args.pairs,
        key_size: args.key_size,
        value_size: args.value_size,
        threads: 1,
        update_pct: args.update_pct,
        ops: args.ops,
        seed: args.seed,
        verify: !args.no_verify,
        full_capture: args.full_latency,
        defeat_cache: args.defeat_cache,
    };
    base.validate()?;
    if args.threads.is_empty() || args.threads.contains(&0) {
        return Err(Error::InvalidConfig("thread counts must be at least 1".into()));
    }
    if args.phase.contains(&Phase::Sweep) {
        if args.phase.len() != 1 {
            return Err(Error::InvalidConfig("sweep runs on its own".into()));
        }
        return sweep(&args, &base);
    }

    let config = store_config(&args.store, &base);
    let store = args.store.open(config)?;
    let mut bench = Bench::new(&store);
    let mut reports = Vec::new();
    for &threads in &args.threads {
        for &phase in &args.phase {
            let spec = WorkloadSpec {
                phase,
                threads,
                ..base.clone()
            };
            let report = bench.run(&spec)?;
            println!("{report}");
            reports.push(report);
        }
    }
    if let Some(path) = &args.csv {
        write_csv(path, &BenchReport::CSV_HEADER, reports.iter().map(|r| r.csv_record()))?;
    }
    if let Ok(m) = store.memory_per_key() {
        println!("index memory per key: {m:.1} bytes");
    }
    store.close()
}

fn store_config(args: &StoreArgs, spec: &WorkloadSpec) -> StoreConfig {
    let config = args.config();
    match args.strand_size {
        Some(_) => config,
        None => spec.store_config(StoreConfig {
            strand_size: 4 << 20,
            ..config
        }),
    }
}

fn sweep(args: &BenchArgs, base: &WorkloadSpec) -> flashmap::Result<()> {
    let mut rows: Vec<(usize, SweepRow)> = Vec::new();
    for &threads in &args.threads {
        let spec = WorkloadSpec {
            threads,
            ..base.clone()
        };
        let result = workload::sweep(&args.sizes, &spec, |s| {
            let mut store_args = args.store.clone();
            if let Some(dir) = &args.store.dir {
                let sub = dir.join(format!("sweep-{}", s.pair_bytes()));
                Store::destroy(&StorageSpec::directory(&sub))?;
                store_args.dir = Some(sub);
            }
            Store::open(store_args.spec(), &store_args.name, store_config(&store_args, s))
        })?;
        for row in result {
            println!(
                "size {:>6}  threads {:>2}  {:>12.0} ops/s  {:>9.2} MB/s",
                row.pair_size, threads, row.ops_per_sec, row.mb_per_sec
            );
            rows.push((threads, row));
        }
    }
    if let Some(path) = &args.csv {
        let mut header = SweepRow::CSV_HEADER.to_vec();
        header.insert(1, "threads");
        write_csv(
            path,
            &header,
            rows.iter().map(|(t, r)| {
                let mut rec = r.csv_record().to_vec();
                rec.insert(1, t.to_string());
                rec
            }),
        )?;
    }
    Ok(())
}

fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> flashmap::Result<()>
where
    I: Iterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(io::Error::other(format!("{other:?}"))),
    }
}
