//! Command-line front end: `mount`, `gen`, `bench` and `scrub`.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, BenchPlan, Scenario, Strategy, TimelineConfig, VfsTarget};
use crate::datagen::{self, DatasetSpec};
use crate::engine::{self, FormatMode};
use crate::policy::{load_policy, PolicyOptions};
use crate::vfs::{FsType, MountConfig, Vfs};

#[derive(Debug, Parser)]
#[command(name = "dlpfs", version, about = "Policy-driven protecting passthrough filesystem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mount ROOT at MOUNTPOINT and serve until interrupted.
    Mount(MountArgs),
    /// Write a synthetic CSV dataset.
    Gen(GenArgs),
    /// Run the benchmark plan over in-process targets.
    Bench(BenchArgs),
    /// Apply a policy to a whole file, offline.
    Scrub(ScrubArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Raw,
    Line,
}

impl From<ModeArg> for FormatMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => FormatMode::Raw,
            ModeArg::Line => FormatMode::LineAligned,
        }
    }
}

#[derive(Debug, Args)]
pub struct MountArgs {
    /// Filesystem type: dlpfs or loopback.
    #[arg(short = 't', value_parser = parse_fs_type)]
    pub fs_type: FsType,
    /// Backing directory.
    #[arg(short = 'r')]
    pub root: PathBuf,
    #[arg(short = 'm')]
    pub mountpoint: PathBuf,
    /// Policy file; without one dlpfs mounts with an empty policy.
    #[arg(short = 's')]
    pub policy: Option<PathBuf>,
    /// Guard bytes on each side of a read.
    #[arg(long)]
    pub guard: Option<usize>,
    /// Force a chunking mode instead of choosing by file suffix.
    #[arg(long)]
    pub mode: Option<ModeArg>,
    /// Fixed seed for transformation randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub allow_other: bool,
}

fn parse_fs_type(s: &str) -> Result<FsType, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub p_icd: f64,
    #[arg(long, default_value_t = 0.01)]
    pub p_kw1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p_kw2: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_email: f64,
    #[arg(long)]
    pub no_header: bool,
    /// Print per-field hit counts after writing.
    #[arg(long)]
    pub measure: bool,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scratch directory for datasets.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',')]
    pub rows: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub guards: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<Scenario>,
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub drop_caches: bool,
    /// Write one CSV line per measurement here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also run the scripted throughput timeline.
    #[arg(long)]
    pub timeline: bool,
    /// Also run the transformation microbenchmark.
    #[arg(long)]
    pub transforms: bool,
}

#[derive(Debug, Args)]
pub struct ScrubArgs {
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
}

fn run_gen(a: GenArgs) -> anyhow::Result<()> {
    let spec = DatasetSpec {
        rows: a.rows,
        seed: a.seed,
        p_icd: a.p_icd,
        p_kw1: a.p_kw1,
        p_kw2: a.p_kw2,
        p_email: a.p_email,
        header: !a.no_header,
        ..Default::default()
    };
    if let Err(e) = spec.validate() {
        bail!(e);
    }
    let data = datagen::generate(&spec);
    fs::write(&a.output, &data).with_context(|| format!("writing {}", a.output.display()))?;
    if a.measure {
        let counts = datagen::measure_match_rate(&data, &datagen::calibration_policy(&spec));
        for (name, n) in ["icd", "kw1", "kw2", "email"].iter().zip(counts) {
            println!("{name}\t{n}");
        }
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> anyhow::Result<()> {
    let mut plan = BenchPlan {
        repetitions: a.repetitions,
        seed: a.seed,
        drop_caches: a.drop_caches,
        ..Default::default()
    };
    if !a.strategies.is_empty() {
        plan.strategies = a.strategies;
    }
    if !a.rows.is_empty() {
        plan.file_sizes = a.rows;
    }
    if !a.guards.is_empty() {
        plan.guard_sizes = a.guards;
    }
    if !a.scenarios.is_empty() {
        plan.scenarios = a.scenarios;
    }
    fs::create_dir_all(&a.root)?;
    let outcome = bench::run_plan(&plan, &a.root).map_err(anyhow::Error::msg)?;
    for (k, v) in &outcome.metadata {
        println!("# {k}: {v}");
    }
    print!("{}", bench::format_summary(&bench::report(&outcome.records)));
    if let Some(out) = &a.out {
        let f = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        bench::write_csv(&outcome.records, f)?;
    }
    if a.transforms {
        println!("transform\tmean_ms");
        for (kind, times) in bench::transform_costs(20_000, plan.repetitions, plan.seed) {
            println!("{kind}\t{:.4}", times.iter().sum::<f64>() / times.len() as f64 * 1e3);
        }
    }
    if a.timeline {
        let cfg = TimelineConfig {
            seed: plan.seed,
            ..Default::default()
        };
        let file = a.root.join("timeline.txt");
        fs::write(&file, bench::timeline_content(&cfg))?;
        let mut mc = MountConfig::new(FsType::Dlpfs, &a.root, &a.root);
        mc.seed = Some(plan.seed);
        let target = VfsTarget {
            vfs: Vfs::with_backend(&mc, bench::timeline_policy(), Default::default())?,
        };
        let t = bench::timeline(&target, "/timeline.txt".as_ref(), &cfg)?;
        let _ = fs::remove_file(&file);
        println!("tick\tbytes_per_sec");
        for (i, v) in t.throughput.iter().enumerate() {
            println!("{i}\t{v:.0}");
        }
        println!("# shape_check: {}", if t.shape_check() { "pass" } else { "fail" });
    }
    if let Some(msg) = outcome.aborted {
        bail!("plan aborted, results partial: {msg}");
    }
    Ok(())
}

fn run_scrub(a: ScrubArgs) -> anyhow::Result<()> {
    let policy = load_policy(&a.policy, &PolicyOptions::default())?;
    let input = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let out = engine::scrub(&input, &policy, a.seed);
    fs::write(&a.output, out).with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

#[cfg(feature = "fuse")]
fn run_mount(a: MountArgs) -> anyhow::Result<()> {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    use crate::adapter::{self, AdapterOptions};

    let cfg = MountConfig {
        policy_path: a.policy,
        guard: a.guard,
        format_mode: a.mode.map(Into::into),
        seed: a.seed,
        ..MountConfig::new(a.fs_type, a.root, a.mountpoint)
    };
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGINT, signal_hook::consts::SIGTERM] {
        signal_hook::flag::register(sig, Arc::clone(&stop))?;
    }
    let opts = AdapterOptions {
        allow_other: a.allow_other,
        ..Default::default()
    };
    let session = adapter::mount(&cfg, opts)?.expect("background mount returns a session");
    log::info!("serving {} at {}", cfg.root.display(), cfg.mountpoint.display());
    while !stop.load(Ordering::Relaxed) && !session.is_finished() {
        std::thread::sleep(Duration::from_millis(100));
    }
    session.unmount()?;
    Ok(())
}

#[cfg(not(feature = "fuse"))]
fn run_mount(_: MountArgs) -> anyhow::Result<()> {
    bail!("this build has no FUSE support")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Mount(a) => run_mount(a),
        Command::Gen(a) => run_gen(a),
        Command::Bench(a) => run_bench(a),
        Command::Scrub(a) => run_scrub(a),
    }
}

/// Parse `args` and run. Returns the process exit code: 2 for usage errors,
/// 1 for runtime failures.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dlpfs: {e:#}");
            1
        }
    }
}
