//! Benchmark harness: read and write strategies, match-rate scenarios, guard
//! sweeps and repeated timed runs against loopback and dlpfs targets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::hint::black_box;
use std::io::{self, BufRead, BufReader, Read};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::datagen::{self, DatasetSpec};
use crate::engine::FormatMode;
use crate::policy::{parse_policy, PolicySpec};
use crate::transform::{self, TransformContext};
use crate::vfs::{FsType, MountConfig, OpenFlags, OsBackend, Vfs, VfsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// Whole file in 64 KiB reads, then parsed as CSV.
    Dataframe,
    /// Whole file in 128 KiB reads into a sink.
    Copy,
    /// 8 KiB buffered reader, one line at a time.
    LineByLine,
    /// Sequential positional reads of a fixed size.
    Pread(usize),
    WriteWhole,
    WriteRow,
    WriteField,
}

impl Strategy {
    pub const READS: [Strategy; 7] = [
        Strategy::Dataframe,
        Strategy::Copy,
        Strategy::LineByLine,
        Strategy::Pread(10),
        Strategy::Pread(100),
        Strategy::Pread(1000),
        Strategy::Pread(10000),
    ];
    pub const WRITES: [Strategy; 3] = [Strategy::WriteWhole, Strategy::WriteRow, Strategy::WriteField];

    pub fn is_write(self) -> bool {
        matches!(self, Strategy::WriteWhole | Strategy::WriteRow | Strategy::WriteField)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Dataframe => f.write_str("dataframe"),
            Strategy::Copy => f.write_str("copy"),
            Strategy::LineByLine => f.write_str("line-by-line"),
            Strategy::Pread(n) => write!(f, "pread-{n}"),
            Strategy::WriteWhole => f.write_str("write-whole"),
            Strategy::WriteRow => f.write_str("write-row"),
            Strategy::WriteField => f.write_str("write-field"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "dataframe" => Strategy::Dataframe,
            "copy" => Strategy::Copy,
            "line-by-line" => Strategy::LineByLine,
            "write-whole" => Strategy::WriteWhole,
            "write-row" => Strategy::WriteRow,
            "write-field" => Strategy::WriteField,
            _ => match s.strip_prefix("pread-").map(str::parse) {
                Some(Ok(n)) if n > 0 => Strategy::Pread(n),
                _ => return Err(format!("unknown strategy {s:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    /// A policy that never matches the corpus.
    None,
    /// Matches the rare keyword (about 1% of rows).
    Few,
    /// Matches the frequent keyword (about 10% of rows).
    Many,
    EmptyPolicy,
    /// Same hits as `Many`, through a deliberately wasteful regex.
    NotOptimised,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::None,
        Scenario::Few,
        Scenario::Many,
        Scenario::EmptyPolicy,
        Scenario::NotOptimised,
    ];

    pub fn policy(self, data: &DatasetSpec) -> PolicySpec {
        let redact = json!({"type": "redact"});
        let rules = match self {
            Scenario::EmptyPolicy => json!([]),
            Scenario::None => json!([{"patterns": [{"type": "dict", "spec": ["ZzNeverPresentToken"]}],
                                      "transformation": redact}]),
            Scenario::Few => json!([{"patterns": [{"type": "dict", "spec": [data.kw1]}],
                                     "transformation": redact}]),
            Scenario::Many => json!([{"patterns": [{"type": "dict", "spec": [data.kw2]}],
                                      "transformation": redact}]),
            Scenario::NotOptimised => json!([{"patterns": [{"type": "re", "spec": wasteful_regex(&data.kw2)}],
                                              "transformation": redact}]),
        };
        let doc = json!({"do_read": true, "do_write": true, "rules": rules});
        parse_policy(doc.to_string().as_bytes()).expect("scenario policy is valid")
    }
}

/// A regex for `word` built from nested unbounded groups whose alternations
/// overlap: each character `c` of the word becomes `(?:c|cd)+` with `d` its
/// successor.
fn wasteful_regex(word: &str) -> String {
    let chars: Vec<String> = word.chars().map(|c| regex_syntax::escape(&c.to_string())).collect();
    let mut groups = String::new();
    for (i, c) in chars.iter().enumerate() {
        match chars.get(i + 1) {
            Some(d) => groups.push_str(&format!("(?:{c}|{c}{d})+")),
            None => groups.push_str(&format!("(?:{c})+")),
        }
    }
    format!(r"\b(?:{groups})+\b")
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::None => "none",
            Scenario::Few => "few",
            Scenario::Many => "many",
            Scenario::EmptyPolicy => "empty-policy",
            Scenario::NotOptimised => "not-optimised",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

/// One open file on a benchmark target. Offsets are absolute.
pub trait TargetFile {
    fn read_at(&mut self, buf: &mut [u8], offset: u64) -> io::Result<usize>;
    fn write_at(&mut self, data: &[u8], offset: u64) -> io::Result<()>;
    fn close(self: Box<Self>) -> io::Result<()>;
}

/// Something files can be read from and written to by mount-relative path.
pub trait Target {
    fn label(&self) -> FsType;
    fn open_read(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>>;
    /// Create or truncate for writing.
    fn create(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>>;
    fn remove(&self, path: &Path) -> io::Result<()>;
}

fn io_err(e: VfsError) -> io::Error {
    match e {
        VfsError::Io(e) => e,
        other => io::Error::from_raw_os_error(other.errno()),
    }
}

/// An in-process [`Vfs`], exercising the same code a mount would run.
pub struct VfsTarget {
    pub vfs: Vfs<OsBackend>,
}

struct VfsFile<'a> {
    vfs: &'a Vfs<OsBackend>,
    fh: u64,
}

impl TargetFile for VfsFile<'_> {
    fn read_at(&mut self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        let data = self.vfs.read(self.fh, offset, buf.len()).map_err(io_err)?;
        buf[..data.len()].copy_from_slice(&data);
        Ok(data.len())
    }

    fn write_at(&mut self, data: &[u8], offset: u64) -> io::Result<()> {
        let mut done = 0;
        while done < data.len() {
            done += self
                .vfs
                .write(self.fh, offset + done as u64, &data[done..])
                .map_err(io_err)?;
        }
        Ok(())
    }

    fn close(self: Box<Self>) -> io::Result<()> {
        let flushed = self.vfs.flush(self.fh).map_err(io_err);
        self.vfs.release(self.fh).map_err(io_err)?;
        flushed
    }
}

impl Target for VfsTarget {
    fn label(&self) -> FsType {
        self.vfs.fs_type()
    }

    fn open_read(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>> {
        let fh = self.vfs.open(path, OpenFlags::read_only()).map_err(io_err)?;
        Ok(Box::new(VfsFile { vfs: &self.vfs, fh }))
    }

    fn create(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>> {
        let flags = OpenFlags {
            truncate: true,
            ..OpenFlags::write_only()
        };
        let fh = self.vfs.create(path, flags, 0o644).map_err(io_err)?;
        Ok(Box::new(VfsFile { vfs: &self.vfs, fh }))
    }

    fn remove(&self, path: &Path) -> io::Result<()> {
        self.vfs.unlink(path).map_err(io_err)
    }
}

/// A directory on the host, typically a live mountpoint.
pub struct DirTarget {
    pub dir: PathBuf,
    pub label: FsType,
}

impl DirTarget {
    fn host(&self, path: &Path) -> PathBuf {
        self.dir.join(path.strip_prefix("/").unwrap_or(path))
    }
}

impl TargetFile for fs::File {
    fn read_at(&mut self, buf: &mut [u8], offset: u64) -> io::Result<usize> {
        FileExt::read_at(self, buf, offset)
    }

    fn write_at(&mut self, data: &[u8], offset: u64) -> io::Result<()> {
        self.write_all_at(data, offset)
    }

    fn close(self: Box<Self>) -> io::Result<()> {
        // close(2) errors are not reported by File's Drop, so sync instead.
        self.sync_data()
    }
}

impl Target for DirTarget {
    fn label(&self) -> FsType {
        self.label
    }

    fn open_read(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>> {
        Ok(Box::new(fs::File::open(self.host(path))?))
    }

    fn create(&self, path: &Path) -> io::Result<Box<dyn TargetFile + '_>> {
        Ok(Box::new(fs::File::create(self.host(path))?))
    }

    fn remove(&self, path: &Path) -> io::Result<()> {
        fs::remove_file(self.host(path))
    }
}

struct Reader<'a> {
    file: &'a mut (dyn TargetFile + 'a),
    pos: u64,
}

impl Read for Reader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.file.read_at(buf, self.pos)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn read_chunked(file: &mut dyn TargetFile, chunk: usize) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut buf = vec![0; chunk];
    loop {
        let n = file.read_at(&mut buf, out.len() as u64)?;
        if n == 0 {
            return Ok(out);
        }
        out.extend_from_slice(&buf[..n]);
    }
}

/// Pieces of `content` for a write strategy, concatenating back to it.
pub fn write_pieces(strategy: Strategy, content: &[u8]) -> Vec<&[u8]> {
    let split_after = |is_cut: &dyn Fn(u8) -> bool| {
        let mut pieces = Vec::new();
        let mut a = 0;
        for (i, &b) in content.iter().enumerate() {
            if is_cut(b) {
                pieces.push(&content[a..=i]);
                a = i + 1;
            }
        }
        if a < content.len() {
            pieces.push(&content[a..]);
        }
        pieces
    };
    match strategy {
        Strategy::WriteRow => split_after(&|b| b == b'\n'),
        Strategy::WriteField => split_after(&|b| b == b'\n' || b == b','),
        _ => vec![content],
    }
}

/// Run one strategy against `path`, open and close included. Read strategies
/// return the bytes the application saw; write strategies write `content`
/// and return nothing.
pub fn run_strategy(
    target: &dyn Target,
    strategy: Strategy,
    path: &Path,
    content: &[u8],
) -> io::Result<Vec<u8>> {
    if strategy.is_write() {
        let mut f = target.create(path)?;
        let mut off = 0;
        for piece in write_pieces(strategy, content) {
            f.write_at(piece, off)?;
            off += piece.len() as u64;
        }
        f.close()?;
        return Ok(Vec::new());
    }
    let mut f = target.open_read(path)?;
    let out = match strategy {
        Strategy::Dataframe => {
            let data = read_chunked(&mut *f, 64 << 10)?;
            let mut rows = 0usize;
            for rec in csv::Reader::from_reader(&data[..]).byte_records() {
                rows += rec.map_err(io::Error::other)?.len();
            }
            black_box(rows);
            data
        }
        Strategy::Copy => read_chunked(&mut *f, 128 << 10)?,
        Strategy::LineByLine => {
            let mut r = BufReader::with_capacity(8 << 10, Reader { file: &mut *f, pos: 0 });
            let mut out = Vec::new();
            let mut line = Vec::new();
            while r.read_until(b'\n', &mut line)? > 0 {
                out.extend_from_slice(&line);
                line.clear();
            }
            out
        }
        Strategy::Pread(n) => read_chunked(&mut *f, n)?,
        _ => unreachable!("write strategies handled above"),
    };
    f.close()?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub strategies: Vec<Strategy>,
    /// Dataset sizes in rows.
    pub file_sizes: Vec<usize>,
    pub guard_sizes: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub repetitions: usize,
    pub seed: u64,
    /// Try to drop the page cache before every timed run.
    pub drop_caches: bool,
}

impl Default for BenchPlan {
    fn default() -> Self {
        let mut strategies = Strategy::READS.to_vec();
        strategies.extend(Strategy::WRITES);
        BenchPlan {
            strategies,
            file_sizes: vec![1, 10, 100, 1000, 10_000, 20_000],
            guard_sizes: vec![0, 16, 32, 64, 128, 256],
            scenarios: Scenario::ALL.to_vec(),
            repetitions: 30,
            seed: 0,
            drop_caches: false,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.repetitions == 0 {
            return Err("repetitions must be at least 1".into());
        }
        if self.strategies.is_empty() || self.file_sizes.is_empty() || self.scenarios.is_empty() {
            return Err("plan selects no cells".into());
        }
        if self.guard_sizes.is_empty() {
            return Err("plan needs at least one guard size".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub strategy: String,
    pub rows: usize,
    pub guard: usize,
    pub fs_type: String,
    /// Seconds, monotonic clock.
    pub elapsed: f64,
    pub run_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    /// Run conditions, e.g. whether caches could be dropped.
    pub metadata: BTreeMap<String, String>,
    /// Set when a target failed mid-plan; `records` are then partial.
    pub aborted: Option<String>,
}

pub fn write_csv<W: io::Write>(records: &[BenchRecord], w: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn drop_page_cache() -> io::Result<()> {
    // SAFETY: sync(2) has no preconditions.
    unsafe { libc::sync() };
    fs::write("/proc/sys/vm/drop_caches", b"3\n")
}

fn fs_label(t: FsType) -> &'static str {
    match t {
        FsType::Loopback => "loopback",
        FsType::Dlpfs => "dlpfs",
    }
}

fn data_path(rows: usize) -> PathBuf {
    PathBuf::from(format!("/bench_{rows}.csv"))
}

fn out_path(rows: usize) -> PathBuf {
    PathBuf::from(format!("/bench_{rows}.out.csv"))
}

struct Cell {
    scenario: Option<Scenario>,
    strategy: Strategy,
    rows: usize,
    guard: usize,
    target: usize,
}

/// Generate the plan's datasets under `root` and run every cell through
/// in-process loopback and dlpfs targets over that root.
///
/// Loopback cells carry scenario `baseline` and guard 0; they run once per
/// strategy and size, since neither policy nor guard applies to them.
pub fn run_plan(plan: &BenchPlan, root: &Path) -> Result<BenchOutcome, String> {
    plan.validate()?;
    let data_spec = |rows| DatasetSpec::with_rows(rows, plan.seed);
    let mut contents = BTreeMap::new();
    for &rows in &plan.file_sizes {
        let data = datagen::generate(&data_spec(rows));
        let host = root.join(data_path(rows).strip_prefix("/").unwrap());
        fs::write(&host, &data).map_err(|e| format!("writing {}: {e}", host.display()))?;
        contents.insert(rows, data);
    }

    let mut cfg = MountConfig::new(FsType::Loopback, root, root);
    cfg.seed = Some(plan.seed);
    let mut targets = vec![VfsTarget {
        vfs: Vfs::with_backend(&cfg, PolicySpec::empty(), OsBackend).map_err(|e| e.to_string())?,
    }];
    let mut cells = Vec::new();
    for &strategy in &plan.strategies {
        for &rows in &plan.file_sizes {
            cells.push(Cell {
                scenario: None,
                strategy,
                rows,
                guard: 0,
                target: 0,
            });
        }
    }
    cfg.fs_type = FsType::Dlpfs;
    cfg.format_mode = Some(FormatMode::Raw);
    for &scenario in &plan.scenarios {
        let policy = scenario.policy(&DatasetSpec::default());
        for &guard in &plan.guard_sizes {
            cfg.guard = Some(guard);
            let vfs = Vfs::with_backend(&cfg, policy.clone(), OsBackend).map_err(|e| e.to_string())?;
            targets.push(VfsTarget { vfs });
            for &strategy in &plan.strategies {
                for &rows in &plan.file_sizes {
                    cells.push(Cell {
                        scenario: Some(scenario),
                        strategy,
                        rows,
                        guard,
                        target: targets.len() - 1,
                    });
                }
            }
        }
    }

    let mut outcome = BenchOutcome::default();
    outcome.metadata.insert("open_close_timed".into(), "true".into());
    outcome.metadata.insert("warmup_runs".into(), "1".into());
    outcome.metadata.insert("targets".into(), "in-process vfs".into());
    let mut cache_drop = if plan.drop_caches { "yes" } else { "disabled" }.to_string();

    let run = |cell: &Cell| -> io::Result<f64> {
        let path = if cell.strategy.is_write() {
            out_path(cell.rows)
        } else {
            data_path(cell.rows)
        };
        let t0 = Instant::now();
        black_box(run_strategy(&targets[cell.target], cell.strategy, &path, &contents[&cell.rows])?);
        let dt = t0.elapsed().as_secs_f64();
        if cell.strategy.is_write() {
            targets[cell.target].remove(&path)?;
        }
        Ok(dt.max(f64::MIN_POSITIVE))
    };

    for cell in &cells {
        if let Err(e) = run(cell) {
            outcome.aborted = Some(format!("warm-up failed: {e}"));
            return Ok(outcome);
        }
    }
    let mut order: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.repetitions).map(move |r| (c, r)))
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
    for (c, run_index) in order {
        if plan.drop_caches && cache_drop == "yes" {
            if let Err(e) = drop_page_cache() {
                cache_drop = format!("unavailable: {e}");
            }
        }
        let cell = &cells[c];
        match run(cell) {
            Ok(elapsed) => outcome.records.push(BenchRecord {
                scenario: cell.scenario.map_or("baseline".into(), |s| s.to_string()),
                strategy: cell.strategy.to_string(),
                rows: cell.rows,
                guard: cell.guard,
                fs_type: fs_label(targets[cell.target].label()).into(),
                elapsed,
                run_index,
            }),
            Err(e) => {
                outcome.aborted = Some(format!("{} {}: {e}", cell.strategy, cell.rows));
                break;
            }
        }
    }
    outcome.metadata.insert("cache_drop".into(), cache_drop);
    for &rows in &plan.file_sizes {
        let _ = fs::remove_file(root.join(data_path(rows).strip_prefix("/").unwrap()));
    }
    Ok(outcome)
}

/// Linear-interpolated percentile of sorted samples, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of nothing");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub scenario: String,
    pub strategy: String,
    pub rows: usize,
    pub guard: usize,
    pub fs_type: String,
    pub runs: usize,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Mean, 10th and 90th percentile of elapsed time per cell.
pub fn report(records: &[BenchRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(String, String, usize, usize, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.scenario.clone(), r.strategy.clone(), r.rows, r.guard, r.fs_type.clone()))
            .or_default()
            .push(r.elapsed);
    }
    groups
        .into_iter()
        .map(|((scenario, strategy, rows, guard, fs_type), mut v)| {
            v.sort_by(f64::total_cmp);
            CellSummary {
                scenario,
                strategy,
                rows,
                guard,
                fs_type,
                runs: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                p10: percentile(&v, 0.1),
                p90: percentile(&v, 0.9),
            }
        })
        .collect()
}

pub fn format_summary(summary: &[CellSummary]) -> String {
    let mut out = format!(
        "{:<14} {:<13} {:>6} {:>5} {:<9} {:>4} {:>12} {:>12} {:>12}\n",
        "scenario", "strategy", "rows", "guard", "fs", "runs", "mean_ms", "p10_ms", "p90_ms"
    );
    for c in summary {
        out.push_str(&format!(
            "{:<14} {:<13} {:>6} {:>5} {:<9} {:>4} {:>12.4} {:>12.4} {:>12.4}\n",
            c.scenario,
            c.strategy,
            c.rows,
            c.guard,
            c.fs_type,
            c.runs,
            c.mean * 1e3,
            c.p10 * 1e3,
            c.p90 * 1e3
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TimelineConfig {
    pub ticks: usize,
    /// Bytes read per tick.
    pub tick_bytes: usize,
    /// First tick of the sensitive region.
    pub protected_tick: usize,
    /// Ticks covered by the sensitive region.
    pub protected_ticks: usize,
    /// Independent runs; each tick reports the median over runs.
    pub runs: usize,
    pub seed: u64,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        TimelineConfig {
            ticks: 200,
            tick_bytes: 64 << 10,
            protected_tick: 100,
            protected_ticks: 5,
            runs: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Timeline {
    /// Bytes per second, one entry per tick.
    pub throughput: Vec<f64>,
    pub protected: std::ops::Range<usize>,
}

impl Timeline {
    fn median(v: &[f64]) -> f64 {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        percentile(&v, 0.5)
    }

    pub fn pre_median(&self) -> f64 {
        Self::median(&self.throughput[..self.protected.start])
    }

    pub fn window_mean(&self) -> f64 {
        let w = &self.throughput[self.protected.clone()];
        w.iter().sum::<f64>() / w.len() as f64
    }

    pub fn post_median(&self) -> f64 {
        Self::median(&self.throughput[self.protected.end..])
    }

    /// Throughput dips in the protected window and recovers after it.
    pub fn shape_check(&self) -> bool {
        let pre = self.pre_median();
        self.window_mean() < 0.8 * pre && self.post_median() >= 0.8 * pre
    }
}

/// The policy the timeline run protects: emails redacted, amounts noised.
pub fn timeline_policy() -> PolicySpec {
    let doc = json!({
        "do_read": true,
        "do_write": false,
        "rules": [
            {"patterns": [{"type": "re", "spec": datagen::EMAIL_REGEX}],
             "transformation": {"type": "redact"}},
            {"patterns": [{"type": "re", "spec": r"\$(\d+\.\d{2})"}],
             "transformation": {"type": "diff_priv", "mechanism": "laplace", "e": 0.1, "d": 0.0}}
        ]
    });
    parse_policy(doc.to_string().as_bytes()).expect("timeline policy is valid")
}

/// Build the timeline file: plain prose everywhere except the protected
/// ticks, which are packed with emails and amounts.
pub fn timeline_content(cfg: &TimelineConfig) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words = crate::domains::words();
    let mut out = Vec::with_capacity(cfg.ticks * cfg.tick_bytes);
    for tick in 0..cfg.ticks {
        let end = (tick + 1) * cfg.tick_bytes;
        let hot = (cfg.protected_tick..cfg.protected_tick + cfg.protected_ticks).contains(&tick);
        while out.len() < end {
            let line = if hot {
                let cents: u32 = rand::Rng::gen_range(&mut rng, 100..100_000);
                let w = words.choose(&mut rng).unwrap();
                format!("{w}{}@{w}-mail.com ${}.{:02}\n", cents % 90 + 10, cents / 100, cents % 100)
            } else {
                let n = rand::Rng::gen_range(&mut rng, 4..12);
                let mut l: Vec<&str> = Vec::with_capacity(n);
                for _ in 0..n {
                    l.push(words.choose(&mut rng).unwrap());
                }
                l.join(" ") + "\n"
            };
            out.extend_from_slice(line.as_bytes());
        }
        out.truncate(end);
    }
    out
}

/// Scripted sequential read of the timeline file through `target`, one
/// `tick_bytes` read per tick, repeated `runs` times.
pub fn timeline(target: &dyn Target, path: &Path, cfg: &TimelineConfig) -> io::Result<Timeline> {
    let mut per_tick = vec![Vec::with_capacity(cfg.runs); cfg.ticks];
    let mut buf = vec![0; cfg.tick_bytes];
    for _ in 0..cfg.runs.max(1) {
        let mut f = target.open_read(path)?;
        for (tick, samples) in per_tick.iter_mut().enumerate() {
            let t0 = Instant::now();
            let n = f.read_at(&mut buf, (tick * cfg.tick_bytes) as u64)?;
            black_box(&buf[..n]);
            let dt = t0.elapsed().as_secs_f64().max(1e-9);
            samples.push(n as f64 / dt);
        }
        f.close()?;
    }
    Ok(Timeline {
        throughput: per_tick.iter().map(|s| Timeline::median(s)).collect(),
        protected: cfg.protected_tick..(cfg.protected_tick + cfg.protected_ticks).min(cfg.ticks),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TransformKind {
    None,
    Redact,
    Mask,
    DpNoise,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::None,
        TransformKind::Redact,
        TransformKind::Mask,
        TransformKind::DpNoise,
    ];
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::None => "none",
            TransformKind::Redact => "redact",
            TransformKind::Mask => "mask",
            TransformKind::DpNoise => "dp_noise",
        })
    }
}

/// Total seconds per run for transforming `values` numeric strings, for each
/// transformation kind.
pub fn transform_costs(
    values: usize,
    runs: usize,
    seed: u64,
) -> BTreeMap<TransformKind, Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<u8>> = (0..values)
        .map(|_| {
            let cents: u32 = rand::Rng::gen_range(&mut rng, 100..=100_000);
            format!("{}.{:02}", cents / 100, cents % 100).into_bytes()
        })
        .collect();
    let policy = PolicySpec::empty();
    let ctx = TransformContext::new(seed, &policy);
    let dp = crate::policy::TransformSpec::DiffPriv {
        mechanism: crate::policy::DpMechanism::Laplace,
        epsilon: 0.1,
        delta: 0.0,
        clamp: None,
    };
    let mut out = BTreeMap::new();
    for kind in TransformKind::ALL {
        let mut times = Vec::with_capacity(runs);
        for run in 0..=runs {
            let t0 = Instant::now();
            for (i, v) in inputs.iter().enumerate() {
                match kind {
                    TransformKind::None => {
                        black_box(v.as_slice());
                    }
                    TransformKind::Redact => {
                        black_box(transform::redact(v, b'*'));
                    }
                    TransformKind::Mask => {
                        black_box(transform::mask(v, "icd10", &ctx).ok());
                    }
                    TransformKind::DpNoise => {
                        black_box(transform::dp_noise(v, &dp, &ctx, (i * 8) as u64).ok());
                    }
                }
            }
            // Run 0 warms up and is discarded.
            if run > 0 {
                times.push(t0.elapsed().as_secs_f64());
            }
        }
        out.insert(kind, times);
    }
    out
}
