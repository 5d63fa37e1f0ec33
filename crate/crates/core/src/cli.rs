//! Command-line front end: configuration documents, versioned CSV
//! trajectories, run manifests and the simulate / predict / compare /
//! normality pipelines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plot::{self, to_db, Histogram2d, Series};
use crate::record::{Provenance, TrajectoryRecord};
use crate::sim::{self, ExperimentConfig, NormalityReport, PairSampleSet};
use crate::theory::run_theory;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA: u32 = 1;
pub const HISTOGRAM_BINS: usize = 40;
/// Points kept per plotted curve.
const PLOT_POINTS: usize = 500;

#[derive(Debug, Parser)]
#[command(name = "l1rls", version, about = "ℓ1-RLS sparse identification: Monte Carlo curves, theory and comparisons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ensemble-averaged learning curves from independent runs.
    Simulate(RunArgs),
    /// Learning curves predicted by the transient model.
    Predict(RunArgs),
    /// Deviations, verdict and plots for an empirical / theoretical pair.
    Compare(CompareArgs),
    /// Captured weight-error pairs, histograms and Henze-Zirkler decisions.
    Normality(RunArgs),
    /// The full sparse-identification experiment with the built-in preset.
    ReproduceFigures(ReproduceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `ensemble.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `ensemble.n_runs`.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub empirical: PathBuf,
    pub theoretical: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the run count of the learning-curve ensembles.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub overwrite: bool,
}

/// Record of one successful invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub output_dir: String,
    pub duration_secs: f64,
    /// Configuration documents by stage, as run.
    pub configs: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// What a command produced, plus lines worth showing on the terminal.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub summary: Vec<String>,
}

type Outputs = BTreeMap<String, PathBuf>;

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let start = Instant::now();
    let mut configs = BTreeMap::new();
    let mut inputs = BTreeMap::new();
    let mut summary = Vec::new();
    let (name, out, outputs) = match &cli.command {
        Command::Simulate(a) => {
            let cfg = load_with_overrides(a)?;
            prepare_dir(&a.out)?;
            refuse_existing(&a.out, &["empirical.csv", "manifest-simulate.json"], a.overwrite)?;
            configs.insert("simulate".to_string(), config_toml(&cfg)?);
            let (_, outputs) = simulate_stage(&cfg, &a.out)?;
            ("simulate", &a.out, outputs)
        }
        Command::Predict(a) => {
            let cfg = load_with_overrides(a)?;
            prepare_dir(&a.out)?;
            refuse_existing(&a.out, &["theoretical.csv", "manifest-predict.json"], a.overwrite)?;
            configs.insert("predict".to_string(), config_toml(&cfg)?);
            let (_, outputs) = predict_stage(&cfg, &a.out)?;
            ("predict", &a.out, outputs)
        }
        Command::Compare(a) => {
            prepare_dir(&a.out)?;
            refuse_existing(&a.out, &["comparison.json", "manifest-compare.json"], a.overwrite)?;
            inputs.insert("empirical".to_string(), a.empirical.display().to_string());
            inputs.insert("theoretical".to_string(), a.theoretical.display().to_string());
            let (report, outputs) = compare_stage(&a.empirical, &a.theoretical, &a.out, &Tolerances::default())?;
            summary.extend(report.lines());
            ("compare", &a.out, outputs)
        }
        Command::Normality(a) => {
            let cfg = load_with_overrides(a)?;
            prepare_dir(&a.out)?;
            refuse_existing(&a.out, &["normality.json", "manifest-normality.json"], a.overwrite)?;
            configs.insert("normality".to_string(), config_toml(&cfg)?);
            let (reports, outputs) = normality_stage(&cfg, &a.out)?;
            summary.extend(reports.iter().map(normality_line));
            ("normality", &a.out, outputs)
        }
        Command::ReproduceFigures(a) => {
            let result = reproduce_figures(&a.out, a.seed, a.runs, a.overwrite)?;
            configs = result.configs;
            summary = result.summary.lines();
            ("reproduce-figures", &a.out, result.outputs)
        }
    };

    let manifest = RunManifest {
        command: name.to_string(),
        version: VERSION.to_string(),
        output_dir: out.display().to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
        configs,
        inputs,
        outputs: outputs.iter().map(|(k, v)| (k.clone(), v.display().to_string())).collect(),
    };
    let manifest_path = out.join(manifest_name(name));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&manifest_path, json.as_bytes())?;
    Ok(Outcome { manifest, manifest_path, summary })
}

fn manifest_name(command: &str) -> String {
    if command == "reproduce-figures" {
        "manifest.json".to_string()
    } else {
        format!("manifest-{command}.json")
    }
}

fn load_with_overrides(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&a.config)?;
    apply_overrides(&mut cfg, a.seed, a.runs)?;
    Ok(cfg)
}

/// Reads and validates a TOML configuration document.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, seed: Option<u64>, runs: Option<usize>) -> Result<()> {
    if let Some(seed) = seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(runs) = runs {
        cfg.ensemble.n_runs = runs;
    }
    cfg.validate()
}

pub fn config_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 of the configuration document.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(config_toml(cfg)?.as_bytes()))
}

/// Hash of the fields the transient model reads; seed, run count and
/// capture settings are excluded.
pub fn theory_config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut view = cfg.clone();
    view.ensemble.seed = 0;
    view.ensemble.n_runs = 0;
    view.capture = Default::default();
    config_hash(&view)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn refuse_existing(dir: &Path, names: &[&str], overwrite: bool) -> Result<()> {
    if overwrite {
        return Ok(());
    }
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            return Err(Error::Config(format!("{} already exists; pass --overwrite to replace it", path.display())));
        }
    }
    Ok(())
}

/// Writes through a temporary file in the same directory and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Empirical => "empirical",
        Provenance::Theoretical => "theoretical",
    }
}

pub fn trajectory_columns(filter_len: usize) -> Vec<String> {
    let mut cols = vec!["n".to_string()];
    cols.extend((1..=filter_len).map(|i| format!("mean_w_{i}")));
    cols.extend(["msd", "mse", "emse"].map(String::from));
    cols
}

/// CSV text of a trajectory: one comment line carrying the tool version,
/// schema, provenance and configuration hash, a column header, then one row
/// per iteration with 17 significant digits.
pub fn trajectory_csv(record: &TrajectoryRecord, config_hash: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# l1rls v{VERSION} schema={SCHEMA} provenance={} initial_msd={:.16e} config={config_hash}",
        provenance_name(record.provenance),
        record.initial_msd
    );
    s.push_str(&trajectory_columns(record.filter_len()).join(","));
    s.push('\n');
    for n in 0..record.len() {
        let _ = write!(s, "{}", n + 1);
        for v in record.mean_w[n].iter().chain([&record.msd[n], &record.mse[n], &record.emse[n]]) {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub record: TrajectoryRecord,
    pub version: String,
    pub config_hash: String,
}

pub fn parse_trajectory_csv(text: &str, origin: &str) -> Result<TrajectoryFile> {
    let bad = |line: usize, msg: &str| Error::Input(format!("{origin}:{line}: {msg}"));
    let mut lines = text.lines();
    let meta = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let mut fields = BTreeMap::new();
    let mut tokens = meta.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some("l1rls") {
        return Err(bad(1, "missing l1rls header comment"));
    }
    let version = tokens.next().ok_or_else(|| bad(1, "missing tool version"))?.to_string();
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(1, &format!("malformed header field {tok:?}")))?;
        fields.insert(k, v);
    }
    let field = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, &format!("header lacks {k}")));
    let schema = field("schema")?;
    if schema != SCHEMA.to_string() {
        return Err(bad(1, &format!("schema {schema} is not supported (expected {SCHEMA})")));
    }
    let provenance = match field("provenance")? {
        "empirical" => Provenance::Empirical,
        "theoretical" => Provenance::Theoretical,
        other => return Err(bad(1, &format!("unknown provenance {other:?}"))),
    };
    let initial_msd: f64 = field("initial_msd")?.parse().map_err(|_| bad(1, "initial_msd is not a number"))?;
    let config_hash = field("config")?.to_string();

    let header = lines.next().ok_or_else(|| bad(2, "missing column header"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 5 {
        return Err(bad(2, "too few columns"));
    }
    let filter_len = columns.len() - 4;
    if columns.iter().zip(trajectory_columns(filter_len)).any(|(a, b)| *a != b) {
        return Err(bad(2, "column header does not match the trajectory schema"));
    }

    let mut record = TrajectoryRecord::with_capacity(provenance, initial_msd, 0);
    for (k, line) in lines.enumerate() {
        let lineno = k + 3;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(bad(lineno, &format!("expected {} cells, found {}", columns.len(), cells.len())));
        }
        if cells[0].parse::<usize>().ok() != Some(k + 1) {
            return Err(bad(lineno, &format!("expected iteration {}", k + 1)));
        }
        let values: Vec<f64> = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(lineno, "unparsable number"))?;
        record.push(values[..filter_len].to_vec(), values[filter_len], values[filter_len + 1], values[filter_len + 2]);
    }
    record.validate().map_err(|e| Error::Input(format!("{origin}: {e}")))?;
    Ok(TrajectoryFile { record, version, config_hash })
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    parse_trajectory_csv(&text, &path.display().to_string())
}

pub fn simulate_stage(cfg: &ExperimentConfig, out: &Path) -> Result<(TrajectoryRecord, Outputs)> {
    let (record, _) = sim::run_ensemble(cfg)?;
    let path = out.join("empirical.csv");
    write_atomic(&path, trajectory_csv(&record, &config_hash(cfg)?).as_bytes())?;
    Ok((record, Outputs::from([("empirical".to_string(), path)])))
}

pub fn predict_stage(cfg: &ExperimentConfig, out: &Path) -> Result<(TrajectoryRecord, Outputs)> {
    cfg.validate()?;
    let record = run_theory(&cfg.system_spec()?, cfg.ensemble.n_iters)?;
    let path = out.join("theoretical.csv");
    write_atomic(&path, trajectory_csv(&record, &theory_config_hash(cfg)?).as_bytes())?;
    Ok((record, Outputs::from([("theoretical".to_string(), path)])))
}

/// Pass/fail thresholds of a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    /// Largest mean |Δw_i| over the final `weight_window` iterations.
    pub weight_abs: f64,
    pub weight_window: usize,
    /// Largest dB deviation of MSE, EMSE and MSD from iteration `db_from` on.
    pub db: f64,
    pub db_from: usize,
    /// dB deviation of the MSE averaged over the final `terminal_window`
    /// iterations.
    pub terminal_db: f64,
    pub terminal_window: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            weight_abs: 0.02,
            weight_window: 200,
            db: 1.0,
            db_from: 100,
            terminal_db: 0.5,
            terminal_window: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelDeviation {
    pub name: String,
    pub unit: String,
    pub max_abs: f64,
    /// Iteration of the largest deviation.
    pub max_at: usize,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Iteration where a per-iteration check is tightest.
    pub at: Option<usize>,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), value, tolerance, at: None, pass: value <= tolerance }
    }

    fn at(name: &str, (value, at): (f64, usize), tolerance: f64) -> Self {
        Self { at: Some(at), ..Self::new(name, value, tolerance) }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub rows: usize,
    pub filter_len: usize,
    pub tolerances: Tolerances,
    pub channels: Vec<ChannelDeviation>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ComparisonReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelDeviation> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                check_line(c)
            })
            .collect();
        out.push(format!("verdict: {}", if self.pass { "PASS" } else { "FAIL" }));
        out
    }
}

fn check_line(c: &Check) -> String {
    let at = c.at.map(|n| format!(" at n={n}")).unwrap_or_default();
    format!("{} {}: {:.4}{at} (tolerance {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance)
}

/// `|10 log10 a − 10 log10 b|`, zero when the values coincide.
pub fn db_deviation(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (to_db(a) - to_db(b)).abs()
    }
}

fn deviation(name: &str, unit: &str, devs: impl Iterator<Item = f64>) -> ChannelDeviation {
    let (mut max_abs, mut max_at, mut sum, mut count) = (0.0f64, 0usize, 0.0, 0usize);
    for (k, d) in devs.enumerate() {
        if d > max_abs || d.is_nan() {
            max_abs = if d.is_nan() { f64::INFINITY } else { d };
            max_at = k + 1;
        }
        sum += d;
        count += 1;
    }
    ChannelDeviation {
        name: name.to_string(),
        unit: unit.to_string(),
        max_abs,
        max_at,
        mean_abs: if count > 0 { sum / count as f64 } else { 0.0 },
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn compare_records(emp: &TrajectoryRecord, th: &TrajectoryRecord, tol: &Tolerances) -> Result<ComparisonReport> {
    emp.validate()?;
    th.validate()?;
    if emp.len() != th.len() {
        return Err(Error::Input(format!("trajectories have {} and {} rows", emp.len(), th.len())));
    }
    if emp.filter_len() != th.filter_len() {
        return Err(Error::Input(format!(
            "trajectories have {} and {} weight columns",
            emp.filter_len(),
            th.filter_len()
        )));
    }
    let rows = emp.len();
    let l = emp.filter_len();

    let mut channels: Vec<ChannelDeviation> = (0..l)
        .map(|i| {
            deviation(
                &format!("mean_w_{}", i + 1),
                "linear",
                emp.mean_w.iter().zip(&th.mean_w).map(|(a, b)| (a[i] - b[i]).abs()),
            )
        })
        .collect();
    let db_channels = [("msd", &emp.msd, &th.msd), ("mse", &emp.mse, &th.mse), ("emse", &emp.emse, &th.emse)];
    for (name, a, b) in db_channels {
        channels.push(deviation(name, "dB", a.iter().zip(b.iter()).map(|(x, y)| db_deviation(*x, *y))));
    }

    let window = tol.weight_window.min(rows);
    let weight_dev = (0..l)
        .map(|i| {
            let tail = rows - window..rows;
            let sum: f64 = tail.map(|n| (emp.mean_w[n][i] - th.mean_w[n][i]).abs()).sum();
            if window == 0 { 0.0 } else { sum / window as f64 }
        })
        .fold(0.0f64, f64::max);

    let from = tol.db_from.max(1) - 1;
    let late_max = |a: &[f64], b: &[f64]| {
        let (mut worst, mut at) = (0.0f64, from + 1);
        for (k, (x, y)) in a.iter().zip(b).enumerate().skip(from) {
            let d = db_deviation(*x, *y);
            if d > worst || d.is_nan() {
                worst = if d.is_nan() { f64::INFINITY } else { d };
                at = k + 1;
            }
        }
        (worst, at)
    };
    let tw = tol.terminal_window.min(rows).max(1);
    let terminal = if rows == 0 { 0.0 } else { db_deviation(mean(&emp.mse[rows - tw..]), mean(&th.mse[rows - tw..])) };

    let checks = vec![
        Check::new("mean weights, final-window deviation", weight_dev, tol.weight_abs),
        Check::at("mse dB deviation", late_max(&emp.mse, &th.mse), tol.db),
        Check::at("emse dB deviation", late_max(&emp.emse, &th.emse), tol.db),
        Check::at("msd dB deviation", late_max(&emp.msd, &th.msd), tol.db),
        Check::new("terminal mse dB deviation", terminal, tol.terminal_db),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(ComparisonReport { rows, filter_len: l, tolerances: tol.clone(), channels, checks, pass })
}

fn thin(values: &[f64], map: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let step = values.len().div_ceil(PLOT_POINTS).max(1);
    let mut pts: Vec<(f64, f64)> = values.iter().enumerate().step_by(step).map(|(k, v)| ((k + 1) as f64, map(*v))).collect();
    if let Some(last) = values.len().checked_sub(1) {
        if last % step != 0 {
            pts.push(((last + 1) as f64, map(values[last])));
        }
    }
    pts
}

/// Mean-weight, MSE/EMSE and MSD figures for a trajectory pair.
pub fn comparison_plots(emp: &TrajectoryRecord, th: &TrajectoryRecord, out: &Path, tag: &str) -> Result<Outputs> {
    let id = |x: f64| x;
    let mut outputs = Outputs::new();

    let mut series = Vec::new();
    for i in 0..emp.filter_len() {
        let label = if i == 0 { "empirical" } else { "" };
        series.push(Series::solid(label, 1 + i % 8, thin(&emp.weight_channel(i), id)));
    }
    for i in 0..th.filter_len() {
        let label = if i == 0 { "theory" } else { "" };
        series.push(Series::dashed(label, 0, thin(&th.weight_channel(i), id)));
    }
    let path = out.join("weights.svg");
    plot::write_line_chart(&path, &format!("Mean weights{tag}"), "iteration n", "E{w_i}", &series)?;
    outputs.insert("plot_weights".to_string(), path);

    let series = vec![
        Series::solid("MSE empirical", 1, thin(&emp.mse, to_db)),
        Series::dashed("MSE theory", 0, thin(&th.mse, to_db)),
        Series::solid("EMSE empirical", 2, thin(&emp.emse, to_db)),
        Series::dashed("EMSE theory", 0, thin(&th.emse, to_db)),
    ];
    let path = out.join("mse_emse.svg");
    plot::write_line_chart(&path, &format!("MSE and EMSE{tag}"), "iteration n", "dB", &series)?;
    outputs.insert("plot_mse_emse".to_string(), path);

    let series = vec![
        Series::solid("MSD empirical", 1, thin(&emp.msd, to_db)),
        Series::dashed("MSD theory", 0, thin(&th.msd, to_db)),
    ];
    let path = out.join("msd.svg");
    plot::write_line_chart(&path, &format!("MSD{tag}"), "iteration n", "dB", &series)?;
    outputs.insert("plot_msd".to_string(), path);
    Ok(outputs)
}

pub fn compare_stage(
    empirical: &Path,
    theoretical: &Path,
    out: &Path,
    tol: &Tolerances,
) -> Result<(ComparisonReport, Outputs)> {
    let emp = read_trajectory_csv(empirical)?;
    let th = read_trajectory_csv(theoretical)?;
    let report = compare_records(&emp.record, &th.record, tol)?;
    let mut outputs = comparison_plots(&emp.record, &th.record, out, "")?;
    let path = out.join("comparison.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    outputs.insert("comparison".to_string(), path);
    Ok((report, outputs))
}

fn pair_tag(set: &PairSampleSet) -> String {
    format!("n{}_w{}_w{}", set.instant, set.pair.0, set.pair.1)
}

pub fn samples_csv(set: &PairSampleSet, config_hash: &str) -> String {
    let (i, j) = set.pair;
    let mut s = format!(
        "# l1rls v{VERSION} schema={SCHEMA} instant={} pair={i},{j} config={config_hash}\nw_tilde_{i},w_tilde_{j}\n",
        set.instant
    );
    for [a, b] in &set.samples {
        let _ = writeln!(s, "{a:.16e},{b:.16e}");
    }
    s
}

pub fn histogram_csv(hist: &Histogram2d) -> String {
    let mut s = String::from("x_lo,x_hi,y_lo,y_hi,count\n");
    let bins = hist.bins();
    for i in 0..bins {
        for j in 0..bins {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                hist.x_edges[i],
                hist.x_edges[i + 1],
                hist.y_edges[j],
                hist.y_edges[j + 1],
                hist.counts[i][j]
            );
        }
    }
    s
}

fn normality_line(r: &NormalityReport) -> String {
    let (i, j) = r.pair;
    match (r.reject, r.p_value, &r.failure) {
        (Some(reject), Some(p), _) => format!(
            "pair ({i},{j}) at n={}: {} normality (p = {p:.4}, {} samples)",
            r.instant,
            if reject { "rejects" } else { "does not reject" },
            r.samples
        ),
        (_, _, Some(msg)) => format!("pair ({i},{j}) at n={}: not evaluated ({msg})", r.instant),
        _ => format!("pair ({i},{j}) at n={}: not evaluated", r.instant),
    }
}

pub fn normality_stage(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<NormalityReport>, Outputs)> {
    if cfg.capture.instants.is_empty() || cfg.capture.samples == 0 {
        return Err(Error::Config("capture.instants, capture.pairs and capture.samples must be set".into()));
    }
    let sets = sim::collect_pair_samples(cfg)?;
    let reports = sim::normality_audit(&sets);
    let hash = config_hash(cfg)?;
    let mut outputs = Outputs::new();
    for set in &sets {
        let tag = pair_tag(set);
        let path = out.join(format!("samples_{tag}.csv"));
        write_atomic(&path, samples_csv(set, &hash).as_bytes())?;
        outputs.insert(format!("samples_{tag}"), path);

        let hist = Histogram2d::new(&set.samples, HISTOGRAM_BINS)?;
        let path = out.join(format!("hist_{tag}.csv"));
        write_atomic(&path, histogram_csv(&hist).as_bytes())?;
        outputs.insert(format!("hist_{tag}"), path);

        let (i, j) = set.pair;
        let path = out.join(format!("hist_{tag}.svg"));
        let title = format!("Weight-error pair ({i}, {j}) at n = {}", set.instant);
        plot::write_heatmap(&path, &title, &format!("w~_{i}"), &format!("w~_{j}"), &hist)?;
        outputs.insert(format!("plot_hist_{tag}"), path);
    }
    let path = out.join("normality.json");
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    outputs.insert("normality".to_string(), path);
    Ok((reports, outputs))
}

/// The learning-curve preset at a stronger input correlation, reported
/// without a pass/fail gate.
pub fn high_correlation_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.signal.rho = 0.9;
    cfg.signal.sigma_s2 = 0.19;
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproductionSummary {
    pub checks: Vec<Check>,
    pub normality: Vec<NormalityReport>,
    /// Checks of the ρ = 0.9 comparison, informational only.
    pub high_correlation: Vec<Check>,
    pub pass: bool,
}

impl ReproductionSummary {
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.checks {
            out.push(check_line(c));
        }
        for r in &self.normality {
            let ok = r.reject == Some(false);
            out.push(format!("{} {}", if ok { "PASS" } else { "FAIL" }, normality_line(r)));
        }
        for c in &self.high_correlation {
            out.push(format!("INFO rho=0.9 {}: {:.4}", c.name, c.value));
        }
        out.push(format!("verdict: {}", if self.pass { "PASS" } else { "FAIL" }));
        out
    }
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub summary: ReproductionSummary,
    pub configs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, PathBuf>,
}

/// Runs the preset experiment end to end: learning curves and theory at
/// ρ = 0.6 and ρ = 0.9, the comparison and the normality audit.
pub fn reproduce_figures(out: &Path, seed: Option<u64>, runs: Option<usize>, overwrite: bool) -> Result<Reproduction> {
    if out.exists() {
        let populated = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if populated && !overwrite {
            return Err(Error::Config(format!(
                "{} is not empty; pass --overwrite to write into it",
                out.display()
            )));
        }
    }
    prepare_dir(out)?;
    let mut configs = BTreeMap::new();
    let mut outputs = Outputs::new();

    let mut cfg = ExperimentConfig::reference();
    cfg.capture = Default::default();
    apply_overrides(&mut cfg, seed, runs)?;
    configs.insert("learning_curves".to_string(), config_toml(&cfg)?);
    let (emp, o) = simulate_stage(&cfg, out)?;
    outputs.extend(o);
    let (th, o) = predict_stage(&cfg, out)?;
    outputs.extend(o);
    let report = compare_records(&emp, &th, &Tolerances::default())?;
    outputs.extend(comparison_plots(&emp, &th, out, " (rho = 0.6)")?);
    let path = out.join("comparison.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    outputs.insert("comparison".to_string(), path);

    let high_dir = out.join("rho_0.9");
    prepare_dir(&high_dir)?;
    let mut high = high_correlation_config();
    high.capture = Default::default();
    apply_overrides(&mut high, seed, runs)?;
    configs.insert("learning_curves_rho_0.9".to_string(), config_toml(&high)?);
    let (emp_hi, o) = simulate_stage(&high, &high_dir)?;
    outputs.extend(o.into_iter().map(|(k, v)| (format!("{k}_rho_0.9"), v)));
    let (th_hi, o) = predict_stage(&high, &high_dir)?;
    outputs.extend(o.into_iter().map(|(k, v)| (format!("{k}_rho_0.9"), v)));
    let report_hi = compare_records(&emp_hi, &th_hi, &Tolerances::default())?;
    let o = comparison_plots(&emp_hi, &th_hi, &high_dir, " (rho = 0.9)")?;
    outputs.extend(o.into_iter().map(|(k, v)| (format!("{k}_rho_0.9"), v)));
    let path = high_dir.join("comparison.json");
    let json = serde_json::to_string_pretty(&report_hi).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    outputs.insert("comparison_rho_0.9".to_string(), path);

    let series = vec![
        Series::solid("rho = 0.6 empirical", 1, thin(&emp.msd, to_db)),
        Series::dashed("rho = 0.6 theory", 0, thin(&th.msd, to_db)),
        Series::solid("rho = 0.9 empirical", 2, thin(&emp_hi.msd, to_db)),
        Series::dashed("rho = 0.9 theory", 0, thin(&th_hi.msd, to_db)),
    ];
    let path = out.join("msd_rho.svg");
    plot::write_line_chart(&path, "MSD curves", "iteration n", "dB", &series)?;
    outputs.insert("plot_msd_rho".to_string(), path);

    let mut norm = ExperimentConfig::reference_normality();
    if let Some(seed) = seed {
        norm.ensemble.seed = seed;
    }
    configs.insert("normality".to_string(), config_toml(&norm)?);
    let (normality, o) = normality_stage(&norm, out)?;
    outputs.extend(o);

    let ungated = ["msd dB deviation", "mse dB deviation", "emse dB deviation"];
    let high_correlation = report_hi.checks.iter().filter(|c| ungated.contains(&c.name.as_str())).cloned().collect();
    let pass = report.pass && normality.iter().all(|r| r.reject == Some(false));
    let summary = ReproductionSummary { checks: report.checks.clone(), normality, high_correlation, pass };
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    outputs.insert("summary".to_string(), path);

    Ok(Reproduction { summary, configs, outputs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(provenance: Provenance, rows: usize) -> TrajectoryRecord {
        let mut r = TrajectoryRecord::with_capacity(provenance, 3.3, rows);
        for n in 0..rows {
            let t = n as f64;
            r.push(vec![0.1 * t, -1.0 / (t + 3.0)], 1.0 / (t + 1.0), 0.09 + 0.5 / (t + 1.0), 0.5 / (t + 1.0));
        }
        r
    }

    #[test]
    fn csv_round_trips_exactly() {
        let mut r = record(Provenance::Theoretical, 7);
        r.mse[3] = 0.1 + 0.2;
        r.mean_w[2][1] = std::f64::consts::PI * 1e-300;
        let text = trajectory_csv(&r, "abc");
        let back = parse_trajectory_csv(&text, "mem").unwrap();
        assert_eq!(back.record, r);
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.version, format!("v{VERSION}"));
        assert!(text.lines().nth(1).unwrap() == "n,mean_w_1,mean_w_2,msd,mse,emse");
    }

    #[test]
    fn csv_rejects_schema_and_shape_errors() {
        let text = trajectory_csv(&record(Provenance::Empirical, 3), "h");
        let wrong_schema = text.replacen("schema=1", "schema=2", 1);
        assert!(matches!(parse_trajectory_csv(&wrong_schema, "m"), Err(Error::Input(_))));
        let no_header = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(parse_trajectory_csv(&no_header, "m").is_err());
        let short_row = text.replacen("\n2,", "\n2,1.0\n", 1);
        assert!(parse_trajectory_csv(&short_row, "m").is_err());
        let renamed = text.replacen("msd,mse", "msd,mse2", 1);
        assert!(parse_trajectory_csv(&renamed, "m").is_err());
    }

    #[test]
    fn identical_records_compare_clean() {
        let r = record(Provenance::Empirical, 300);
        let report = compare_records(&r, &r, &Tolerances::default()).unwrap();
        assert!(report.pass);
        assert!(report.channels.iter().all(|c| c.max_abs == 0.0 && c.mean_abs == 0.0));
        assert_eq!(report.channels.len(), 2 + 3);
    }

    #[test]
    fn comparison_measures_db_offsets() {
        let a = record(Provenance::Empirical, 300);
        let mut b = a.clone();
        // 1.5 dB above from iteration 151 on, 2 dB at iteration 150
        for n in 150..300 {
            b.msd[n] *= 10f64.powf(0.15);
        }
        b.msd[149] *= 10f64.powf(0.2);
        b.mean_w.iter_mut().for_each(|w| w[0] += 0.03);
        let report = compare_records(&a, &b, &Tolerances::default()).unwrap();
        let msd = report.check("msd dB deviation").unwrap();
        assert!((msd.value - 2.0).abs() < 1e-9 && !msd.pass);
        assert_eq!(report.channel("msd").unwrap().max_at, 150);
        assert_eq!(msd.at, Some(150));
        let w = report.check("mean weights, final-window deviation").unwrap();
        assert!((w.value - 0.03).abs() < 1e-12 && !w.pass);
        assert!(report.check("mse dB deviation").unwrap().pass);
        assert!(!report.pass);
    }

    #[test]
    fn comparison_rejects_mismatched_lengths() {
        let a = record(Provenance::Empirical, 10);
        let b = record(Provenance::Theoretical, 11);
        assert!(matches!(compare_records(&a, &b, &Tolerances::default()), Err(Error::Input(_))));
    }

    #[test]
    fn missing_field_is_named() {
        let cfg = ExperimentConfig::reference();
        let text = config_toml(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        let without: String = text.lines().filter(|l| !l.starts_with("lambda")).map(|l| format!("{l}\n")).collect();
        let err = parse_config(&without).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn config_errors_are_validation_errors() {
        let mut cfg = ExperimentConfig::reference();
        cfg.signal.w_star.pop();
        let text = config_toml(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::reference();
        assert_eq!(apply_overrides(&mut cfg, None, Some(10)).unwrap_err().exit_code(), 2);
        assert!(parse_config("[filter]\nlength = 3\nbogus = 1\n").is_err());
    }

    #[test]
    fn theory_hash_ignores_seed() {
        let a = ExperimentConfig::reference();
        let mut b = a.clone();
        b.ensemble.seed += 1;
        b.ensemble.n_runs = 7;
        assert_eq!(theory_config_hash(&a).unwrap(), theory_config_hash(&b).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn hash_matches_known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let v: Vec<f64> = (0..2000).map(|k| k as f64).collect();
        let pts = thin(&v, |x| x);
        assert!(pts.len() <= PLOT_POINTS + 1);
        assert_eq!(pts[0], (1.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (2000.0, 1999.0));
    }
}
