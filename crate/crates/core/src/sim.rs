//! Monte Carlo ground truth: AR(1) input through a tapped delay line, a sparse
//! FIR system with additive white Gaussian noise, and ensemble statistics of
//! the ℓ1-RLS filter identifying it.
//!
//! Every run owns two ChaCha8 streams derived from the master seed: stream
//! `2r` drives the input process and stream `2r + 1` the measurement noise of
//! run `r`. Ensemble sums are accumulated in run order with compensated
//! summation, so results do not depend on how runs are scheduled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterState;
use crate::record::{Provenance, TrajectoryRecord};
use crate::stats::{henze_zirkler, SampleMatrix};
use crate::theory::SystemSpec;

/// Sparse 32-tap reference system: five decaying positive taps, 22 zeros and
/// the mirrored negative taps.
pub fn reference_w_star() -> Vec<f64> {
    let head = [0.9, 0.7, 0.5, 0.3, 0.1];
    head.iter()
        .copied()
        .chain(std::iter::repeat_n(0.0, 22))
        .chain(head.iter().rev().map(|v| -v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub filter: FilterConfig,
    pub signal: SignalConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub capture: CaptureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Number of taps L.
    pub length: usize,
    pub lambda: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    /// AR(1) correlation factor.
    pub rho: f64,
    /// Innovation variance of the AR(1) input.
    pub sigma_s2: f64,
    /// Measurement noise variance.
    pub sigma_z2: f64,
    pub w_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_iters: usize,
    pub n_runs: usize,
    pub seed: u64,
}

/// Weight-error pairs to capture. `instants[k]` is paired with `pairs[k]`;
/// both are 1-based.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureConfig {
    #[serde(default)]
    pub instants: Vec<usize>,
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub samples: usize,
}

impl ExperimentConfig {
    /// The sparse identification experiment: L = 32, λ = 0.995, δ = 0.25,
    /// ε = 0.1, AR(1) input with ρ = 0.6 and unit variance, σ_z² = 0.09,
    /// 2000 iterations averaged over 500 runs.
    pub fn reference() -> Self {
        Self {
            filter: FilterConfig { length: 32, lambda: 0.995, delta: 0.25, epsilon: 0.1 },
            signal: SignalConfig { rho: 0.6, sigma_s2: 0.64, sigma_z2: 0.09, w_star: reference_w_star() },
            ensemble: EnsembleConfig { n_iters: 2000, n_runs: 500, seed: 20211 },
            capture: CaptureConfig {
                instants: vec![200, 1500],
                pairs: vec![(2, 10), (13, 25)],
                samples: 500,
            },
        }
    }

    /// Reference system set up for the normality audit: 5000 independent runs
    /// up to the last capture instant, one sample per run.
    pub fn reference_normality() -> Self {
        let mut cfg = Self::reference();
        cfg.ensemble.n_iters = 1500;
        cfg.ensemble.n_runs = 5000;
        cfg.capture.samples = 5000;
        cfg
    }

    pub fn len(&self) -> usize {
        self.filter.length
    }

    pub fn is_empty(&self) -> bool {
        self.filter.length == 0
    }

    /// Stationary input variance `σ_s² / (1 − ρ²)`.
    pub fn sigma_x2(&self) -> f64 {
        self.signal.sigma_s2 / (1.0 - self.signal.rho * self.signal.rho)
    }

    pub fn rx(&self) -> DMatrix<f64> {
        rx_toeplitz(self.signal.rho, self.sigma_x2(), self.len())
    }

    pub fn w_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.signal.w_star)
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        SystemSpec::new(
            self.w_star(),
            self.rx(),
            self.signal.sigma_z2,
            self.filter.lambda,
            self.filter.delta,
            self.filter.epsilon,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let f = &self.filter;
        let s = &self.signal;
        if f.length == 0 {
            return bad("filter.length must be positive".into());
        }
        if s.w_star.len() != f.length {
            return bad(format!(
                "signal.w_star has {} entries but filter.length is {}",
                s.w_star.len(),
                f.length
            ));
        }
        if s.w_star.iter().any(|v| !v.is_finite()) {
            return bad("signal.w_star must be finite".into());
        }
        if !(f.lambda > 0.0 && f.lambda < 1.0) {
            return bad(format!("filter.lambda must lie in (0, 1), got {}", f.lambda));
        }
        if !(f.delta >= 0.0 && f.delta.is_finite()) {
            return bad(format!("filter.delta must be >= 0, got {}", f.delta));
        }
        if !(f.epsilon > 0.0 && f.epsilon.is_finite()) {
            return bad(format!("filter.epsilon must be > 0, got {}", f.epsilon));
        }
        if !(s.rho.abs() < 1.0) {
            return bad(format!("signal.rho must satisfy |rho| < 1, got {}", s.rho));
        }
        if !(s.sigma_s2 > 0.0 && s.sigma_s2.is_finite()) {
            return bad(format!("signal.sigma_s2 must be > 0, got {}", s.sigma_s2));
        }
        if !(s.sigma_z2 >= 0.0 && s.sigma_z2.is_finite()) {
            return bad(format!("signal.sigma_z2 must be >= 0, got {}", s.sigma_z2));
        }
        let e = &self.ensemble;
        if e.n_iters == 0 || e.n_runs == 0 {
            return bad("ensemble.n_iters and ensemble.n_runs must be positive".into());
        }
        let c = &self.capture;
        if c.instants.len() != c.pairs.len() {
            return bad(format!(
                "capture.instants ({}) and capture.pairs ({}) must have the same length",
                c.instants.len(),
                c.pairs.len()
            ));
        }
        if let Some(&t) = c.instants.iter().find(|&&t| t == 0 || t > e.n_iters) {
            return bad(format!("capture instant {t} outside [1, {}]", e.n_iters));
        }
        if let Some(&(i, j)) = c.pairs.iter().find(|&&(i, j)| i == 0 || j == 0 || i > f.length || j > f.length) {
            return bad(format!("capture pair ({i}, {j}) outside [1, {}]", f.length));
        }
        if c.samples > e.n_runs {
            return bad(format!(
                "capture.samples ({}) exceeds ensemble.n_runs ({}); each sample needs its own run",
                c.samples, e.n_runs
            ));
        }
        Ok(())
    }
}

/// First-order autoregressive source `x_t = ρ x_{t-1} + s_t`, started from its
/// stationary distribution.
#[derive(Debug, Clone)]
pub struct Ar1 {
    rho: f64,
    innovation_sd: f64,
    state: f64,
}

impl Ar1 {
    pub fn new<R: Rng + ?Sized>(rho: f64, sigma_s2: f64, rng: &mut R) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::Config(format!("AR(1) factor must satisfy |rho| < 1, got {rho}")));
        }
        if !(sigma_s2 > 0.0 && sigma_s2.is_finite()) {
            return Err(Error::Config(format!("innovation variance must be > 0, got {sigma_s2}")));
        }
        let stationary_sd = (sigma_s2 / (1.0 - rho * rho)).sqrt();
        let state = stationary_sd * rng.sample::<f64, _>(StandardNormal);
        Ok(Self { rho, innovation_sd: sigma_s2.sqrt(), state })
    }

    /// Returns the current value and advances the process.
    pub fn next_sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let out = self.state;
        self.state = self.rho * self.state + self.innovation_sd * rng.sample::<f64, _>(StandardNormal);
        out
    }
}

/// `n` samples of a stationary AR(1) sequence.
pub fn ar1_stream(rho: f64, sigma_s2: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ar = Ar1::new(rho, sigma_s2, &mut rng)?;
    Ok((0..n).map(|_| ar.next_sample(&mut rng)).collect())
}

/// Correlation of an AR(1) delay-line regressor: `[R_x]_{ij} = σ_x² ρ^{|i−j|}`.
pub fn rx_toeplitz(rho: f64, sigma_x2: f64, len: usize) -> DMatrix<f64> {
    DMatrix::from_fn(len, len, |i, j| sigma_x2 * rho.powi(i.abs_diff(j) as i32))
}

/// Per-iteration quantities observed in a single run.
#[derive(Debug, Clone, Copy)]
pub struct StepObservation<'a> {
    /// 1-based iteration index.
    pub n: usize,
    pub weights: &'a DVector<f64>,
    /// A priori error `e_n`.
    pub error: f64,
    /// `x_nᵀ w̃_{n-1}`.
    pub excess: f64,
}

fn run_rngs(seed: u64, run: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut input = ChaCha8Rng::seed_from_u64(seed);
    input.set_stream(2 * run as u64);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2 * run as u64 + 1);
    (input, noise)
}

/// Runs one realization for `horizon` iterations, handing every step to `visit`.
pub fn simulate_run<F>(cfg: &ExperimentConfig, run: usize, horizon: usize, mut visit: F) -> Result<()>
where
    F: FnMut(StepObservation<'_>),
{
    let len = cfg.len();
    let w_star = cfg.w_star();
    let noise_sd = cfg.signal.sigma_z2.sqrt();
    let (mut input_rng, mut noise_rng) = run_rngs(cfg.ensemble.seed, run);
    let mut ar = Ar1::new(cfg.signal.rho, cfg.signal.sigma_s2, &mut input_rng)?;
    let mut filter = FilterState::zeros(len, cfg.filter.lambda, cfg.filter.delta, cfg.filter.epsilon)?;

    // x_n = [s_n, s_{n-1}, …, s_{n-L+1}]; fill the L − 1 oldest taps first.
    let mut x = DVector::<f64>::zeros(len);
    let push = |x: &mut DVector<f64>, v: f64| {
        for i in (1..len).rev() {
            x[i] = x[i - 1];
        }
        x[0] = v;
    };
    for _ in 1..len {
        let v = ar.next_sample(&mut input_rng);
        push(&mut x, v);
    }

    for n in 1..=horizon {
        let v = ar.next_sample(&mut input_rng);
        push(&mut x, v);
        let clean = x.dot(&w_star);
        let y = clean + noise_sd * noise_rng.sample::<f64, _>(StandardNormal);
        let excess = x.dot(filter.weights()) - clean;
        let out = filter.step_compact(&x, y).map_err(|e| match e {
            Error::Numerical { iteration, reason, .. } => Error::Numerical { iteration, run: Some(run), reason },
            other => other,
        })?;
        visit(StepObservation { n, weights: filter.weights(), error: out.error, excess });
    }
    Ok(())
}

/// Recorded learning curves of one run, flattened per iteration as
/// `[w_1 … w_L, ‖w̃‖², e², (xᵀw̃)²]`.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub len: usize,
    pub values: Vec<f64>,
}

impl RunTrace {
    pub fn width(&self) -> usize {
        self.len + 3
    }

    pub fn iterations(&self) -> usize {
        self.values.len() / self.width()
    }

    /// Row for iteration `n` (1-based).
    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.width();
        &self.values[(n - 1) * w..n * w]
    }

    pub fn sq_deviation(&self, n: usize) -> f64 {
        self.row(n)[self.len]
    }

    pub fn sq_error(&self, n: usize) -> f64 {
        self.row(n)[self.len + 1]
    }

    pub fn sq_excess(&self, n: usize) -> f64 {
        self.row(n)[self.len + 2]
    }
}

pub fn run_trace(cfg: &ExperimentConfig, run: usize) -> Result<RunTrace> {
    let len = cfg.len();
    let w_star = cfg.w_star();
    let mut values = Vec::with_capacity(cfg.ensemble.n_iters * (len + 3));
    simulate_run(cfg, run, cfg.ensemble.n_iters, |obs| {
        values.extend(obs.weights.iter());
        values.push((obs.weights - &w_star).norm_squared());
        values.push(obs.error * obs.error);
        values.push(obs.excess * obs.excess);
    })?;
    Ok(RunTrace { len, values })
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Weight-error pairs `([w̃_n]_i, [w̃_n]_j)` from independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSampleSet {
    pub instant: usize,
    /// 1-based tap indices.
    pub pair: (usize, usize),
    pub samples: Vec<[f64; 2]>,
}

const RUN_BATCH: usize = 32;

/// Runs `n_runs` realizations and returns the ensemble learning curves plus
/// the configured weight-error captures, one row per run for the first
/// `capture.samples` runs.
pub fn run_ensemble(cfg: &ExperimentConfig) -> Result<(TrajectoryRecord, Vec<PairSampleSet>)> {
    cfg.validate()?;
    let order: Vec<usize> = (0..cfg.ensemble.n_runs).collect();
    accumulate(cfg, &order)
}

fn accumulate(cfg: &ExperimentConfig, order: &[usize]) -> Result<(TrajectoryRecord, Vec<PairSampleSet>)> {
    let len = cfg.len();
    let width = len + 3;
    let n_iters = cfg.ensemble.n_iters;
    let w_star = cfg.signal.w_star.clone();
    let mut sums = vec![CompensatedSum::default(); n_iters * width];
    let mut captures = empty_captures(cfg);

    for batch in order.chunks(RUN_BATCH) {
        let traces: Vec<(usize, RunTrace)> = batch
            .par_iter()
            .map(|&r| run_trace(cfg, r).map(|t| (r, t)))
            .collect::<Result<_>>()?;
        for (run, trace) in &traces {
            for (acc, &v) in sums.iter_mut().zip(&trace.values) {
                acc.add(v);
            }
            if *run < cfg.capture.samples {
                for set in captures.iter_mut() {
                    let row = trace.row(set.instant);
                    let (i, j) = set.pair;
                    set.samples.push([row[i - 1] - w_star[i - 1], row[j - 1] - w_star[j - 1]]);
                }
            }
        }
    }

    let runs = order.len() as f64;
    let initial_msd = w_star.iter().map(|w| w * w).sum();
    let mut record = TrajectoryRecord::with_capacity(Provenance::Empirical, initial_msd, n_iters);
    for row in sums.chunks(width) {
        let mean: Vec<f64> = row.iter().map(|s| s.value() / runs).collect();
        record.push(mean[..len].to_vec(), mean[len], mean[len + 1], mean[len + 2]);
    }
    Ok((record, captures))
}

fn empty_captures(cfg: &ExperimentConfig) -> Vec<PairSampleSet> {
    cfg.capture
        .instants
        .iter()
        .zip(&cfg.capture.pairs)
        .map(|(&instant, &pair)| PairSampleSet {
            instant,
            pair,
            samples: Vec::with_capacity(cfg.capture.samples),
        })
        .collect()
}

/// Collects the configured weight-error captures only, running each of the
/// first `capture.samples` realizations up to the last capture instant.
pub fn collect_pair_samples(cfg: &ExperimentConfig) -> Result<Vec<PairSampleSet>> {
    cfg.validate()?;
    let horizon = cfg.capture.instants.iter().copied().max().unwrap_or(0);
    let points: Vec<(usize, (usize, usize))> =
        cfg.capture.instants.iter().copied().zip(cfg.capture.pairs.iter().copied()).collect();
    let w_star = &cfg.signal.w_star;
    let rows: Vec<Vec<[f64; 2]>> = (0..cfg.capture.samples)
        .into_par_iter()
        .map(|run| {
            let mut row = vec![[0.0; 2]; points.len()];
            simulate_run(cfg, run, horizon, |obs| {
                for (slot, &(instant, (i, j))) in row.iter_mut().zip(&points) {
                    if obs.n == instant {
                        *slot = [obs.weights[i - 1] - w_star[i - 1], obs.weights[j - 1] - w_star[j - 1]];
                    }
                }
            })?;
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut sets = empty_captures(cfg);
    for row in rows {
        for (set, sample) in sets.iter_mut().zip(row) {
            set.samples.push(sample);
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub instant: usize,
    pub pair: (usize, usize),
    pub samples: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    /// Set when the test could not be evaluated.
    pub failure: Option<String>,
}

/// Minimum number of rows a capture needs before it is tested.
pub const MIN_AUDIT_SAMPLES: usize = 100;

/// Henze-Zirkler test of every capture. Degenerate or short samples are
/// reported, not raised.
pub fn normality_audit(sets: &[PairSampleSet]) -> Vec<NormalityReport> {
    sets.iter()
        .map(|set| {
            let base = NormalityReport {
                instant: set.instant,
                pair: set.pair,
                samples: set.samples.len(),
                statistic: None,
                p_value: None,
                reject: None,
                failure: None,
            };
            if set.samples.len() < MIN_AUDIT_SAMPLES {
                return NormalityReport {
                    failure: Some(format!("only {} samples, need {MIN_AUDIT_SAMPLES}", set.samples.len())),
                    ..base
                };
            }
            match SampleMatrix::from_pairs(&set.samples).and_then(|s| henze_zirkler(&s)) {
                Ok(hz) => NormalityReport {
                    statistic: Some(hz.statistic),
                    p_value: Some(hz.p_value),
                    reject: Some(hz.reject),
                    ..base
                },
                Err(e) => NormalityReport { failure: Some(e.to_string()), ..base },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            filter: FilterConfig { length: 6, lambda: 0.98, delta: 0.2, epsilon: 0.1 },
            signal: SignalConfig {
                rho: 0.6,
                sigma_s2: 0.64,
                sigma_z2: 0.09,
                w_star: vec![0.8, 0.0, -0.3, 0.0, 0.0, 0.2],
            },
            ensemble: EnsembleConfig { n_iters: 300, n_runs: 40, seed: 5 },
            capture: CaptureConfig { instants: vec![50, 300], pairs: vec![(1, 2), (4, 6)], samples: 20 },
        }
    }

    #[test]
    fn reference_configuration() {
        let cfg = ExperimentConfig::reference();
        cfg.validate().unwrap();
        assert!((cfg.sigma_x2() - 1.0).abs() < 1e-15);
        let w = reference_w_star();
        assert_eq!(w.len(), 32);
        assert_eq!(&w[..5], &[0.9, 0.7, 0.5, 0.3, 0.1]);
        assert_eq!(&w[27..], &[-0.1, -0.3, -0.5, -0.7, -0.9]);
        assert_eq!(w.iter().filter(|&&v| v == 0.0).count(), 22);
        assert!((w.iter().map(|v| v * v).sum::<f64>() - 3.3).abs() < 1e-14);
        ExperimentConfig::reference_normality().validate().unwrap();
    }

    #[test]
    fn validation_rejects_inconsistent_config() {
        let mut cfg = small_config();
        cfg.signal.w_star.pop();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.capture.samples = 41;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.capture.pairs[0] = (0, 2);
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.capture.instants[1] = 301;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.signal.rho = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ar1_moments() {
        let n = 1_000_000;
        let xs = ar1_stream(0.6, 0.64, n, 17).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        // 2% relative, or the sampling floor where 2% is below it
        let se = ((1.0 + 0.36) / (1.0 - 0.36) / n as f64).sqrt();
        for lag in 1..=5 {
            let c = xs.windows(lag + 1).map(|w| (w[0] - mean) * (w[lag] - mean)).sum::<f64>()
                / (n - lag) as f64
                / var;
            let expect = 0.6f64.powi(lag as i32);
            assert!((c - expect).abs() < (0.02 * expect).max(5.0 * se), "lag {lag}: {c}");
        }
        let white = ar1_stream(0.0, 1.0, 100_000, 3).unwrap();
        let c1 = white.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 100_000.0;
        assert!(c1.abs() < 3.0 / (100_000f64).sqrt());
        assert!(ar1_stream(1.0, 1.0, 10, 1).is_err());
        assert_eq!(ar1_stream(0.6, 0.64, 100, 9).unwrap(), ar1_stream(0.6, 0.64, 100, 9).unwrap());
    }

    #[test]
    fn toeplitz_examples() {
        assert_eq!(rx_toeplitz(0.0, 2.0, 3), DMatrix::identity(3, 3) * 2.0);
        assert_eq!(rx_toeplitz(0.6, 1.0, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]));
    }

    #[test]
    fn delay_line_covariance_matches_toeplitz() {
        let cfg = ExperimentConfig::reference();
        let l = 32;
        let xs = ar1_stream(0.6, 0.64, 1_000_000 + l, 23).unwrap();
        let mut cov = DMatrix::<f64>::zeros(l, l);
        let count = 1_000_000;
        for t in 0..count {
            let x = DVector::from_fn(l, |i, _| xs[t + l - 1 - i]);
            cov.ger(1.0, &x, &x, 1.0);
        }
        cov /= count as f64;
        let rx = cfg.rx();
        let se = (2.0 * (1.0 + 0.36) / (1.0 - 0.36) / count as f64).sqrt();
        for i in 0..l {
            for j in 0..l {
                let tol = (0.02 * rx[(i, j)]).max(6.0 * se * rx[(0, 0)]);
                assert!((cov[(i, j)] - rx[(i, j)]).abs() < tol, "({i},{j}) {} vs {}", cov[(i, j)], rx[(i, j)]);
            }
        }
    }

    #[test]
    fn ensemble_is_seed_deterministic() {
        let cfg = small_config();
        let (a, ca) = run_ensemble(&cfg).unwrap();
        let (b, cb) = run_ensemble(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        a.validate().unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.initial_msd, cfg.signal.w_star.iter().map(|w| w * w).sum::<f64>());
        let mut other = cfg.clone();
        other.ensemble.seed = 6;
        assert_ne!(run_ensemble(&other).unwrap().0.msd, a.msd);
    }

    #[test]
    fn run_order_does_not_matter() {
        let cfg = small_config();
        let forward: Vec<usize> = (0..cfg.ensemble.n_runs).collect();
        let backward: Vec<usize> = forward.iter().rev().copied().collect();
        let (a, _) = accumulate(&cfg, &forward).unwrap();
        let (b, _) = accumulate(&cfg, &backward).unwrap();
        for n in 0..a.len() {
            for (x, y) in [(a.msd[n], b.msd[n]), (a.mse[n], b.mse[n]), (a.emse[n], b.emse[n])] {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn captures_match_between_paths() {
        let cfg = small_config();
        let (_, from_ensemble) = run_ensemble(&cfg).unwrap();
        let direct = collect_pair_samples(&cfg).unwrap();
        assert_eq!(from_ensemble, direct);
        assert_eq!(direct[0].samples.len(), 20);
        // distinct runs give distinct rows
        let mut rows = direct[1].samples.clone();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.dedup();
        assert_eq!(rows.len(), 20);
    }

    #[test]
    fn noiseless_rls_identifies_exactly() {
        let mut cfg = ExperimentConfig::reference();
        cfg.signal.sigma_z2 = 0.0;
        cfg.filter.delta = 0.0;
        cfg.ensemble.n_runs = 1;
        cfg.capture = CaptureConfig::default();
        let (rec, _) = run_ensemble(&cfg).unwrap();
        assert!(rec.msd[1999] <= 1e-10, "terminal msd {}", rec.msd[1999]);
    }

    #[test]
    fn single_run_rls_reaches_noise_floor() {
        let mut cfg = ExperimentConfig::reference();
        cfg.filter.delta = 0.0;
        cfg.ensemble.n_runs = 1;
        cfg.capture = CaptureConfig::default();
        let (rec, _) = run_ensemble(&cfg).unwrap();
        let tail = rec.mse[1800..].iter().sum::<f64>() / 200.0;
        let db = 10.0 * (tail / 0.09).log10();
        assert!(db.abs() < 3.0, "tail mse {tail} ({db} dB)");
        assert!(rec.mse[..50].iter().sum::<f64>() / 50.0 > tail);
    }

    #[test]
    fn mse_minus_emse_tracks_noise_variance() {
        let mut cfg = small_config();
        cfg.ensemble.n_runs = 200;
        let traces: Vec<RunTrace> = (0..200).map(|r| run_trace(&cfg, r).unwrap()).collect();
        let (rec, _) = run_ensemble(&cfg).unwrap();
        // Pointwise 3-SE bands hold at ~99.7% of iterations; require 99% inside
        // and none beyond 5 SE.
        let mut inside = 0;
        let checked = cfg.ensemble.n_iters - 50;
        for n in 51..=cfg.ensemble.n_iters {
            let diffs: Vec<f64> = traces.iter().map(|t| t.sq_error(n) - t.sq_excess(n)).collect();
            let m = diffs.iter().sum::<f64>() / 200.0;
            let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / 199.0).sqrt();
            let se = sd / 200f64.sqrt();
            let gap = rec.mse[n - 1] - rec.emse[n - 1] - 0.09;
            assert!(gap.abs() <= 5.0 * se, "n={n}: gap {gap}, se {se}");
            if gap.abs() <= 3.0 * se {
                inside += 1;
            }
        }
        assert!(inside as f64 >= 0.99 * checked as f64, "{inside}/{checked} within 3 SE");
    }

    #[test]
    fn audit_flags_short_and_degenerate_sets() {
        let short = PairSampleSet { instant: 1, pair: (1, 2), samples: vec![[0.0, 1.0]; 10] };
        let flat = PairSampleSet { instant: 1, pair: (1, 2), samples: (0..200).map(|i| [i as f64, 1.0]).collect() };
        let report = normality_audit(&[short, flat]);
        assert!(report.iter().all(|r| r.failure.is_some() && r.reject.is_none()));
    }
}
