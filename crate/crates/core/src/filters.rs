//! RLS and ℓ1-regularized RLS adaptive filters.
//!
//! Two update forms are provided. [`FilterState::step_original`] follows the
//! gain / weight / inverse-correlation recursions
//!
//! ```text
//! k_n = P_{n-1} x_n / (λ + x_nᵀ P_{n-1} x_n)
//! w_n = w_{n-1} + e_n k_n + δ(λ−1)/λ · (I − k_n x_nᵀ) P_{n-1} sgn(w_{n-1})
//! P_n = λ⁻¹ (P_{n-1} − k_n x_nᵀ P_{n-1})
//! ```
//!
//! and [`FilterState::step_compact`] the equivalent single update
//! `w_n = w_{n-1} + e_n P_n x_n + γ P_n sgn(w_{n-1})` with `γ = δ(λ − 1)`.
//! With `δ = 0` both reduce to the standard exponentially weighted RLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::sgn;

/// Weights and inverse time-averaged correlation of an ℓ1-RLS filter.
#[derive(Debug, Clone)]
pub struct FilterState {
    weights: DVector<f64>,
    p: DMatrix<f64>,
    lambda: f64,
    delta: f64,
    gamma: f64,
    n: u64,
    // scratch buffers, reused across steps
    px: DVector<f64>,
    aux: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// A priori error `y − xᵀ w_{n-1}`.
    pub error: f64,
    /// Gain vector `k_n`; only the original form produces it.
    pub gain: Option<DVector<f64>>,
}

impl FilterState {
    /// Initializes `P = ε I` (that is, `Φ = ε⁻¹ I`) and `w = w0`.
    pub fn new(lambda: f64, delta: f64, epsilon: f64, w0: DVector<f64>) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("forgetting factor must lie in (0, 1), got {lambda}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("regularization delta must be >= 0, got {delta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("initialization epsilon must be > 0, got {epsilon}")));
        }
        let len = w0.len();
        if len == 0 {
            return Err(Error::Config("filter length must be positive".into()));
        }
        if w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial weights must be finite".into()));
        }
        Ok(Self {
            weights: w0,
            p: DMatrix::identity(len, len) * epsilon,
            lambda,
            delta,
            gamma: delta * (lambda - 1.0),
            n: 0,
            px: DVector::zeros(len),
            aux: DVector::zeros(len),
        })
    }

    /// Zero-initialized filter of length `len`.
    pub fn zeros(len: usize, lambda: f64, delta: f64, epsilon: f64) -> Result<Self> {
        Self::new(lambda, delta, epsilon, DVector::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Inverse correlation matrix `P_n = Φ_n⁻¹`.
    pub fn inverse_correlation(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Zero-attractor gain `γ = δ(λ − 1)`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of updates applied so far.
    pub fn iteration(&self) -> u64 {
        self.n
    }

    /// One update in the gain / weight / inverse-correlation form.
    pub fn step_original(&mut self, x: &DVector<f64>, y: f64) -> Result<StepOutput> {
        self.check_input(x, y)?;
        let lambda = self.lambda;
        let error = y - x.dot(&self.weights);

        self.px.gemv(1.0, &self.p, x, 0.0);
        let denom = lambda + x.dot(&self.px);
        self.check_denominator(denom)?;
        let gain = &self.px / denom;

        // (I − k xᵀ) P_{n-1} sgn(w_{n-1})
        let signs = self.weights.map(sgn);
        let p_sign = &self.p * &signs;
        let x_p_sign = x.dot(&p_sign);
        let attractor_scale = self.delta * (lambda - 1.0) / lambda;
        for i in 0..self.len() {
            self.weights[i] += error * gain[i] + attractor_scale * (p_sign[i] - gain[i] * x_p_sign);
        }

        // P_n = λ⁻¹ (P − k (xᵀP))
        self.aux.gemv_tr(1.0, &self.p, x, 0.0);
        self.p.ger(-1.0 / lambda, &gain, &self.aux, 1.0 / lambda);
        symmetrize(&mut self.p);

        self.finish_step()?;
        Ok(StepOutput { error, gain: Some(gain) })
    }

    /// One update in the compact form. `P` is advanced to `P_n` first; the
    /// error and the sign term use the pre-update weights.
    pub fn step_compact(&mut self, x: &DVector<f64>, y: f64) -> Result<StepOutput> {
        self.check_input(x, y)?;
        let lambda = self.lambda;
        let error = y - x.dot(&self.weights);

        self.px.gemv(1.0, &self.p, x, 0.0);
        let denom = lambda + x.dot(&self.px);
        self.check_denominator(denom)?;
        self.p.ger(-1.0 / (lambda * denom), &self.px, &self.px, 1.0 / lambda);
        symmetrize(&mut self.p);

        // w_n = w_{n-1} + P_n (e_n x_n + γ sgn(w_{n-1}))
        let gamma = self.gamma;
        for i in 0..self.len() {
            self.aux[i] = error * x[i] + gamma * sgn(self.weights[i]);
        }
        self.weights.gemv(1.0, &self.p, &self.aux, 1.0);

        self.finish_step()?;
        Ok(StepOutput { error, gain: None })
    }

    fn check_input(&self, x: &DVector<f64>, y: f64) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::Input(format!(
                "regressor length {} does not match filter length {}",
                x.len(),
                self.len()
            )));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(self.failure("non-finite input sample"));
        }
        Ok(())
    }

    fn check_denominator(&self, denom: f64) -> Result<()> {
        if denom.is_finite() && denom > 0.0 {
            Ok(())
        } else {
            Err(self.failure(&format!("gain denominator {denom}")))
        }
    }

    fn finish_step(&mut self) -> Result<()> {
        self.n += 1;
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                iteration: self.n,
                run: None,
                reason: "non-finite weights".into(),
            });
        }
        Ok(())
    }

    fn failure(&self, reason: &str) -> Error {
        Error::Numerical {
            iteration: self.n + 1,
            run: None,
            reason: reason.to_string(),
        }
    }
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Diagnostic: runs `Φ_n = λΦ_{n-1} + x_n x_nᵀ` from `Φ = ε⁻¹ I` alongside the
/// recorded inverse-correlation matrices and returns `max_n ‖P_n Φ_n − I‖_∞`.
pub fn phi_recursion_check(
    p_history: &[DMatrix<f64>],
    regressors: &[DVector<f64>],
    epsilon: f64,
    lambda: f64,
) -> f64 {
    let Some(first) = p_history.first() else {
        return 0.0;
    };
    let len = first.nrows();
    let identity = DMatrix::<f64>::identity(len, len);
    let mut phi = identity.clone() / epsilon;
    let mut worst = 0.0f64;
    for (p, x) in p_history.iter().zip(regressors) {
        phi *= lambda;
        phi.ger(1.0, x, x, 1.0);
        let residual = p * &phi - &identity;
        let norm = residual
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        worst = worst.max(norm);
    }
    worst
}
