//! Transient mean and mean-square models of the ℓ1-RLS filter.
//!
//! The model tracks `E{Φ_n}`, the mean weight error `E{w̃_n}` and its
//! correlation `K_n = E{w̃_n w̃_nᵀ}`. Sign expectations are evaluated by
//! treating each pair of weight-error entries as jointly Gaussian.
//!
//! Time origin: the filter starts from a deterministic `w_0 = 0`, so the model
//! starts from `E{w̃_0} = −w★`, `K_0 = w★w★ᵀ` and `E{Φ_0} = ε⁻¹ I`; iteration
//! `n ≥ 1` consumes the `n`-th regressor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::symmetrize;
use crate::record::{Provenance, TrajectoryRecord};
use crate::stats::{expected_sign, expected_sign_product, expected_value_times_sign, GaussPairMoment};

/// Ground truth and algorithm parameters the model is evaluated for.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub w_star: DVector<f64>,
    pub rx: DMatrix<f64>,
    pub sigma_z2: f64,
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl SystemSpec {
    pub fn new(
        w_star: DVector<f64>,
        rx: DMatrix<f64>,
        sigma_z2: f64,
        lambda: f64,
        delta: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let l = w_star.len();
        if l == 0 || rx.shape() != (l, l) {
            return Err(Error::Config(format!(
                "input correlation is {:?} but w_star has length {l}",
                rx.shape()
            )));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("forgetting factor must lie in (0, 1), got {lambda}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("regularization delta must be >= 0, got {delta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("initialization epsilon must be > 0, got {epsilon}")));
        }
        if !(sigma_z2 >= 0.0 && sigma_z2.is_finite()) {
            return Err(Error::Config(format!("noise variance must be >= 0, got {sigma_z2}")));
        }
        if (&rx - rx.transpose()).amax() > 1e-12 * rx.amax() || rx.clone().cholesky().is_none() {
            return Err(Error::Config("input correlation must be symmetric positive definite".into()));
        }
        Ok(Self {
            w_star,
            rx,
            sigma_z2,
            lambda,
            delta,
            gamma: delta * (lambda - 1.0),
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.w_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_star.is_empty()
    }
}

/// Model state after `n` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryState {
    pub e_phi: DMatrix<f64>,
    pub e_wtilde: DVector<f64>,
    pub k: DMatrix<f64>,
    pub n: u64,
}

/// Learning-curve values produced by one model iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReadout {
    pub mse: f64,
    pub emse: f64,
    pub msd: f64,
}

impl TheoryState {
    /// Moments of the deterministic start `w_0 = 0`.
    pub fn initial(spec: &SystemSpec) -> Self {
        let l = spec.len();
        Self {
            e_phi: DMatrix::identity(l, l) / spec.epsilon,
            e_wtilde: -&spec.w_star,
            k: &spec.w_star * spec.w_star.transpose(),
            n: 0,
        }
    }

    /// Mean weights `w★ + E{w̃_n}`.
    pub fn mean_weights(&self, spec: &SystemSpec) -> DVector<f64> {
        &spec.w_star + &self.e_wtilde
    }

    /// Advances the model by one iteration and returns the MSE/EMSE of the
    /// iteration's a priori error together with the updated MSD.
    pub fn advance(&mut self, spec: &SystemSpec) -> Result<StepReadout> {
        let iteration = self.n + 1;
        let (mse, emse) = mse_readout(&self.k, &spec.rx, spec.sigma_z2);

        let e_phi = expected_phi_step(&self.e_phi, spec.lambda, &spec.rx);
        let chol = factor(&e_phi, iteration)?;

        let (q1, q2) = if spec.gamma == 0.0 {
            (None, None)
        } else {
            (
                Some(q1_matrix(&self.e_wtilde, &self.k, &spec.w_star)?),
                Some(q2_matrix(&self.e_wtilde, &self.k, &spec.w_star)?),
            )
        };
        let e_wtilde = mean_step(spec, &self.e_phi, &chol, &self.e_wtilde, &self.k)?;
        let k = covariance_step(spec, &self.e_phi, &chol, &self.k, q1.as_ref(), q2.as_ref());

        self.e_phi = e_phi;
        self.e_wtilde = e_wtilde;
        self.k = k;
        self.n = iteration;
        Ok(StepReadout { mse, emse, msd: msd_readout(&self.k) })
    }
}

/// `E{Φ_n} = λ E{Φ_{n-1}} + R_x`.
pub fn expected_phi_step(e_phi_prev: &DMatrix<f64>, lambda: f64, rx: &DMatrix<f64>) -> DMatrix<f64> {
    e_phi_prev * lambda + rx
}

/// Cholesky factor of `E{Φ_n}`, reporting the iteration on failure.
pub fn factor(e_phi: &DMatrix<f64>, iteration: u64) -> Result<Cholesky<f64, Dyn>> {
    e_phi.clone().cholesky().ok_or_else(|| Error::LinearSolve {
        iteration,
        reason: "expected correlation matrix is not positive definite".into(),
    })
}

/// Per-entry variances `max([K]_ii − E{[w̃]_i}², 0)`.
pub fn entry_variances(e_wtilde: &DVector<f64>, k: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(e_wtilde.len(), |i, _| (k[(i, i)] - e_wtilde[i] * e_wtilde[i]).max(0.0))
}

/// Mean weight-error update
/// `E{w̃_n} = E{Φ_n}⁻¹ [λ E{Φ_{n-1}} E{w̃_{n-1}} + γ E{sgn(w★ + w̃_{n-1})}]`.
pub fn mean_step(
    spec: &SystemSpec,
    e_phi_prev: &DMatrix<f64>,
    e_phi_chol: &Cholesky<f64, Dyn>,
    e_wtilde_prev: &DVector<f64>,
    k_prev: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let mut rhs = e_phi_prev * e_wtilde_prev * spec.lambda;
    if spec.gamma != 0.0 {
        let var = entry_variances(e_wtilde_prev, k_prev);
        for i in 0..rhs.len() {
            let mu = spec.w_star[i] + e_wtilde_prev[i];
            rhs[i] += spec.gamma * expected_sign(mu, var[i].sqrt())?;
        }
    }
    Ok(e_phi_chol.solve(&rhs))
}

/// `Q1 = E{sgn(w★ + w̃) sgn(w★ + w̃)ᵀ}` with unit diagonal.
pub fn q1_matrix(e_wtilde: &DVector<f64>, k: &DMatrix<f64>, w_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    let l = e_wtilde.len();
    let var = entry_variances(e_wtilde, k);
    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..l)
                .map(|j| {
                    let pair = GaussPairMoment::new(
                        w_star[i] + e_wtilde[i],
                        w_star[j] + e_wtilde[j],
                        var[i],
                        var[j],
                        k[(i, j)] - e_wtilde[i] * e_wtilde[j],
                    )
                    .and_then(|p| expected_sign_product(&p));
                    pair.map_err(|e| Error::Moment { i: i + 1, j: j + 1, source: Box::new(e) })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut q1 = DMatrix::identity(l, l);
    for (i, row) in rows.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let j = i + 1 + offset;
            q1[(i, j)] = v;
            q1[(j, i)] = v;
        }
    }
    Ok(q1)
}

/// `Q2 = E{w̃ sgn(w★ + w̃)ᵀ}`, every entry including the diagonal.
pub fn q2_matrix(e_wtilde: &DVector<f64>, k: &DMatrix<f64>, w_star: &DVector<f64>) -> Result<DMatrix<f64>> {
    let l = e_wtilde.len();
    let var = entry_variances(e_wtilde, k);
    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| {
            (0..l)
                .map(|j| {
                    GaussPairMoment::new(
                        e_wtilde[i],
                        w_star[j] + e_wtilde[j],
                        var[i],
                        var[j],
                        k[(i, j)] - e_wtilde[i] * e_wtilde[j],
                    )
                    .and_then(|p| expected_value_times_sign(&p))
                    .map_err(|e| Error::Moment { i: i + 1, j: j + 1, source: Box::new(e) })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(l, l, |i, j| rows[i][j]))
}

/// Correlation update
///
/// ```text
/// K_n = E{Φ_n}⁻¹ [λ² E{Φ_{n-1}} K_{n-1} E{Φ_{n-1}} + σ_z² R_x + γ² Q1
///                 + λγ (E{Φ_{n-1}} Q2 + Q2ᵀ E{Φ_{n-1}})] E{Φ_n}⁻¹
/// ```
///
/// followed by symmetrization and projection onto the PSD cone. `None` for
/// `q1`/`q2` drops the corresponding terms (the `γ = 0` model).
pub fn covariance_step(
    spec: &SystemSpec,
    e_phi_prev: &DMatrix<f64>,
    e_phi_chol: &Cholesky<f64, Dyn>,
    k_prev: &DMatrix<f64>,
    q1: Option<&DMatrix<f64>>,
    q2: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let lambda = spec.lambda;
    let gamma = spec.gamma;
    let mut middle = e_phi_prev * k_prev * e_phi_prev * (lambda * lambda) + &spec.rx * spec.sigma_z2;
    if let Some(q1) = q1 {
        middle += q1 * (gamma * gamma);
    }
    if let Some(q2) = q2 {
        let cross = e_phi_prev * q2;
        middle += (&cross + cross.transpose()) * (lambda * gamma);
    }
    let left = e_phi_chol.solve(&middle);
    let mut k = e_phi_chol.solve(&left.transpose()).transpose();
    symmetrize(&mut k);
    project_psd(&mut k);
    k
}

/// Clips negative eigenvalues of a symmetric matrix at zero.
pub fn project_psd(k: &mut DMatrix<f64>) {
    let eig = k.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    *k = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    symmetrize(k);
}

/// `(σ_z² + tr{R_x K_{n-1}}, tr{R_x K_{n-1}})`.
pub fn mse_readout(k_prev: &DMatrix<f64>, rx: &DMatrix<f64>, sigma_z2: f64) -> (f64, f64) {
    let emse = rx.component_mul(k_prev).sum().max(0.0);
    (sigma_z2 + emse, emse)
}

/// `MSD = tr{K}`.
pub fn msd_readout(k: &DMatrix<f64>) -> f64 {
    k.trace()
}

/// Runs the model for `n_iters` iterations.
pub fn run_theory(spec: &SystemSpec, n_iters: usize) -> Result<TrajectoryRecord> {
    let mut state = TheoryState::initial(spec);
    let mut record = TrajectoryRecord::with_capacity(Provenance::Theoretical, msd_readout(&state.k), n_iters);
    for _ in 0..n_iters {
        let out = state.advance(spec)?;
        record.push(state.mean_weights(spec).iter().copied().collect(), out.msd, out.mse, out.emse);
    }
    Ok(record)
}
