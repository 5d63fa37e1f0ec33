//! Henze-Zirkler test of multivariate normality.

use nalgebra::{DMatrix, DVector};

use super::normal::norm_cdf;
use crate::error::{Error, Result};

/// Significance level used for the accept/reject decision.
pub const SIGNIFICANCE: f64 = 0.05;

/// Observations in rows, variables in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    values: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = values.shape();
        if cols == 0 || rows < cols + 1 {
            return Err(Error::DegenerateSample(format!(
                "need at least {} observations of a {cols}-dimensional sample, got {rows}",
                cols + 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(DMatrix::from_fn(pairs.len(), 2, |r, c| pairs[r][c]))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HenzeZirkler {
    pub statistic: f64,
    pub p_value: f64,
    /// Smoothing parameter of the weight function.
    pub beta: f64,
    pub reject: bool,
}

/// Computes the Henze-Zirkler statistic with the usual smoothing parameter
/// `β = ((n(2d+1))/4)^{1/(d+4)} / √2` and tests it against the lognormal
/// approximation of its null distribution at [`SIGNIFICANCE`].
///
/// The covariance estimate uses divisor `n`.
pub fn henze_zirkler(samples: &SampleMatrix) -> Result<HenzeZirkler> {
    let x = samples.values();
    let (n, d) = x.shape();
    let nf = n as f64;
    let df = d as f64;

    let mean: DVector<f64> = x.row_mean().transpose();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centred.transpose() * &centred / nf;

    let eig = cov.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    let scale = (0..d).map(|j| mean[j] * mean[j] + cov[(j, j)]).fold(0.0, f64::max);
    if !(max_eig > 0.0) || min_eig <= 1e-12 * max_eig || max_eig <= 1e-24 * scale {
        return Err(Error::DegenerateSample(format!(
            "sample covariance is singular (eigenvalues in [{min_eig:e}, {max_eig:e}])"
        )));
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::DegenerateSample("sample covariance is not positive definite".into()))?;

    // Whitened rows y_j = L⁻¹(x_j − x̄), so Mahalanobis distances become Euclidean.
    let whitened = chol
        .l()
        .solve_lower_triangular(&centred.transpose())
        .ok_or_else(|| Error::DegenerateSample("whitening solve failed".into()))?;
    let y: Vec<f64> = whitened.iter().copied().collect(); // column-major: observation j at y[j*d..]

    let beta = (nf * (2.0 * df + 1.0) / 4.0).powf(1.0 / (df + 4.0)) / std::f64::consts::SQRT_2;
    let b2 = beta * beta;

    let half_b2 = 0.5 * b2;
    let mut pair_sum = 0.0;
    for j in 0..n {
        let yj = &y[j * d..(j + 1) * d];
        let mut row = 0.0;
        for k in (j + 1)..n {
            let yk = &y[k * d..(k + 1) * d];
            let dist: f64 = yj.iter().zip(yk).map(|(a, b)| (a - b) * (a - b)).sum();
            row += (-half_b2 * dist).exp();
        }
        pair_sum += row;
    }
    let pair_sum = nf + 2.0 * pair_sum;

    let centre_scale = b2 / (2.0 * (1.0 + b2));
    let centre_sum: f64 = (0..n)
        .map(|j| {
            let dj: f64 = y[j * d..(j + 1) * d].iter().map(|v| v * v).sum();
            (-centre_scale * dj).exp()
        })
        .sum();

    let statistic = (pair_sum / nf - 2.0 * (1.0 + b2).powf(-df / 2.0) * centre_sum
        + nf * (1.0 + 2.0 * b2).powf(-df / 2.0))
    .max(0.0);

    let p_value = lognormal_upper_tail(statistic, beta, df);
    Ok(HenzeZirkler {
        statistic,
        p_value,
        beta,
        reject: p_value < SIGNIFICANCE,
    })
}

/// Upper tail of the lognormal approximation to the statistic's null law.
fn lognormal_upper_tail(statistic: f64, beta: f64, d: f64) -> f64 {
    let b2 = beta * beta;
    let b4 = b2 * b2;
    let b8 = b4 * b4;
    let a = 1.0 + 2.0 * b2;
    let mean = 1.0 - a.powf(-d / 2.0) * (1.0 + d * b2 / a + d * (d + 2.0) * b4 / (2.0 * a * a));
    let wb = (1.0 + b2) * (1.0 + 3.0 * b2);
    let var = 2.0 * (1.0 + 4.0 * b2).powf(-d / 2.0)
        + 2.0 * a.powf(-d) * (1.0 + 2.0 * d * b4 / (a * a) + 3.0 * d * (d + 2.0) * b8 / (4.0 * a.powi(4)))
        - 4.0 * wb.powf(-d / 2.0) * (1.0 + 3.0 * d * b4 / (2.0 * wb) + d * (d + 2.0) * b8 / (2.0 * wb * wb));
    let log_mean = (mean.powi(4) / (var + mean * mean)).sqrt().ln();
    let log_sd = ((var + mean * mean) / (mean * mean)).ln().sqrt();
    if statistic <= 0.0 {
        return 1.0;
    }
    1.0 - norm_cdf((statistic.ln() - log_mean) / log_sd)
}
