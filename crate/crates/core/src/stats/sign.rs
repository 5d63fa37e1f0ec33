//! Sign moments of jointly Gaussian scalars.
//!
//! `sgn(0)` is taken to be 0 throughout. Pairs whose variance falls below
//! [`VARIANCE_FLOOR`] are treated as constants, which gives the exact limits of
//! the closed forms.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::normal::{norm_cdf, standard_bvn_cdf, MAX_CORRELATION, VARIANCE_FLOOR};
use crate::error::{Error, Result};

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// First and second moments of a jointly Gaussian pair `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussPairMoment {
    pub mu_u: f64,
    pub mu_v: f64,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    /// Covariance of `u` and `v`.
    pub rho_uv: f64,
}

/// Entries of the inverse covariance `[[a, c], [c, b]]` and `θ = b − c²/a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseCovariance {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub theta: f64,
    /// Determinant of the (clamped) covariance.
    pub det: f64,
}

impl GaussPairMoment {
    /// Builds a moment set, clamping negative variances to zero and the
    /// covariance so that `|ρ_uv| ≤ MAX_CORRELATION · σ_u σ_v`.
    pub fn new(mu_u: f64, mu_v: f64, sigma_u2: f64, sigma_v2: f64, rho_uv: f64) -> Result<Self> {
        if ![mu_u, mu_v, sigma_u2, sigma_v2, rho_uv].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite Gaussian pair moments ({mu_u}, {mu_v}, {sigma_u2}, {sigma_v2}, {rho_uv})"
            )));
        }
        let sigma_u2 = sigma_u2.max(0.0);
        let sigma_v2 = sigma_v2.max(0.0);
        let bound = MAX_CORRELATION * (sigma_u2 * sigma_v2).sqrt();
        Ok(Self {
            mu_u,
            mu_v,
            sigma_u2,
            sigma_v2,
            rho_uv: rho_uv.clamp(-bound, bound),
        })
    }

    /// The same pair with the roles of `u` and `v` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            mu_u: self.mu_v,
            mu_v: self.mu_u,
            sigma_u2: self.sigma_v2,
            sigma_v2: self.sigma_u2,
            rho_uv: self.rho_uv,
        }
    }

    pub fn u_is_degenerate(&self) -> bool {
        self.sigma_u2 < VARIANCE_FLOOR
    }

    pub fn v_is_degenerate(&self) -> bool {
        self.sigma_v2 < VARIANCE_FLOOR
    }

    /// Correlation coefficient, 0 when either variance is degenerate.
    pub fn correlation(&self) -> f64 {
        if self.u_is_degenerate() || self.v_is_degenerate() {
            return 0.0;
        }
        (self.rho_uv / (self.sigma_u2 * self.sigma_v2).sqrt())
            .clamp(-MAX_CORRELATION, MAX_CORRELATION)
    }

    /// Inverse of the covariance with variances floored at `VARIANCE_FLOOR`.
    pub fn inverse_covariance(&self) -> Result<InverseCovariance> {
        let su2 = self.sigma_u2.max(VARIANCE_FLOOR);
        let sv2 = self.sigma_v2.max(VARIANCE_FLOOR);
        let r = (self.rho_uv / (su2 * sv2).sqrt()).clamp(-MAX_CORRELATION, MAX_CORRELATION);
        let rho = r * (su2 * sv2).sqrt();
        let det = su2 * sv2 * (1.0 - r * r);
        let (a, b, c) = (sv2 / det, su2 / det, -rho / det);
        let theta = b - c * c / a;
        if !(det > 0.0 && theta > 0.0 && theta.is_finite()) {
            return Err(Error::DegenerateCovariance(format!(
                "inverse covariance not positive definite (det={det:e}, theta={theta:e})"
            )));
        }
        Ok(InverseCovariance { a, b, c, theta, det })
    }
}

/// `E{sgn u}` for `u ~ N(mu, sigma²)`; equals `1 − 2Φ(−mu/sigma)` and
/// `sgn(mu)` when `sigma = 0`.
pub fn expected_sign(mu: f64, sigma: f64) -> Result<f64> {
    if mu.is_nan() || sigma.is_nan() || sigma < 0.0 {
        return Err(Error::Domain(format!(
            "expected_sign needs sigma >= 0 and a numeric mean, got mu={mu}, sigma={sigma}"
        )));
    }
    Ok(sign_mean(mu, sigma))
}

#[inline]
fn sign_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 || sigma * sigma < VARIANCE_FLOOR {
        return sgn(mu);
    }
    // 1 − 2Φ(−t) = erf(t/√2), written this way so the result is exactly odd in mu.
    libm::erf(mu / sigma * FRAC_1_SQRT_2)
}

/// `E{sgn(u) sgn(v)}` from four bivariate normal orthant probabilities.
pub fn expected_sign_product(pair: &GaussPairMoment) -> Result<f64> {
    if pair.u_is_degenerate() {
        return Ok(sgn(pair.mu_u) * sign_mean(pair.mu_v, pair.sigma_v2.sqrt()));
    }
    if pair.v_is_degenerate() {
        return Ok(sign_mean(pair.mu_u, pair.sigma_u2.sqrt()) * sgn(pair.mu_v));
    }
    let (su, sv) = (pair.sigma_u2.sqrt(), pair.sigma_v2.sqrt());
    let r = pair.correlation();
    let (h, k) = (pair.mu_u / su, pair.mu_v / sv);
    // Φ(0, ±μ, Σ) with Σ and its sign-flipped counterpart Σ̄.
    let both_neg = standard_bvn_cdf(-h, -k, r);
    let both_pos = standard_bvn_cdf(h, k, r);
    let u_neg_v_pos = standard_bvn_cdf(-h, k, -r);
    let u_pos_v_neg = standard_bvn_cdf(h, -k, -r);
    let value = both_neg + both_pos - u_neg_v_pos - u_pos_v_neg;
    if !value.is_finite() {
        return Err(Error::DegenerateCovariance(format!("sign product not finite for {pair:?}")));
    }
    Ok(value.clamp(-1.0, 1.0))
}

/// `E{u sgn(v)}` through the closed form in the inverse-covariance entries
/// `a, b, c` and `θ = b − c²/a`.
pub fn expected_value_times_sign(pair: &GaussPairMoment) -> Result<f64> {
    if pair.v_is_degenerate() {
        return Ok(pair.mu_u * sgn(pair.mu_v));
    }
    if pair.u_is_degenerate() {
        return Ok(pair.mu_u * sign_mean(pair.mu_v, pair.sigma_v2.sqrt()));
    }
    let InverseCovariance { a, c, theta, det, .. } = pair.inverse_covariance()?;
    let (mu_u, mu_v) = (pair.mu_u, pair.mu_v);
    let c_over_a = c / a;
    let scale = (2.0 * PI / theta).sqrt();
    let sign_term = 1.0 - 2.0 * norm_cdf(-mu_v * theta.sqrt());
    let abs_term = (2.0 / (PI * theta)).sqrt() * (-0.5 * mu_v * mu_v * theta).exp();
    let bracket = scale * (mu_u + c_over_a * mu_v) * sign_term
        - c_over_a * scale * (abs_term + mu_v * sign_term);
    let value = bracket / (2.0 * PI * a * det).sqrt();
    if !value.is_finite() {
        return Err(Error::DegenerateCovariance(format!("value-sign moment not finite for {pair:?}")));
    }
    Ok(value)
}
