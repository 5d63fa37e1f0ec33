//! Univariate and bivariate Gaussian distribution functions.
//!
//! The bivariate CDF uses the correlation-integral representation
//!
//! ```text
//! Φ₂(h, k; r) = Φ(h)Φ(k) + 1/(2π) ∫₀^{asin r} exp(−(h² + k² − 2hk sin t) / (2cos² t)) dt
//! ```
//!
//! evaluated with composite 32-node Gauss-Legendre quadrature, bisected until
//! two successive refinements agree to within [`QUADRATURE_TOLERANCE`].

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Smallest variance treated as non-degenerate.
pub const VARIANCE_FLOOR: f64 = 1e-14;

/// Correlation coefficients are clamped to `[-MAX_CORRELATION, MAX_CORRELATION]`.
pub const MAX_CORRELATION: f64 = 1.0 - 1e-8;

/// Absolute tolerance between successive quadrature refinements.
pub const QUADRATURE_TOLERANCE: f64 = 1e-11;

const GL_NODES: usize = 32;
const MAX_BISECTION_DEPTH: u32 = 48;

/// Standard normal CDF. Rejects non-finite arguments.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal CDF argument must be finite, got {x}")));
    }
    Ok(norm_cdf(x))
}

/// Standard normal CDF without argument validation (`±∞` map to 1 and 0).
#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Bivariate normal CDF `P(X₁ ≤ x₁, X₂ ≤ x₂)` for `X ~ N(mu, sigma)`.
///
/// `sigma` is read as a symmetric matrix from its upper triangle. Its correlation
/// coefficient is clamped to `±MAX_CORRELATION`; variances below
/// [`VARIANCE_FLOOR`] or a correlation beyond ±1 are rejected.
pub fn bivariate_normal_cdf(x: [f64; 2], mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<f64> {
    let finite = x.iter().chain(mu.iter()).chain(sigma.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Domain("bivariate normal CDF arguments must be finite".into()));
    }
    let (s11, s22, s12) = (sigma[0][0], sigma[1][1], sigma[0][1]);
    if s11 < VARIANCE_FLOOR || s22 < VARIANCE_FLOOR {
        return Err(Error::DegenerateCovariance(format!(
            "variances ({s11:e}, {s22:e}) below floor {VARIANCE_FLOOR:e}"
        )));
    }
    let (sd1, sd2) = (s11.sqrt(), s22.sqrt());
    let r = s12 / (sd1 * sd2);
    if r.abs() > 1.0 + 1e-12 {
        return Err(Error::DegenerateCovariance(format!(
            "correlation coefficient {r} outside [-1, 1]"
        )));
    }
    Ok(standard_bvn_cdf((x[0] - mu[0]) / sd1, (x[1] - mu[1]) / sd2, r))
}

/// `Φ₂(h, k; r)` for standardized margins. `r` is clamped to `±MAX_CORRELATION`.
pub(crate) fn standard_bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    let r = r.clamp(-MAX_CORRELATION, MAX_CORRELATION);
    let base = norm_cdf(h) * norm_cdf(k);
    if r == 0.0 {
        return base;
    }
    let hh = 0.5 * (h * h + k * k);
    let hk = h * k;
    let integrand = |t: f64| {
        let s = t.sin();
        let c2 = 1.0 - s * s;
        ((hk * s - hh) / c2).exp()
    };
    let upper = r.asin();
    let integral = adaptive_gauss_legendre(&integrand, 0.0, upper, QUADRATURE_TOLERANCE * 2.0 * PI);
    (base + integral / (2.0 * PI)).clamp(0.0, 1.0)
}

fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let whole = gauss_legendre(f, a, b);
    refine(f, a, b, whole, tol, 0)
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss_legendre(f, a, mid);
    let right = gauss_legendre(f, mid, b);
    let halves = left + right;
    if (halves - whole).abs() <= tol || depth >= MAX_BISECTION_DEPTH {
        return halves;
    }
    refine(f, a, mid, left, 0.5 * tol, depth + 1) + refine(f, mid, b, right, 0.5 * tol, depth + 1)
}

fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gl_rule();
    let half = 0.5 * (b - a);
    let centre = 0.5 * (a + b);
    let sum: f64 = nodes
        .iter()
        .zip(weights.iter())
        .map(|(&x, &w)| w * f(centre + half * x))
        .sum();
    half * sum
}

/// Nodes and weights of the Gauss-Legendre rule on [-1, 1], by Newton
/// iteration on the Legendre polynomial.
fn gl_rule() -> &'static ([f64; GL_NODES], [f64; GL_NODES]) {
    static RULE: OnceLock<([f64; GL_NODES], [f64; GL_NODES])> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_NODES;
        let mut nodes = [0.0; GL_NODES];
        let mut weights = [0.0; GL_NODES];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// Value and derivative of the degree-`n` Legendre polynomial at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson integration of the standard normal density from −40 to x.
    fn density_integral(x: f64) -> f64 {
        fn pdf(t: f64) -> f64 {
            (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
        }
        fn simpson(a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (pdf(a) + 4.0 * pdf(0.5 * (a + b)) + pdf(b))
        }
        fn rec(a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(a, m), simpson(m, b));
            if depth > 50 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            rec(a, m, l, tol / 2.0, depth + 1) + rec(m, b, r, tol / 2.0, depth + 1)
        }
        rec(-40.0, x, simpson(-40.0, x), 1e-15, 0)
    }

    #[test]
    fn gl_rule_integrates_polynomials_exactly() {
        let f = |x: f64| x.powi(62) + 3.0 * x.powi(7) - x * x;
        let exact = 2.0 / 63.0 - 2.0 / 3.0;
        assert!((gauss_legendre(&f, -1.0, 1.0) - exact).abs() < 1e-14);
        let (_, w) = gl_rule();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!(std_normal_cdf(-1e9).unwrap().abs() < 1e-12);
        let oracle = density_integral(1.96);
        assert!((oracle - 0.9750021049).abs() < 1e-10, "oracle {oracle}");
        assert!((std_normal_cdf(1.96).unwrap() - oracle).abs() < 1e-12);
        for x in [-8.0, -3.3, -1.0, -0.2, 0.7, 2.5, 6.0] {
            assert!((std_normal_cdf(x).unwrap() - density_integral(x)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn normal_cdf_rejects_non_finite() {
        assert!(matches!(std_normal_cdf(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(std_normal_cdf(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn bivariate_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let v = bivariate_normal_cdf([0.0, 0.0], [0.0, 0.0], id).unwrap();
        assert!((v - 0.25).abs() < 1e-14);
        let v = bivariate_normal_cdf([0.0, 0.0], [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]]).unwrap();
        assert!((v - (0.25 + 0.5f64.asin() / (2.0 * PI))).abs() < 1e-12);
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        let v = bivariate_normal_cdf([3.0, 0.0], [3.0, 0.0], [[4.0, 0.0], [0.0, 9.0]]).unwrap();
        assert!((v - 0.25).abs() < 1e-14);
    }

    #[test]
    fn bivariate_independent_is_product() {
        for (h, k) in [(-1.3, 0.4), (2.0, 2.0), (-4.0, 3.1), (0.0, -0.9)] {
            let v = bivariate_normal_cdf([h, k], [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
            assert!((v - norm_cdf(h) * norm_cdf(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn bivariate_high_correlation_limits() {
        // r → 1 gives Φ(min(h, k)); r → −1 gives max(0, Φ(h) + Φ(k) − 1).
        let r = MAX_CORRELATION;
        for (h, k) in [(0.3, 1.2), (-0.5, 0.9), (1.0, 1.6), (-2.0, -1.0)] {
            let v = standard_bvn_cdf(h, k, r);
            assert!((v - norm_cdf(h.min(k))).abs() < 1e-6, "h={h} k={k} v={v}");
            let v = standard_bvn_cdf(h, k, -r);
            let lim = (norm_cdf(h) + norm_cdf(k) - 1.0).max(0.0);
            assert!((v - lim).abs() < 1e-6, "h={h} k={k} v={v}");
        }
    }

    #[test]
    fn bivariate_rejects_degenerate() {
        let bad = bivariate_normal_cdf([0.0, 0.0], [0.0, 0.0], [[0.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(bad, Err(Error::DegenerateCovariance(_))));
        let bad = bivariate_normal_cdf([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(bad, Err(Error::DegenerateCovariance(_))));
    }

    #[test]
    fn bivariate_matches_rectangle_quadrature() {
        // Independent oracle: integrate Φ((k − r·t)/√(1−r²))·pdf(t) over t ≤ h.
        fn oracle(h: f64, k: f64, r: f64) -> f64 {
            let s = (1.0 - r * r).sqrt();
            let n = 400_000;
            let a = -12.0;
            let dt = (h - a) / n as f64;
            let f = |t: f64| norm_cdf((k - r * t) / s) * (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
            // composite Simpson
            let mut acc = f(a) + f(h);
            for i in 1..n {
                let t = a + i as f64 * dt;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
            }
            acc * dt / 3.0
        }
        for (h, k, r) in [(0.5, -0.3, 0.8), (-1.2, 0.7, -0.6), (1.5, 2.0, 0.95), (-0.4, -2.2, 0.3)] {
            let v = standard_bvn_cdf(h, k, r);
            let o = oracle(h, k, r);
            assert!((v - o).abs() < 1e-10, "h={h} k={k} r={r}: {v} vs {o}");
        }
    }
}
