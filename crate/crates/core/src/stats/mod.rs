//! Gaussian machinery: normal CDFs, sign moments of Gaussian pairs and the
//! Henze-Zirkler normality test.

mod hz;
mod normal;
mod sign;

pub use hz::{henze_zirkler, HenzeZirkler, SampleMatrix, SIGNIFICANCE};
pub use normal::{bivariate_normal_cdf, std_normal_cdf, MAX_CORRELATION, QUADRATURE_TOLERANCE, VARIANCE_FLOOR};
pub use sign::{
    expected_sign, expected_sign_product, expected_value_times_sign, sgn, GaussPairMoment,
    InverseCovariance,
};
