//! Chi-squared, scaled inverse chi-squared, and the inverse-gamma
//! parameterization the variance updates use.

use rand::Rng;

use super::wishart::sample_chi_squared_unchecked;
use crate::error::{Error, Result};

/// chi^2_df via Gamma(df/2, scale 2); df may be any positive real.
pub fn sample_chi_squared<R: Rng + ?Sized>(df: f64, rng: &mut R) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "chi-squared degrees of freedom must be positive, got {df}"
        )));
    }
    Ok(sample_chi_squared_unchecked(df, rng))
}

/// Draw scale / chi^2_df, the scaled inverse chi-squared kernel used by the
/// variance conditionals. `scale` must be positive: a nonpositive scale
/// means an upstream quadratic form went wrong and is surfaced, not patched.
pub fn sample_scaled_inv_chisq<R: Rng + ?Sized>(df: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Numeric {
            detail: format!("scaled inverse chi-squared scale must be positive, got {scale}"),
            iteration: None,
        });
    }
    Ok(scale / sample_chi_squared(df, rng)?)
}

/// InverseGamma(shape, rate) as (2 * rate) / chi^2_{2 * shape}.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "inverse-gamma shape must be positive, got {shape}"
        )));
    }
    sample_scaled_inv_chisq(2.0 * shape, 2.0 * rate, rng)
}
