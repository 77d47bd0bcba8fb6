//! Inverse-Gaussian sampling by the transformation-with-roots method of
//! Michael, Schucany and Haas: square a standard normal, solve the quadratic
//! the statistic satisfies, and pick between the two roots with the
//! size-biased probability. Exact, one normal and one uniform per draw.

use rand::Rng;

use super::polya_gamma::standard_normal;
use crate::error::{Error, Result};

/// Draw from InverseGaussian(mu, lambda) with density
/// sqrt(lambda / (2 pi x^3)) exp(-lambda (x - mu)^2 / (2 mu^2 x)).
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mu: f64, lambda: f64, rng: &mut R) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "inverse-gaussian mean must be positive and finite, got {mu}"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "inverse-gaussian shape must be positive and finite, got {lambda}"
        )));
    }
    Ok(inverse_gaussian_unchecked(mu, lambda, rng))
}

/// The sampler body without domain checks, for callers that already
/// guarantee valid parameters (the Polya-Gamma proposal path).
pub(crate) fn inverse_gaussian_unchecked<R: Rng + ?Sized>(
    mu: f64,
    lambda: f64,
    rng: &mut R,
) -> f64 {
    let nu = standard_normal(rng);
    let y = nu * nu;
    // Textbook root: mu + mu/(2 lambda) (mu y - sqrt(4 lambda mu y + (mu y)^2)).
    // Written with the conjugate so huge mu (tiny lasso coefficients push the
    // mean past 1e12) does not cancel catastrophically.
    let w = mu * y;
    let x = if w == 0.0 {
        mu
    } else {
        let root = (w * w + 4.0 * lambda * w).sqrt();
        4.0 * lambda * mu * w / ((root + w) * (root + w))
    };
    let u: f64 = rng.random();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}
