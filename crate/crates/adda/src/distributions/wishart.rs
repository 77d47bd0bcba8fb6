//! Wishart sampling via the Bartlett decomposition.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::polya_gamma::standard_normal;
use crate::error::{Error, Result};
use crate::linalg::Spd;

/// Draw from Wishart_df(scale), E[draw] = df * scale.
///
/// Bartlett: with scale = L L^T, the draw is L A A^T L^T where A is lower
/// triangular, A_ii^2 ~ chi^2_{df - i} (zero-based i) and A_ij ~ N(0,1)
/// below the diagonal. Real df > q - 1 is allowed; the chi-squared draws
/// come from the gamma sampler, so integrality is never needed.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &Spd, rng: &mut R) -> Result<DMatrix<f64>> {
    let q = scale.dim();
    if !(df > q as f64 - 1.0) || !df.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "wishart degrees of freedom must exceed dim - 1 = {}, got {df}",
            q - 1
        )));
    }
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        let chi2 = sample_chi_squared_unchecked(df - i as f64, rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let la = scale.lower() * a;
    Ok(&la * la.transpose())
}

pub(crate) fn sample_chi_squared_unchecked<R: Rng + ?Sized>(df: f64, rng: &mut R) -> f64 {
    Gamma::new(0.5 * df, 2.0)
        .expect("validated chi-squared df")
        .sample(rng)
}
