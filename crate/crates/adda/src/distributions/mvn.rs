//! Multivariate normal draws in covariance and precision form.

use nalgebra::{Cholesky, DVector, Dyn};
use rand::Rng;

use super::polya_gamma::standard_normal;
use crate::error::{Error, Result};
use crate::linalg::Spd;

fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| standard_normal(rng))
}

/// Draw from N(mean, cov) as mean + L z with L the Cholesky factor of cov.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &Spd, rng: &mut R) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mvn: mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + cov.lower() * z)
}

/// Draw from N(mean, A^{-1}) given the Cholesky factorization of the
/// precision matrix A = L L^T, by solving L^T x = z.
///
/// The conditionals in this crate are all derived in precision form, so
/// sampling this way avoids ever inverting A.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision: &Cholesky<f64, Dyn>,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    let x = precision
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has positive diagonal");
    mean + x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use nalgebra::DMatrix;

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = RngStream::new(1, 0);
        let cov = Spd::new(DMatrix::identity(3, 3), "cov").unwrap();
        let mean = DVector::from_element(2, 0.0);
        assert!(sample_mvn(&mean, &cov, &mut rng).is_err());
    }

    #[test]
    fn sample_mean_and_covariance_converge() {
        let mut rng = RngStream::new(2, 0);
        let cov_m = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]);
        let cov = Spd::new(cov_m.clone(), "cov").unwrap();
        let mean = DVector::from_row_slice(&[1.0, -3.0]);
        let n = 100_000;
        let mut sum = DVector::zeros(2);
        let mut sum_sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn(&mean, &cov, &mut rng).unwrap();
            let d = &x - &mean;
            sum += &x;
            sum_sq += &d * d.transpose();
        }
        let m = sum / n as f64;
        let s = sum_sq / n as f64;
        assert!((m - &mean).amax() < 0.02);
        assert!((s - cov_m).amax() < 0.03);
    }

    #[test]
    fn precision_form_agrees_with_covariance_form_in_law() {
        // N(mean, A^{-1}) sampled via the precision path must have
        // covariance A^{-1}.
        let mut rng = RngStream::new(3, 0);
        let a = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 2.0]);
        let chol = Cholesky::new(a.clone()).unwrap();
        let mean = DVector::from_row_slice(&[0.5, 0.5]);
        let n = 100_000;
        let mut sum_sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn_precision(&mean, &chol, &mut rng);
            let d = &x - &mean;
            sum_sq += &d * d.transpose();
        }
        let s = sum_sq / n as f64;
        let target = a.try_inverse().unwrap();
        assert!((s - target).amax() < 0.02);
    }

    #[test]
    fn affine_translation_shifts_draws_exactly() {
        // Same stream, shifted mean: draws differ by exactly the shift.
        let cov = Spd::new(DMatrix::identity(2, 2) * 0.5, "cov").unwrap();
        let m0 = DVector::from_row_slice(&[0.0, 0.0]);
        let m1 = DVector::from_row_slice(&[10.0, -4.0]);
        let mut r0 = RngStream::new(4, 0);
        let mut r1 = RngStream::new(4, 0);
        for _ in 0..100 {
            let a = sample_mvn(&m0, &cov, &mut r0).unwrap();
            let b = sample_mvn(&m1, &cov, &mut r1).unwrap();
            assert!((b - a - &m1).amax() < 1e-12);
        }
    }
}
