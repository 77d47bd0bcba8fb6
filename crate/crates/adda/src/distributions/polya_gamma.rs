//! Polya-Gamma sampling via the exact alternating-series rejection method.
//!
//! A PG(b, c) variate for integer b is drawn as the sum of b independent
//! PG(1, c) variates. Each PG(1, c) draw uses the two-piece proposal
//! (truncated inverse-Gaussian left of the crossover point, exponential tail
//! right of it) and accepts or rejects by evaluating the alternating series
//! for the density until the partial sums decide. No truncation or
//! approximation is involved; the accept/reject test is exact.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::f64::consts::{PI, SQRT_2};
use statrs::function::erf::erfc;

use super::inverse_gaussian::inverse_gaussian_unchecked;
use crate::error::{Error, Result};

/// Crossover between the series' two expansions; also the proposal split.
const TRUNC: f64 = 0.64;

/// Reusable PG(1, c) sampler for a fixed tilt c.
///
/// Construction precomputes the proposal-mixture mass, so drawing PG(b, c)
/// as b summands amortizes the special-function work. The distribution is
/// symmetric in c: PG(b, c) and PG(b, -c) are identical.
#[derive(Clone, Debug)]
pub struct PolyaGamma {
    /// Half the absolute tilt, the natural parameter of the rejection scheme.
    z: f64,
    /// Rate of the exponential tail piece: pi^2/8 + z^2/2.
    rate: f64,
    /// Probability that a proposal comes from the exponential tail.
    right_prob: f64,
    /// Mean 1/z of the untruncated inverse-Gaussian piece (inf when z = 0).
    mu: f64,
}

impl PolyaGamma {
    pub fn new(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "polya-gamma tilt must be finite, got {c}"
            )));
        }
        let z = 0.5 * c.abs();
        let rate = PI * PI / 8.0 + 0.5 * z * z;
        Ok(PolyaGamma {
            z,
            rate,
            right_prob: right_mass(z, rate),
            mu: 1.0 / z,
        })
    }

    /// One PG(1, c) draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = if rng.random::<f64>() < self.right_prob {
                let e: f64 = Exp1.sample(rng);
                TRUNC + e / self.rate
            } else {
                self.draw_left_piece(rng)
            };
            // Alternating partial sums bracket the density, so the first
            // sum Y clears (odd n) accepts and the first it exceeds
            // (even n) rejects.
            let s0 = series_coef(0, x);
            let y = rng.random::<f64>() * s0;
            let mut s = s0;
            let mut n = 0usize;
            loop {
                n += 1;
                let a = series_coef(n, x);
                if n % 2 == 1 {
                    s -= a;
                    if y <= s {
                        return 0.25 * x;
                    }
                } else {
                    s += a;
                    if y > s {
                        break;
                    }
                }
            }
        }
    }

    /// PG(b, c) as the sum of b independent PG(1, c) draws.
    pub fn draw_sum<R: Rng + ?Sized>(&self, b: u64, rng: &mut R) -> f64 {
        (0..b).map(|_| self.draw(rng)).sum()
    }

    /// Inverse-Gaussian(1/z, 1) restricted to (0, TRUNC].
    fn draw_left_piece<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.mu > TRUNC {
            // Small z: propose from the one-sided stable kernel
            // x^{-3/2} exp(-1/(2x)) on (0, TRUNC] and thin by the
            // Gaussian tilt exp(-z^2 x / 2).
            loop {
                let mut e1: f64;
                loop {
                    e1 = Exp1.sample(rng);
                    let e2: f64 = Exp1.sample(rng);
                    if e1 * e1 <= 2.0 * e2 / TRUNC {
                        break;
                    }
                }
                let d = 1.0 + TRUNC * e1;
                let x = TRUNC / (d * d);
                if self.z == 0.0 || rng.random::<f64>() <= (-0.5 * self.z * self.z * x).exp() {
                    return x;
                }
            }
        } else {
            // Large z: the untruncated draw usually lands below TRUNC.
            loop {
                let x = inverse_gaussian_unchecked(self.mu, 1.0, rng);
                if x <= TRUNC {
                    return x;
                }
            }
        }
    }
}

/// Terms of the alternating series, using the expansion suited to each side
/// of the crossover.
#[inline]
fn series_coef(n: usize, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    if x > TRUNC {
        PI * h * (-0.5 * h * h * PI * PI * x).exp()
    } else {
        let v = 2.0 / (PI * x);
        v * v.sqrt() * PI * h * (-2.0 * h * h / x).exp()
    }
}

/// Probability that the two-piece proposal picks its exponential tail,
/// computed in log space so extreme tilts neither overflow nor bias the
/// mixture.
fn right_mass(z: f64, rate: f64) -> f64 {
    let sqrt_recip_t = (1.0 / TRUNC).sqrt();
    let b = sqrt_recip_t * (TRUNC * z - 1.0);
    let a = -sqrt_recip_t * (TRUNC * z + 1.0);
    let log_common = rate.ln() + rate * TRUNC;
    let left_over_right = 4.0 / PI
        * ((log_common - z + log_norm_cdf(b)).exp() + (log_common + z + log_norm_cdf(a)).exp());
    if left_over_right.is_finite() {
        1.0 / (1.0 + left_over_right)
    } else {
        0.0
    }
}

fn log_norm_cdf(x: f64) -> f64 {
    let y = -x / SQRT_2;
    if y < 25.0 {
        (0.5 * erfc(y)).ln()
    } else {
        // Asymptotic tail of ln erfc; erfc itself underflows past y ~ 26.5.
        let y2 = y * y;
        -y2 + (1.0 / (y * PI.sqrt())).ln() + (-0.5 / y2 + 0.75 / (y2 * y2)).ln_1p()
    }
}

/// One PG(b, c) draw for positive integer shape b.
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: u64, c: f64, rng: &mut R) -> Result<f64> {
    if b == 0 {
        return Err(Error::InvalidArgument(
            "polya-gamma shape b must be a positive integer".into(),
        ));
    }
    Ok(PolyaGamma::new(c)?.draw_sum(b, rng))
}

/// E[PG(b, c)] = b tanh(c/2) / (2c), with the limit b/4 at c = 0.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-5 {
        b * (0.25 - c * c / 48.0)
    } else {
        b * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Var[PG(b, c)], with the limit b/24 at c = 0.
pub fn polya_gamma_var(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-3 {
        b * (1.0 / 24.0 - c * c / 120.0)
    } else {
        let sech = 1.0 / (0.5 * c).cosh();
        b * ((0.5 * c).tanh() / (2.0 * c * c * c) - 0.25 * sech * sech / (c * c))
    }
}

/// Standard normal draw helper shared by sibling modules.
pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
