//! Exact samplers for the conditional distributions used by the kernels.
//!
//! All samplers draw from a caller-supplied [`rand::Rng`], so the same code
//! serves both the deterministic virtual scheduler and live worker threads.
//! Domain violations return errors instead of clamping: a sampler that is
//! handed an impossible parameter reports it rather than producing a draw
//! from some nearby distribution.

mod inverse_gaussian;
mod mvn;
mod polya_gamma;
mod scaled_inv_chisq;
mod wishart;

pub use inverse_gaussian::sample_inverse_gaussian;
pub use mvn::{sample_mvn, sample_mvn_precision};
pub use polya_gamma::{polya_gamma_mean, polya_gamma_var, sample_polya_gamma, PolyaGamma};
pub(crate) use polya_gamma::standard_normal;
pub use scaled_inv_chisq::{sample_chi_squared, sample_inv_gamma, sample_scaled_inv_chisq};
pub use wishart::sample_wishart;
