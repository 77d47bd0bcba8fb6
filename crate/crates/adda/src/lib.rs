//! Asynchronous and distributed data augmentation (DA) Gibbs samplers.
//!
//! A DA sampler alternates an imputation step (draw latent data given
//! parameters) with a posterior step (draw parameters given latent data).
//! This crate distributes the imputation step across k workers and lets the
//! manager proceed as soon as a tunable fraction r of them has reported,
//! occasionally forcing a full synchronization with probability epsilon so
//! the chain keeps a proper stationary distribution.
//!
//! The crate provides:
//!
//! - exact samplers for the conditionals involved ([`distributions`]),
//! - a generic manager/worker engine with a deterministic single-threaded
//!   "virtual" mode and a multi-threaded "live" mode ([`engine`]),
//! - three ready-made model kernels: logistic regression with Polya-Gamma
//!   augmentation, the Bayesian lasso, and a linear mixed-effects model
//!   ([`models`]),
//! - chain-comparison diagnostics and Monte Carlo standard errors
//!   ([`diagnostics`]),
//! - data generators and feature engineering for the experiments
//!   ([`datagen`]).

pub mod datagen;
pub mod diagnostics;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod models;
pub mod rng;

pub use error::{Error, Result};

// Compile and run the guide's code blocks as doctests so the book cannot
// drift from the library.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/engine.md")]
mod book_engine {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/models.md")]
mod book_models {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/diagnostics.md")]
mod book_diagnostics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
