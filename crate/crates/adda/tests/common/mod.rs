//! Helpers shared by the integration and acceptance suites.
//!
//! Everything here is deliberately written against closed-form facts or
//! textbook constructions, not against the library's own code paths, so a
//! bug in the crate cannot hide behind an oracle that shares it.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use adda::engine::{DaKernel, DrawMatrix, MissingBlock, Recorder};
use adda::rng::RngStream;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Monte Carlo standard error of the sample mean.
pub fn mc_se(xs: &[f64]) -> f64 {
    (sample_var(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the sample variance, sqrt((m4 - var^2) / n) with m4
/// the empirical fourth central moment. Valid for any distribution with
/// four moments, not just the normal.
pub fn var_se(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let v = sample_var(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - v * v).max(0.0) / n).sqrt()
}

/// Asserts |observed - expected| <= 3 Monte Carlo SEs, with the SE supplied
/// by the caller so mean and variance checks can share it.
pub fn assert_within_3se(observed: f64, expected: f64, se: f64, what: &str) {
    let dev = (observed - expected).abs();
    assert!(
        dev <= 3.0 * se,
        "{what}: observed {observed}, expected {expected}, |dev| {dev} > 3 * SE {se}"
    );
}

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F_n(x) - G_m(x)|.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty());
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|u, v| u.partial_cmp(v).expect("finite samples"));
    b.sort_by(|u, v| u.partial_cmp(v).expect("finite samples"));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Two-sample KS rejection threshold at significance level 0.001:
/// c(alpha) * sqrt((n + m) / (n m)) with c(alpha) = sqrt(-ln(alpha/2) / 2).
pub fn ks_threshold_001(n: usize, m: usize) -> f64 {
    let c = (-(0.0005f64).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// One PG(b, c) draw from the truncated infinite-sum representation
///
///   omega = (1 / (2 pi^2)) * sum_{k=1}^{K} g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),
///   g_k ~ Gamma(b, 1) iid,
///
/// with K = 10^4 terms. Slow but a completely independent route to the
/// distribution; truncation bias is O(b / K) and far below test tolerances.
pub fn pg_series_draw<R: Rng>(b: f64, c: f64, rng: &mut R) -> f64 {
    let gamma = Gamma::new(b, 1.0).expect("valid shape");
    let shift = c * c / (4.0 * PI * PI);
    let mut acc = 0.0;
    for k in 1..=10_000u32 {
        let denom = (k as f64 - 0.5).powi(2) + shift;
        acc += gamma.sample(rng) / denom;
    }
    acc / (2.0 * PI * PI)
}

/// Sequential reference sampler: the classical synchronous chain the
/// asynchronous engine must collapse to when every worker is refreshed
/// each iteration.
///
/// Coded as a straight-line loop with no scheduler, no coin or delay
/// streams, and no epoch bookkeeping beyond what `manager_step` requires.
/// It consumes the same `(seed, stream)` pairs as the engine: one manager
/// stream plus one stream per worker, with one imputation pass before the
/// first sweep to populate the blocks.
pub fn parent_reference<K: DaKernel>(
    kernel: &K,
    iters: usize,
    seed: u64,
    recorder: &Recorder<K::Theta>,
) -> DrawMatrix {
    let k = kernel.n_workers();
    let mut manager_rng = RngStream::manager(seed);
    let mut worker_rngs: Vec<RngStream> = (0..k).map(|i| RngStream::worker(seed, i)).collect();
    let mut never = || false;

    let mut theta = kernel.initial_theta();
    let mut blocks: Vec<MissingBlock<K::Block>> = Vec::with_capacity(k);
    for i in 0..k {
        let payload = kernel
            .worker_step(i, &theta, &mut worker_rngs[i], &mut never)
            .expect("reference imputation step")
            .expect("reference workers run to completion");
        blocks.push(MissingBlock {
            worker: i,
            epoch: 0,
            payload,
        });
    }

    let mut draws = DrawMatrix::with_capacity(recorder.names.clone(), iters);
    for t in 0..iters as u64 {
        for i in 0..k {
            let payload = kernel
                .worker_step(i, &theta, &mut worker_rngs[i], &mut never)
                .expect("reference imputation step")
                .expect("reference workers run to completion");
            blocks[i] = MissingBlock {
                worker: i,
                epoch: t,
                payload,
            };
        }
        theta = kernel
            .manager_step(&blocks, &mut manager_rng)
            .expect("reference posterior step");
        draws.push_row(&recorder.extract(&theta));
    }
    draws
}
