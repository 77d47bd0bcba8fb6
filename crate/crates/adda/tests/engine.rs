//! Engine-level behavior: determinism, synchronous reduction, selection
//! accounting, and live-mode scheduling, exercised with a cheap toy kernel
//! so every property is about the scheduler rather than a model.

mod common;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use adda::engine::{
    run_chain, DaKernel, DelayModel, MissingBlock, Mode, Recorder, RunConfig, SelectionPolicy,
};
use adda::error::Error;
use adda::rng::RngStream;

use common::parent_reference;

/// One scalar latent value per worker. Theta holds each worker's last
/// payload halved plus one manager noise coordinate, so draws depend on
/// every stream the engine touches.
struct ToyKernel {
    lens: Vec<usize>,
}

impl ToyKernel {
    fn balanced(k: usize) -> Self {
        ToyKernel { lens: vec![1; k] }
    }

    fn recorder(&self) -> Recorder<Vec<f64>> {
        let names = (0..=self.lens.len())
            .map(|i| format!("t{i}"))
            .collect::<Vec<_>>();
        Recorder::new(names, |theta: &Vec<f64>| theta.clone())
    }
}

impl DaKernel for ToyKernel {
    type Theta = Vec<f64>;
    type Block = f64;

    fn n_workers(&self) -> usize {
        self.lens.len()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.lens[worker]
    }

    fn initial_theta(&self) -> Vec<f64> {
        vec![0.0; self.lens.len() + 1]
    }

    fn worker_step(
        &self,
        worker: usize,
        theta: &Vec<f64>,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> adda::Result<Option<f64>> {
        if preempt() {
            return Ok(None);
        }
        Ok(Some(rng.random::<f64>() + 0.1 * theta[worker]))
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<f64>],
        rng: &mut RngStream,
    ) -> adda::Result<Vec<f64>> {
        let mut theta: Vec<f64> = blocks.iter().map(|b| 0.5 * b.payload).collect();
        theta.push(rng.random::<f64>());
        Ok(theta)
    }

    fn drift(&self, theta: &Vec<f64>, _blocks: &[MissingBlock<f64>]) -> f64 {
        theta.iter().map(|x| x.abs()).sum()
    }
}

fn policy(k: usize, r: f64, epsilon: f64, mode: Mode, delay: DelayModel) -> SelectionPolicy {
    SelectionPolicy {
        k,
        r,
        epsilon,
        mode,
        delay,
    }
}

fn config(iters: usize, seed: u64) -> RunConfig {
    RunConfig {
        iters,
        seed,
        record_drift: false,
    }
}

#[test]
fn virtual_runs_replay_bit_for_bit() {
    let kernel = ToyKernel::balanced(6);
    let rec = kernel.recorder();
    let pol = policy(6, 0.4, 0.2, Mode::Virtual, DelayModel::default());
    let (a, sa) = run_chain(&kernel, &pol, &config(400, 9), &rec).unwrap();
    let (b, sb) = run_chain(&kernel, &pol, &config(400, 9), &rec).unwrap();
    assert!(a.bits_eq(&b));
    assert_eq!(sa.accept_counts, sb.accept_counts);
    assert_eq!(sa.full_sync_count, sb.full_sync_count);
    assert_eq!(sa.iter_times, sb.iter_times);

    let (c, _) = run_chain(&kernel, &pol, &config(400, 10), &rec).unwrap();
    assert!(!a.bits_eq(&c), "different seeds must give different draws");
}

#[test]
fn full_sync_routes_match_sequential_reference() {
    let kernel = ToyKernel::balanced(5);
    let rec = kernel.recorder();
    let iters = 500;
    let seed = 33;

    let reference = parent_reference(&kernel, iters, seed, &rec);
    let eps_one = policy(5, 0.3, 1.0, Mode::Virtual, DelayModel::default());
    let r_one = policy(5, 1.0, 0.0, Mode::Virtual, DelayModel::default());
    let (a, sa) = run_chain(&kernel, &eps_one, &config(iters, seed), &rec).unwrap();
    let (b, sb) = run_chain(&kernel, &r_one, &config(iters, seed), &rec).unwrap();

    assert!(a.bits_eq(&reference), "epsilon = 1 must reduce to the sequential sampler");
    assert!(b.bits_eq(&reference), "r = 1 must reduce to the sequential sampler");
    assert_eq!(sa.full_sync_count, iters as u64);
    assert_eq!(sb.full_sync_count, 0);
    assert!(sa.accept_counts.iter().all(|&c| c == iters as u64));
}

#[test]
fn live_full_sync_matches_virtual_bit_for_bit() {
    // With every worker awaited each epoch, a worker computes exactly one
    // payload per theta and can never be preempted, so thread scheduling
    // has nothing left to decide and live equals virtual exactly.
    let kernel = ToyKernel::balanced(4);
    let rec = kernel.recorder();
    let delay = DelayModel::Constant { value: 0.0 };
    let (v, _) = run_chain(
        &kernel,
        &policy(4, 1.0, 1.0, Mode::Virtual, delay),
        &config(300, 77),
        &rec,
    )
    .unwrap();
    let (l, stats) = run_chain(
        &kernel,
        &policy(4, 1.0, 1.0, Mode::Live, delay),
        &config(300, 77),
        &rec,
    )
    .unwrap();
    assert!(v.bits_eq(&l));
    assert_eq!(stats.discarded, vec![0; 4], "full sync never produces stale payloads");
}

#[test]
fn partial_sync_accounting_is_exact() {
    let kernel = ToyKernel::balanced(10);
    let rec = kernel.recorder();
    let pol = policy(10, 0.2, 0.0, Mode::Virtual, DelayModel::default());
    assert_eq!(pol.wait_count(), 2);
    let iters = 500;
    let (draws, stats) = run_chain(&kernel, &pol, &config(iters, 4), &rec).unwrap();
    assert_eq!(draws.nrows(), iters);
    assert_eq!(stats.full_sync_count, 0);
    assert_eq!(stats.accept_counts.iter().sum::<u64>(), 2 * iters as u64);
    assert_eq!(stats.discarded, vec![0; 10], "virtual mode never wastes a payload");
    assert_eq!(stats.iter_times.len(), iters);
}

#[test]
fn full_sync_fraction_tracks_epsilon() {
    let kernel = ToyKernel::balanced(5);
    let rec = kernel.recorder();
    let pol = policy(5, 0.2, 0.3, Mode::Virtual, DelayModel::default());
    let iters = 4000;
    let (_, stats) = run_chain(&kernel, &pol, &config(iters, 12), &rec).unwrap();
    let frac = stats.full_sync_count as f64 / iters as f64;
    // 4 binomial SEs around 0.3.
    let band = 4.0 * (0.3f64 * 0.7 / iters as f64).sqrt();
    assert!(
        (frac - 0.3).abs() < band,
        "full-sync fraction {frac} not within {band} of 0.3"
    );
}

#[test]
fn estimated_r_concentrates_under_exchangeable_delays() {
    let kernel = ToyKernel::balanced(10);
    let rec = kernel.recorder();
    let pol = policy(
        10,
        0.2,
        0.0,
        Mode::Virtual,
        DelayModel::Exponential { rate: 1.0 },
    );
    let (_, stats) = run_chain(&kernel, &pol, &config(5000, 21), &rec).unwrap();
    for (i, r_hat) in stats.estimated_r().iter().enumerate() {
        assert!(
            (r_hat - 0.2).abs() < 0.05,
            "worker {i}: estimated r {r_hat} drifted from 0.2"
        );
    }
}

#[test]
fn oversized_blocks_slow_their_worker_down() {
    // Delays scale with relative block size, so a worker carrying 9 of 13
    // items almost never makes the one-worker cut.
    let kernel = ToyKernel {
        lens: vec![1, 1, 1, 1, 9],
    };
    let rec = kernel.recorder();
    let pol = policy(
        5,
        0.2,
        0.0,
        Mode::Virtual,
        DelayModel::Exponential { rate: 1.0 },
    );
    let (_, stats) = run_chain(&kernel, &pol, &config(3000, 5), &rec).unwrap();
    let r_hat = stats.estimated_r();
    assert!(r_hat[4] < 0.08, "heavy worker selected too often: {}", r_hat[4]);
    for i in 0..4 {
        assert!(r_hat[i] > 0.15, "light worker {i} starved: {}", r_hat[i]);
    }
}

#[test]
fn virtual_iteration_ticks_shrink_with_r() {
    // The virtual clock advances to the slowest selected worker, so waiting
    // for fewer workers must shorten the average iteration.
    let kernel = ToyKernel::balanced(10);
    let rec = kernel.recorder();
    let mut means = Vec::new();
    for &r in &[1.0, 0.8, 0.2] {
        let pol = policy(
            10,
            r,
            0.0,
            Mode::Virtual,
            DelayModel::LogNormal { mu: 0.0, sigma: 1.0 },
        );
        let (_, stats) = run_chain(&kernel, &pol, &config(2000, 3), &rec).unwrap();
        means.push(stats.iter_times.iter().sum::<f64>() / stats.iter_times.len() as f64);
    }
    assert!(
        means[0] > means[1] && means[1] > means[2],
        "mean ticks not decreasing across r = 1.0, 0.8, 0.2: {means:?}"
    );
}

#[test]
fn live_partial_sync_discards_stale_payloads() {
    let kernel = ToyKernel::balanced(3);
    let rec = kernel.recorder();
    let pol = policy(
        3,
        0.34,
        0.0,
        Mode::Live,
        DelayModel::Constant { value: 0.0 },
    );
    assert_eq!(pol.wait_count(), 2);
    let iters = 300;
    let (draws, stats) = run_chain(&kernel, &pol, &config(iters, 8), &rec).unwrap();
    assert_eq!(draws.nrows(), iters);
    assert_eq!(stats.accept_counts.iter().sum::<u64>(), 2 * iters as u64);
    let wasted: u64 = stats.discarded.iter().sum();
    assert!(
        wasted > 0,
        "three racing workers with a two-payload quota must produce stale sends"
    );
}

#[test]
fn drift_is_recorded_only_on_request() {
    let kernel = ToyKernel::balanced(4);
    let rec = kernel.recorder();
    let pol = policy(4, 0.5, 0.1, Mode::Virtual, DelayModel::default());
    let (_, without) = run_chain(&kernel, &pol, &config(50, 2), &rec).unwrap();
    assert!(without.drift.is_empty());
    let cfg = RunConfig {
        iters: 50,
        seed: 2,
        record_drift: true,
    };
    let (_, with) = run_chain(&kernel, &pol, &cfg, &rec).unwrap();
    assert_eq!(with.drift.len(), 50);
    assert!(with.drift.iter().all(|d| d.is_finite()));
}

/// Worker 1 fails on its third imputation call.
struct FailingKernel {
    inner: ToyKernel,
    calls: AtomicU64,
}

impl DaKernel for FailingKernel {
    type Theta = Vec<f64>;
    type Block = f64;

    fn n_workers(&self) -> usize {
        self.inner.n_workers()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.inner.block_len(worker)
    }

    fn initial_theta(&self) -> Vec<f64> {
        self.inner.initial_theta()
    }

    fn worker_step(
        &self,
        worker: usize,
        theta: &Vec<f64>,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> adda::Result<Option<f64>> {
        if worker == 1 && self.calls.fetch_add(1, Ordering::SeqCst) >= 2 {
            return Err(Error::Numeric {
                detail: "synthetic worker fault".into(),
                iteration: None,
            });
        }
        self.inner.worker_step(worker, theta, rng, preempt)
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<f64>],
        rng: &mut RngStream,
    ) -> adda::Result<Vec<f64>> {
        self.inner.manager_step(blocks, rng)
    }
}

#[test]
fn worker_failure_aborts_the_run() {
    let kernel = FailingKernel {
        inner: ToyKernel::balanced(3),
        calls: AtomicU64::new(0),
    };
    let rec = Recorder::new(
        vec!["t0".into(), "t1".into(), "t2".into(), "t3".into()],
        |theta: &Vec<f64>| theta.clone(),
    );

    let live = policy(3, 1.0, 0.0, Mode::Live, DelayModel::Constant { value: 0.0 });
    let err = run_chain(&kernel, &live, &config(100, 1), &rec).err().unwrap();
    assert!(
        matches!(err, Error::WorkerFailed { worker: 1, .. }),
        "unexpected error {err}"
    );

    kernel.calls.store(0, Ordering::SeqCst);
    let virt = policy(3, 1.0, 0.0, Mode::Virtual, DelayModel::default());
    assert!(run_chain(&kernel, &virt, &config(100, 1), &rec).is_err());
}

/// Worker 0 panics (rather than erroring) on its second call.
struct PanickingKernel {
    inner: ToyKernel,
    calls: AtomicU64,
}

impl DaKernel for PanickingKernel {
    type Theta = Vec<f64>;
    type Block = f64;

    fn n_workers(&self) -> usize {
        self.inner.n_workers()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.inner.block_len(worker)
    }

    fn initial_theta(&self) -> Vec<f64> {
        self.inner.initial_theta()
    }

    fn worker_step(
        &self,
        worker: usize,
        theta: &Vec<f64>,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> adda::Result<Option<f64>> {
        if worker == 0 && self.calls.fetch_add(1, Ordering::SeqCst) >= 1 {
            panic!("synthetic worker panic");
        }
        self.inner.worker_step(worker, theta, rng, preempt)
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<f64>],
        rng: &mut RngStream,
    ) -> adda::Result<Vec<f64>> {
        self.inner.manager_step(blocks, rng)
    }
}

#[test]
fn worker_panic_is_reported_not_propagated() {
    let kernel = PanickingKernel {
        inner: ToyKernel::balanced(2),
        calls: AtomicU64::new(0),
    };
    let rec = Recorder::new(
        vec!["t0".into(), "t1".into(), "t2".into()],
        |theta: &Vec<f64>| theta.clone(),
    );
    let live = policy(2, 1.0, 0.0, Mode::Live, DelayModel::Constant { value: 0.0 });
    let err = run_chain(&kernel, &live, &config(100, 1), &rec).err().unwrap();
    match err {
        Error::WorkerFailed { worker, detail } => {
            assert_eq!(worker, 0);
            assert!(detail.contains("synthetic worker panic"), "detail: {detail}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn bad_configurations_are_validation_errors() {
    let kernel = ToyKernel::balanced(4);
    let rec = kernel.recorder();
    let base = policy(4, 0.5, 0.1, Mode::Virtual, DelayModel::default());

    let cases: Vec<SelectionPolicy> = vec![
        SelectionPolicy { k: 0, ..base.clone() },
        SelectionPolicy { k: 5, ..base.clone() },
        SelectionPolicy { r: 0.0, ..base.clone() },
        SelectionPolicy { r: 1.5, ..base.clone() },
        SelectionPolicy { epsilon: -0.1, ..base.clone() },
        SelectionPolicy { epsilon: 1.1, ..base.clone() },
        SelectionPolicy {
            delay: DelayModel::Exponential { rate: 0.0 },
            ..base.clone()
        },
    ];
    for pol in cases {
        let err = run_chain(&kernel, &pol, &config(10, 1), &rec).err().unwrap();
        assert!(err.is_validation(), "expected validation error, got {err}");
    }

    let err = run_chain(&kernel, &base, &config(0, 1), &rec).err().unwrap();
    assert!(err.is_validation(), "iters = 0 must be rejected, got {err}");
}
