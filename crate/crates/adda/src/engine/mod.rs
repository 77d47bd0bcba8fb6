//! The asynchronous manager/worker engine.
//!
//! One run alternates two kinds of step over a parameter snapshot theta and
//! k latent-data blocks:
//!
//! - workers each redraw their block given the current theta (imputation),
//! - the manager redraws theta given all k blocks (posterior), reusing the
//!   previous block of any worker that has not reported this epoch.
//!
//! Each iteration the manager flips a coin with probability `epsilon`; heads
//! waits for all k workers (a full synchronization), tails waits for only
//! `ceil(r * k)` of them. Any `epsilon > 0` keeps the chain Harris ergodic;
//! `r = 1` or `epsilon = 1` reduces the run to the classical synchronous
//! sampler it was derived from.
//!
//! Two execution modes share all of this logic. [`Mode::Virtual`] simulates
//! worker completion times deterministically on one thread, so a run is a
//! pure function of its configuration. [`Mode::Live`] spawns one thread per
//! worker and lets real arrival order decide.

mod draw_matrix;
mod live;
mod virtual_mode;

pub use draw_matrix::DrawMatrix;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A latent-data block as the manager stores it: the payload plus the epoch
/// of the theta snapshot it was computed from.
#[derive(Clone, Debug)]
pub struct MissingBlock<B> {
    pub worker: usize,
    pub epoch: u64,
    pub payload: B,
}

/// A data-augmentation kernel: the model-specific pair of conditional draws
/// plus the bookkeeping the engine needs to distribute them.
///
/// Implementations must be deterministic functions of `(inputs, rng)`: all
/// randomness comes from the supplied stream. That is what makes virtual
/// runs replayable and lets a sequential reference reproduce them.
pub trait DaKernel: Sync {
    type Theta: Clone + Send + Sync + 'static;
    type Block: Clone + Send + 'static;

    /// Number of workers the data were partitioned for.
    fn n_workers(&self) -> usize;

    /// Size of worker `worker`'s data shard, used to scale simulated delays.
    fn block_len(&self, worker: usize) -> usize;

    /// Deterministic starting parameter value.
    fn initial_theta(&self) -> Self::Theta;

    /// Redraw worker `worker`'s latent block given `theta`.
    ///
    /// The kernel must call `preempt` between individual latent-variable
    /// draws and return `Ok(None)` as soon as it reports true; a fresher
    /// theta has arrived and the partial work is discarded.
    fn worker_step(
        &self,
        worker: usize,
        theta: &Self::Theta,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> Result<Option<Self::Block>>;

    /// Redraw theta given the current set of blocks (one per worker, some
    /// possibly carried over from earlier epochs).
    fn manager_step(
        &self,
        blocks: &[MissingBlock<Self::Block>],
        rng: &mut RngStream,
    ) -> Result<Self::Theta>;

    /// Scalar drift value for stability monitoring; kernels without a
    /// monitor report NaN.
    fn drift(&self, _theta: &Self::Theta, _blocks: &[MissingBlock<Self::Block>]) -> f64 {
        f64::NAN
    }
}

/// How simulated worker completion times are drawn. Virtual mode treats the
/// draws as abstract ticks; live mode injects them as millisecond sleeps.
/// Either way the draw is scaled by the worker's relative block size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DelayModel {
    Constant { value: f64 },
    Exponential { rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl DelayModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DelayModel::Constant { value } => value.is_finite() && *value >= 0.0,
            DelayModel::Exponential { rate } => rate.is_finite() && *rate > 0.0,
            DelayModel::LogNormal { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && *sigma >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad delay model {self:?}")))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DelayModel::Constant { value } => *value,
            DelayModel::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
            DelayModel::LogNormal { mu, sigma } => {
                LogNormal::new(*mu, *sigma).unwrap().sample(rng)
            }
        }
    }
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::LogNormal { mu: 0.0, sigma: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Deterministic single-threaded simulation of the asynchronous run.
    Virtual,
    /// One OS thread per worker; arrival order is real.
    Live,
}

/// Which workers the manager waits for each iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Number of workers k >= 1.
    pub k: usize,
    /// Fraction of workers to wait for, in (0, 1].
    pub r: f64,
    /// Probability of forcing a full synchronization, in [0, 1].
    pub epsilon: f64,
    pub mode: Mode,
    #[serde(default)]
    pub delay: DelayModel,
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "r must lie in (0, 1], got {}",
                self.r
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        self.delay.validate()
    }

    /// Number of fresh blocks the manager waits for when the coin does not
    /// force a full synchronization.
    pub fn wait_count(&self) -> usize {
        select_wait_count(self.k, self.r)
    }
}

/// ceil(r * k), guarded against floating-point noise at exact multiples and
/// clamped to [1, k].
pub fn select_wait_count(k: usize, r: f64) -> usize {
    let raw = (r * k as f64 - 1e-9).ceil() as isize;
    raw.clamp(1, k as isize) as usize
}

/// Per-run options independent of the selection policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of iterations T >= 1; one recorded draw per iteration.
    pub iters: usize,
    pub seed: u64,
    /// Record the kernel's drift value every iteration.
    #[serde(default)]
    pub record_drift: bool,
}

/// What happened during a run, beyond the draws themselves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunStats {
    pub iters: usize,
    /// Fresh payloads the manager spliced, per worker.
    pub accept_counts: Vec<u64>,
    /// Stale or duplicate payloads the manager dropped, per worker.
    pub discarded: Vec<u64>,
    /// Iterations where the epsilon-coin forced waiting for all k workers.
    pub full_sync_count: u64,
    /// Per-iteration duration: abstract ticks (virtual) or seconds (live).
    pub iter_times: Vec<f64>,
    /// Per-iteration drift values when requested, else empty.
    pub drift: Vec<f64>,
}

impl RunStats {
    pub(crate) fn new(k: usize, iters: usize) -> Self {
        RunStats {
            iters,
            accept_counts: vec![0; k],
            discarded: vec![0; k],
            full_sync_count: 0,
            iter_times: Vec::with_capacity(iters),
            drift: Vec::new(),
        }
    }

    /// Fraction of iterations each worker contributed a fresh block: the
    /// empirical estimate of its effective update rate.
    pub fn estimated_r(&self) -> Vec<f64> {
        self.accept_counts
            .iter()
            .map(|&c| c as f64 / self.iters as f64)
            .collect()
    }
}

/// Names plus an extraction function: which scalar functions of theta get
/// one column each in the draw matrix.
pub struct Recorder<T> {
    pub names: Vec<String>,
    extract: Box<dyn Fn(&T) -> Vec<f64> + Send + Sync>,
}

impl<T> Recorder<T> {
    pub fn new<F>(names: Vec<String>, extract: F) -> Self
    where
        F: Fn(&T) -> Vec<f64> + Send + Sync + 'static,
    {
        Recorder {
            names,
            extract: Box::new(extract),
        }
    }

    pub fn extract(&self, theta: &T) -> Vec<f64> {
        (self.extract)(theta)
    }
}

/// Run a chain and return one recorded row per iteration plus run
/// statistics.
///
/// The starting state is the kernel's deterministic initial theta together
/// with one synchronous imputation pass, so every worker owns a block before
/// the first asynchronous iteration.
pub fn run_chain<K: DaKernel>(
    kernel: &K,
    policy: &SelectionPolicy,
    run: &RunConfig,
    recorder: &Recorder<K::Theta>,
) -> Result<(DrawMatrix, RunStats)> {
    policy.validate()?;
    if run.iters == 0 {
        return Err(Error::InvalidConfig("iters must be at least 1".into()));
    }
    if kernel.n_workers() != policy.k {
        return Err(Error::InvalidConfig(format!(
            "kernel was partitioned for {} workers but the policy says k = {}",
            kernel.n_workers(),
            policy.k
        )));
    }
    match policy.mode {
        Mode::Virtual => virtual_mode::run(kernel, policy, run, recorder),
        Mode::Live => live::run(kernel, policy, run, recorder),
    }
}

/// Relative delay multiplier per worker: block length over the balanced
/// share, so equally sized shards keep the delay model's natural scale.
pub(crate) fn delay_scales<K: DaKernel>(kernel: &K) -> Vec<f64> {
    let k = kernel.n_workers();
    let total: usize = (0..k).map(|i| kernel.block_len(i)).sum();
    if total == 0 {
        return vec![1.0; k];
    }
    let share = total as f64 / k as f64;
    (0..k)
        .map(|i| kernel.block_len(i) as f64 / share)
        .collect()
}

/// Initial synchronous imputation pass; consumes each worker stream once.
pub(crate) fn initial_blocks<K: DaKernel>(
    kernel: &K,
    theta: &K::Theta,
    worker_rngs: &mut [RngStream],
) -> Result<Vec<MissingBlock<K::Block>>> {
    let mut blocks = Vec::with_capacity(worker_rngs.len());
    for (i, rng) in worker_rngs.iter_mut().enumerate() {
        let payload = kernel
            .worker_step(i, theta, rng, &mut || false)?
            .expect("worker_step cannot be preempted during initialization");
        blocks.push(MissingBlock {
            worker: i,
            epoch: 0,
            payload,
        });
    }
    Ok(blocks)
}

/// Replace a worker's block with a fresh payload. The caller has already
/// checked staleness; this enforces it as a hard invariant.
pub(crate) fn splice<B>(
    blocks: &mut [MissingBlock<B>],
    incoming: MissingBlock<B>,
    current_epoch: u64,
) -> Result<()> {
    if incoming.epoch != current_epoch {
        return Err(Error::Numeric {
            detail: format!(
                "splice invariant violated: block from epoch {} at epoch {}",
                incoming.epoch, current_epoch
            ),
            iteration: None,
        });
    }
    let worker = incoming.worker;
    blocks[worker] = incoming;
    Ok(())
}
