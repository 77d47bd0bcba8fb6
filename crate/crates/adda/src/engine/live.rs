//! Threaded execution: one manager plus k worker threads.
//!
//! Workers block until a theta with a newer epoch appears, optionally sleep
//! for an injected delay, recompute their block, and send it with the epoch
//! it was computed from. The manager collects payloads until enough fresh
//! ones arrived, silently counting and dropping stale or duplicate ones,
//! then advances theta and publishes it. Workers poll the published epoch
//! between latent draws and abandon work the moment it moves.

use rand::Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{
    delay_scales, initial_blocks, splice, DaKernel, DrawMatrix, MissingBlock, Recorder, RunConfig,
    RunStats, SelectionPolicy,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const SHUTDOWN: u64 = u64::MAX;
/// Sleep slice so injected delays stay preemptible.
const SLEEP_SLICE: Duration = Duration::from_micros(200);

struct Broadcast<T> {
    slot: Mutex<(u64, Arc<T>)>,
    changed: Condvar,
    /// Mirror of the slot's epoch for cheap lock-free staleness polls.
    epoch: AtomicU64,
}

impl<T> Broadcast<T> {
    fn new(theta: Arc<T>) -> Self {
        Broadcast {
            slot: Mutex::new((0, theta)),
            changed: Condvar::new(),
            epoch: AtomicU64::new(0),
        }
    }

    fn publish(&self, epoch: u64, theta: Arc<T>) {
        let mut slot = self.slot.lock().unwrap();
        *slot = (epoch, theta);
        self.epoch.store(epoch, Ordering::Release);
        drop(slot);
        self.changed.notify_all();
    }

    fn shutdown(&self) {
        let mut slot = self.slot.lock().unwrap();
        slot.0 = SHUTDOWN;
        self.epoch.store(SHUTDOWN, Ordering::Release);
        drop(slot);
        self.changed.notify_all();
    }

    /// Block until the published epoch differs from `seen`, then return it.
    fn wait_newer(&self, seen: Option<u64>) -> (u64, Arc<T>) {
        let mut slot = self.slot.lock().unwrap();
        while Some(slot.0) == seen {
            slot = self.changed.wait(slot).unwrap();
        }
        (slot.0, slot.1.clone())
    }

    fn current_epoch(&self) -> u64 {
        self.epoch.load(Ordering::Acquire)
    }
}

enum WorkerMsg<B> {
    Payload { worker: usize, epoch: u64, block: B },
    Failed { worker: usize, detail: String },
}

pub(super) fn run<K: DaKernel>(
    kernel: &K,
    policy: &SelectionPolicy,
    run: &RunConfig,
    recorder: &Recorder<K::Theta>,
) -> Result<(DrawMatrix, RunStats)> {
    let k = policy.k;
    let scales = delay_scales(kernel);

    let mut manager_rng = RngStream::manager(run.seed);
    let mut coin_rng = RngStream::coin(run.seed);
    let mut worker_rngs: Vec<RngStream> = (0..k).map(|i| RngStream::worker(run.seed, i)).collect();
    let delay_rngs: Vec<RngStream> = (0..k).map(|i| RngStream::delay(run.seed, i)).collect();

    let theta = kernel.initial_theta();
    let blocks = initial_blocks(kernel, &theta, &mut worker_rngs)?;

    let broadcast = Broadcast::new(Arc::new(theta));
    let (tx, rx) = mpsc::channel::<WorkerMsg<K::Block>>();

    std::thread::scope(|scope| {
        for ((worker, rng), (delay_rng, scale)) in (0..k)
            .zip(worker_rngs)
            .zip(delay_rngs.into_iter().zip(scales))
        {
            let tx = tx.clone();
            let broadcast = &broadcast;
            scope.spawn(move || {
                worker_loop(kernel, worker, rng, delay_rng, scale, policy, broadcast, tx)
            });
        }
        drop(tx);

        let result = manage(
            kernel,
            policy,
            run,
            recorder,
            &mut manager_rng,
            &mut coin_rng,
            blocks,
            &broadcast,
            &rx,
        );
        // Always wake and stop the workers, whether the run finished or
        // aborted; the scope joins them on exit.
        broadcast.shutdown();
        result
    })
}

#[allow(clippy::too_many_arguments)]
fn manage<K: DaKernel>(
    kernel: &K,
    policy: &SelectionPolicy,
    run: &RunConfig,
    recorder: &Recorder<K::Theta>,
    manager_rng: &mut RngStream,
    coin_rng: &mut RngStream,
    mut blocks: Vec<MissingBlock<K::Block>>,
    broadcast: &Broadcast<K::Theta>,
    rx: &mpsc::Receiver<WorkerMsg<K::Block>>,
) -> Result<(DrawMatrix, RunStats)> {
    let k = policy.k;
    let wait = policy.wait_count();
    let mut epoch: u64 = 0;

    let mut draws = DrawMatrix::with_capacity(recorder.names.clone(), run.iters);
    let mut stats = RunStats::new(k, run.iters);

    for t in 1..=run.iters {
        let started = Instant::now();
        let full_sync = coin_rng.random_bool(policy.epsilon);
        let need = if full_sync { k } else { wait };
        if full_sync {
            stats.full_sync_count += 1;
        }

        let mut fresh = vec![false; k];
        let mut n_fresh = 0;
        while n_fresh < need {
            match rx.recv() {
                Ok(WorkerMsg::Payload {
                    worker,
                    epoch: block_epoch,
                    block,
                }) => {
                    if block_epoch == epoch && !fresh[worker] {
                        splice(
                            &mut blocks,
                            MissingBlock {
                                worker,
                                epoch: block_epoch,
                                payload: block,
                            },
                            epoch,
                        )?;
                        fresh[worker] = true;
                        n_fresh += 1;
                        stats.accept_counts[worker] += 1;
                    } else {
                        stats.discarded[worker] += 1;
                    }
                }
                Ok(WorkerMsg::Failed { worker, detail }) => {
                    return Err(Error::WorkerFailed { worker, detail })
                }
                // All workers hold senders until shutdown, so this only
                // happens if every worker thread died.
                Err(_) => {
                    return Err(Error::WorkerFailed {
                        worker: k,
                        detail: "all worker threads exited early".into(),
                    })
                }
            }
        }

        let theta = kernel
            .manager_step(&blocks, manager_rng)
            .map_err(|e| e.at_iteration(t))?;
        epoch += 1;
        draws.push_row(&recorder.extract(&theta));
        if run.record_drift {
            stats.drift.push(kernel.drift(&theta, &blocks));
        }
        broadcast.publish(epoch, Arc::new(theta));
        stats.iter_times.push(started.elapsed().as_secs_f64());
    }

    Ok((draws, stats))
}

#[allow(clippy::too_many_arguments)]
fn worker_loop<K: DaKernel>(
    kernel: &K,
    worker: usize,
    mut rng: RngStream,
    mut delay_rng: RngStream,
    scale: f64,
    policy: &SelectionPolicy,
    broadcast: &Broadcast<K::Theta>,
    tx: mpsc::Sender<WorkerMsg<K::Block>>,
) {
    let mut seen: Option<u64> = None;
    loop {
        let (epoch, theta) = broadcast.wait_newer(seen);
        if epoch == SHUTDOWN {
            return;
        }
        seen = Some(epoch);

        let delay_ms = policy.delay.draw(&mut delay_rng) * scale;
        if !sleep_preemptible(delay_ms, || broadcast.current_epoch() != epoch) {
            continue;
        }

        let mut preempt = || broadcast.current_epoch() != epoch;
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            kernel.worker_step(worker, &theta, &mut rng, &mut preempt)
        }));
        match outcome {
            Ok(Ok(Some(block))) => {
                // The manager may already have moved on; it will count the
                // payload as stale. Send failure means shutdown raced us.
                let _ = tx.send(WorkerMsg::Payload {
                    worker,
                    epoch,
                    block,
                });
            }
            Ok(Ok(None)) => {} // preempted; start over with the newer theta
            Ok(Err(e)) => {
                let _ = tx.send(WorkerMsg::Failed {
                    worker,
                    detail: e.to_string(),
                });
                return;
            }
            Err(panic) => {
                let detail = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "worker panicked".into());
                let _ = tx.send(WorkerMsg::Failed { worker, detail });
                return;
            }
        }
    }
}

/// Sleep in slices, abandoning early (returning false) if `newer` fires.
fn sleep_preemptible(delay_ms: f64, newer: impl Fn() -> bool) -> bool {
    if delay_ms <= 0.0 {
        return true;
    }
    let deadline = Instant::now() + Duration::from_secs_f64(delay_ms / 1e3);
    loop {
        if newer() {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        std::thread::sleep(SLEEP_SLICE.min(deadline - now));
    }
}
