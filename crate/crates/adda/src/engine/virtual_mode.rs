//! Deterministic single-threaded simulation of the asynchronous run.
//!
//! Completion order is decided by drawing one delay per worker per
//! iteration from dedicated streams; the manager takes the `wait_count`
//! earliest finishers (ties broken by worker id) and only those workers
//! actually compute. A worker that misses the cut never consumes payload
//! randomness for that epoch: it is treated as preempted at the broadcast
//! instant, exactly like a live worker that truncates its in-flight draw.
//!
//! Because every random decision comes from a `(seed, stream)` pair, a
//! virtual run is a pure function of its configuration.

use rand::Rng;

use super::{
    delay_scales, initial_blocks, splice, DaKernel, DrawMatrix, MissingBlock, Recorder, RunConfig,
    RunStats, SelectionPolicy,
};
use crate::error::Result;
use crate::rng::RngStream;

pub(super) fn run<K: DaKernel>(
    kernel: &K,
    policy: &SelectionPolicy,
    run: &RunConfig,
    recorder: &Recorder<K::Theta>,
) -> Result<(DrawMatrix, RunStats)> {
    let k = policy.k;
    let wait = policy.wait_count();
    let scales = delay_scales(kernel);

    let mut manager_rng = RngStream::manager(run.seed);
    let mut coin_rng = RngStream::coin(run.seed);
    let mut worker_rngs: Vec<RngStream> = (0..k).map(|i| RngStream::worker(run.seed, i)).collect();
    let mut delay_rngs: Vec<RngStream> = (0..k).map(|i| RngStream::delay(run.seed, i)).collect();

    let mut theta = kernel.initial_theta();
    let mut blocks = initial_blocks(kernel, &theta, &mut worker_rngs)?;
    let mut epoch: u64 = 0;

    let mut draws = DrawMatrix::with_capacity(recorder.names.clone(), run.iters);
    let mut stats = RunStats::new(k, run.iters);
    if run.record_drift {
        stats.drift.reserve(run.iters);
    }
    let mut order: Vec<usize> = (0..k).collect();

    for t in 1..=run.iters {
        let full_sync = coin_rng.random_bool(policy.epsilon);
        let need = if full_sync { k } else { wait };
        if full_sync {
            stats.full_sync_count += 1;
        }

        // One delay per worker per iteration keeps stream consumption
        // uniform regardless of who gets selected.
        let delays: Vec<f64> = (0..k)
            .map(|i| policy.delay.draw(&mut delay_rngs[i]) * scales[i])
            .collect();
        order.sort_unstable_by(|&a, &b| {
            delays[a]
                .partial_cmp(&delays[b])
                .expect("delays are finite")
                .then(a.cmp(&b))
        });
        let mut selected: Vec<usize> = order[..need].to_vec();
        selected.sort_unstable();

        for &i in &selected {
            let payload = kernel
                .worker_step(i, &theta, &mut worker_rngs[i], &mut || false)?
                .expect("virtual workers are never preempted mid-step");
            splice(
                &mut blocks,
                MissingBlock {
                    worker: i,
                    epoch,
                    payload,
                },
                epoch,
            )?;
            stats.accept_counts[i] += 1;
        }

        theta = kernel
            .manager_step(&blocks, &mut manager_rng)
            .map_err(|e| e.at_iteration(t))?;
        epoch += 1;

        draws.push_row(&recorder.extract(&theta));
        // The iteration lasts until the slowest selected worker reported.
        let tick = selected
            .iter()
            .map(|&i| delays[i])
            .fold(f64::NEG_INFINITY, f64::max);
        stats.iter_times.push(tick);
        if run.record_drift {
            stats.drift.push(kernel.drift(&theta, &blocks));
        }
    }

    Ok((draws, stats))
}
