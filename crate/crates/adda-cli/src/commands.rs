//! The four subcommand bodies. Everything returns the library error type
//! so main can map validation failures to exit 1 and runtime failures
//! to exit 2.

use std::path::Path;

use adda::datagen::{
    gen_lasso, gen_lme, gen_logistic, movielens_features, partition, read_ratings_csv,
    LME_ROWS_PER_SUBJECT,
};
use adda::diagnostics::{accuracy_curve, se_curve};
use adda::engine::{run_chain, DaKernel, Recorder, RunStats};
use adda::error::{Error, Result};
use adda::models::lasso::{LassoData, LassoHyper, LassoKernel};
use adda::models::lme::{check_assumption1, LmeData, LmeKernel, LmePrior};
use adda::models::logistic::{LogisticData, LogisticKernel, LogisticPrior};
use nalgebra::{DMatrix, DVector};

use crate::config::{resolve, ResolvedRun};
use crate::{CheckLmeArgs, GenArgs, MetricsArgs, RunArgs};

pub fn run(args: RunArgs) -> Result<()> {
    let opts = resolve(args)?;
    match opts.model.as_str() {
        "logistic" => run_logistic(&opts),
        "lasso" => run_lasso(&opts),
        "lme" => run_lme(&opts),
        other => Err(Error::InvalidConfig(format!(
            "model must be logistic, lasso or lme, got {other:?}"
        ))),
    }
}

fn run_logistic(opts: &ResolvedRun) -> Result<()> {
    let data = LogisticData::from_csv_path(&opts.data)?;
    let p = data.p();
    let prior = match &opts.prior {
        Some(path) => LogisticPrior::from_json_path(path)?,
        None => LogisticPrior::standard(p),
    };
    let prob_points = prob_points(&opts.record, p)?;
    let parts = partition(data.n(), opts.policy.k, opts.run.seed)?;
    let kernel = LogisticKernel::new(data, prior, parts)?;
    let recorder = kernel.recorder(prob_points);
    finish(opts, &kernel, &recorder)
}

fn run_lasso(opts: &ResolvedRun) -> Result<()> {
    reject_prob_specs(&opts.record, "lasso")?;
    let data = LassoData::from_csv_path(&opts.data)?;
    let hyper = match &opts.prior {
        Some(path) => LassoHyper::from_json_path(path)?,
        None => LassoHyper::default(),
    };
    // Workers own coordinate blocks, so the partition ranges over columns.
    let parts = partition(data.p(), opts.policy.k, opts.run.seed)?;
    let kernel = LassoKernel::new(data, hyper, parts)?;
    let recorder = kernel.recorder();
    finish(opts, &kernel, &recorder)
}

fn run_lme(opts: &ResolvedRun) -> Result<()> {
    reject_prob_specs(&opts.record, "lme")?;
    let data = LmeData::from_csv_path(&opts.data)?;
    let prior = match &opts.prior {
        Some(path) => LmePrior::from_json_path(path)?,
        None => LmePrior::standard(data.p(), data.q()),
    };
    let parts = partition(data.m(), opts.policy.k, opts.run.seed)?;
    let kernel = LmeKernel::new(data, prior, parts, opts.fix_gamma)?;
    let recorder = kernel.recorder();
    finish(opts, &kernel, &recorder)
}

fn finish<K: DaKernel>(opts: &ResolvedRun, kernel: &K, recorder: &Recorder<K::Theta>) -> Result<()> {
    let (draws, stats) = run_chain(kernel, &opts.policy, &opts.run, recorder)?;
    std::fs::create_dir_all(&opts.out)?;
    draws.to_csv_path(opts.out.join("draws.csv"))?;
    write_run_json(opts, &stats, &opts.out.join("run.json"))
}

fn write_run_json(opts: &ResolvedRun, stats: &RunStats, path: &Path) -> Result<()> {
    let summary = serde_json::json!({
        "model": opts.model,
        "k": opts.policy.k,
        "r": opts.policy.r,
        "epsilon": opts.policy.epsilon,
        "iters": opts.run.iters,
        "seed": opts.run.seed,
        "mode": opts.policy.mode,
        "delay": opts.policy.delay,
        "estimated_r": stats.estimated_r(),
        "accept_counts": stats.accept_counts,
        "discarded": stats.discarded,
        "full_sync_count": stats.full_sync_count,
        "iter_times": stats.iter_times,
        "drift": stats.drift,
    });
    std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Parse every "prob:x1,...,xp" record spec into a covariate point.
fn prob_points(record: &[String], p: usize) -> Result<Vec<DVector<f64>>> {
    let mut points = Vec::new();
    for spec in record {
        if spec == "drift" {
            continue;
        }
        let Some(body) = spec.strip_prefix("prob:") else {
            return Err(bad_record(spec));
        };
        let values: Result<Vec<f64>> = body
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad_record(spec)))
            .collect();
        let values = values?;
        if values.len() != p {
            return Err(Error::InvalidConfig(format!(
                "record spec {spec:?} has {} coordinates, the design has {p}",
                values.len()
            )));
        }
        points.push(DVector::from_vec(values));
    }
    Ok(points)
}

fn reject_prob_specs(record: &[String], model: &str) -> Result<()> {
    for spec in record {
        if spec != "drift" {
            return Err(Error::InvalidConfig(format!(
                "record spec {spec:?} is not supported for the {model} model"
            )));
        }
    }
    Ok(())
}

fn bad_record(spec: &str) -> Error {
    Error::InvalidConfig(format!(
        "record spec must be \"drift\" or \"prob:x1,...,xp\", got {spec:?}"
    ))
}

pub fn metrics(args: MetricsArgs) -> Result<()> {
    let adda_draws = adda::engine::DrawMatrix::from_csv_path(&args.adda_draws)?;
    let parent = adda::engine::DrawMatrix::from_csv_path(&args.parent)?;
    let grid = parse_grid(&args.grid)?;
    let accuracy = accuracy_curve(&adda_draws, &parent, &grid)?;
    let se = se_curve(&adda_draws, &parent, &grid)?;
    std::fs::create_dir_all(&args.out)?;
    accuracy.to_csv_path(args.out.join("accuracy.csv"))?;
    se.to_csv_path(args.out.join("se.csv"))?;
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| {
                Error::InvalidArgument(format!("grid must be comma-separated integers, got {text:?}"))
            })
        })
        .collect()
}

pub fn gen(args: GenArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    match args.model.as_str() {
        "logistic" => {
            let n = args.n.ok_or_else(|| need("--n", "logistic"))?;
            let (data, beta) = gen_logistic(n, args.seed)?;
            data.to_csv_path(args.out.join("data.csv"))?;
            write_truth(&args.out, serde_json::json!({ "beta": beta.as_slice() }))
        }
        "lasso" => {
            let n = args.n.ok_or_else(|| need("--n", "lasso"))?;
            let (data, beta) = gen_lasso(n, args.seed)?;
            data.to_csv_path(args.out.join("data.csv"))?;
            write_truth(&args.out, serde_json::json!({ "beta": beta.as_slice() }))
        }
        "lme" => {
            let m = args.m.ok_or_else(|| need("--m", "lme"))?;
            let rows = args.subject_rows.unwrap_or(LME_ROWS_PER_SUBJECT);
            let (data, truth) = gen_lme(m, rows, args.seed)?;
            data.to_csv_path(args.out.join("data.csv"))?;
            write_truth(
                &args.out,
                serde_json::json!({
                    "beta": truth.beta.as_slice(),
                    "sigma": matrix_rows(&truth.sigma),
                    "sigma2": truth.sigma2,
                }),
            )
        }
        "movielens" => {
            let path = args
                .data
                .ok_or_else(|| need("--data (ratings csv)", "movielens"))?;
            let file = std::fs::File::open(&path)?;
            let (rows, skipped) = read_ratings_csv(file)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} malformed rows");
            }
            let table = movielens_features(&rows);
            table.to_csv_path(args.out.join("features.csv"))?;
            table
                .to_logistic_data()?
                .to_csv_path(args.out.join("logistic.csv"))?;
            Ok(())
        }
        other => Err(Error::InvalidConfig(format!(
            "gen model must be logistic, lasso, lme or movielens, got {other:?}"
        ))),
    }
}

fn need(flag: &str, model: &str) -> Error {
    Error::InvalidConfig(format!("{flag} is required for {model}"))
}

fn write_truth(out: &Path, value: serde_json::Value) -> Result<()> {
    std::fs::write(out.join("truth.json"), serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn check_lme(args: CheckLmeArgs) -> Result<()> {
    let data = LmeData::from_csv_path(&args.data)?;
    let prior = match &args.prior {
        Some(path) => LmePrior::from_json_path(path)?,
        None => LmePrior::standard(data.p(), data.q()),
    };
    let report = check_assumption1(&data, &prior, args.epsilon)?;
    let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
    println!("full rank:      {}", verdict(report.full_rank));
    println!("prior df bound: {}", verdict(report.prior_df_bound));
    println!(
        "tail bound:     {} (margin {:.6})",
        verdict(report.tail_bound),
        report.tail_margin
    );
    if report.all_hold() {
        println!("all conditions hold at epsilon = {}", args.epsilon);
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "ergodicity conditions do not hold at epsilon = {}",
            args.epsilon
        )))
    }
}
