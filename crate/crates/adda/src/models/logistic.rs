//! Binomial logistic regression with Polya-Gamma augmentation.
//!
//! Observation i has y_i successes in s_i trials with success probability
//! logistic(x_i' beta), and beta carries a N(mu, Sigma) prior. Augmenting
//! each observation with omega_i ~ PG(s_i, x_i' beta) makes beta's
//! conditional Gaussian:
//!
//! - worker step: omega_i ~ PG(s_i, x_i' beta) for the shard's rows,
//! - manager step: beta ~ N(m, V) with V = (X' Omega X + Sigma^{-1})^{-1}
//!   and m = V (X' kappa + Sigma^{-1} mu), kappa_i = y_i - s_i / 2.
//!
//! Workers ship their partial X' Omega X sum along with the raw omegas, so
//! the manager's work per iteration is one p x p assembly and factorization
//! regardless of n.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Deserialize;

use super::validate_partition;
use crate::distributions::{sample_mvn_precision, PolyaGamma};
use crate::engine::{DaKernel, MissingBlock, Recorder};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Spd};
use crate::rng::RngStream;

/// Grouped-binomial design: y successes out of s trials per row.
#[derive(Clone, Debug)]
pub struct LogisticData {
    pub y: Vec<u64>,
    pub s: Vec<u64>,
    pub x: DMatrix<f64>,
}

impl LogisticData {
    pub fn new(y: Vec<u64>, s: Vec<u64>, x: DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || s.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "logistic data: {} rows of X, {} of y, {} of s",
                n,
                y.len(),
                s.len()
            )));
        }
        if n == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("logistic data is empty".into()));
        }
        for i in 0..n {
            if s[i] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: trial count s must be at least 1"
                )));
            }
            if y[i] > s[i] {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: y = {} exceeds s = {}",
                    y[i], s[i]
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "logistic design matrix has non-finite entries".into(),
            ));
        }
        Ok(LogisticData { y, s, x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Columns: y, s, x1..xp.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "y" || &headers[1] != "s" {
            return Err(malformed("expected header y,s,x1..xp"));
        }
        let p = headers.len() - 2;
        let mut y = Vec::new();
        let mut s = Vec::new();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(malformed(&format!("row {} has wrong arity", i + 1)));
            }
            y.push(parse_count(&record[0], i, "y")?);
            s.push(parse_count(&record[1], i, "s")?);
            for j in 0..p {
                rows.push(parse_float(&record[2 + j], i)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(malformed("no data rows"));
        }
        LogisticData::new(y, s, DMatrix::from_row_slice(n, p, &rows))
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(&path)?).map_err(with_path(&path))
    }

    /// Inverse of `read_csv`: same columns, one row per observation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string(), "s".to_string()];
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        writer.write_record(&header)?;
        for i in 0..self.n() {
            let mut record = vec![self.y[i].to_string(), self.s[i].to_string()];
            record.extend((0..self.p()).map(|j| format!("{}", self.x[(i, j)])));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn malformed(detail: &str) -> Error {
    Error::MalformedInput {
        path: "<csv>".into(),
        detail: detail.into(),
    }
}

pub(crate) fn with_path<P: AsRef<Path>>(path: &P) -> impl Fn(Error) -> Error {
    let shown = path.as_ref().display().to_string();
    move |e| match e {
        Error::MalformedInput { detail, .. } => Error::MalformedInput {
            path: shown.clone(),
            detail,
        },
        other => other,
    }
}

pub(crate) fn parse_count(field: &str, row: usize, name: &str) -> Result<u64> {
    field.trim().parse::<u64>().map_err(|_| {
        malformed(&format!(
            "row {}: {name} must be a nonnegative integer, got {field:?}",
            row + 1
        ))
    })
}

pub(crate) fn parse_float(field: &str, row: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| malformed(&format!("row {}: non-numeric field {field:?}", row + 1)))
}

/// Gaussian prior beta ~ N(mu, sigma).
#[derive(Clone, Debug)]
pub struct LogisticPrior {
    pub mu: DVector<f64>,
    pub sigma: Spd,
}

#[derive(Deserialize)]
struct LogisticPriorFile {
    mu_beta: Vec<f64>,
    sigma_beta: Vec<Vec<f64>>,
}

impl LogisticPrior {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if mu.len() != sigma.nrows() {
            return Err(Error::DimensionMismatch(
                "logistic prior: mu and sigma disagree".into(),
            ));
        }
        Ok(LogisticPrior {
            mu,
            sigma: Spd::new(sigma, "logistic prior covariance")?,
        })
    }

    /// Standard normal prior on every coefficient.
    pub fn standard(p: usize) -> Self {
        LogisticPrior::new(DVector::zeros(p), DMatrix::identity(p, p)).unwrap()
    }

    /// JSON object with fields `mu_beta` and `sigma_beta`.
    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: LogisticPriorFile = serde_json::from_reader(input)?;
        let p = file.mu_beta.len();
        let sigma = matrix_from_rows(&file.sigma_beta, p, p, "sigma_beta")?;
        LogisticPrior::new(DVector::from_vec(file.mu_beta), sigma)
    }

    pub fn from_json_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_json(std::fs::File::open(&path)?).map_err(with_path(&path))
    }
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    what: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected a {nrows}x{ncols} matrix"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// One worker's augmentation payload: raw omegas for its rows plus the
/// partial normal-equation sum they induce.
#[derive(Clone, Debug)]
pub struct OmegaBlock {
    pub omega: Vec<f64>,
    pub xt_omega_x: DMatrix<f64>,
}

pub struct LogisticKernel {
    data: LogisticData,
    partition: Vec<Vec<usize>>,
    prior_precision: DMatrix<f64>,
    /// X' kappa + Sigma^{-1} mu, constant across iterations.
    rhs: DVector<f64>,
    /// Exponent in the drift monitor: the largest trial count.
    s_max: f64,
}

impl LogisticKernel {
    pub fn new(
        data: LogisticData,
        prior: LogisticPrior,
        partition: Vec<Vec<usize>>,
    ) -> Result<Self> {
        validate_partition(&partition, data.n(), "logistic")?;
        let p = data.p();
        if prior.mu.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "prior dimension {} does not match design with p = {p}",
                prior.mu.len()
            )));
        }
        let prior_precision = prior.sigma.inverse();
        let kappa = DVector::from_fn(data.n(), |i, _| data.y[i] as f64 - data.s[i] as f64 / 2.0);
        let rhs = data.x.transpose() * kappa + &prior_precision * &prior.mu;
        let s_max = data.s.iter().copied().max().unwrap() as f64;
        Ok(LogisticKernel {
            data,
            partition,
            prior_precision,
            rhs,
            s_max,
        })
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Drift monitor: beta' beta + sum_j (omega_j^{-c} + omega_j) with
    /// c the largest trial count.
    pub fn drift_value(&self, beta: &DVector<f64>, omegas: &[&OmegaBlock]) -> f64 {
        logistic_drift(
            beta,
            omegas.iter().flat_map(|b| b.omega.iter().copied()),
            self.s_max,
        )
    }

    /// Names and extractor for the usual monitored functionals: each
    /// coefficient plus the predicted success probability at each supplied
    /// covariate point.
    pub fn recorder(&self, prob_points: Vec<DVector<f64>>) -> Recorder<DVector<f64>> {
        let mut names: Vec<String> = (1..=self.p()).map(|j| format!("beta{j}")).collect();
        for (i, _) in prob_points.iter().enumerate() {
            names.push(format!("prob{}", i + 1));
        }
        Recorder::new(names, move |beta: &DVector<f64>| {
            let mut row: Vec<f64> = beta.iter().copied().collect();
            row.extend(prob_points.iter().map(|x| predict_prob(beta, x)));
            row
        })
    }
}

pub fn logistic_drift(
    beta: &DVector<f64>,
    omegas: impl Iterator<Item = f64>,
    c: f64,
) -> f64 {
    let mut v = beta.dot(beta);
    for w in omegas {
        v += w.powf(-c) + w;
    }
    v
}

/// logistic(x' beta), saturating rather than overflowing for extreme inputs.
pub fn predict_prob(beta: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let z = beta.dot(x);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DaKernel for LogisticKernel {
    type Theta = DVector<f64>;
    type Block = OmegaBlock;

    fn n_workers(&self) -> usize {
        self.partition.len()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.partition[worker].len()
    }

    fn initial_theta(&self) -> DVector<f64> {
        DVector::zeros(self.data.p())
    }

    fn worker_step(
        &self,
        worker: usize,
        beta: &DVector<f64>,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> Result<Option<OmegaBlock>> {
        let p = self.data.p();
        let shard = &self.partition[worker];
        let mut omega = Vec::with_capacity(shard.len());
        let mut xt_omega_x = DMatrix::<f64>::zeros(p, p);
        for &i in shard {
            if preempt() {
                return Ok(None);
            }
            let xi = self.data.x.row(i);
            let tilt = (xi * beta)[0];
            let w = PolyaGamma::new(tilt)?.draw_sum(self.data.s[i], rng);
            omega.push(w);
            // rank-one update of the shard's partial X' Omega X
            for a in 0..p {
                let wa = w * xi[a];
                for b in 0..=a {
                    xt_omega_x[(a, b)] += wa * xi[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xt_omega_x[(b, a)] = xt_omega_x[(a, b)];
            }
        }
        Ok(Some(OmegaBlock { omega, xt_omega_x }))
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<OmegaBlock>],
        rng: &mut RngStream,
    ) -> Result<DVector<f64>> {
        let mut precision = self.prior_precision.clone();
        for b in blocks {
            precision += &b.payload.xt_omega_x;
        }
        symmetrize(&mut precision);
        let chol = spd(precision)?;
        let mean = chol.solve(&self.rhs);
        Ok(sample_mvn_precision(&mean, &chol, rng))
    }

    fn drift(&self, beta: &DVector<f64>, blocks: &[MissingBlock<OmegaBlock>]) -> f64 {
        let refs: Vec<&OmegaBlock> = blocks.iter().map(|b| &b.payload).collect();
        self.drift_value(beta, &refs)
    }
}

fn spd(m: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    crate::linalg::spd_cholesky(m, "logistic posterior precision")
}
