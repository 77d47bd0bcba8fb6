//! Bayesian lasso with the scale-mixture augmentation.
//!
//! The model is y = X beta + e, e ~ N(0, sigma^2 I), with independent
//! Laplace shrinkage on each coefficient, hyperparameter lambda, and an
//! InverseGamma(alpha, b) prior on sigma^2. Augmenting each coefficient
//! with a local scale tau_j gives:
//!
//! - worker step: tau_j = 1 / u_j with
//!   u_j ~ InverseGaussian(|lambda| sigma / |beta_j|, lambda^2),
//! - manager step, writing A = X'X + D_tau^{-1}:
//!   sigma^2 ~ InvGamma(n/2 + alpha, (y'(I - X A^{-1} X') y + 2b) / 2),
//!   then beta ~ N(A^{-1} X' y, sigma^2 A^{-1}).
//!
//! Coordinates, not observations, are what gets partitioned: each worker
//! owns a slice of the tau vector.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::logistic::{parse_float, with_path};
use super::validate_partition;
use crate::distributions::{sample_inverse_gaussian, sample_mvn_precision, sample_scaled_inv_chisq};
use crate::engine::{DaKernel, MissingBlock, Recorder};
use crate::error::{Error, Result};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::rng::RngStream;

/// Coefficients below this magnitude are floored when forming the
/// inverse-Gaussian mean, which would otherwise divide by zero.
pub const BETA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LassoData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

impl LassoData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "lasso data: X has {} rows, y has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("lasso data is empty".into()));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "lasso data has non-finite entries".into(),
            ));
        }
        Ok(LassoData { y, x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Columns: y, x1..xp.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "y" {
            return Err(Error::MalformedInput {
                path: "<csv>".into(),
                detail: "expected header y,x1..xp".into(),
            });
        }
        let p = headers.len() - 1;
        let mut y = Vec::new();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::MalformedInput {
                    path: "<csv>".into(),
                    detail: format!("row {} has wrong arity", i + 1),
                });
            }
            y.push(parse_float(&record[0], i)?);
            for j in 0..p {
                rows.push(parse_float(&record[1 + j], i)?);
            }
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::MalformedInput {
                path: "<csv>".into(),
                detail: "no data rows".into(),
            });
        }
        LassoData::new(DVector::from_vec(y), DMatrix::from_row_slice(n, p, &rows))
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(&path)?).map_err(with_path(&path))
    }

    /// Inverse of `read_csv`: same columns, one row per observation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        writer.write_record(&header)?;
        for i in 0..self.n() {
            let mut record = vec![format!("{}", self.y[i])];
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

/// Shrinkage and variance hyperparameters.
#[derive(Clone, Copy, Debug, Deserialize)]
pub struct LassoHyper {
    pub alpha: f64,
    pub b: f64,
    pub lambda: f64,
}

impl LassoHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.b > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lasso prior needs alpha > 0 and b > 0, got {} and {}",
                self.alpha, self.b
            )));
        }
        if self.lambda == 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(
                "lasso shrinkage lambda must be nonzero and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let hyper: LassoHyper = serde_json::from_reader(input)?;
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn from_json_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_json(std::fs::File::open(&path)?).map_err(with_path(&path))
    }
}

impl Default for LassoHyper {
    fn default() -> Self {
        LassoHyper {
            alpha: 1.0,
            b: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoTheta {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

/// One worker's slice of the local scales, aligned with its coordinate
/// shard.
#[derive(Clone, Debug)]
pub struct TauBlock {
    pub tau: Vec<f64>,
}

pub struct LassoKernel {
    data: LassoData,
    hyper: LassoHyper,
    partition: Vec<Vec<usize>>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Residual weight and tau exponent in the drift monitor.
    drift_w: f64,
    drift_s: f64,
}

impl LassoKernel {
    pub fn new(data: LassoData, hyper: LassoHyper, partition: Vec<Vec<usize>>) -> Result<Self> {
        hyper.validate()?;
        validate_partition(&partition, data.p(), "lasso")?;
        let xtx = data.x.transpose() * &data.x;
        let xty = data.x.transpose() * &data.y;
        let yty = data.y.dot(&data.y);
        Ok(LassoKernel {
            data,
            hyper,
            partition,
            xtx,
            xty,
            yty,
            drift_w: 1.0,
            drift_s: 0.25,
        })
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Coefficient columns plus the noise variance.
    pub fn recorder(&self) -> Recorder<LassoTheta> {
        let mut names: Vec<String> = (1..=self.p()).map(|j| format!("beta{j}")).collect();
        names.push("sigma2".into());
        Recorder::new(names, |theta: &LassoTheta| {
            let mut row: Vec<f64> = theta.beta.iter().copied().collect();
            row.push(theta.sigma2);
            row
        })
    }

    fn tau_from_blocks(&self, blocks: &[MissingBlock<TauBlock>]) -> Vec<f64> {
        let mut tau = vec![0.0; self.p()];
        for (shard, block) in self.partition.iter().zip(blocks) {
            for (&j, &t) in shard.iter().zip(&block.payload.tau) {
                tau[j] = t;
            }
        }
        tau
    }
}

/// Drift monitor: beta' D_tau^{-1} beta + sum tau + w |y - X beta|^2
/// + sum tau^{-s/2} + sigma^2 + 1/sigma^2.
pub fn lasso_drift(
    beta: &DVector<f64>,
    tau: &[f64],
    sigma2: f64,
    resid_ss: f64,
    w: f64,
    s_exp: f64,
) -> f64 {
    let mut v = w * resid_ss + sigma2 + 1.0 / sigma2;
    for (j, &t) in tau.iter().enumerate() {
        v += beta[j] * beta[j] / t + t + t.powf(-0.5 * s_exp);
    }
    v
}

impl DaKernel for LassoKernel {
    type Theta = LassoTheta;
    type Block = TauBlock;

    fn n_workers(&self) -> usize {
        self.partition.len()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.partition[worker].len()
    }

    fn initial_theta(&self) -> LassoTheta {
        LassoTheta {
            beta: DVector::zeros(self.p()),
            sigma2: 1.0,
        }
    }

    fn worker_step(
        &self,
        worker: usize,
        theta: &LassoTheta,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> Result<Option<TauBlock>> {
        let lambda = self.hyper.lambda.abs();
        let sigma = theta.sigma2.sqrt();
        let shard = &self.partition[worker];
        let mut tau = Vec::with_capacity(shard.len());
        for &j in shard {
            if preempt() {
                return Ok(None);
            }
            let scale = theta.beta[j].abs().max(BETA_FLOOR);
            let u = sample_inverse_gaussian(lambda * sigma / scale, lambda * lambda, rng)?;
            tau.push(1.0 / u);
        }
        Ok(Some(TauBlock { tau }))
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<TauBlock>],
        rng: &mut RngStream,
    ) -> Result<LassoTheta> {
        let tau = self.tau_from_blocks(blocks);
        let mut a = self.xtx.clone();
        for (j, &t) in tau.iter().enumerate() {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Numeric {
                    detail: format!("tau[{j}] = {t} is outside (0, inf)"),
                    iteration: None,
                });
            }
            a[(j, j)] += 1.0 / t;
        }
        symmetrize(&mut a);
        let chol = spd_cholesky(a, "lasso posterior precision")?;
        let beta_hat = chol.solve(&self.xty);
        let quad = self.yty - self.xty.dot(&beta_hat);
        // y'(I - X A^{-1} X') y is nonnegative in exact arithmetic; only
        // round-off from a near-perfect fit may dip below zero.
        if quad < -1e-8 * (self.yty + 1.0) {
            return Err(Error::Numeric {
                detail: format!("negative quadratic form {quad} in the variance update"),
                iteration: None,
            });
        }
        let n = self.data.n() as f64;
        let scale = quad + 2.0 * self.hyper.b;
        let sigma2 = sample_scaled_inv_chisq(n + 2.0 * self.hyper.alpha, scale, rng)?;
        let centered = sample_mvn_precision(&DVector::zeros(self.p()), &chol, rng);
        let beta = beta_hat + centered * sigma2.sqrt();
        Ok(LassoTheta { beta, sigma2 })
    }

    fn drift(&self, theta: &LassoTheta, blocks: &[MissingBlock<TauBlock>]) -> f64 {
        let tau = self.tau_from_blocks(blocks);
        let resid = &self.data.y - &self.data.x * &theta.beta;
        lasso_drift(
            &theta.beta,
            &tau,
            theta.sigma2,
            resid.dot(&resid),
            self.drift_w,
            self.drift_s,
        )
    }
}
