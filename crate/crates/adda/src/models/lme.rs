//! Marginal-augmentation kernel for the linear mixed-effects model
//! y_i = X_i beta + Z_i Gamma d_i + e_i with d_i ~ N(0, Sigma_tilde) and
//! e_i ~ N(0, sigma^2 I). The random-effect covariance is parameterized
//! as Sigma = Gamma Sigma_tilde Gamma', and gamma = vec(Gamma) is
//! estimated jointly with beta as one regression vector
//! alpha = (beta, gamma) of length p + q^2.
//!
//! Workers draw the per-subject random effects d_i and ship the
//! sufficient statistics (S_dd, S_xx, S_xy, y'y) of the augmented
//! regression on X_tilde_i = [X_i | (d_i' (x) Z_i)] instead of the raw
//! draws, so a payload is O((p+q^2)^2) regardless of how many subjects
//! the worker owns.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};
use serde::Deserialize;

use super::logistic::{matrix_from_rows, parse_float, with_path};
use super::validate_partition;
use crate::distributions::standard_normal;
use crate::distributions::{sample_mvn_precision, sample_scaled_inv_chisq, sample_wishart};
use crate::engine::{DaKernel, MissingBlock, Recorder};
use crate::error::{Error, Result};
use crate::linalg::{spd_cholesky, symmetrize, vech, Spd};
use crate::rng::RngStream;

/// A drawn loading matrix with |det| below this is treated as a failure
/// rather than regularized; under the model it is a probability-zero
/// event.
const GAMMA_DET_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct LmeSubject {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct LmeData {
    pub subjects: Vec<LmeSubject>,
}

impl LmeData {
    pub fn new(subjects: Vec<LmeSubject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidArgument("no subjects".into()));
        }
        let p = subjects[0].x.ncols();
        let q = subjects[0].z.ncols();
        if p == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "mixed-model data needs at least one fixed and one random column".into(),
            ));
        }
        for (i, s) in subjects.iter().enumerate() {
            let rows = s.y.len();
            if rows == 0 {
                return Err(Error::InvalidArgument(format!("subject {i} has no rows")));
            }
            if s.x.nrows() != rows || s.z.nrows() != rows || s.x.ncols() != p || s.z.ncols() != q {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i}: y has {} rows, X is {}x{}, Z is {}x{}",
                    rows,
                    s.x.nrows(),
                    s.x.ncols(),
                    s.z.nrows(),
                    s.z.ncols()
                )));
            }
            let finite = s.y.iter().chain(s.x.iter()).chain(s.z.iter());
            if finite.into_iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "subject {i} has non-finite entries"
                )));
            }
        }
        Ok(LmeData { subjects })
    }

    pub fn m(&self) -> usize {
        self.subjects.len()
    }

    pub fn n(&self) -> usize {
        self.subjects.iter().map(|s| s.y.len()).sum()
    }

    pub fn p(&self) -> usize {
        self.subjects[0].x.ncols()
    }

    pub fn q(&self) -> usize {
        self.subjects[0].z.ncols()
    }

    /// Long format: subject_id, y, x1..xp, z1..zq. Rows are grouped by
    /// id; subjects keep their order of first appearance.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let bad = || Error::MalformedInput {
            path: "<csv>".into(),
            detail: "expected header subject_id,y,x1..xp,z1..zq".into(),
        };
        if headers.len() < 4 || &headers[0] != "subject_id" || &headers[1] != "y" {
            return Err(bad());
        }
        let p = headers.iter().filter(|h| h.starts_with('x')).count();
        let q = headers.iter().filter(|h| h.starts_with('z')).count();
        if p == 0 || q == 0 || 2 + p + q != headers.len() {
            return Err(bad());
        }
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, (Vec<f64>, Vec<f64>, Vec<f64>)> = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::MalformedInput {
                    path: "<csv>".into(),
                    detail: format!("row {} has wrong arity", i + 1),
                });
            }
            let id = record[0].to_string();
            if !groups.contains_key(&id) {
                order.push(id.clone());
                groups.insert(id.clone(), (Vec::new(), Vec::new(), Vec::new()));
            }
            let entry = groups.get_mut(&id).unwrap();
            entry.0.push(parse_float(&record[1], i)?);
            for j in 0..p {
                entry.1.push(parse_float(&record[2 + j], i)?);
            }
            for j in 0..q {
                entry.2.push(parse_float(&record[2 + p + j], i)?);
            }
        }
        if order.is_empty() {
            return Err(Error::MalformedInput {
                path: "<csv>".into(),
                detail: "no data rows".into(),
            });
        }
        let mut subjects = Vec::with_capacity(order.len());
        for id in order {
            let (y, xr, zr) = groups.remove(&id).unwrap();
            let rows = y.len();
            subjects.push(LmeSubject {
                y: DVector::from_vec(y),
                x: DMatrix::from_row_slice(rows, p, &xr),
                z: DMatrix::from_row_slice(rows, q, &zr),
            });
        }
        LmeData::new(subjects)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(&path)?).map_err(with_path(&path))
    }

    /// Inverse of `read_csv`: subjects written in order as s0, s1, ...
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["subject_id".to_string(), "y".to_string()];
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        header.extend((1..=self.q()).map(|j| format!("z{j}")));
        writer.write_record(&header)?;
        for (id, subject) in self.subjects.iter().enumerate() {
            for i in 0..subject.y.len() {
                let mut record = vec![format!("s{id}"), format!("{}", subject.y[i])];
                record.extend((0..self.p()).map(|j| format!("{}", subject.x[(i, j)])));
                record.extend((0..self.q()).map(|j| format!("{}", subject.z[(i, j)])));
                writer.write_record(&record)?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Conjugate prior pieces: sigma^2 gets an (M, a) scaled inverse
/// chi-square factor, alpha a Gaussian with precision contribution
/// v_alpha, and Sigma_tilde an inverse Wishart with scale w and df s.
#[derive(Clone, Debug)]
pub struct LmePrior {
    pub m_scale: f64,
    pub a: f64,
    pub v_alpha: Spd,
    pub w: Spd,
    pub s: f64,
}

#[derive(Deserialize)]
struct RawLmePrior {
    #[serde(rename = "M")]
    m_scale: f64,
    a: f64,
    #[serde(rename = "V_alpha")]
    v_alpha: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    s: f64,
}

impl LmePrior {
    pub fn new(m_scale: f64, a: f64, v_alpha: DMatrix<f64>, w: DMatrix<f64>, s: f64) -> Result<Self> {
        if !(m_scale > 0.0) || !(a > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mixed-model prior needs M > 0 and a > 0, got {m_scale} and {a}"
            )));
        }
        let q = w.nrows() as f64;
        if !(s > q + 1.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse-Wishart df s = {s} must exceed q + 1 = {}",
                q + 1.0
            )));
        }
        Ok(LmePrior {
            m_scale,
            a,
            v_alpha: Spd::new(v_alpha, "prior precision V_alpha")?,
            w: Spd::new(w, "prior scale W")?,
            s,
        })
    }

    /// Identity precisions, unit scale, smallest integer df.
    pub fn standard(p: usize, q: usize) -> Self {
        LmePrior::new(
            1.0,
            1.0,
            DMatrix::identity(p + q * q, p + q * q),
            DMatrix::identity(q, q),
            (q + 2) as f64,
        )
        .expect("identity prior is valid")
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let raw: RawLmePrior = serde_json::from_reader(input)?;
        let pt = raw.v_alpha.len();
        let q = raw.w.len();
        LmePrior::new(
            raw.m_scale,
            raw.a,
            matrix_from_rows(&raw.v_alpha, pt, pt, "V_alpha")?,
            matrix_from_rows(&raw.w, q, q, "W")?,
            raw.s,
        )
    }

    pub fn from_json_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_json(std::fs::File::open(&path)?).map_err(with_path(&path))
    }
}

#[derive(Clone, Debug)]
pub struct LmeTheta {
    /// (beta, vec(Gamma)) stacked, gamma in column-major order.
    pub alpha: DVector<f64>,
    pub sigma_tilde: DMatrix<f64>,
    pub sigma2: f64,
}

impl LmeTheta {
    pub fn beta(&self, p: usize) -> DVector<f64> {
        DVector::from_iterator(p, self.alpha.iter().take(p).copied())
    }

    pub fn gamma_matrix(&self, p: usize, q: usize) -> DMatrix<f64> {
        DMatrix::from_iterator(q, q, self.alpha.iter().skip(p).take(q * q).copied())
    }

    /// Random-effect covariance Sigma = Gamma Sigma_tilde Gamma'.
    pub fn sigma_matrix(&self, p: usize, q: usize) -> DMatrix<f64> {
        let gamma = self.gamma_matrix(p, q);
        let mut sigma = &gamma * &self.sigma_tilde * gamma.transpose();
        symmetrize(&mut sigma);
        sigma
    }
}

/// Per-worker sufficient statistics of the augmented regression.
#[derive(Clone, Debug)]
pub struct LmeStatsBlock {
    pub s_dd: DMatrix<f64>,
    pub s_xx: DMatrix<f64>,
    pub s_xy: DVector<f64>,
    pub yty: f64,
}

struct SubjectCache {
    xtx: DMatrix<f64>,
    xtz: DMatrix<f64>,
    ztz: DMatrix<f64>,
    xty: DVector<f64>,
    zty: DVector<f64>,
    yty: f64,
}

pub struct LmeKernel {
    data: LmeData,
    prior: LmePrior,
    partition: Vec<Vec<usize>>,
    fix_gamma: bool,
    cache: Vec<SubjectCache>,
    xtx_total: DMatrix<f64>,
    xty_total: DVector<f64>,
    drift_c: [f64; 4],
}

impl LmeKernel {
    pub fn new(
        data: LmeData,
        prior: LmePrior,
        partition: Vec<Vec<usize>>,
        fix_gamma: bool,
    ) -> Result<Self> {
        let (p, q) = (data.p(), data.q());
        let p_tilde = p + q * q;
        if prior.v_alpha.dim() != p_tilde || prior.w.dim() != q {
            return Err(Error::DimensionMismatch(format!(
                "prior dimensions (V_alpha {}x{0}, W {1}x{1}) do not match p + q^2 = {p_tilde}, q = {q}",
                prior.v_alpha.dim(),
                prior.w.dim()
            )));
        }
        validate_partition(&partition, data.m(), "mixed model")?;
        let wishart_df = data.m() as f64 + prior.s - q as f64;
        if wishart_df <= q as f64 - 1.0 {
            return Err(Error::InvalidArgument(format!(
                "Wishart df m + s - q = {wishart_df} must exceed q - 1 = {}",
                q - 1
            )));
        }
        let regression_df = Self::sigma_df(&data, &prior, fix_gamma);
        if !(regression_df > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "variance df n + a - (regression size) = {regression_df} must be positive"
            )));
        }
        let cache: Vec<SubjectCache> = data
            .subjects
            .iter()
            .map(|s| SubjectCache {
                xtx: s.x.transpose() * &s.x,
                xtz: s.x.transpose() * &s.z,
                ztz: s.z.transpose() * &s.z,
                xty: s.x.transpose() * &s.y,
                zty: s.z.transpose() * &s.y,
                yty: s.y.dot(&s.y),
            })
            .collect();
        let mut xtx_total = DMatrix::zeros(p, p);
        let mut xty_total = DVector::zeros(p);
        for c in &cache {
            xtx_total += &c.xtx;
            xty_total += &c.xty;
        }
        Ok(LmeKernel {
            data,
            prior,
            partition,
            fix_gamma,
            cache,
            xtx_total,
            xty_total,
            drift_c: [1.0; 4],
        })
    }

    fn sigma_df(data: &LmeData, prior: &LmePrior, fix_gamma: bool) -> f64 {
        let p = data.p() as f64;
        let free = if fix_gamma {
            p
        } else {
            p + (data.q() * data.q()) as f64
        };
        data.n() as f64 + prior.a - free
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn q(&self) -> usize {
        self.data.q()
    }

    pub fn p_tilde(&self) -> usize {
        self.data.p() + self.data.q() * self.data.q()
    }

    /// Fixed effects, vech of the random-effect covariance, and the
    /// noise variance.
    pub fn recorder(&self) -> Recorder<LmeTheta> {
        let (p, q) = (self.p(), self.q());
        let mut names: Vec<String> = (1..=p).map(|j| format!("beta{j}")).collect();
        for j in 0..q {
            for i in j..q {
                names.push(format!("sigma_{}_{}", i + 1, j + 1));
            }
        }
        names.push("sigma2".into());
        Recorder::new(names, move |theta: &LmeTheta| {
            let mut row: Vec<f64> = theta.alpha.iter().take(p).copied().collect();
            row.extend(vech(&theta.sigma_matrix(p, q)));
            row.push(theta.sigma2);
            row
        })
    }

    /// Posterior moments of one subject's random effect, via the q x q
    /// precision (G = Gamma'Z'Z Gamma / sigma^2 + Sigma_tilde^{-1}).
    fn moments_precision(
        &self,
        subject: usize,
        beta: &DVector<f64>,
        gamma: &DMatrix<f64>,
        sigma_tilde_inv: &DMatrix<f64>,
        sigma2: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let c = &self.cache[subject];
        let ztr = &c.zty - c.xtz.transpose() * beta;
        let mut g = gamma.transpose() * &c.ztz * gamma / sigma2 + sigma_tilde_inv;
        symmetrize(&mut g);
        let chol = spd_cholesky(g, "random-effect precision")?;
        let m_d = chol.solve(&(gamma.transpose() * ztr / sigma2));
        Ok((m_d, chol.inverse()))
    }

    /// Same moments through the n_i x n_i marginal covariance
    /// Z Gamma Sigma_tilde Gamma' Z' + sigma^2 I.
    fn moments_direct(
        &self,
        subject: usize,
        beta: &DVector<f64>,
        gamma: &DMatrix<f64>,
        sigma_tilde: &DMatrix<f64>,
        sigma2: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = &self.data.subjects[subject];
        let resid = &s.y - &s.x * beta;
        let zg = &s.z * gamma;
        let szg_t = sigma_tilde * zg.transpose();
        let mut marg = &zg * &szg_t + DMatrix::identity(s.y.len(), s.y.len()) * sigma2;
        symmetrize(&mut marg);
        let chol = spd_cholesky(marg, "marginal residual covariance")?;
        let m_d = &szg_t * chol.solve(&resid);
        let v_d = sigma_tilde - &szg_t * chol.solve(&szg_t.transpose());
        Ok((m_d, v_d))
    }

    pub(crate) fn subject_moments(
        &self,
        subject: usize,
        theta: &LmeTheta,
        sigma_tilde_inv: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (p, q) = (self.p(), self.q());
        let beta = theta.beta(p);
        let gamma = theta.gamma_matrix(p, q);
        if self.data.subjects[subject].y.len() > q {
            self.moments_precision(subject, &beta, &gamma, sigma_tilde_inv, theta.sigma2)
        } else {
            self.moments_direct(subject, &beta, &gamma, &theta.sigma_tilde, theta.sigma2)
        }
    }

    /// Fold one subject's draw into the block, using the Kronecker
    /// structure of X_tilde = [X | (d' (x) Z)] so the columns are never
    /// materialized.
    pub(crate) fn accumulate(&self, subject: usize, d: &DVector<f64>, block: &mut LmeStatsBlock) {
        let (p, q) = (self.p(), self.q());
        let c = &self.cache[subject];
        block.s_dd += d * d.transpose();
        block.yty += c.yty;
        add_block(&mut block.s_xx, 0, 0, &c.xtx, 1.0);
        for cd in 0..q {
            add_block(&mut block.s_xx, 0, p + cd * q, &c.xtz, d[cd]);
            add_block_transposed(&mut block.s_xx, p + cd * q, 0, &c.xtz, d[cd]);
            for cd2 in 0..q {
                add_block(&mut block.s_xx, p + cd * q, p + cd2 * q, &c.ztz, d[cd] * d[cd2]);
            }
        }
        for j in 0..p {
            block.s_xy[j] += c.xty[j];
        }
        for cd in 0..q {
            for cz in 0..q {
                block.s_xy[p + cd * q + cz] += d[cd] * c.zty[cz];
            }
        }
    }

    fn empty_block(&self) -> LmeStatsBlock {
        let (q, pt) = (self.q(), self.p_tilde());
        LmeStatsBlock {
            s_dd: DMatrix::zeros(q, q),
            s_xx: DMatrix::zeros(pt, pt),
            s_xy: DVector::zeros(pt),
            yty: 0.0,
        }
    }

    fn summed_stats(&self, blocks: &[MissingBlock<LmeStatsBlock>]) -> LmeStatsBlock {
        let mut total = self.empty_block();
        for b in blocks {
            total.s_dd += &b.payload.s_dd;
            total.s_xx += &b.payload.s_xx;
            total.s_xy += &b.payload.s_xy;
            total.yty += b.payload.yty;
        }
        total
    }

    /// Penalized regression pieces for the full alpha update:
    /// alpha_hat = (S_xx + V_alpha)^{-1} S_xy and the residual quadratic
    /// y'y - 2 alpha_hat'S_xy + alpha_hat'S_xx alpha_hat.
    pub(crate) fn alpha_hat_quad(
        &self,
        s_xx: &DMatrix<f64>,
        s_xy: &DVector<f64>,
        yty: f64,
    ) -> Result<(DVector<f64>, Cholesky<f64, Dyn>, f64)> {
        let mut a = s_xx + self.prior.v_alpha.matrix();
        symmetrize(&mut a);
        let chol = spd_cholesky(a, "regression precision")?;
        let hat = chol.solve(s_xy);
        let quad = yty - 2.0 * hat.dot(s_xy) + (s_xx * &hat).dot(&hat);
        Ok((hat, chol, quad))
    }

    /// Same pieces with Gamma pinned to the identity: only beta is free
    /// and the response is y - Z d.
    pub(crate) fn fixed_gamma_quad(
        &self,
        s_xx: &DMatrix<f64>,
        s_xy: &DVector<f64>,
        yty: f64,
    ) -> Result<(DVector<f64>, Cholesky<f64, Dyn>, f64)> {
        let (p, q) = (self.p(), self.q());
        let q2 = q * q;
        let gamma0 = DVector::from_iterator(
            q2,
            DMatrix::<f64>::identity(q, q).iter().copied(),
        );
        let sbb = s_xx.view((0, 0), (p, p)).into_owned();
        let sbg = s_xx.view((0, p), (p, q2)).into_owned();
        let sgg = s_xx.view((p, p), (q2, q2)).into_owned();
        let sy_b = s_xy.rows(0, p).into_owned();
        let sy_g = s_xy.rows(p, q2).into_owned();
        let rhs = &sy_b - &sbg * &gamma0;
        let resid_y = yty - 2.0 * gamma0.dot(&sy_g) + (&sgg * &gamma0).dot(&gamma0);
        let v_beta = self
            .prior
            .v_alpha
            .matrix()
            .view((0, 0), (p, p))
            .into_owned();
        let mut a = &sbb + v_beta;
        symmetrize(&mut a);
        let chol = spd_cholesky(a, "fixed-effect precision")?;
        let hat = chol.solve(&rhs);
        let quad = resid_y - 2.0 * hat.dot(&rhs) + (&sbb * &hat).dot(&hat);
        Ok((hat, chol, quad))
    }

    fn gamma_checked(&self, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (p, q) = (self.p(), self.q());
        let gamma = DMatrix::from_iterator(q, q, alpha.iter().skip(p).take(q * q).copied());
        if gamma.determinant().abs() < GAMMA_DET_FLOOR {
            return Err(Error::Numeric {
                detail: "drawn random-effect loading matrix is numerically singular".into(),
                iteration: None,
            });
        }
        Ok(gamma)
    }
}

fn add_block(dst: &mut DMatrix<f64>, r0: usize, c0: usize, src: &DMatrix<f64>, scale: f64) {
    for c in 0..src.ncols() {
        for r in 0..src.nrows() {
            dst[(r0 + r, c0 + c)] += scale * src[(r, c)];
        }
    }
}

fn add_block_transposed(
    dst: &mut DMatrix<f64>,
    r0: usize,
    c0: usize,
    src: &DMatrix<f64>,
    scale: f64,
) {
    for c in 0..src.ncols() {
        for r in 0..src.nrows() {
            dst[(r0 + c, c0 + r)] += scale * src[(r, c)];
        }
    }
}

/// Geometric-drift monitor for the identity-loading regime, with
/// b_i = Gamma d_i folded into the three data-dependent scalars:
/// |y - Zb|^2 + 1/sigma^2 + tr(Sigma^{-1}) + c1 sigma^2
/// + c2 |y - X beta|^2 / sigma^2 + c3 sum_i b_i'b_i + c4 tr(Sigma).
pub fn lme_drift(
    resid_zb: f64,
    resid_xbeta: f64,
    b_ss: f64,
    sigma2: f64,
    sigma: &DMatrix<f64>,
    c: [f64; 4],
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "drift needs sigma2 > 0, got {sigma2}"
        )));
    }
    let chol = spd_cholesky(sigma.clone(), "drift covariance")?;
    Ok(resid_zb
        + 1.0 / sigma2
        + chol.inverse().trace()
        + c[0] * sigma2
        + c[1] * resid_xbeta / sigma2
        + c[2] * b_ss
        + c[3] * sigma.trace())
}

impl DaKernel for LmeKernel {
    type Theta = LmeTheta;
    type Block = LmeStatsBlock;

    fn n_workers(&self) -> usize {
        self.partition.len()
    }

    fn block_len(&self, worker: usize) -> usize {
        self.partition[worker].len()
    }

    fn initial_theta(&self) -> LmeTheta {
        let (p, q) = (self.p(), self.q());
        let mut alpha = DVector::zeros(p + q * q);
        for j in 0..q {
            alpha[p + j * q + j] = 1.0;
        }
        LmeTheta {
            alpha,
            sigma_tilde: DMatrix::identity(q, q),
            sigma2: 1.0,
        }
    }

    fn worker_step(
        &self,
        worker: usize,
        theta: &LmeTheta,
        rng: &mut RngStream,
        preempt: &mut dyn FnMut() -> bool,
    ) -> Result<Option<LmeStatsBlock>> {
        let q = self.q();
        let mut st = theta.sigma_tilde.clone();
        symmetrize(&mut st);
        let st_inv = spd_cholesky(st, "random-effect covariance")?.inverse();
        let mut block = self.empty_block();
        for &j in &self.partition[worker] {
            if preempt() {
                return Ok(None);
            }
            let (m_d, mut v_d) = self.subject_moments(j, theta, &st_inv)?;
            symmetrize(&mut v_d);
            let chol = spd_cholesky(v_d, "random-effect conditional covariance")?;
            let z = DVector::from_fn(q, |_, _| standard_normal(rng));
            let d = m_d + chol.l() * z;
            self.accumulate(j, &d, &mut block);
        }
        Ok(Some(block))
    }

    fn manager_step(
        &self,
        blocks: &[MissingBlock<LmeStatsBlock>],
        rng: &mut RngStream,
    ) -> Result<LmeTheta> {
        let total = self.summed_stats(blocks);
        let (p, q) = (self.p(), self.q());

        let mut s_dd = &total.s_dd + self.prior.w.matrix();
        symmetrize(&mut s_dd);
        let mut scale = spd_cholesky(s_dd, "Wishart scale")?.inverse();
        symmetrize(&mut scale);
        let df = self.data.m() as f64 + self.prior.s - q as f64;
        let mut st_inv = sample_wishart(df, &Spd::new(scale, "Wishart scale")?, rng)?;
        symmetrize(&mut st_inv);
        let mut sigma_tilde = spd_cholesky(st_inv, "sampled random-effect precision")?.inverse();
        symmetrize(&mut sigma_tilde);

        let df_sigma = Self::sigma_df(&self.data, &self.prior, self.fix_gamma);
        let (hat, chol, quad) = if self.fix_gamma {
            self.fixed_gamma_quad(&total.s_xx, &total.s_xy, total.yty)?
        } else {
            self.alpha_hat_quad(&total.s_xx, &total.s_xy, total.yty)?
        };
        if quad < -1e-8 * (total.yty + 1.0) {
            return Err(Error::Numeric {
                detail: format!("negative quadratic form {quad} in the variance update"),
                iteration: None,
            });
        }
        let sigma2 = sample_scaled_inv_chisq(df_sigma, quad.max(0.0) + self.prior.m_scale, rng)?;
        let centered = sample_mvn_precision(&DVector::zeros(hat.len()), &chol, rng);
        let drawn = &hat + centered * sigma2.sqrt();

        let alpha = if self.fix_gamma {
            let mut alpha = DVector::zeros(self.p_tilde());
            for j in 0..p {
                alpha[j] = drawn[j];
            }
            for j in 0..q {
                alpha[p + j * q + j] = 1.0;
            }
            alpha
        } else {
            drawn
        };
        self.gamma_checked(&alpha)?;
        Ok(LmeTheta {
            alpha,
            sigma_tilde,
            sigma2,
        })
    }

    fn drift(&self, theta: &LmeTheta, blocks: &[MissingBlock<LmeStatsBlock>]) -> f64 {
        let (p, q) = (self.p(), self.q());
        let q2 = q * q;
        let total = self.summed_stats(blocks);
        let beta = theta.beta(p);
        let gamma = theta.gamma_matrix(p, q);
        let gvec = DVector::from_iterator(q2, gamma.iter().copied());
        let sgg = total.s_xx.view((p, p), (q2, q2)).into_owned();
        let sy_g = total.s_xy.rows(p, q2).into_owned();
        let resid_zb = total.yty - 2.0 * gvec.dot(&sy_g) + (&sgg * &gvec).dot(&gvec);
        let resid_xbeta = total.yty - 2.0 * beta.dot(&self.xty_total)
            + (&self.xtx_total * &beta).dot(&beta);
        let b_ss = (&gamma * &total.s_dd * gamma.transpose()).trace();
        let sigma = theta.sigma_matrix(p, q);
        lme_drift(resid_zb, resid_xbeta, b_ss, theta.sigma2, &sigma, self.drift_c)
            .unwrap_or(f64::NAN)
    }
}

/// Report of the sufficient conditions for geometric ergodicity in the
/// identity-loading regime.
#[derive(Clone, Copy, Debug)]
pub struct Assumption1Report {
    /// X'X and every Z_i'Z_i positive definite.
    pub full_rank: bool,
    /// s - q - 1 > (1 - eps) m / eps.
    pub prior_df_bound: bool,
    /// (eps I - H) - (p + mq)/(n + a - p - 2) (I - H) positive definite,
    /// H = X (V_beta + X'X)^{-1} X'.
    pub tail_bound: bool,
    /// Smallest eigenvalue of the matrix in `tail_bound`.
    pub tail_margin: f64,
}

impl Assumption1Report {
    pub fn all_hold(&self) -> bool {
        self.full_rank && self.prior_df_bound && self.tail_bound
    }
}

pub fn check_assumption1(
    data: &LmeData,
    prior: &LmePrior,
    epsilon: f64,
) -> Result<Assumption1Report> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in (0, 1], got {epsilon}"
        )));
    }
    let (p, q, m, n) = (data.p(), data.q(), data.m(), data.n());
    let mut xtx = DMatrix::zeros(p, p);
    for s in &data.subjects {
        xtx += s.x.transpose() * &s.x;
    }
    let mut full_rank = Cholesky::new(xtx.clone()).is_some();
    for s in &data.subjects {
        let ztz = s.z.transpose() * &s.z;
        full_rank = full_rank && Cholesky::new(ztz).is_some();
    }

    let prior_df_bound = prior.s - q as f64 - 1.0 > (1.0 - epsilon) * m as f64 / epsilon;

    // H = X(V_beta + X'X)^{-1}X' has the eigenvalues of
    // L^{-1} X'X L^{-T} (with V_beta + X'X = LL') plus n - p zeros, so
    // the n x n eigenproblem reduces to a p x p one.
    let denom = n as f64 + prior.a - p as f64 - 2.0;
    let (tail_bound, tail_margin) = if denom <= 0.0 || !full_rank {
        (false, f64::NEG_INFINITY)
    } else {
        let ratio = (p + m * q) as f64 / denom;
        let v_beta = prior.v_alpha.matrix().view((0, 0), (p, p)).into_owned();
        let chol = spd_cholesky(v_beta + &xtx, "shrinkage denominator")?;
        let l = chol.l();
        let m1 = l
            .solve_lower_triangular(&xtx)
            .ok_or_else(|| Error::Numeric {
                detail: "triangular solve failed in the tail-bound check".into(),
                iteration: None,
            })?;
        let mut b = l
            .solve_lower_triangular(&m1.transpose())
            .ok_or_else(|| Error::Numeric {
                detail: "triangular solve failed in the tail-bound check".into(),
                iteration: None,
            })?;
        symmetrize(&mut b);
        let eigs = b.symmetric_eigenvalues();
        let f = |h: f64| epsilon - ratio - h * (1.0 - ratio);
        let mut margin = eigs.iter().map(|&h| f(h)).fold(f64::INFINITY, f64::min);
        if n > p {
            margin = margin.min(f(0.0));
        }
        (margin > 0.0, margin)
    };

    Ok(Assumption1Report {
        full_rank,
        prior_df_bound,
        tail_bound,
        tail_margin,
    })
}
