//! Comparing an asynchronous chain against its synchronous parent:
//! per-component accuracy (one minus the total variation distance between
//! binned kernel density estimates of the two draw streams) and the gap
//! between overlapping-batch-means standard errors.

use std::io::Write;
use std::path::Path;

use crate::engine::DrawMatrix;
use crate::error::{Error, Result};

/// Minimum grid resolution for a density estimate. The grid grows past
/// this whenever the step would otherwise exceed the bandwidth, which
/// happens when rare excursions (a chain's initial transient, say)
/// stretch the range to hundreds of bandwidths; an under-resolved
/// Gaussian kernel aliases and the mass invariant fails.
pub const GRID_POINTS: usize = 401;

/// Resolution ceiling. Past this the step may exceed the bandwidth and
/// construction can fail its mass check, which is the honest outcome for
/// a component whose spread is thousands of times smaller than its range.
pub const MAX_GRID_POINTS: usize = 20_001;

/// How far past the sample range the grid extends, in bandwidths. Mass
/// beyond four bandwidths is below 1e-4 per side, keeping the density
/// integral within its invariant.
const GRID_PAD_BANDWIDTHS: f64 = 4.0;

/// A density evaluated on an equally spaced grid. The trapezoidal
/// integral is checked to be within 1% of one at construction.
#[derive(Clone, Debug)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 1..grid.len() {
        total += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    total
}

/// Rule-of-thumb bandwidth 0.9 min(sd, IQR/1.34) t^{-1/5}. A sample
/// without spread (all values equal) has no usable bandwidth.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let t = samples.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth needs at least 2 samples, got {t}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / t as f64;
    let ss = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (t - 1) as f64).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (t as f64).powf(-0.2);
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::DegenerateBandwidth(format!("bandwidth {h} from spread {spread}")));
    }
    Ok(h)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Two-step kernel density estimate: linear binning onto the grid, then
/// discrete convolution with a Gaussian kernel of the given bandwidth.
/// Samples outside [lo, hi] pile onto the boundary bins so total mass is
/// preserved.
pub fn binned_kde(samples: &[f64], lo: f64, hi: f64, bandwidth: f64) -> Result<DensityEstimate> {
    let t = samples.len();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "density estimation needs at least 2 samples, got {t}"
        )));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::DegenerateBandwidth(format!(
            "bandwidth {bandwidth} is not usable"
        )));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad density grid [{lo}, {hi}]"
        )));
    }
    let needed = ((hi - lo) / bandwidth).ceil() as usize + 1;
    let g = needed.clamp(GRID_POINTS, MAX_GRID_POINTS);
    let step = (hi - lo) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|i| lo + step * i as f64).collect();

    let mut counts = vec![0.0; g];
    for &s in samples {
        let pos = (s - lo) / step;
        if pos <= 0.0 {
            counts[0] += 1.0;
        } else if pos >= (g - 1) as f64 {
            counts[g - 1] += 1.0;
        } else {
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            counts[i] += 1.0 - frac;
            counts[i + 1] += frac;
        }
    }

    // kernel weight at a lag of d grid steps
    let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let weights: Vec<f64> = (0..g)
        .map(|d| {
            let x = d as f64 * step / bandwidth;
            norm * (-0.5 * x * x).exp()
        })
        .collect();
    let mut values = vec![0.0; g];
    for (j, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for i in 0..g {
            values[i] += c * weights[i.abs_diff(j)];
        }
    }
    for v in &mut values {
        *v /= t as f64;
    }

    let mass = trapezoid(&grid, &values);
    if !(0.99..=1.01).contains(&mass) {
        return Err(Error::Numeric {
            detail: format!(
                "density integrates to {mass}; grid [{lo}, {hi}] too narrow for bandwidth {bandwidth}"
            ),
            iteration: None,
        });
    }
    Ok(DensityEstimate { grid, values })
}

/// Density of one sample set on a grid spanning its own range.
pub fn density_estimate(samples: &[f64], bandwidth: f64) -> Result<DensityEstimate> {
    let (lo, hi) = padded_range(&[samples], bandwidth)?;
    binned_kde(samples, lo, hi, bandwidth)
}

fn padded_range(sample_sets: &[&[f64]], bandwidth: f64) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for set in sample_sets {
        for &s in *set {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(
            "samples contain non-finite values".into(),
        ));
    }
    Ok((
        lo - GRID_PAD_BANDWIDTHS * bandwidth,
        hi + GRID_PAD_BANDWIDTHS * bandwidth,
    ))
}

/// Half the trapezoidal integral of |p - q|, clamped into [0, 1].
pub fn tv_distance(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    if p.grid.len() != q.grid.len() || p.grid.iter().zip(&q.grid).any(|(a, b)| a != b) {
        return Err(Error::InvalidArgument(
            "total variation needs both densities on the same grid".into(),
        ));
    }
    let diff: Vec<f64> = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok((0.5 * trapezoid(&p.grid, &diff)).clamp(0.0, 1.0))
}

/// Accuracy of one chain against another at a sequence of prefix
/// lengths: per component, one minus the estimated total variation
/// distance between the two prefix densities.
#[derive(Clone, Debug)]
pub struct AccuracyReport {
    pub names: Vec<String>,
    pub t_grid: Vec<usize>,
    /// row = checkpoint, column = component
    pub per_component: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

/// Gap between overlapping-batch-means standard errors at a sequence of
/// prefix lengths.
#[derive(Clone, Debug)]
pub struct SeReport {
    pub names: Vec<String>,
    pub t_grid: Vec<usize>,
    pub per_component: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

fn check_curve_inputs(a: &DrawMatrix, parent: &DrawMatrix, t_grid: &[usize], min_t: usize) -> Result<()> {
    if a.names() != parent.names() {
        return Err(Error::DimensionMismatch(format!(
            "chains record different functionals: {:?} vs {:?}",
            a.names(),
            parent.names()
        )));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty checkpoint grid".into()));
    }
    let max_t = a.nrows().min(parent.nrows());
    for &t in t_grid {
        if t < min_t || t > max_t {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {t} outside usable range [{min_t}, {max_t}]"
            )));
        }
    }
    Ok(())
}

/// The bandwidth at each checkpoint comes from the parent prefix and is
/// shared by both densities, so the comparison is symmetric in all but
/// the reference roles.
pub fn accuracy_curve(
    adda: &DrawMatrix,
    parent: &DrawMatrix,
    t_grid: &[usize],
) -> Result<AccuracyReport> {
    check_curve_inputs(adda, parent, t_grid, 2)?;
    let c = adda.ncols();
    let mut per_component = vec![vec![0.0; c]; t_grid.len()];
    for j in 0..c {
        for (ti, &t) in t_grid.iter().enumerate() {
            let a = adda.column_prefix(j, t);
            let p = parent.column_prefix(j, t);
            let h = silverman_bandwidth(&p)?;
            let (lo, hi) = padded_range(&[&a, &p], h)?;
            let da = binned_kde(&a, lo, hi, h)?;
            let dp = binned_kde(&p, lo, hi, h)?;
            per_component[ti][j] = (1.0 - tv_distance(&da, &dp)?).clamp(0.0, 1.0);
        }
    }
    let average = row_means(&per_component);
    Ok(AccuracyReport {
        names: adda.names().to_vec(),
        t_grid: t_grid.to_vec(),
        per_component,
        average,
    })
}

/// Overlapping-batch-means estimate of the standard error of the series
/// mean, with batch length floor(sqrt(t)).
pub fn obm_mcse(series: &[f64]) -> Result<f64> {
    let t = series.len();
    if t < 4 {
        return Err(Error::InvalidArgument(format!(
            "batch-means standard error needs at least 4 points, got {t}"
        )));
    }
    let b = (t as f64).sqrt().floor() as usize;
    let tf = t as f64;
    let bf = b as f64;
    let mean = series.iter().sum::<f64>() / tf;
    let mut window: f64 = series[..b].iter().sum();
    let mut ss = {
        let d = window / bf - mean;
        d * d
    };
    for j in 1..=(t - b) {
        window += series[j + b - 1] - series[j - 1];
        let d = window / bf - mean;
        ss += d * d;
    }
    let sigma2 = tf * bf / ((tf - bf) * (tf - bf + 1.0)) * ss;
    Ok((sigma2 / tf).sqrt())
}

pub fn se_curve(adda: &DrawMatrix, parent: &DrawMatrix, t_grid: &[usize]) -> Result<SeReport> {
    check_curve_inputs(adda, parent, t_grid, 4)?;
    let c = adda.ncols();
    let mut per_component = vec![vec![0.0; c]; t_grid.len()];
    for j in 0..c {
        for (ti, &t) in t_grid.iter().enumerate() {
            let se_a = obm_mcse(&adda.column_prefix(j, t))?;
            let se_p = obm_mcse(&parent.column_prefix(j, t))?;
            per_component[ti][j] = (se_a - se_p).abs();
        }
    }
    let average = row_means(&per_component);
    Ok(SeReport {
        names: adda.names().to_vec(),
        t_grid: t_grid.to_vec(),
        per_component,
        average,
    })
}

fn row_means(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect()
}

fn write_report<W: Write>(
    out: W,
    names: &[String],
    t_grid: &[usize],
    per_component: &[Vec<f64>],
    average: &[f64],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.push("average".into());
    writer.write_record(&header)?;
    for (i, &t) in t_grid.iter().enumerate() {
        let mut record = vec![t.to_string()];
        record.extend(per_component[i].iter().map(|v| format!("{v}")));
        record.push(format!("{}", average[i]));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

impl AccuracyReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_report(out, &self.names, &self.t_grid, &self.per_component, &self.average)
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

impl SeReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_report(out, &self.names, &self.t_grid, &self.per_component, &self.average)
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::standard_normal;
    use crate::rng::RngStream;

    fn normal_samples(n: usize, mean: f64, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 900);
        (0..n).map(|_| mean + standard_normal(&mut rng)).collect()
    }

    fn matrix_of(samples: &[f64]) -> DrawMatrix {
        let mut m = DrawMatrix::new(vec!["x".into()]);
        for &s in samples {
            m.push_row(&[s]);
        }
        m
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let samples = normal_samples(100_000, 0.0, 1);
        let h = silverman_bandwidth(&samples).unwrap();
        let est = density_estimate(&samples, h).unwrap();
        let mut worst = 0.0f64;
        for (g, v) in est.grid.iter().zip(&est.values) {
            let pdf = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
            worst = worst.max((v - pdf).abs());
        }
        assert!(worst < 0.01, "max pdf deviation {worst}");
    }

    #[test]
    fn kde_translation_equivariance() {
        // dyadic samples with range + 8h = 25 make the grid step
        // 25/400 = 2^-4, so +5 commutes with the arithmetic bit-for-bit
        let samples = vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 17.0];
        let shifted: Vec<f64> = samples.iter().map(|s| s + 5.0).collect();
        let est = density_estimate(&samples, 1.0).unwrap();
        let est_shift = density_estimate(&shifted, 1.0).unwrap();
        for i in 0..GRID_POINTS {
            assert_eq!(est.grid[i] + 5.0, est_shift.grid[i]);
            assert_eq!(est.values[i], est_shift.values[i]);
        }
    }

    #[test]
    fn kde_grid_adapts_to_narrow_bandwidth() {
        // A tight cluster plus one far excursion: the Silverman bandwidth
        // tracks the cluster while the range tracks the excursion, so 401
        // points would under-resolve the kernel and fail the mass check.
        let mut samples = normal_samples(5_000, 0.0, 7);
        for s in &mut samples {
            *s *= 0.02;
        }
        samples.push(50.0);
        let h = silverman_bandwidth(&samples).unwrap();
        let est = density_estimate(&samples, h).unwrap();
        assert!(est.grid.len() > GRID_POINTS);
        assert!(est.grid.len() <= MAX_GRID_POINTS);
    }

    #[test]
    fn kde_preconditions() {
        assert!(binned_kde(&[1.0], 0.0, 1.0, 0.1).is_err());
        assert!(binned_kde(&[1.0, 2.0], 0.0, 1.0, 0.0).is_err());
        assert!(matches!(
            silverman_bandwidth(&[3.0; 50]),
            Err(Error::DegenerateBandwidth(_))
        ));
    }

    #[test]
    fn tv_identity_and_separation() {
        let a = normal_samples(10_000, 0.0, 2);
        let b = normal_samples(10_000, 10.0, 3);
        let h = silverman_bandwidth(&a).unwrap();
        let (lo, hi) = padded_range(&[&a, &b], h).unwrap();
        let da = binned_kde(&a, lo, hi, h).unwrap();
        let db = binned_kde(&b, lo, hi, h).unwrap();
        assert_eq!(tv_distance(&da, &da).unwrap(), 0.0);
        let tv = tv_distance(&da, &db).unwrap();
        assert!(tv > 0.99, "tv {tv}");
        assert_eq!(tv_distance(&da, &db).unwrap(), tv_distance(&db, &da).unwrap());
    }

    #[test]
    fn tv_of_matching_distributions_is_small() {
        let a = normal_samples(100_000, 0.0, 4);
        let b = normal_samples(100_000, 0.0, 5);
        let h = silverman_bandwidth(&a).unwrap();
        let (lo, hi) = padded_range(&[&a, &b], h).unwrap();
        let da = binned_kde(&a, lo, hi, h).unwrap();
        let db = binned_kde(&b, lo, hi, h).unwrap();
        let tv = tv_distance(&da, &db).unwrap();
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn tv_grid_mismatch_is_rejected() {
        let a = normal_samples(100, 0.0, 6);
        let da = binned_kde(&a, -3.0, 3.0, 0.5).unwrap();
        let db = binned_kde(&a, -3.5, 3.0, 0.5).unwrap();
        assert!(tv_distance(&da, &db).is_err());
    }

    #[test]
    fn accuracy_identity_and_mismatch() {
        let samples = normal_samples(5_000, 0.0, 7);
        let m = matrix_of(&samples);
        let report = accuracy_curve(&m, &m, &[100, 1000, 5000]).unwrap();
        for acc in &report.average {
            assert!(*acc >= 0.999, "identity accuracy {acc}");
        }
        let far = matrix_of(&normal_samples(10_000, 4.0, 15));
        let near = matrix_of(&normal_samples(10_000, 0.0, 16));
        let report = accuracy_curve(&far, &near, &[10_000]).unwrap();
        assert!(report.average[0] < 0.05, "accuracy {}", report.average[0]);

        let mut two = DrawMatrix::new(vec!["x".into(), "y".into()]);
        two.push_row(&[0.0, 0.0]);
        assert!(accuracy_curve(&two, &near, &[2]).is_err());
    }

    #[test]
    fn accuracy_improves_with_chain_length() {
        // consistency sanity: same target, longer prefix is at least as
        // accurate in 9 of 10 replications
        let mut wins = 0;
        for seed in 0..10 {
            let a = matrix_of(&normal_samples(20_000, 0.0, 100 + seed));
            let p = matrix_of(&normal_samples(20_000, 0.0, 200 + seed));
            let report = accuracy_curve(&a, &p, &[500, 20_000]).unwrap();
            if report.average[1] >= report.average[0] {
                wins += 1;
            }
        }
        assert!(wins >= 9, "longer prefix won only {wins}/10");
    }

    #[test]
    fn obm_iid_matches_asymptotics() {
        let samples = normal_samples(10_000, 0.0, 10);
        let se = obm_mcse(&samples).unwrap();
        assert!((se - 0.01).abs() < 0.002, "iid mcse {se}");
    }

    #[test]
    fn obm_ar1_matches_asymptotics() {
        // x_t = 0.5 x_{t-1} + z_t has asymptotic sd 1/(1-0.5) = 2 for
        // the scaled mean, so the mcse at t = 1e5 is about 0.00632
        let mut rng = RngStream::new(11, 900);
        let t = 100_000;
        let mut series = Vec::with_capacity(t);
        let mut x = 0.0;
        for _ in 0..t {
            x = 0.5 * x + standard_normal(&mut rng);
            series.push(x);
        }
        let se = obm_mcse(&series).unwrap();
        let expect = 2.0 / (t as f64).sqrt();
        assert!(
            (se - expect).abs() < 0.2 * expect,
            "ar1 mcse {se} vs {expect}"
        );
    }

    #[test]
    fn obm_edge_cases() {
        assert!(obm_mcse(&[1.0, 2.0, 3.0]).is_err());
        assert_eq!(obm_mcse(&[2.5; 100]).unwrap(), 0.0);
        // power-of-two scaling is exact in floating point
        let samples = normal_samples(1_000, 0.0, 12);
        let scaled: Vec<f64> = samples.iter().map(|v| 4.0 * v).collect();
        assert_eq!(
            obm_mcse(&scaled).unwrap(),
            4.0 * obm_mcse(&samples).unwrap()
        );
    }

    #[test]
    fn se_curve_identity_and_consistency() {
        let a = matrix_of(&normal_samples(100_000, 0.0, 13));
        let report = se_curve(&a, &a, &[1000, 100_000]).unwrap();
        assert_eq!(report.average, vec![0.0, 0.0]);

        let b = matrix_of(&normal_samples(100_000, 0.0, 14));
        let report = se_curve(&a, &b, &[100_000]).unwrap();
        assert!(report.average[0] < 0.002, "se gap {}", report.average[0]);

        assert!(se_curve(&a, &b, &[100_001]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let report = AccuracyReport {
            names: vec!["beta1".into()],
            t_grid: vec![10, 20],
            per_component: vec![vec![0.5], vec![0.75]],
            average: vec![0.5, 0.75],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,beta1,average\n10,0.5,0.5\n20,0.75,0.75\n");
    }
}
