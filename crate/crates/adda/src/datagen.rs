//! Seeded synthetic datasets for the three models, a balanced random
//! partitioner, and the MovieLens-style feature engineering that turns a
//! raw ratings table into a logistic design.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::distributions::standard_normal;
use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;
use crate::models::lasso::LassoData;
use crate::models::lme::{LmeData, LmeSubject};
use crate::models::logistic::{predict_prob, LogisticData};
use crate::rng::RngStream;

/// Stream id for generators, above the engine's manager/worker/coin/delay
/// ranges so a dataset seed can double as a run seed.
const DATAGEN_STREAM: u64 = 1 << 33;

/// Signs alternating -2, 2, -2, ... over `len` entries, starting at
/// `offset` within the pattern.
fn alternating(len: usize, offset: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |j| if (j + offset) % 2 == 0 { -2.0 } else { 2.0 })
}

/// Binomial-logistic data: 10 standard-normal covariates, coefficients
/// alternating -2 and 2, and 10 Bernoulli trials per row.
pub fn gen_logistic(n: usize, seed: u64) -> Result<(LogisticData, DVector<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one row".into()));
    }
    let p = 10;
    let beta = DVector::from_iterator(p, alternating(p, 0));
    let mut rng = RngStream::new(seed, DATAGEN_STREAM);
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = standard_normal(&mut rng);
        }
        let prob = predict_prob(&beta, &x.row(i).transpose());
        let draw = Binomial::new(10, prob).map_err(|e| Error::Numeric {
            detail: format!("binomial with p = {prob}: {e}"),
            iteration: None,
        })?;
        y.push(draw.sample(&mut rng));
    }
    let data = LogisticData::new(y, vec![10; n], x)?;
    Ok((data, beta))
}

/// Sparse regression data with p = n: the first 90% of coefficients are
/// zero, the rest alternate -2 and 2, and the noise variance is 0.01.
pub fn gen_lasso(n: usize, seed: u64) -> Result<(LassoData, DVector<f64>)> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "square design needs n >= 10, got {n}"
        )));
    }
    let p = n;
    let zeros = (9 * p) / 10;
    let mut beta = DVector::zeros(p);
    for (j, v) in alternating(p - zeros, 0).enumerate() {
        beta[zeros + j] = v;
    }
    let mut rng = RngStream::new(seed, DATAGEN_STREAM);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = standard_normal(&mut rng);
        }
    }
    let mut y = &x * &beta;
    for v in y.iter_mut() {
        *v += 0.1 * standard_normal(&mut rng);
    }
    Ok((LassoData::new(y, x)?, beta))
}

/// The generating parameters behind a mixed-model dataset.
#[derive(Clone, Debug)]
pub struct LmeTruth {
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma2: f64,
}

/// Default rows per subject.
pub const LME_ROWS_PER_SUBJECT: usize = 10;

/// Mixed-model data with p = 4, q = 3: Rademacher designs, fixed effects
/// alternating -2 and 2, a fixed random-effect covariance with diagonal
/// (1, 2, 3), and unit noise.
pub fn gen_lme(m: usize, n_i: usize, seed: u64) -> Result<(LmeData, LmeTruth)> {
    if m == 0 || n_i == 0 {
        return Err(Error::InvalidArgument(
            "need at least one subject and one row per subject".into(),
        ));
    }
    let (p, q) = (4, 3);
    let beta = DVector::from_iterator(p, alternating(p, 0));
    let sigma = DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0, -0.56, 0.52, //
            -0.56, 2.0, 0.0025, //
            0.52, 0.0025, 3.0,
        ],
    );
    let chol = spd_cholesky(sigma.clone(), "generating covariance")?;
    let l = chol.l();
    let mut rng = RngStream::new(seed, DATAGEN_STREAM);
    let sign = |rng: &mut RngStream| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut subjects = Vec::with_capacity(m);
    for _ in 0..m {
        let x = DMatrix::from_fn(n_i, p, |_, _| sign(&mut rng));
        let z = DMatrix::from_fn(n_i, q, |_, _| sign(&mut rng));
        let b = &l * DVector::from_fn(q, |_, _| standard_normal(&mut rng));
        let mut y = &x * &beta + &z * &b;
        for v in y.iter_mut() {
            *v += standard_normal(&mut rng);
        }
        subjects.push(LmeSubject { y, x, z });
    }
    let data = LmeData::new(subjects)?;
    Ok((
        data,
        LmeTruth {
            beta,
            sigma,
            sigma2: 1.0,
        },
    ))
}

/// Disjoint near-equal shards of 0..n: a seeded shuffle dealt round-robin
/// into k parts, each returned in ascending order.
pub fn partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} items into {k} parts"
        )));
    }
    let mut rng = RngStream::new(seed, DATAGEN_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates; rand's shuffle would also work but this keeps the
    // draw count explicit for the stream contract
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut parts = vec![Vec::with_capacity(n / k + 1); k];
    for (i, idx) in order.into_iter().enumerate() {
        parts[i % k].push(idx);
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

/// One row of a raw ratings table.
#[derive(Clone, Debug)]
pub struct RatingRow {
    pub user_id: String,
    pub movie_id: String,
    pub rating: f64,
    pub timestamp: i64,
    /// Pipe-separated genre tags.
    pub genres: String,
}

/// Columns: user_id, movie_id, rating, timestamp, genres. Rows that fail
/// to parse are skipped and counted, not fatal.
pub fn read_ratings_csv<R: Read>(input: R) -> Result<(Vec<RatingRow>, usize)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let expect = ["user_id", "movie_id", "rating", "timestamp", "genres"];
    if headers.iter().ne(expect) {
        return Err(Error::MalformedInput {
            path: "<csv>".into(),
            detail: format!("expected header {}", expect.join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != expect.len() {
            skipped += 1;
            continue;
        }
        let rating: std::result::Result<f64, _> = record[2].trim().parse();
        let timestamp: std::result::Result<i64, _> = record[3].trim().parse();
        match (rating, timestamp) {
            (Ok(r), Ok(t)) if r.is_finite() => rows.push(RatingRow {
                user_id: record[0].to_string(),
                movie_id: record[1].to_string(),
                rating: r,
                timestamp: t,
                genres: record[4].to_string(),
            }),
            _ => skipped += 1,
        }
    }
    Ok((rows, skipped))
}

/// Category memberships of one movie: (action, children, comedy, drama).
/// Unrecognized genre tags contribute to no category.
fn categories(genres: &str) -> [bool; 4] {
    let mut cat = [false; 4];
    for raw in genres.split('|') {
        let tag = raw.trim().to_ascii_lowercase();
        match tag.as_str() {
            "action" | "adventure" | "fantasy" | "horror" | "sci-fi" | "thriller" => {
                cat[0] = true;
            }
            "animation" | "children" | "children's" => cat[1] = true,
            "comedy" => cat[2] = true,
            "crime" | "documentary" | "drama" | "film-noir" | "musical" | "mystery"
            | "romance" | "war" | "western" => cat[3] = true,
            _ => {}
        }
    }
    cat
}

/// One engineered design row, in the input table's row order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub children: f64,
    pub comedy: f64,
    pub drama: f64,
    pub popularity: f64,
    pub mood: f64,
    pub response: f64,
    pub rating: f64,
}

#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

/// Engineer the logistic design from a ratings table:
/// - category dummies with action as the baseline, sharing 1/C across a
///   movie's C categories;
/// - popularity = logit((l + 0.5) / (r + 1)) over the movie's r ratings,
///   l of which are 4 or higher, counted over the whole table;
/// - mood = 1 iff every one of the user's 30 most recent prior ratings
///   (by timestamp, ties in input order) is 4 or higher, 0 when fewer
///   than 30 exist;
/// - response = 1 iff the rating exceeds 3.
pub fn movielens_features(rows: &[RatingRow]) -> FeatureTable {
    let mut movie_counts: HashMap<&str, (u64, u64)> = HashMap::new();
    for row in rows {
        let entry = movie_counts.entry(&row.movie_id).or_insert((0, 0));
        entry.0 += 1;
        if row.rating >= 4.0 {
            entry.1 += 1;
        }
    }

    let mut by_user: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_user.entry(&row.user_id).or_default().push(i);
    }
    let mut mood = vec![0.0; rows.len()];
    for indices in by_user.values_mut() {
        indices.sort_by_key(|&i| rows[i].timestamp);
        let mut window: VecDeque<f64> = VecDeque::with_capacity(30);
        let mut low_in_window = 0usize;
        for &i in indices.iter() {
            if window.len() == 30 && low_in_window == 0 {
                mood[i] = 1.0;
            }
            if window.len() == 30 {
                if window.pop_front().unwrap() < 4.0 {
                    low_in_window -= 1;
                }
            }
            window.push_back(rows[i].rating);
            if rows[i].rating < 4.0 {
                low_in_window += 1;
            }
        }
    }

    let feature_rows = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let cat = categories(&row.genres);
            let c = cat.iter().filter(|&&b| b).count();
            let share = if c > 0 { 1.0 / c as f64 } else { 0.0 };
            let dummy = |on: bool| if on { share } else { 0.0 };
            let (r, l) = movie_counts[row.movie_id.as_str()];
            let frac = (l as f64 + 0.5) / (r as f64 + 1.0);
            FeatureRow {
                children: dummy(cat[1]),
                comedy: dummy(cat[2]),
                drama: dummy(cat[3]),
                popularity: (frac / (1.0 - frac)).ln(),
                mood: mood[i],
                response: if row.rating > 3.0 { 1.0 } else { 0.0 },
                rating: row.rating,
            }
        })
        .collect();
    FeatureTable { rows: feature_rows }
}

impl FeatureTable {
    /// Binomial-logistic view: one trial per row, covariates
    /// (children, comedy, drama, popularity, mood).
    pub fn to_logistic_data(&self) -> Result<LogisticData> {
        let n = self.rows.len();
        let mut x = DMatrix::zeros(n, 5);
        let mut y = Vec::with_capacity(n);
        for (i, row) in self.rows.iter().enumerate() {
            x[(i, 0)] = row.children;
            x[(i, 1)] = row.comedy;
            x[(i, 2)] = row.drama;
            x[(i, 3)] = row.popularity;
            x[(i, 4)] = row.mood;
            y.push(row.response as u64);
        }
        LogisticData::new(y, vec![1; n], x)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["children", "comedy", "drama", "popularity", "mood", "response", "rating"])?;
        for row in &self.rows {
            writer.write_record(
                [
                    row.children,
                    row.comedy,
                    row.drama,
                    row.popularity,
                    row.mood,
                    row.response,
                    row.rating,
                ]
                .map(|v| format!("{v}")),
            )?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_design() {
        let (data, beta) = gen_logistic(200, 7).unwrap();
        let expect: Vec<f64> = alternating(10, 0).collect();
        assert_eq!(beta.as_slice(), &expect[..]);
        assert!(data.y.iter().all(|&y| y <= 10));
        assert!(data.s.iter().all(|&s| s == 10));
        let (again, _) = gen_logistic(200, 7).unwrap();
        assert_eq!(data.y, again.y);
        assert_eq!(data.x, again.x);
        let (other, _) = gen_logistic(200, 8).unwrap();
        assert_ne!(data.x, other.x);
    }

    #[test]
    fn lasso_design() {
        let (data, beta) = gen_lasso(50, 3).unwrap();
        assert_eq!(data.p(), 50);
        assert!(beta.iter().take(45).all(|&b| b == 0.0));
        let tail: Vec<f64> = beta.iter().skip(45).copied().collect();
        assert_eq!(tail, vec![-2.0, 2.0, -2.0, 2.0, -2.0]);
        assert!(gen_lasso(9, 0).is_err());
    }

    #[test]
    fn lasso_noise_variance() {
        let (data, beta) = gen_lasso(500, 4).unwrap();
        let resid = &data.y - &data.x * &beta;
        let mse = resid.dot(&resid) / 500.0;
        assert!((0.007..=0.013).contains(&mse), "noise variance {mse}");
    }

    #[test]
    fn lme_design() {
        let (data, truth) = gen_lme(20, 10, 5).unwrap();
        assert_eq!(data.m(), 20);
        assert_eq!(data.n(), 200);
        assert_eq!(truth.beta.as_slice(), &[-2.0, 2.0, -2.0, 2.0]);
        assert_eq!(truth.sigma[(0, 1)], -0.56);
        assert_eq!(truth.sigma[(2, 0)], 0.52);
        assert_eq!(truth.sigma[(1, 2)], 0.0025);
        for s in &data.subjects {
            assert!(s.x.iter().chain(s.z.iter()).all(|&v| v == 1.0 || v == -1.0));
        }
        let (again, _) = gen_lme(20, 10, 5).unwrap();
        assert_eq!(data.subjects[3].y, again.subjects[3].y);
    }

    #[test]
    fn partition_shapes() {
        let parts = partition(10, 3, 0).unwrap();
        let mut sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut all: Vec<usize> = parts.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let singletons = partition(6, 6, 1).unwrap();
        assert!(singletons.iter().all(|p| p.len() == 1));
        assert!(partition(5, 6, 0).is_err());
        assert_eq!(partition(10, 3, 9).unwrap(), partition(10, 3, 9).unwrap());
    }

    fn rating(user: &str, movie: &str, rating: f64, ts: i64, genres: &str) -> RatingRow {
        RatingRow {
            user_id: user.into(),
            movie_id: movie.into(),
            rating,
            timestamp: ts,
            genres: genres.into(),
        }
    }

    #[test]
    fn popularity_hand_example() {
        // one movie, 9 ratings, 3 of them >= 4
        let mut rows = Vec::new();
        for i in 0..9 {
            let r = if i < 3 { 4.5 } else { 3.0 };
            rows.push(rating(&format!("u{i}"), "m1", r, i as i64, "comedy"));
        }
        let table = movielens_features(&rows);
        let expect = (0.35f64 / 0.65).ln();
        for row in &table.rows {
            assert!((row.popularity - expect).abs() < 1e-12);
        }
        assert!((expect + 0.6190).abs() < 1e-4);
    }

    #[test]
    fn category_shares() {
        let solo = movielens_features(&[rating("u", "m", 5.0, 0, "Comedy")]);
        assert_eq!(
            (solo.rows[0].children, solo.rows[0].comedy, solo.rows[0].drama),
            (0.0, 1.0, 0.0)
        );
        let dual = movielens_features(&[rating("u", "m", 5.0, 0, "Animation|Drama")]);
        assert_eq!(
            (dual.rows[0].children, dual.rows[0].comedy, dual.rows[0].drama),
            (0.5, 0.0, 0.5)
        );
        // two genres mapping into one category count once
        let action = movielens_features(&[rating("u", "m", 5.0, 0, "Action|Thriller")]);
        assert_eq!(
            (action.rows[0].children, action.rows[0].comedy, action.rows[0].drama),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn mood_window() {
        // 32 ratings by one user: all high except the 31st
        let mut rows: Vec<RatingRow> = (0..32)
            .map(|i| rating("u", &format!("m{i}"), 5.0, i as i64, "comedy"))
            .collect();
        rows[30].rating = 2.0;
        let table = movielens_features(&rows);
        for i in 0..30 {
            assert_eq!(table.rows[i].mood, 0.0, "row {i} has prior < 30");
        }
        assert_eq!(table.rows[30].mood, 1.0);
        // the 2.0 sits inside the window of the 32nd rating
        assert_eq!(table.rows[31].mood, 0.0);
    }

    #[test]
    fn response_threshold() {
        let table = movielens_features(&[
            rating("u", "m", 3.0, 0, "comedy"),
            rating("u", "m", 3.5, 1, "comedy"),
        ]);
        assert_eq!(table.rows[0].response, 0.0);
        assert_eq!(table.rows[1].response, 1.0);
    }

    #[test]
    fn ratings_csv_skips_malformed() {
        let text = "user_id,movie_id,rating,timestamp,genres\n\
                    u1,m1,4.0,100,comedy\n\
                    u2,m1,not_a_number,101,comedy\n\
                    u3,m1,3.0,102\n\
                    u4,m1,5.0,103,drama\n";
        let (rows, skipped) = read_ratings_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(skipped, 2);
        assert!(read_ratings_csv("user,movie\n".as_bytes()).is_err());
    }

    #[test]
    fn logistic_view_of_features() {
        let table = movielens_features(&[
            rating("u", "m", 4.0, 0, "comedy"),
            rating("u", "m", 2.0, 1, "comedy"),
        ]);
        let data = table.to_logistic_data().unwrap();
        assert_eq!(data.y, vec![1, 0]);
        assert_eq!(data.s, vec![1, 1]);
        assert_eq!(data.p(), 5);
    }
}
