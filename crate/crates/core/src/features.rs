//! Numeric feature engineering, standard scaling and SMOTE rebalancing.

use chrono::NaiveDate;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Direction;
use crate::scalar::{population_std, Scalar};

pub const NUM_FEATURES: usize = 8;

/// Fixed order of the numeric feature vector. Part of the public contract:
/// checkpoints embed a hash of this list.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "Open",
    "sentiment_volatility",
    "agg_sentiment",
    "Close",
    "High",
    "Volume",
    "DailyReturn",
    "Volatility",
];

/// Positions of the two news-derived features inside [`FEATURE_NAMES`].
pub const SENTIMENT_FEATURES: [usize; 2] = [1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow<T> {
    pub date: NaiveDate,
    pub features: [T; NUM_FEATURES],
    pub label: Direction,
}

/// Simple returns `(c_t - c_{t-1}) / c_{t-1}`.
pub fn daily_return<T: Scalar>(closes: &[T]) -> Result<Vec<T>> {
    if closes.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: closes.len(),
            context: "daily return needs two closes",
        });
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN is not positive either
    if let Some(c) = closes.iter().find(|&&c| !(c > T::zero())) {
        return Err(Error::Domain(format!("close {c} is not positive")));
    }
    Ok(closes.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect())
}

/// Population std over each trailing `window` of returns. Output position `i`
/// covers returns `[i, i + window)`, so the first `window - 1` inputs have no
/// output.
pub fn rolling_volatility<T: Scalar>(returns: &[T], window: usize) -> Result<Vec<T>> {
    if window < 2 {
        return Err(Error::Precondition("volatility window must be at least 2".into()));
    }
    if returns.len() < window {
        return Err(Error::InsufficientData {
            needed: window,
            got: returns.len(),
            context: "rolling volatility window",
        });
    }
    Ok(returns
        .windows(window)
        .map(|w| population_std(w).expect("window is non-empty"))
        .collect())
}

/// Per-column standardization fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T> {
    pub means: Vec<T>,
    /// Population stds as computed; zero stays zero and is handled in `transform`.
    pub stds: Vec<T>,
    pub fitted_on: usize,
}

impl<T: Scalar> Scaler<T> {
    pub fn fit(rows: ArrayView2<'_, T>) -> Result<Self> {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::Precondition("cannot fit a scaler on zero rows".into()));
        }
        let mut means = Vec::with_capacity(rows.ncols());
        let mut stds = Vec::with_capacity(rows.ncols());
        for col in rows.axis_iter(Axis(1)) {
            let col = col.to_vec();
            means.push(crate::scalar::mean(&col).expect("non-empty"));
            stds.push(population_std(&col).expect("non-empty"));
        }
        Ok(Scaler {
            means,
            stds,
            fitted_on: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform_slice(&self, row: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if row.len() != self.dim() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, row has {}",
                self.dim(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(&v, (&m, &s))| {
                let div = if s == T::zero() { T::one() } else { s };
                (v - m) / div
            })
            .collect())
    }

    pub fn transform_matrix(&self, rows: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let mut out = Array2::zeros(rows.raw_dim());
        for (src, mut dst) in rows.outer_iter().zip(out.outer_iter_mut()) {
            dst.assign(&self.transform_slice(src)?);
        }
        Ok(out)
    }

    pub fn transform(&self, row: &FeatureRow<T>) -> Result<FeatureRow<T>> {
        let scaled = self.transform_slice(ArrayView1::from(&row.features[..]))?;
        let mut features = row.features;
        features.iter_mut().zip(scaled.iter()).for_each(|(f, &s)| *f = s);
        Ok(FeatureRow {
            features,
            ..row.clone()
        })
    }
}

pub fn fit_scaler<T: Scalar>(rows: &[FeatureRow<T>]) -> Result<Scaler<T>> {
    Scaler::fit(feature_matrix(rows).view())
}

pub fn feature_matrix<T: Scalar>(rows: &[FeatureRow<T>]) -> Array2<T> {
    let mut m = Array2::zeros((rows.len(), NUM_FEATURES));
    for (mut dst, row) in m.outer_iter_mut().zip(rows) {
        dst.iter_mut().zip(&row.features).for_each(|(d, &s)| *d = s);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Oversamples the minority class until both classes have equal counts.
///
/// Each synthetic row interpolates between a uniformly drawn minority row and
/// one of its `k` nearest minority neighbours (Euclidean, ties broken by row
/// index) at a uniform fraction in [0, 1). Original rows come first, unchanged.
pub fn smote<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[Direction],
    cfg: &SmoteConfig,
) -> Result<(Array2<T>, Vec<Direction>)> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if cfg.k_neighbors == 0 {
        return Err(Error::Precondition("k_neighbors must be at least 1".into()));
    }
    let ups = y.iter().filter(|l| l.is_up()).count();
    let downs = y.len() - ups;
    if ups == 0 || downs == 0 {
        return Err(Error::Precondition("SMOTE needs both classes present".into()));
    }
    if ups == downs {
        return Ok((x.to_owned(), y.to_vec()));
    }
    let minority_label = if ups < downs { Direction::Up } else { Direction::Down };
    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let m = minority.len();
    if m < 2 {
        return Err(Error::Precondition(
            "SMOTE needs at least two minority rows".into(),
        ));
    }
    let need = ups.max(downs) - m;
    let k = cfg.k_neighbors.min(m - 1);

    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut cand: Vec<(T, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (sq_dist(x.row(i), x.row(j)), j))
                .collect();
            cand.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Array2::zeros((x.nrows() + need, x.ncols()));
    out.slice_mut(ndarray::s![..x.nrows(), ..]).assign(&x);
    for s in 0..need {
        let pick = rng.gen_range(0..m);
        let a = minority[pick];
        let b = neighbours[pick][rng.gen_range(0..k)];
        let lambda = T::of(rng.gen::<f64>());
        let (ra, rb) = (x.row(a), x.row(b));
        let mut dst = out.row_mut(x.nrows() + s);
        for c in 0..x.ncols() {
            dst[c] = ra[c] + lambda * (rb[c] - ra[c]);
        }
    }
    let mut labels = y.to_vec();
    labels.extend(std::iter::repeat_n(minority_label, need));
    Ok((out, labels))
}

fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q))
}
