use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use super::metrics::{FoldMetrics, MetricSummary};
use super::splits::SplitPlan;
use crate::error::{Error, Result};
use crate::ingest::Direction;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
    pub metrics: FoldMetrics,
    pub flags: BTreeMap<String, String>,
}

/// Per-fold metrics, their across-fold means, and metrics pooled over the
/// concatenated test sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldResult>,
    pub mean: BTreeMap<String, MetricSummary>,
    pub pooled: FoldMetrics,
    pub pooled_flags: BTreeMap<String, String>,
}

impl MetricsReport {
    /// `predictions[f]` holds one direction per test index of fold `f`, in order.
    pub fn build<T: Scalar>(
        plan: &SplitPlan,
        dates: &[NaiveDate],
        labels: &[Direction],
        returns: &[T],
        predictions: &[Vec<Direction>],
    ) -> Result<Self> {
        if predictions.len() != plan.folds.len() {
            return Err(Error::Shape(format!(
                "{} prediction sets for {} folds",
                predictions.len(),
                plan.folds.len()
            )));
        }
        let mut folds = Vec::with_capacity(plan.folds.len());
        let (mut all_true, mut all_pred, mut all_ret) = (Vec::new(), Vec::new(), Vec::new());
        for (f, (fold, preds)) in plan.folds.iter().zip(predictions).enumerate() {
            if preds.len() != fold.test.len() {
                return Err(Error::Shape(format!("fold {f}: prediction count differs from test size")));
            }
            let y: Vec<Direction> = fold.test.iter().map(|&i| labels[i]).collect();
            let r: Vec<T> = fold.test.iter().map(|&i| returns[i]).collect();
            let metrics = FoldMetrics::compute(&y, preds, &r)?;
            folds.push(FoldResult {
                fold: f + 1,
                train_size: fold.train.len(),
                test_size: fold.test.len(),
                test_start: dates[*fold.test.first().expect("non-empty test")],
                test_end: dates[*fold.test.last().expect("non-empty test")],
                metrics,
                flags: metrics.flags(),
            });
            all_true.extend(y);
            all_pred.extend(preds.iter().copied());
            all_ret.extend(r);
        }
        let mean = FoldMetrics::NAMES
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let vals: Vec<_> = folds.iter().map(|f| f.metrics.values()[j]).collect();
                (name.to_string(), MetricSummary::of(&vals))
            })
            .collect();
        let pooled = FoldMetrics::compute(&all_true, &all_pred, &all_ret)?;
        Ok(MetricsReport {
            folds,
            mean,
            pooled_flags: pooled.flags(),
            pooled,
        })
    }

    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        self.mean.get(metric).and_then(|s| s.mean)
    }
}
