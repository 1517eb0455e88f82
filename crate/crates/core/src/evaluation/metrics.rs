//! Classification and long-only trading metrics.
//!
//! Undefined values are reported as [`Metric::Absent`] with a reason rather
//! than zero, so fold averages can skip them.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::Direction;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    /// Precision with no predicted-up days.
    NoPredictedUp,
    /// Recall with no actual-up days.
    NoActualUp,
    /// F1 when precision or recall is absent.
    ComponentAbsent,
    /// DWR with no long days.
    NoPositions,
    /// Profit factor with neither gross profit nor gross loss.
    NoTrades,
    /// Sharpe with zero strategy-return dispersion.
    ConstantStrategy,
    /// Sharpe on fewer than two days.
    TooFewDays,
}

impl Undefined {
    pub fn as_str(self) -> &'static str {
        match self {
            Undefined::NoPredictedUp => "no_predicted_up",
            Undefined::NoActualUp => "no_actual_up",
            Undefined::ComponentAbsent => "component_absent",
            Undefined::NoPositions => "no_positions",
            Undefined::NoTrades => "no_trades",
            Undefined::ConstantStrategy => "constant_strategy",
            Undefined::TooFewDays => "too_few_days",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric<T> {
    Value(T),
    /// Profit factor with profits and no losses.
    PosInfinity,
    Absent(Undefined),
}

impl<T: Scalar> Metric<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_f64(self) -> Metric<f64> {
        match self {
            Metric::Value(v) => Metric::Value(v.as_f64()),
            Metric::PosInfinity => Metric::PosInfinity,
            Metric::Absent(u) => Metric::Absent(u),
        }
    }
}

/// JSON form: a number, the string `"inf"`, or `null` (reason recorded in flags).
impl Serialize for Metric<f64> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::PosInfinity => s.serialize_str("inf"),
            Metric::Absent(_) => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    fn mcc<T: Scalar>(&self) -> T {
        let c = |v: usize| T::of(v as f64);
        let (tp, fp, tn, fnn) = (c(self.tp), c(self.fp), c(self.tn), c(self.fn_));
        let denom = (tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn);
        if denom == T::zero() {
            return T::zero();
        }
        (tp * tn - fp * fnn) / denom.sqrt()
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("series lengths differ: {a} vs {b}")));
    }
    Ok(())
}

/// Confusion counts with `Up` as the positive class.
pub fn confusion(y_true: &[Direction], y_pred: &[Direction]) -> Result<Confusion> {
    check_len(y_true.len(), y_pred.len())?;
    let mut c = Confusion::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t.is_up(), p.is_up()) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics<T> {
    pub accuracy: T,
    pub precision: Metric<T>,
    pub recall: Metric<T>,
    pub f1: Metric<T>,
}

pub fn classification_metrics<T: Scalar>(
    y_true: &[Direction],
    y_pred: &[Direction],
) -> Result<ClassificationMetrics<T>> {
    let c = confusion(y_true, y_pred)?;
    if y_true.is_empty() {
        return Err(Error::Precondition("no samples to score".into()));
    }
    let f = |v: usize| T::of(v as f64);
    let accuracy = f(c.tp + c.tn) / f(y_true.len());
    let precision = if c.tp + c.fp == 0 {
        Metric::Absent(Undefined::NoPredictedUp)
    } else {
        Metric::Value(f(c.tp) / f(c.tp + c.fp))
    };
    let recall = if c.tp + c.fn_ == 0 {
        Metric::Absent(Undefined::NoActualUp)
    } else {
        Metric::Value(f(c.tp) / f(c.tp + c.fn_))
    };
    let f1 = match (precision, recall) {
        (Metric::Value(_), Metric::Value(_)) => {
            Metric::Value(f(2 * c.tp) / f(2 * c.tp + c.fp + c.fn_))
        }
        _ => Metric::Absent(Undefined::ComponentAbsent),
    };
    Ok(ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Matthews correlation between long positions and realized up-days
/// (`r > 0`). Zero whenever a marginal count is zero.
pub fn trading_mcc<T: Scalar>(positions: &[bool], returns: &[T]) -> Result<T> {
    check_len(positions.len(), returns.len())?;
    let realized: Vec<Direction> = returns.iter().map(|&r| Direction::from_bool(r > T::zero())).collect();
    let pred: Vec<Direction> = positions.iter().map(|&p| Direction::from_bool(p)).collect();
    Ok(confusion(&realized, &pred)?.mcc())
}

/// Share of long days with a positive return.
pub fn dwr<T: Scalar>(positions: &[bool], returns: &[T]) -> Result<Metric<T>> {
    check_len(positions.len(), returns.len())?;
    let longs = positions.iter().filter(|&&p| p).count();
    if longs == 0 {
        return Ok(Metric::Absent(Undefined::NoPositions));
    }
    let wins = positions
        .iter()
        .zip(returns)
        .filter(|(&p, &r)| p && r > T::zero())
        .count();
    Ok(Metric::Value(T::of(wins as f64) / T::of(longs as f64)))
}

/// Gross profit over gross loss of the long-only return stream.
pub fn profit_factor<T: Scalar>(positions: &[bool], returns: &[T]) -> Result<Metric<T>> {
    check_len(positions.len(), returns.len())?;
    let (mut profit, mut loss) = (T::zero(), T::zero());
    for (&p, &r) in positions.iter().zip(returns) {
        if !p {
            continue;
        }
        if r > T::zero() {
            profit += r;
        } else if r < T::zero() {
            loss -= r;
        }
    }
    Ok(if loss > T::zero() {
        Metric::Value(profit / loss)
    } else if profit > T::zero() {
        Metric::PosInfinity
    } else {
        Metric::Absent(Undefined::NoTrades)
    })
}

/// Mean over population std of `p_t * r_t` across all days (flat days count
/// as zero). Not annualized.
pub fn sharpe<T: Scalar>(positions: &[bool], returns: &[T]) -> Result<Metric<T>> {
    check_len(positions.len(), returns.len())?;
    if returns.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: returns.len(),
            context: "sharpe ratio",
        });
    }
    let strat: Vec<T> = positions
        .iter()
        .zip(returns)
        .map(|(&p, &r)| if p { r } else { T::zero() })
        .collect();
    let mean = crate::scalar::mean(&strat).expect("non-empty");
    let std = crate::scalar::population_std(&strat).expect("non-empty");
    // a constant series can leave rounding dust in the two-pass std
    let flat = strat.iter().all(|&s| s == strat[0]);
    if flat || std == T::zero() {
        return Ok(Metric::Absent(Undefined::ConstantStrategy));
    }
    Ok(Metric::Value(mean / std))
}

/// One fold's full metric row, in the report's column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldMetrics {
    pub accuracy: Metric<f64>,
    pub precision: Metric<f64>,
    pub recall: Metric<f64>,
    pub f1: Metric<f64>,
    pub mcc: Metric<f64>,
    pub dwr: Metric<f64>,
    pub profit_factor: Metric<f64>,
    pub sharpe: Metric<f64>,
}

impl FoldMetrics {
    pub const NAMES: [&'static str; 8] = [
        "accuracy",
        "precision",
        "recall",
        "f1",
        "mcc",
        "dwr",
        "profit_factor",
        "sharpe",
    ];

    /// Scores predictions against labels and long-only returns.
    pub fn compute<T: Scalar>(y_true: &[Direction], y_pred: &[Direction], returns: &[T]) -> Result<Self> {
        let cls = classification_metrics::<T>(y_true, y_pred)?;
        let positions: Vec<bool> = y_pred.iter().map(|p| p.is_up()).collect();
        let sharpe = match sharpe(&positions, returns) {
            Err(Error::InsufficientData { .. }) => Metric::Absent(Undefined::TooFewDays),
            other => other?,
        };
        Ok(FoldMetrics {
            accuracy: Metric::Value(cls.accuracy.as_f64()),
            precision: cls.precision.to_f64(),
            recall: cls.recall.to_f64(),
            f1: cls.f1.to_f64(),
            mcc: Metric::Value(trading_mcc(&positions, returns)?.as_f64()),
            dwr: dwr(&positions, returns)?.to_f64(),
            profit_factor: profit_factor(&positions, returns)?.to_f64(),
            sharpe: sharpe.to_f64(),
        })
    }

    pub fn values(&self) -> [Metric<f64>; 8] {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.mcc,
            self.dwr,
            self.profit_factor,
            self.sharpe,
        ]
    }

    /// `metric name -> reason` for every non-numeric entry.
    pub fn flags(&self) -> std::collections::BTreeMap<String, String> {
        Self::NAMES
            .iter()
            .zip(self.values())
            .filter_map(|(name, m)| match m {
                Metric::Value(_) => None,
                Metric::PosInfinity => Some((name.to_string(), "positive_infinity".to_string())),
                Metric::Absent(u) => Some((name.to_string(), u.as_str().to_string())),
            })
            .collect()
    }
}

/// Unweighted mean of one metric across folds, skipping undefined and
/// infinite entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub defined: usize,
    pub skipped: usize,
}

impl MetricSummary {
    pub fn of(values: &[Metric<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().filter_map(|m| m.value()).collect();
        MetricSummary {
            mean: crate::scalar::mean(&defined),
            defined: defined.len(),
            skipped: values.len() - defined.len(),
        }
    }
}
