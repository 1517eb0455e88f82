use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Direction;
use crate::scalar::Scalar;

/// Long-only strategy series: long on predicted-up days, flat otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSeries<T> {
    pub dates: Vec<NaiveDate>,
    pub positions: Vec<bool>,
    pub returns: Vec<T>,
    pub strategy_returns: Vec<T>,
    /// Compounded equity after each day, starting from 1.
    pub equity: Vec<T>,
}

pub fn backtest<T: Scalar>(
    predictions: &[Direction],
    returns: &[T],
    dates: &[NaiveDate],
) -> Result<BacktestSeries<T>> {
    if predictions.len() != returns.len() || returns.len() != dates.len() {
        return Err(Error::Shape(format!(
            "backtest inputs have lengths {}, {}, {}",
            predictions.len(),
            returns.len(),
            dates.len()
        )));
    }
    let positions: Vec<bool> = predictions.iter().map(|p| p.is_up()).collect();
    let strategy_returns: Vec<T> = positions
        .iter()
        .zip(returns)
        .map(|(&p, &r)| if p { r } else { T::zero() })
        .collect();
    let equity = strategy_returns
        .iter()
        .scan(T::one(), |e, &s| {
            *e *= T::one() + s;
            Some(*e)
        })
        .collect();
    Ok(BacktestSeries {
        dates: dates.to_vec(),
        positions,
        returns: returns.to_vec(),
        strategy_returns,
        equity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Direction::*;

    fn dates(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
        (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn examples() {
        let s = backtest(&[Down, Down, Down], &[0.1, -0.2, 0.3], &dates(3)).unwrap();
        assert_eq!(s.equity, vec![1.0, 1.0, 1.0]);
        let s = backtest(&[Up], &[0.1], &dates(1)).unwrap();
        assert_eq!(s.equity, vec![1.1]);
        let s = backtest(&[Up, Up], &[0.1f64, -0.5], &dates(2)).unwrap();
        assert!((s.equity[1] - 0.55).abs() < 1e-15);
        assert!(backtest(&[Up], &[0.1, 0.2], &dates(2)).is_err());
    }
}
