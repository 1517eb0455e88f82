//! Market data loading, movement labels, lagging and market/news alignment.
//!
//! Everything here works on trading-day rows: "previous day" always means the
//! previous row of the bar sequence, never the previous calendar day.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{daily_return, rolling_volatility, NUM_FEATURES};
use crate::scalar::Scalar;
use crate::textfeat::DayText;

/// Binary movement direction. `Up` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

impl Direction {
    pub fn from_bool(up: bool) -> Self {
        if up {
            Direction::Up
        } else {
            Direction::Down
        }
    }

    pub fn is_up(self) -> bool {
        self == Direction::Up
    }

    /// 1 for `Up`, 0 for `Down`.
    pub fn indicator<T: Scalar>(self) -> T {
        if self.is_up() {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// One trading day's Open/High/Close/Volume record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar<T> {
    pub date: NaiveDate,
    pub open: T,
    pub high: T,
    pub close: T,
    pub volume: T,
}

pub const OHLCV_COLUMNS: [&str; 5] = ["date", "open", "high", "close", "volume"];

pub fn load_ohlcv<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<DailyBar<T>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_ohlcv(file).map_err(|e| e.in_file(path))
}

/// Parses an OHLCV CSV stream. Line numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn read_ohlcv<T: Scalar, R: Read>(reader: R) -> Result<Vec<DailyBar<T>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(OHLCV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))?;
    }

    let mut bars: Vec<DailyBar<T>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Row {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let date = parse_date(field(0), line)?;
        let open = parse_num::<T>(field(1), "open", line)?;
        let high = parse_num::<T>(field(2), "high", line)?;
        let close = parse_num::<T>(field(3), "close", line)?;
        let volume = parse_num::<T>(field(4), "volume", line)?;
        for (name, v) in [("open", open), ("high", high), ("close", close)] {
            if v <= T::zero() {
                return Err(Error::Row {
                    line,
                    message: format!("{name} must be positive, got {v}"),
                });
            }
        }
        if volume < T::zero() {
            return Err(Error::Row {
                line,
                message: format!("volume must be non-negative, got {volume}"),
            });
        }
        if let Some(prev) = bars.last() {
            if date <= prev.date {
                return Err(Error::Ordering { line, date });
            }
        }
        bars.push(DailyBar {
            date,
            open,
            high,
            close,
            volume,
        });
    }
    Ok(bars)
}

pub(crate) fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Row {
        line,
        message: format!("invalid date `{s}`: {e}"),
    })
}

pub(crate) fn parse_num<T: Scalar>(s: &str, what: &str, line: u64) -> Result<T> {
    let v = T::from_str_radix(s, 10).map_err(|_| Error::Row {
        line,
        message: format!("invalid {what} `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            line,
            message: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

/// A vendor-data quirk that is reported but never repaired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarAnomaly {
    pub date: NaiveDate,
    pub message: String,
}

/// Flags bars whose high lies below the open or close.
pub fn bar_anomalies<T: Scalar>(bars: &[DailyBar<T>]) -> Vec<BarAnomaly> {
    bars.iter()
        .filter(|b| b.high < b.open.max(b.close))
        .map(|b| BarAnomaly {
            date: b.date,
            message: format!(
                "high {} below max(open {}, close {})",
                b.high, b.open, b.close
            ),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementLabel<T> {
    pub date: NaiveDate,
    pub movement: T,
    pub label: Direction,
}

/// Overnight movement `open_t - close_{t-1}` for every bar but the first.
/// A zero movement is labelled `Down`.
pub fn compute_movement<T: Scalar>(bars: &[DailyBar<T>]) -> Result<Vec<MovementLabel<T>>> {
    if bars.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: bars.len(),
            context: "movement needs a previous close",
        });
    }
    Ok(bars
        .windows(2)
        .map(|w| {
            let movement = w[1].open - w[0].close;
            MovementLabel {
                date: w[1].date,
                movement,
                label: Direction::from_bool(movement > T::zero()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column<T> {
    pub name: String,
    pub values: Vec<T>,
}

/// Column-oriented table indexed by trading date, with optional per-row labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<Column<T>>,
    pub labels: Option<Vec<Direction>>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn new(dates: Vec<NaiveDate>) -> Self {
        FeatureTable {
            dates,
            columns: Vec::new(),
            labels: None,
        }
    }

    pub fn with_column(mut self, name: &str, values: Vec<T>) -> Result<Self> {
        if values.len() != self.dates.len() {
            return Err(Error::Shape(format!(
                "column `{name}` has {} values for {} dates",
                values.len(),
                self.dates.len()
            )));
        }
        self.columns.push(Column {
            name: name.to_string(),
            values,
        });
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Direction>) -> Result<Self> {
        if labels.len() != self.dates.len() {
            return Err(Error::Shape("label count differs from row count".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn column(&self, name: &str) -> Option<&[T]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Shifts every non-exempt column down by `lag` rows so row `t` carries the
/// value observed at row `t - lag`. The first `lag` rows are dropped; dates,
/// labels and exempt columns keep their own-row values.
pub fn apply_lag<T: Scalar>(
    table: &FeatureTable<T>,
    lag: usize,
    exempt: &[&str],
) -> Result<FeatureTable<T>> {
    if lag == 0 {
        return Err(Error::Precondition("lag must be at least 1".into()));
    }
    for name in exempt {
        if table.column(name).is_none() {
            return Err(Error::Precondition(format!(
                "exempt column `{name}` not in table"
            )));
        }
    }
    let n = table.len();
    if n < lag + 1 {
        return Err(Error::InsufficientData {
            needed: lag + 1,
            got: n,
            context: "lagging drops the first `lag` rows",
        });
    }
    let columns = table
        .columns
        .iter()
        .map(|c| {
            let values = if exempt.contains(&c.name.as_str()) {
                c.values[lag..].to_vec()
            } else {
                c.values[..n - lag].to_vec()
            };
            Column {
                name: c.name.clone(),
                values,
            }
        })
        .collect();
    Ok(FeatureTable {
        dates: table.dates[lag..].to_vec(),
        columns,
        labels: table.labels.as_ref().map(|l| l[lag..].to_vec()),
    })
}

/// One labelled trading day with lagged market numerics, before news joins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketRow<T> {
    pub date: NaiveDate,
    pub prev_date: NaiveDate,
    /// Day-t open (exempt from lagging).
    pub open: T,
    pub close: T,
    pub high: T,
    pub volume: T,
    pub daily_return: T,
    pub volatility: T,
    pub movement: T,
    pub label: Direction,
    /// Open-to-close return of day t; the backtest outcome, never a feature.
    pub realized_return: T,
}

/// Builds lagged, labelled market rows from raw bars.
///
/// Daily return and volatility are computed on day-s closes, then every column
/// except Open is lagged by one trading day. Rows whose lagged volatility is
/// undefined (the first `vol_window + 1` days) are not emitted.
pub fn market_rows<T: Scalar>(bars: &[DailyBar<T>], vol_window: usize) -> Result<Vec<MarketRow<T>>> {
    let n = bars.len();
    let needed = vol_window + 2;
    if n < needed {
        return Err(Error::InsufficientData {
            needed,
            got: n,
            context: "bars for one lagged volatility window",
        });
    }
    let closes: Vec<T> = bars.iter().map(|b| b.close).collect();
    let returns = daily_return(&closes)?;
    let vols = rolling_volatility(&returns, vol_window)?;
    let moves = compute_movement(bars)?;

    // First day s with every raw column defined: returns[s-1] needs s >= 1,
    // vols[s - vol_window] needs s >= vol_window.
    let first = vol_window;
    let days = first..n;
    let pick = |f: &dyn Fn(usize) -> T| days.clone().map(f).collect::<Vec<T>>();
    let table = FeatureTable::new(days.clone().map(|s| bars[s].date).collect())
        .with_column("Open", pick(&|s| bars[s].open))?
        .with_column("Close", pick(&|s| bars[s].close))?
        .with_column("High", pick(&|s| bars[s].high))?
        .with_column("Volume", pick(&|s| bars[s].volume))?
        .with_column("DailyReturn", pick(&|s| returns[s - 1]))?
        .with_column("Volatility", pick(&|s| vols[s - vol_window]))?
        .with_labels(days.clone().map(|s| moves[s - 1].label).collect())?;
    let lagged = apply_lag(&table, 1, &["Open"])?;

    let col = |name: &str| lagged.column(name).expect("column present");
    let (open, close, high, volume, ret, vol) = (
        col("Open"),
        col("Close"),
        col("High"),
        col("Volume"),
        col("DailyReturn"),
        col("Volatility"),
    );
    let labels = lagged.labels.as_ref().expect("labels present");
    Ok((0..lagged.len())
        .map(|i| {
            let s = first + 1 + i;
            let bar = &bars[s];
            MarketRow {
                date: bar.date,
                prev_date: bars[s - 1].date,
                open: open[i],
                close: close[i],
                high: high[i],
                volume: volume[i],
                daily_return: ret[i],
                volatility: vol[i],
                movement: moves[s - 1].movement,
                label: labels[i],
                realized_return: (bar.close - bar.open) / bar.open,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Drop days whose previous trading day has no news.
    Strict,
    /// Keep them with zero text features and the `no_news` flag set.
    Lenient,
}

/// One sample: day-t label and open, lagged numerics, and prior-day text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRow<T> {
    pub date: NaiveDate,
    pub prev_date: NaiveDate,
    /// Unscaled features in [`crate::features::FEATURE_NAMES`] order.
    pub x_raw: [T; NUM_FEATURES],
    /// Date of the `DayText` paired with this row; `None` when `no_news`.
    pub text_date: Option<NaiveDate>,
    pub no_news: bool,
    pub label: Direction,
    pub movement: T,
    pub realized_return: T,
}

/// Joins market rows with the previous trading day's news aggregate.
pub fn align<T: Scalar>(
    rows: &[MarketRow<T>],
    day_texts: &BTreeMap<NaiveDate, DayText<T>>,
    mode: AlignMode,
) -> Result<Vec<AlignedRow<T>>> {
    let out: Vec<AlignedRow<T>> = rows
        .iter()
        .filter_map(|r| {
            let text = day_texts.get(&r.prev_date);
            if text.is_none() && mode == AlignMode::Strict {
                return None;
            }
            let (sent_vol, agg_sent) = text
                .map(|t| (t.sentiment_volatility, t.agg_sentiment))
                .unwrap_or((T::zero(), T::zero()));
            Some(AlignedRow {
                date: r.date,
                prev_date: r.prev_date,
                x_raw: [
                    r.open,
                    sent_vol,
                    agg_sent,
                    r.close,
                    r.high,
                    r.volume,
                    r.daily_return,
                    r.volatility,
                ],
                text_date: text.map(|t| t.date),
                no_news: text.is_none(),
                label: r.label,
                movement: r.movement,
                realized_return: r.realized_return,
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyDataset(
            "no trading day has news on its previous trading day".into(),
        ));
    }
    Ok(out)
}
