//! Scoring of externally produced `date,up|down` prediction files.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;

use super::report::MetricsReport;
use super::splits::SplitPlan;
use crate::error::{Error, Result};
use crate::ingest::{parse_date, Direction};
use crate::scalar::Scalar;

/// Parses a prediction file. A leading `date,prediction` header is optional;
/// tokens are matched case-insensitively after trimming.
pub fn read_predictions<R: Read>(reader: R) -> Result<BTreeMap<NaiveDate, Direction>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Row {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && record.get(0).is_some_and(|f| f.eq_ignore_ascii_case("date")) {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Row {
                line,
                message: format!("expected `date,prediction`, got {} fields", record.len()),
            });
        }
        let date = parse_date(&record[0], line)?;
        let label = match record[1].to_ascii_lowercase().as_str() {
            "up" => Direction::Up,
            "down" => Direction::Down,
            other => {
                return Err(Error::Row {
                    line,
                    message: format!("prediction `{other}` is neither `up` nor `down`"),
                })
            }
        };
        if out.insert(date, label).is_some() {
            return Err(Error::Row {
                line,
                message: format!("second prediction for {date}"),
            });
        }
    }
    Ok(out)
}

/// Runs the full metric suite on external predictions for every test date of
/// `plan`. Every test date must be covered; extra dates are ignored.
pub fn score_external_predictions<T: Scalar>(
    predictions: &BTreeMap<NaiveDate, Direction>,
    plan: &SplitPlan,
    dates: &[NaiveDate],
    labels: &[Direction],
    returns: &[T],
) -> Result<MetricsReport> {
    let mut missing: Vec<NaiveDate> = plan
        .folds
        .iter()
        .flat_map(|f| f.test.iter().map(|&i| dates[i]))
        .filter(|d| !predictions.contains_key(d))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::Coverage(missing));
    }
    let per_fold: Vec<Vec<Direction>> = plan
        .folds
        .iter()
        .map(|f| f.test.iter().map(|&i| predictions[&dates[i]]).collect())
        .collect();
    MetricsReport::build(plan, dates, labels, returns, &per_fold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::splits::time_split;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_case_insensitively() {
        let p = read_predictions("date,prediction\n2020-01-02,UP\n2020-01-03, Down \n".as_bytes()).unwrap();
        assert_eq!(p[&d("2020-01-02")], Direction::Up);
        assert_eq!(p[&d("2020-01-03")], Direction::Down);
    }

    #[test]
    fn rejects_unknown_token_with_line() {
        let err = read_predictions("date,prediction\n2020-01-02,up\n2020-01-03,sideways\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn perfect_file_and_coverage() {
        let dates: Vec<NaiveDate> = (1..=10).map(|i| d(&format!("2020-02-{i:02}"))).collect();
        let labels: Vec<Direction> = (0..10).map(|i| Direction::from_bool(i % 3 != 0)).collect();
        let returns: Vec<f64> = (0..10).map(|i| if i % 3 != 0 { 0.01 } else { -0.01 }).collect();
        let plan = time_split(10, 0.8).unwrap();
        let preds: BTreeMap<_, _> = dates.iter().copied().zip(labels.iter().copied()).collect();
        let rep = score_external_predictions(&preds, &plan, &dates, &labels, &returns).unwrap();
        assert_eq!(rep.mean_of("accuracy"), Some(1.0));

        let mut partial = preds.clone();
        partial.remove(&dates[9]);
        match score_external_predictions(&partial, &plan, &dates, &labels, &returns) {
            Err(Error::Coverage(m)) => assert_eq!(m, vec![dates[9]]),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }
}
