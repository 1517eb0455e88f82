//! Per-article embeddings and their per-day aggregates.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{parse_date, parse_num};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleEmbedding<T> {
    pub date: NaiveDate,
    pub article_id: String,
    pub vector: Vec<T>,
    /// Sentiment in [-1, 1].
    pub sentiment: T,
}

/// Everything known about one trading day's news.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayText<T> {
    pub date: NaiveDate,
    pub article_ids: Vec<String>,
    /// Article vectors in input order.
    pub tokens: Vec<Vec<T>>,
    pub mean_embedding: Vec<T>,
    pub agg_sentiment: T,
    /// Population std of the day's article sentiments.
    pub sentiment_volatility: T,
}

impl<T: Scalar> DayText<T> {
    pub fn dim(&self) -> usize {
        self.mean_embedding.len()
    }
}

/// Maps three-class sentiment probabilities onto a [-1, 1] score.
pub fn sentiment_from_probs<T: Scalar>(p_positive: T, p_negative: T) -> T {
    p_positive - p_negative
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<(usize, Vec<ArticleEmbedding<T>>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_embeddings(file).map_err(|e| e.in_file(path))
}

/// Parses the embedding file format:
///
/// ```text
/// #dim=<d>
/// date,article_id,sentiment,v1 v2 ... vd
/// ```
///
/// Returns the declared dimension and the articles in file order. Errors carry
/// the 1-based file line.
pub fn read_embeddings<T: Scalar, R: Read>(reader: R) -> Result<(usize, Vec<ArticleEmbedding<T>>)> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let dim: usize = first
        .trim()
        .strip_prefix("#dim=")
        .and_then(|s| s.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Schema(format!("line 1: expected `#dim=<d>`, got `{}`", first.trim())))?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(buf);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Row {
            line: e.position().map(|p| p.line() + 1).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() + 1).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 4 {
            return Err(Error::Row {
                line,
                message: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let date = parse_date(record[0].trim(), line)?;
        let article_id = record[1].trim().to_string();
        let sentiment = parse_num::<T>(record[2].trim(), "sentiment", line)?;
        let vector = record[3]
            .split_whitespace()
            .map(|v| parse_num::<T>(v, "embedding component", line))
            .collect::<Result<Vec<T>>>()?;
        if vector.len() != dim {
            return Err(Error::Row {
                line,
                message: format!("vector has {} components, file declares {dim}", vector.len()),
            });
        }
        if sentiment < -T::one() || sentiment > T::one() {
            return Err(Error::Validation(format!(
                "line {line}: sentiment {sentiment} outside [-1, 1]"
            )));
        }
        if !seen.insert((date, article_id.clone())) {
            return Err(Error::Duplicate {
                line,
                date,
                article_id,
            });
        }
        out.push(ArticleEmbedding {
            date,
            article_id,
            vector,
            sentiment,
        });
    }
    Ok((dim, out))
}

/// Aggregates one day's articles. Sums run in article-id order so the
/// statistics do not depend on input order; `tokens` keeps input order.
pub fn aggregate_day<T: Scalar>(articles: &[ArticleEmbedding<T>]) -> Result<DayText<T>> {
    let first = articles
        .first()
        .ok_or_else(|| Error::Precondition("cannot aggregate an empty article list".into()))?;
    if let Some(other) = articles.iter().find(|a| a.date != first.date) {
        return Err(Error::Precondition(format!(
            "mixed dates {} and {} in one day",
            first.date, other.date
        )));
    }
    let dim = first.vector.len();
    if articles.iter().any(|a| a.vector.len() != dim) {
        return Err(Error::Shape("articles disagree on embedding dimension".into()));
    }

    let mut order: Vec<&ArticleEmbedding<T>> = articles.iter().collect();
    order.sort_by(|a, b| a.article_id.cmp(&b.article_id));

    let n = T::of(articles.len() as f64);
    let mut mean_embedding = vec![T::zero(); dim];
    for a in &order {
        for (m, &v) in mean_embedding.iter_mut().zip(&a.vector) {
            *m += v;
        }
    }
    mean_embedding.iter_mut().for_each(|m| *m /= n);

    let (lo, hi) = order.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), a| {
        (lo.min(a.sentiment), hi.max(a.sentiment))
    });
    let sum = order.iter().fold(T::zero(), |acc, a| acc + a.sentiment);
    // rounding can push the mean of equal values just outside their range
    let agg_sentiment = (sum / n).max(lo).min(hi);
    let ss = order.iter().fold(T::zero(), |acc, a| {
        let dev = a.sentiment - agg_sentiment;
        acc + dev * dev
    });
    let sentiment_volatility = (ss / n).sqrt();

    Ok(DayText {
        date: first.date,
        article_ids: articles.iter().map(|a| a.article_id.clone()).collect(),
        tokens: articles.iter().map(|a| a.vector.clone()).collect(),
        mean_embedding,
        agg_sentiment,
        sentiment_volatility,
    })
}

/// Groups articles by date (file order within a date) and aggregates each day.
pub fn day_texts<T: Scalar>(articles: &[ArticleEmbedding<T>]) -> Result<BTreeMap<NaiveDate, DayText<T>>> {
    let mut by_day: BTreeMap<NaiveDate, Vec<ArticleEmbedding<T>>> = BTreeMap::new();
    for a in articles {
        by_day.entry(a.date).or_default().push(a.clone());
    }
    by_day
        .into_iter()
        .map(|(date, list)| Ok((date, aggregate_day(&list)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn art(id: &str, v: &[f64], s: f64) -> ArticleEmbedding<f64> {
        ArticleEmbedding {
            date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
            article_id: id.into(),
            vector: v.to_vec(),
            sentiment: s,
        }
    }

    #[test]
    fn parses_one_row() {
        let text = "#dim=4\n2020-01-02,a1,0.5,0.1 0.2 0.3 0.4\n";
        let (dim, arts) = read_embeddings::<f64, _>(text.as_bytes()).unwrap();
        assert_eq!(dim, 4);
        assert_eq!(arts.len(), 1);
        assert_eq!(arts[0].vector, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(arts[0].sentiment, 0.5);
    }

    #[test]
    fn short_vector_is_format_error_at_its_line() {
        let text = "#dim=4\n2020-01-02,a1,0.5,0.1 0.2 0.3 0.4\n2020-01-02,a2,0.5,0.1 0.2 0.3\n";
        let err = read_embeddings::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn sentiment_out_of_range() {
        let text = "#dim=1\n2020-01-02,a1,1.5,0.1\n";
        let err = read_embeddings::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn duplicate_article() {
        let text = "#dim=1\n2020-01-02,a1,0.1,0.1\n2020-01-02,a1,0.2,0.3\n";
        let err = read_embeddings::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Duplicate { line: 3, .. }));
    }

    #[test]
    fn missing_dim_header() {
        let text = "2020-01-02,a1,0.1,0.1\n";
        assert!(matches!(
            read_embeddings::<f64, _>(text.as_bytes()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate_day(&[art("a", &[1.0, 2.0], 0.3)]).unwrap();
        assert_eq!(one.mean_embedding, vec![1.0, 2.0]);
        assert_eq!(one.agg_sentiment, 0.3);
        assert_eq!(one.sentiment_volatility, 0.0);

        let pair = aggregate_day(&[art("a", &[0.0], 0.5), art("b", &[0.0], -0.5)]).unwrap();
        assert_eq!(pair.agg_sentiment, 0.0);
        assert_eq!(pair.sentiment_volatility, 0.5);

        let three = aggregate_day(&[
            art("a", &[0.0, 0.0], 0.0),
            art("b", &[3.0, 0.0], 0.0),
            art("c", &[0.0, 3.0], 0.0),
        ])
        .unwrap();
        assert_eq!(three.mean_embedding, vec![1.0, 1.0]);
    }

    #[test]
    fn aggregate_preconditions() {
        assert!(matches!(aggregate_day::<f64>(&[]), Err(Error::Precondition(_))));
        let mut b = art("b", &[0.0], 0.0);
        b.date = NaiveDate::from_ymd_opt(2020, 1, 3).unwrap();
        assert!(matches!(
            aggregate_day(&[art("a", &[0.0], 0.0), b]),
            Err(Error::Precondition(_))
        ));
    }

    proptest! {
        #[test]
        fn permutation_stable_and_bounded(
            items in prop::collection::vec((-1.0f64..1.0, prop::collection::vec(-5.0f64..5.0, 3)), 1..12),
            rot in 0usize..12,
        ) {
            let arts: Vec<_> = items
                .iter()
                .enumerate()
                .map(|(i, (s, v))| art(&format!("id{i:02}"), v, *s))
                .collect();
            let mut shuffled = arts.clone();
            shuffled.rotate_left(rot % arts.len());
            shuffled.reverse();
            let a = aggregate_day(&arts).unwrap();
            let b = aggregate_day(&shuffled).unwrap();
            for (x, y) in a.mean_embedding.iter().zip(&b.mean_embedding) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(a.agg_sentiment.to_bits(), b.agg_sentiment.to_bits());
            prop_assert_eq!(a.sentiment_volatility.to_bits(), b.sentiment_volatility.to_bits());

            let lo = items.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = items.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= a.agg_sentiment && a.agg_sentiment <= hi);
            prop_assert!(a.sentiment_volatility >= 0.0);
            prop_assert_eq!(a.sentiment_volatility == 0.0, lo == hi);
        }
    }
}
