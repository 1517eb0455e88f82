//! Multimodal daily stock-movement classification: lagged market features and
//! prior-day news embeddings, fused by concatenation or cross-modal attention,
//! scored by a logistic head and evaluated with rolling time-series splits.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what the CLI uses.

pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fusion;
pub mod ingest;
pub mod pipeline;
pub mod scalar;
pub mod seeds;
pub mod textfeat;

pub use error::{Error, ErrorClass, Result};
pub use ingest::Direction;
pub use scalar::Scalar;

pub type DailyBar = ingest::DailyBar<f64>;
pub type MarketRow = ingest::MarketRow<f64>;
pub type AlignedRow = ingest::AlignedRow<f64>;
pub type ArticleEmbedding = textfeat::ArticleEmbedding<f64>;
pub type DayText = textfeat::DayText<f64>;
pub type FeatureRow = features::FeatureRow<f64>;
pub type Scaler = features::Scaler<f64>;
pub type FusionParams = fusion::FusionParams<f64>;
pub type LRHead = classifier::LRHead<f64>;
pub type BacktestSeries = evaluation::BacktestSeries<f64>;
pub type Dataset = pipeline::Dataset<f64>;
