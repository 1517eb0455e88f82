//! Split plans, classification and trading metrics, and the long-only backtest.

pub mod backtest;
pub mod metrics;
pub mod report;
pub mod score;
pub mod splits;

pub use backtest::{backtest, BacktestSeries};
pub use metrics::{
    classification_metrics, confusion, dwr, profit_factor, sharpe, trading_mcc, ClassificationMetrics,
    Confusion, FoldMetrics, Metric, MetricSummary, Undefined,
};
pub use report::{FoldResult, MetricsReport};
pub use score::{read_predictions, score_external_predictions};
pub use splits::{random_split, time_split, tss_splits, Fold, SplitPlan, SplitStrategy};
