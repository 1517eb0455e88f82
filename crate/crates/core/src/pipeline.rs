//! End-to-end orchestration: prepare a dataset, fit models per fold, evaluate,
//! score external predictions and write report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::classifier::{fuse_batch, predict_batch, train_head, train_joint, AttentionSample, JointModel, LRHead};
use crate::config::{ModelMode, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    backtest, random_split, read_predictions, score_external_predictions, time_split, tss_splits,
    MetricsReport, SplitPlan, SplitStrategy,
};
use crate::features::{smote, Scaler, SmoteConfig, FEATURE_NAMES, NUM_FEATURES, SENTIMENT_FEATURES};
use crate::fusion::{concat_fuse, init_params, FusionConfig, TokenSource};
use crate::ingest::{align, bar_anomalies, market_rows, AlignMode, AlignedRow, BarAnomaly, DailyBar, Direction};
use crate::scalar::Scalar;
use crate::seeds::{derive, Component};
use crate::textfeat::{day_texts, ArticleEmbedding, DayText};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHashes {
    pub ohlcv_sha256: String,
    pub embeddings_sha256: String,
}

impl InputHashes {
    pub fn of_files(ohlcv: &Path, embeddings: &Path) -> Result<Self> {
        Ok(InputHashes {
            ohlcv_sha256: sha256_file(ohlcv)?,
            embeddings_sha256: sha256_file(embeddings)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Aligned samples plus the news aggregates they reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub alignment: AlignMode,
    pub volatility_window: usize,
    pub d_t: usize,
    pub inputs: InputHashes,
    pub rows: Vec<AlignedRow<T>>,
    /// Sorted by date; only days some row points at.
    pub day_texts: Vec<DayText<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub bars: usize,
    pub articles: usize,
    pub news_days: usize,
    pub market_rows: usize,
    pub aligned_rows: usize,
    pub no_news_rows: usize,
    /// Trading days dropped because the previous trading day had no news.
    pub dropped_dates: Vec<NaiveDate>,
    pub anomalies: Vec<BarAnomaly>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    pub fn labels(&self) -> Vec<Direction> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn returns(&self) -> Vec<T> {
        self.rows.iter().map(|r| r.realized_return).collect()
    }

    pub fn text(&self, row: &AlignedRow<T>) -> Option<&DayText<T>> {
        let date = row.text_date?;
        self.day_texts
            .binary_search_by_key(&date, |t| t.date)
            .ok()
            .map(|i| &self.day_texts[i])
    }

    /// Checks the artifact against the engine's feature order and itself.
    pub fn check(&self) -> Result<()> {
        if self.version != DATASET_VERSION {
            return Err(Error::Compatibility(format!(
                "dataset version {}, expected {DATASET_VERSION}",
                self.version
            )));
        }
        if self.feature_names.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(Error::Compatibility(format!(
                "dataset feature order {:?} differs from {:?}",
                self.feature_names, FEATURE_NAMES
            )));
        }
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset("dataset has no rows".into()));
        }
        for row in &self.rows {
            if row.text_date.is_some() && self.text(row).is_none() {
                return Err(Error::Validation(format!(
                    "row {} references missing news day",
                    row.date
                )));
            }
        }
        if self.day_texts.iter().any(|t| t.dim() != self.d_t) {
            return Err(Error::Validation("news embedding width differs from d_t".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let ds: Dataset<T> = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))?;
        ds.check().map_err(|e| e.in_file(path))?;
        Ok(ds)
    }
}

/// Builds the aligned dataset from parsed inputs.
pub fn prepare<T: Scalar>(
    bars: &[DailyBar<T>],
    d_t: usize,
    articles: &[ArticleEmbedding<T>],
    alignment: AlignMode,
    volatility_window: usize,
    inputs: InputHashes,
) -> Result<(Dataset<T>, QualityReport)> {
    let market = market_rows(bars, volatility_window)?;
    let texts = day_texts(articles)?;
    let rows = align(&market, &texts, alignment)?;
    let kept: std::collections::BTreeSet<NaiveDate> = rows.iter().map(|r| r.date).collect();
    let quality = QualityReport {
        bars: bars.len(),
        articles: articles.len(),
        news_days: texts.len(),
        market_rows: market.len(),
        aligned_rows: rows.len(),
        no_news_rows: rows.iter().filter(|r| r.no_news).count(),
        dropped_dates: market
            .iter()
            .map(|m| m.date)
            .filter(|d| !kept.contains(d))
            .collect(),
        anomalies: bar_anomalies(bars),
    };
    let used: std::collections::BTreeSet<NaiveDate> = rows.iter().filter_map(|r| r.text_date).collect();
    let day_texts = texts
        .into_values()
        .filter(|t| used.contains(&t.date))
        .collect();
    let ds = Dataset {
        version: DATASET_VERSION,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        alignment,
        volatility_window,
        d_t,
        inputs,
        rows,
        day_texts,
    };
    Ok((ds, quality))
}

/// Split plan for `n` samples under the configured strategy.
pub fn split_plan(cfg: &RunConfig, n: usize) -> Result<SplitPlan> {
    match cfg.split.strategy {
        SplitStrategy::Random => random_split(n, cfg.split.ratio, derive(cfg.seed, Component::Shuffle, 0)),
        SplitStrategy::Time => time_split(n, cfg.split.ratio),
        SplitStrategy::Tss => tss_splits(n, cfg.split.folds),
    }
}

/// Unscaled feature rows; the numeric baseline sees zeros in the sentiment columns.
fn raw_matrix<T: Scalar>(ds: &Dataset<T>, idx: &[usize], mode: ModelMode) -> Array2<T> {
    let mut m = Array2::zeros((idx.len(), NUM_FEATURES));
    for (mut dst, &i) in m.outer_iter_mut().zip(idx) {
        dst.iter_mut().zip(&ds.rows[i].x_raw).for_each(|(d, &s)| *d = s);
        if mode == ModelMode::NumericBaseline {
            for &j in &SENTIMENT_FEATURES {
                dst[j] = T::zero();
            }
        }
    }
    m
}

fn mean_embedding<T: Scalar>(ds: &Dataset<T>, i: usize) -> Array1<T> {
    match ds.text(&ds.rows[i]) {
        Some(t) => Array1::from(t.mean_embedding.clone()),
        None => Array1::zeros(ds.d_t),
    }
}

/// Text tokens of row `i`. A row without news gets one zero token.
fn tokens<T: Scalar>(ds: &Dataset<T>, i: usize, source: TokenSource) -> Array2<T> {
    match (ds.text(&ds.rows[i]), source) {
        (None, _) => Array2::zeros((1, ds.d_t)),
        (Some(t), TokenSource::PooledSingle) => {
            Array2::from_shape_vec((1, ds.d_t), t.mean_embedding.clone()).expect("d_t wide")
        }
        (Some(t), TokenSource::ArticleTokens) => {
            let flat: Vec<T> = t.tokens.iter().flatten().copied().collect();
            Array2::from_shape_vec((t.tokens.len(), ds.d_t), flat).expect("d_t wide")
        }
    }
}

fn concat_matrix<T: Scalar>(ds: &Dataset<T>, idx: &[usize], xs: &Array2<T>) -> Result<Array2<T>> {
    let cfg = FusionConfig::concat(NUM_FEATURES, ds.d_t);
    let mut out = Array2::zeros((idx.len(), cfg.d_out));
    for ((mut dst, x), &i) in out.outer_iter_mut().zip(xs.outer_iter()).zip(idx) {
        dst.assign(&concat_fuse(x, mean_embedding(ds, i).view(), &cfg)?);
    }
    Ok(out)
}

fn attention_samples<T: Scalar>(
    ds: &Dataset<T>,
    idx: &[usize],
    xs: &Array2<T>,
    source: TokenSource,
) -> Vec<AttentionSample<T>> {
    xs.outer_iter()
        .zip(idx)
        .map(|(x, &i)| AttentionSample {
            x: x.to_owned(),
            tokens: tokens(ds, i, source),
        })
        .collect()
}

/// A fitted model and the loss trace of its training run.
#[derive(Debug, Clone)]
pub struct Fitted<T> {
    pub checkpoint: Checkpoint<T>,
    pub loss_trace: Vec<T>,
}

/// Fits the configured model on rows `train`. `counter` separates the random
/// streams of different folds.
pub fn fit<T: Scalar>(cfg: &RunConfig, ds: &Dataset<T>, train: &[usize], counter: u32) -> Result<Fitted<T>> {
    let mode = cfg.model.mode;
    let raw = raw_matrix(ds, train, mode);
    let scaler = Scaler::fit(raw.view())?;
    let xs = scaler.transform_matrix(raw.view())?;
    let ys: Vec<Direction> = train.iter().map(|&i| ds.rows[i].label).collect();
    let tcfg = cfg.train_config(derive(cfg.seed, Component::Dropout, counter));

    let (fusion, head, loss_trace) = if mode == ModelMode::Attention {
        let fcfg = cfg.fusion_config(ds.d_t, derive(cfg.seed, Component::Init, counter));
        let init = JointModel {
            fusion: init_params(&fcfg)?,
            head: LRHead::zeros(fcfg.d_out),
        };
        let samples = attention_samples(ds, train, &xs, fcfg.token_source);
        let t = train_joint(&samples, &ys, init, &fcfg, &tcfg)?;
        (Some((fcfg, t.model.fusion)), t.model.head, t.loss_trace)
    } else {
        let ms = if mode == ModelMode::Concat {
            concat_matrix(ds, train, &xs)?
        } else {
            xs
        };
        let (ms, ys) = if cfg.smote.enabled {
            let scfg = SmoteConfig {
                k_neighbors: cfg.smote.k_neighbors,
                seed: derive(cfg.seed, Component::Smote, counter),
            };
            smote(ms.view(), &ys, &scfg)?
        } else {
            (ms, ys)
        };
        let t = train_head(ms.view(), &ys, LRHead::zeros(ms.ncols()), &tcfg)?;
        (None, t.head, t.loss_trace)
    };
    Ok(Fitted {
        checkpoint: Checkpoint {
            mode,
            config_hash: cfg.hash(),
            scaler,
            fusion,
            head,
        },
        loss_trace,
    })
}

/// Market vectors for rows `idx` under a fitted model.
pub fn market_vectors<T: Scalar>(ckpt: &Checkpoint<T>, ds: &Dataset<T>, idx: &[usize]) -> Result<Array2<T>> {
    let raw = raw_matrix(ds, idx, ckpt.mode);
    let xs = ckpt.scaler.transform_matrix(raw.view())?;
    match (ckpt.mode, &ckpt.fusion) {
        (ModelMode::Attention, Some((fcfg, params))) => {
            if fcfg.d_t != ds.d_t {
                return Err(Error::Compatibility(format!(
                    "checkpoint expects d_t = {}, dataset has {}",
                    fcfg.d_t, ds.d_t
                )));
            }
            let samples = attention_samples(ds, idx, &xs, fcfg.token_source);
            fuse_batch(&samples, params, fcfg)
        }
        (ModelMode::Attention, None) => Err(Error::Compatibility(
            "attention checkpoint without fusion parameters".into(),
        )),
        (ModelMode::Concat, _) => concat_matrix(ds, idx, &xs),
        _ => Ok(xs),
    }
}

pub fn predict_rows<T: Scalar>(ckpt: &Checkpoint<T>, ds: &Dataset<T>, idx: &[usize]) -> Result<Vec<Direction>> {
    let ms = market_vectors(ckpt, ds, idx)?;
    if ms.ncols() != ckpt.head.dim() {
        return Err(Error::Compatibility(format!(
            "head expects {} inputs, model produces {}",
            ckpt.head.dim(),
            ms.ncols()
        )));
    }
    predict_batch(&ckpt.head, ms.view())
}

/// Rows the `train` command fits on: the single fold's train rows for
/// random/time, every row for tss (each fold retrains during evaluation).
pub fn training_rows(cfg: &RunConfig, n: usize) -> Result<(Vec<usize>, u32)> {
    let plan = split_plan(cfg, n)?;
    Ok(match cfg.split.strategy {
        SplitStrategy::Tss => ((0..n).collect(), plan.folds.len() as u32),
        _ => (plan.folds[0].train.clone(), 0),
    })
}

/// One evaluation: the plan, the per-fold predictions and the metrics.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub plan: SplitPlan,
    pub predictions: Vec<Vec<Direction>>,
    pub metrics: MetricsReport,
}

/// Runs the configured split plan. Every tss fold retrains from scratch; a
/// random/time plan uses `checkpoint` when given, otherwise fits fold one.
pub fn evaluate<T: Scalar>(cfg: &RunConfig, ds: &Dataset<T>, checkpoint: Option<&Checkpoint<T>>) -> Result<Evaluation> {
    if let Some(c) = checkpoint {
        check_compatible(cfg, c)?;
    }
    let plan = split_plan(cfg, ds.len())?;
    let predictions: Vec<Vec<Direction>> = match (cfg.split.strategy, checkpoint) {
        (SplitStrategy::Tss, _) | (_, None) => plan
            .folds
            .par_iter()
            .enumerate()
            .map(|(f, fold)| {
                let fitted = fit(cfg, ds, &fold.train, f as u32)?;
                predict_rows(&fitted.checkpoint, ds, &fold.test)
            })
            .collect::<Result<_>>()?,
        (_, Some(c)) => vec![predict_rows(c, ds, &plan.folds[0].test)?],
    };
    let metrics = MetricsReport::build(&plan, &ds.dates(), &ds.labels(), &ds.returns(), &predictions)?;
    Ok(Evaluation {
        plan,
        predictions,
        metrics,
    })
}

pub fn check_compatible<T>(cfg: &RunConfig, ckpt: &Checkpoint<T>) -> Result<()> {
    if ckpt.config_hash != cfg.hash() {
        return Err(Error::Compatibility(format!(
            "checkpoint config hash {} does not match the current configuration {}",
            hex::encode(ckpt.config_hash),
            hex::encode(cfg.hash())
        )));
    }
    if ckpt.mode != cfg.model.mode {
        return Err(Error::Compatibility("checkpoint model mode differs from config".into()));
    }
    Ok(())
}

/// Where a report lands in the comparison tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableLabel {
    pub group: String,
    pub configuration: String,
}

impl TableLabel {
    pub fn for_config(cfg: &RunConfig) -> Self {
        let lr = if cfg.smote.enabled { "LR + SMOTE" } else { "LR" };
        let (group, configuration) = match cfg.model.mode {
            ModelMode::NumericBaseline => ("Numerical", lr.to_string()),
            ModelMode::SentimentBaseline => ("Sentiment score & Numerical", lr.to_string()),
            ModelMode::Concat => ("Concatenation", cfg.data.encoder_name.clone()),
            ModelMode::Attention => {
                let name = match cfg.fusion.token_source {
                    TokenSource::ArticleTokens => cfg.data.encoder_name.clone(),
                    TokenSource::PooledSingle => format!("{} (pooled)", cfg.data.encoder_name),
                };
                ("Attention", name)
            }
        };
        TableLabel {
            group: group.into(),
            configuration,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub strategy: SplitStrategy,
    pub folds: usize,
    pub seed: Option<u64>,
    pub k: Option<usize>,
}

impl From<&SplitPlan> for SplitSummary {
    fn from(p: &SplitPlan) -> Self {
        SplitSummary {
            strategy: p.strategy,
            folds: p.folds.len(),
            seed: p.seed,
            k: p.k,
        }
    }
}

/// The JSON report: provenance header plus metrics.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    /// `evaluate` or `score`.
    pub kind: &'static str,
    pub table: TableLabel,
    pub config: &'a RunConfig,
    pub config_hash: String,
    pub inputs: &'a InputHashes,
    pub dataset_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions_sha256: Option<String>,
    pub split: SplitSummary,
    pub metrics: &'a MetricsReport,
}

impl RunReport<'_> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Per-date predictions with the long-only backtest of each fold.
pub fn predictions_csv<T: Scalar>(ds: &Dataset<T>, eval: &Evaluation) -> Result<String> {
    let mut out = String::from("fold,date,prediction,label,position,return,strategy_return,equity\n");
    for (f, (fold, preds)) in eval.plan.folds.iter().zip(&eval.predictions).enumerate() {
        let dates: Vec<NaiveDate> = fold.test.iter().map(|&i| ds.rows[i].date).collect();
        let rets: Vec<T> = fold.test.iter().map(|&i| ds.rows[i].realized_return).collect();
        let bt = backtest(preds, &rets, &dates)?;
        for (j, &i) in fold.test.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                f + 1,
                bt.dates[j],
                dir_str(preds[j]),
                dir_str(ds.rows[i].label),
                u8::from(bt.positions[j]),
                bt.returns[j],
                bt.strategy_returns[j],
                bt.equity[j]
            )
            .expect("write to string");
        }
    }
    Ok(out)
}

fn dir_str(d: Direction) -> &'static str {
    if d.is_up() {
        "up"
    } else {
        "down"
    }
}

pub fn loss_trace_csv<T: Scalar>(trace: &[T]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        writeln!(out, "{e},{l}").expect("write to string");
    }
    out
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::from(e).in_file(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))
}

// File names inside the output directory.
pub const DATASET_FILE: &str = "dataset.json";
pub const QUALITY_FILE: &str = "quality.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Clone)]
pub struct PrepareOutcome {
    pub dataset_path: PathBuf,
    pub quality: QualityReport,
}

pub fn run_prepare(cfg: &RunConfig) -> Result<PrepareOutcome> {
    let bars = crate::ingest::load_ohlcv::<f64>(&cfg.paths.ohlcv)?;
    let (d_t, articles) = crate::textfeat::load_embeddings::<f64>(&cfg.paths.embeddings)?;
    let inputs = InputHashes::of_files(&cfg.paths.ohlcv, &cfg.paths.embeddings)?;
    let (ds, quality) = prepare(
        &bars,
        d_t,
        &articles,
        cfg.data.alignment,
        cfg.data.volatility_window,
        inputs,
    )?;
    ensure_dir(&cfg.paths.out_dir)?;
    let dataset_path = cfg.paths.out_dir.join(DATASET_FILE);
    write_file(&dataset_path, ds.to_json()?)?;
    write_file(
        &cfg.paths.out_dir.join(QUALITY_FILE),
        serde_json::to_string_pretty(&quality)? + "\n",
    )?;
    Ok(PrepareOutcome {
        dataset_path,
        quality,
    })
}

/// Loads a prepared dataset and checks it was built under `cfg`'s data settings.
pub fn load_dataset_for(cfg: &RunConfig, path: &Path) -> Result<Dataset<f64>> {
    let ds = Dataset::<f64>::load(path)?;
    if ds.alignment != cfg.data.alignment || ds.volatility_window != cfg.data.volatility_window {
        return Err(Error::Compatibility(format!(
            "{} was prepared with different alignment or volatility window",
            path.display()
        ))
        .in_file(path));
    }
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub epochs: usize,
    pub final_loss: f64,
    pub train_rows: usize,
}

pub fn run_train(cfg: &RunConfig, dataset: &Path) -> Result<TrainOutcome> {
    let ds = load_dataset_for(cfg, dataset)?;
    let (rows, counter) = training_rows(cfg, ds.len())?;
    let fitted = fit(cfg, &ds, &rows, counter)?;
    ensure_dir(&cfg.paths.out_dir)?;
    let checkpoint_path = cfg.paths.out_dir.join(CHECKPOINT_FILE);
    fitted.checkpoint.save(&checkpoint_path)?;
    write_file(&cfg.paths.out_dir.join(LOSS_TRACE_FILE), loss_trace_csv(&fitted.loss_trace))?;
    Ok(TrainOutcome {
        checkpoint_path,
        epochs: fitted.loss_trace.len().saturating_sub(1),
        final_loss: fitted.loss_trace.last().copied().unwrap_or(f64::NAN),
        train_rows: rows.len(),
    })
}

pub fn run_evaluate(cfg: &RunConfig, dataset: &Path, checkpoint: &Path) -> Result<MetricsReport> {
    let ckpt = Checkpoint::<f64>::load(checkpoint)?;
    check_compatible(cfg, &ckpt).map_err(|e| e.in_file(checkpoint))?;
    let ds = load_dataset_for(cfg, dataset)?;
    let eval = evaluate(cfg, &ds, Some(&ckpt))?;
    let report = RunReport {
        kind: "evaluate",
        table: TableLabel::for_config(cfg),
        config: cfg,
        config_hash: hex::encode(cfg.hash()),
        inputs: &ds.inputs,
        dataset_rows: ds.len(),
        predictions_sha256: None,
        split: SplitSummary::from(&eval.plan),
        metrics: &eval.metrics,
    };
    let json = report.to_json()?;
    ensure_dir(&cfg.paths.out_dir)?;
    write_file(&cfg.paths.out_dir.join(REPORT_FILE), &json)?;
    write_file(&cfg.paths.out_dir.join(PREDICTIONS_FILE), predictions_csv(&ds, &eval)?)?;
    write_tables(&cfg.paths.out_dir, &[serde_json::from_str(&json)?])?;
    Ok(eval.metrics)
}

/// Scores an external prediction file on the configured split's test dates.
/// `label` names the row in the prompting table.
pub fn run_score(cfg: &RunConfig, dataset: &Path, predictions: &Path, label: &str) -> Result<MetricsReport> {
    let ds = load_dataset_for(cfg, dataset)?;
    let file = fs::File::open(predictions).map_err(|e| Error::from(e).in_file(predictions))?;
    let preds = read_predictions(file).map_err(|e| e.in_file(predictions))?;
    let plan = split_plan(cfg, ds.len())?;
    let metrics = score_external_predictions(&preds, &plan, &ds.dates(), &ds.labels(), &ds.returns())
        .map_err(|e| e.in_file(predictions))?;
    let report = RunReport {
        kind: "score",
        table: TableLabel {
            group: "LLM".into(),
            configuration: label.to_string(),
        },
        config: cfg,
        config_hash: hex::encode(cfg.hash()),
        inputs: &ds.inputs,
        dataset_rows: ds.len(),
        predictions_sha256: Some(sha256_file(predictions)?),
        split: SplitSummary::from(&plan),
        metrics: &metrics,
    };
    let json = report.to_json()?;
    ensure_dir(&cfg.paths.out_dir)?;
    write_file(&cfg.paths.out_dir.join(format!("score_{label}.json")), &json)?;
    write_tables(&cfg.paths.out_dir, &[serde_json::from_str(&json)?])?;
    Ok(metrics)
}

/// Combines report files into the comparison tables.
pub fn run_report(reports: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Usage("no report files given".into()));
    }
    let values = reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::from(e).in_file(p))?;
            serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(p))
        })
        .collect::<Result<Vec<serde_json::Value>>>()?;
    ensure_dir(out_dir)?;
    write_tables(out_dir, &values)
}

pub const BASELINE_CLASSIFICATION: &str = "table_baselines_classification.csv";
pub const BASELINE_FINANCIAL: &str = "table_baselines_financial.csv";
pub const LLM_TABLE: &str = "table_llm.csv";
pub const FUSION_CLASSIFICATION: &str = "table_fusion_classification.csv";
pub const FUSION_FINANCIAL: &str = "table_fusion_financial.csv";

const GROUP_ORDER: [&str; 5] = [
    "Numerical",
    "Sentiment score & Numerical",
    "LLM",
    "Concatenation",
    "Attention",
];

const CLASSIFICATION_COLS: [(&str, &str); 4] = [
    ("accuracy", "accuracy"),
    ("precision", "precision"),
    ("recall", "recall"),
    ("f1", "f1_score"),
];

const FINANCIAL_COLS: [(&str, &str); 4] = [
    ("mcc", "mcc"),
    ("dwr", "directional_win_rate"),
    ("profit_factor", "profit_factor"),
    ("sharpe", "sharpe_ratio"),
];

struct TableRow<'a> {
    group: String,
    configuration: String,
    report: &'a serde_json::Value,
}

/// Headline value of one metric: the fold value for single-fold plans, the
/// across-fold mean otherwise.
fn headline(report: &serde_json::Value, metric: &str) -> String {
    let m = &report["metrics"];
    let single = m["folds"].as_array().is_some_and(|f| f.len() == 1);
    let v = if single {
        &m["folds"][0]["metrics"][metric]
    } else {
        &m["mean"][metric]["mean"]
    };
    match v {
        serde_json::Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        serde_json::Value::String(s) => s.clone(),
        _ => "NA".into(),
    }
}

fn table_csv(first_col: &str, rows: &[TableRow<'_>], cols: &[(&str, &str)], grouped: bool) -> String {
    let mut out = String::new();
    if grouped {
        write!(out, "{first_col},configuration").expect("write to string");
    } else {
        out.push_str(first_col);
    }
    for (_, header) in cols {
        write!(out, ",{header}").expect("write to string");
    }
    out.push('\n');
    for r in rows {
        if grouped {
            write!(out, "{},{}", csv_field(&r.group), csv_field(&r.configuration)).expect("write to string");
        } else {
            out.push_str(&csv_field(&r.configuration));
        }
        for (key, _) in cols {
            write!(out, ",{}", headline(r.report, key)).expect("write to string");
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes whichever comparison tables have rows; returns their paths.
pub fn write_tables(out_dir: &Path, reports: &[serde_json::Value]) -> Result<Vec<PathBuf>> {
    let mut rows: Vec<TableRow<'_>> = Vec::new();
    for r in reports {
        let group = r["table"]["group"]
            .as_str()
            .ok_or_else(|| Error::Schema("report lacks table.group".into()))?;
        let configuration = r["table"]["configuration"]
            .as_str()
            .ok_or_else(|| Error::Schema("report lacks table.configuration".into()))?;
        if !GROUP_ORDER.contains(&group) {
            return Err(Error::Schema(format!("unknown report group {group:?}")));
        }
        rows.push(TableRow {
            group: group.into(),
            configuration: configuration.into(),
            report: r,
        });
    }
    // stable: input order within a group
    rows.sort_by_key(|r| GROUP_ORDER.iter().position(|g| *g == r.group));

    let pick = |groups: &[&str]| -> Vec<TableRow<'_>> {
        rows.iter()
            .filter(|r| groups.contains(&r.group.as_str()))
            .map(|r| TableRow {
                group: r.group.clone(),
                configuration: r.configuration.clone(),
                report: r.report,
            })
            .collect()
    };
    let baselines = pick(&GROUP_ORDER[..2]);
    let llm = pick(&["LLM"]);
    let fusion = pick(&GROUP_ORDER[3..]);

    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, body)?;
        written.push(path);
        Ok(())
    };
    if !baselines.is_empty() {
        emit(BASELINE_CLASSIFICATION, table_csv("features", &baselines, &CLASSIFICATION_COLS, true))?;
        emit(BASELINE_FINANCIAL, table_csv("features", &baselines, &FINANCIAL_COLS, true))?;
    }
    if !llm.is_empty() {
        let cols: Vec<(&str, &str)> = CLASSIFICATION_COLS.iter().chain(&FINANCIAL_COLS).copied().collect();
        emit(LLM_TABLE, table_csv("prompting_paradigm", &llm, &cols, false))?;
    }
    if !fusion.is_empty() {
        emit(FUSION_CLASSIFICATION, table_csv("market_vector_generation", &fusion, &CLASSIFICATION_COLS, true))?;
        emit(FUSION_FINANCIAL, table_csv("market_vector_generation", &fusion, &FINANCIAL_COLS, true))?;
    }
    Ok(written)
}
