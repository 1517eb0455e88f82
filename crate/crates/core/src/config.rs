//! Run configuration: one TOML file with sections, unknown keys rejected.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! ohlcv = "bars.csv"
//! embeddings = "minilm.emb"
//! out_dir = "out"
//!
//! [data]
//! alignment = "strict"        # strict | lenient
//! volatility_window = 5
//! encoder_name = "MiniLM"
//!
//! [model]
//! mode = "attention"          # numeric_baseline | sentiment_baseline | concat | attention
//!
//! [fusion]
//! d_model = 64
//! heads = 4
//! dropout = 0.1
//! token_source = "article_tokens"
//!
//! [train]
//! learning_rate = 0.05
//! l2_lambda = 1e-4
//! max_epochs = 500
//! tolerance = 1e-7
//!
//! [smote]
//! enabled = false
//! k_neighbors = 5
//!
//! [split]
//! strategy = "tss"            # random | time | tss
//! folds = 5
//! ratio = 0.8
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::SplitStrategy;
use crate::features::FEATURE_NAMES;
use crate::fusion::{FusionConfig, FusionMode, TokenSource};
use crate::ingest::AlignMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Market numerics only; the two sentiment columns are zeroed.
    NumericBaseline,
    /// All eight numeric features including the sentiment aggregates.
    SentimentBaseline,
    /// Scaled numerics concatenated with the prior-day mean embedding.
    Concat,
    /// Cross-modal attention fusion trained jointly with the head.
    Attention,
}

impl ModelMode {
    pub fn tag(self) -> u8 {
        match self {
            ModelMode::NumericBaseline => 0,
            ModelMode::SentimentBaseline => 1,
            ModelMode::Concat => 2,
            ModelMode::Attention => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ModelMode::NumericBaseline,
            1 => ModelMode::SentimentBaseline,
            2 => ModelMode::Concat,
            3 => ModelMode::Attention,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub ohlcv: PathBuf,
    pub embeddings: PathBuf,
    /// Where outputs go; not echoed into reports.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub alignment: AlignMode,
    pub volatility_window: usize,
    /// Label used for the encoder in report tables.
    pub encoder_name: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            alignment: AlignMode::Strict,
            volatility_window: 5,
            encoder_name: "encoder".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mode: ModelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub d_model: usize,
    pub heads: usize,
    /// Defaults to `d_model`.
    pub d_out: Option<usize>,
    pub dropout: f64,
    pub token_source: TokenSource,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            d_model: 64,
            heads: 4,
            d_out: None,
            dropout: 0.1,
            token_source: TokenSource::ArticleTokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            l2_lambda: d.l2_lambda,
            max_epochs: d.max_epochs,
            tolerance: d.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteSection {
    pub enabled: bool,
    pub k_neighbors: usize,
}

impl Default for SmoteSection {
    fn default() -> Self {
        SmoteSection {
            enabled: false,
            k_neighbors: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub strategy: SplitStrategy,
    /// Fold count for `tss`.
    pub folds: usize,
    /// Train share for `random` and `time`.
    pub ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            strategy: SplitStrategy::Tss,
            folds: 5,
            ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub smote: SmoteSection,
    #[serde(default)]
    pub split: SplitSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))
    }

    /// Reads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.in_file(path))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.ohlcv,
            &mut self.paths.embeddings,
            &mut self.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Range checks plus existence of the input files.
    pub fn validate(&self) -> Result<()> {
        self.validate_params()?;
        for p in [&self.paths.ohlcv, &self.paths.embeddings] {
            if !p.is_file() {
                return Err(Error::Validation(format!(
                    "input file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn validate_params(&self) -> Result<()> {
        if self.data.volatility_window < 2 {
            return Err(Error::Validation("volatility_window must be at least 2".into()));
        }
        self.train_config(0).validate()?;
        if self.smote.enabled {
            if self.smote.k_neighbors == 0 {
                return Err(Error::Validation("smote.k_neighbors must be at least 1".into()));
            }
            if self.model.mode == ModelMode::Attention {
                return Err(Error::Validation(
                    "smote is not defined for attention mode (variable token sets)".into(),
                ));
            }
        }
        match self.split.strategy {
            SplitStrategy::Tss if self.split.folds == 0 => {
                return Err(Error::Validation("split.folds must be at least 1".into()))
            }
            SplitStrategy::Random | SplitStrategy::Time
                if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) =>
            {
                return Err(Error::Validation("split.ratio must lie in (0, 1)".into()))
            }
            _ => {}
        }
        if self.model.mode == ModelMode::Attention {
            self.fusion_config(1, 0).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, dropout_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            l2_lambda: self.train.l2_lambda,
            max_epochs: self.train.max_epochs,
            tolerance: self.train.tolerance,
            seed: dropout_seed,
        }
    }

    /// Attention fusion config for text dimension `d_t`.
    pub fn fusion_config(&self, d_t: usize, init_seed: u64) -> FusionConfig {
        FusionConfig {
            d_n: FEATURE_NAMES.len(),
            d_t,
            d_model: self.fusion.d_model,
            heads: self.fusion.heads,
            d_out: self.fusion.d_out.unwrap_or(self.fusion.d_model),
            dropout_p: self.fusion.dropout,
            mode: FusionMode::Attention,
            token_source: self.fusion.token_source,
            seed: init_seed,
        }
    }

    /// Hash binding a checkpoint to the configuration and feature order that
    /// produced it. Paths are excluded.
    pub fn hash(&self) -> [u8; 32] {
        self.hash_with_features(&FEATURE_NAMES)
    }

    pub fn hash_with_features(&self, features: &[&str]) -> [u8; 32] {
        #[derive(Serialize)]
        struct Key<'a> {
            features: &'a [&'a str],
            seed: u64,
            data: &'a DataSection,
            model: &'a ModelSection,
            fusion: &'a FusionSection,
            train: &'a TrainSection,
            smote: &'a SmoteSection,
            split: &'a SplitSection,
        }
        let key = Key {
            features,
            seed: self.seed,
            data: &self.data,
            model: &self.model,
            fusion: &self.fusion,
            train: &self.train,
            smote: &self.smote,
            split: &self.split,
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        Sha256::digest(&bytes).into()
    }
}
