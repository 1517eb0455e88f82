use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Random,
    Time,
    Tss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: SplitStrategy,
    pub folds: Vec<Fold>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
}

const MIN_SAMPLES: usize = 5;

fn train_count(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("train ratio {ratio} outside (0, 1)")));
    }
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: n,
            context: "train/test split",
        });
    }
    // small slack so 0.8 * 10 is 8, not 9
    let k = (ratio * n as f64 - 1e-9).ceil() as usize;
    if k == 0 || k >= n {
        return Err(Error::Validation(format!(
            "ratio {ratio} leaves an empty side for n = {n}"
        )));
    }
    Ok(k)
}

/// Seeded shuffle; the first `ceil(ratio * n)` shuffled indices train.
/// Both index lists are returned sorted.
pub fn random_split(n: usize, ratio: f64, seed: u64) -> Result<SplitPlan> {
    let k = train_count(n, ratio)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..k].to_vec();
    let mut test = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        strategy: SplitStrategy::Random,
        folds: vec![Fold { train, test }],
        seed: Some(seed),
        k: None,
    })
}

/// Earliest `ceil(ratio * n)` samples train, the rest test.
pub fn time_split(n: usize, ratio: f64) -> Result<SplitPlan> {
    let k = train_count(n, ratio)?;
    Ok(SplitPlan {
        strategy: SplitStrategy::Time,
        folds: vec![Fold {
            train: (0..k).collect(),
            test: (k..n).collect(),
        }],
        seed: None,
        k: None,
    })
}

/// Expanding-window splits: `test_size = floor(n / (k + 1))`; fold `j`
/// tests `[n - (k-j+1) s, n - (k-j) s)` after training on everything before it.
pub fn tss_splits(n: usize, k: usize) -> Result<SplitPlan> {
    if k == 0 {
        return Err(Error::Validation("tss needs at least one fold".into()));
    }
    let needed = 2 * (k + 1);
    if n < needed {
        return Err(Error::InsufficientData {
            needed,
            got: n,
            context: "time-series split",
        });
    }
    let size = n / (k + 1);
    let folds = (1..=k)
        .map(|j| {
            let start = n - (k - j + 1) * size;
            let end = n - (k - j) * size;
            Fold {
                train: (0..start).collect(),
                test: (start..end).collect(),
            }
        })
        .collect();
    Ok(SplitPlan {
        strategy: SplitStrategy::Tss,
        folds,
        seed: None,
        k: Some(k),
    })
}
