//! Shared test helpers: independent reference implementations written with
//! plain loops over `Vec<f64>`, and a synthetic market/news corpus writer.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmfusion::fusion::{FusionConfig, FusionParams};

// ---------------------------------------------------------------------------
// attention forward, loop form

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn vec_mat(v: &[f64], m: &Mat) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for c in 0..cols {
        let mut s = 0.0;
        for (r, &vr) in v.iter().enumerate() {
            s += vr * m[r][c];
        }
        out[c] = s;
    }
    out
}

fn layer_norm(u: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = u.len() as f64;
    let mu = u.iter().sum::<f64>() / d;
    let var = u.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let denom = (var + 1e-5).sqrt();
    (0..u.len()).map(|i| (u[i] - mu) / denom * gain[i] + bias[i]).collect()
}

pub struct OracleOut {
    pub m: Vec<f64>,
    /// Per head, weight per token.
    pub weights: Vec<Vec<f64>>,
    /// Per head, per token value vector.
    pub values: Vec<Mat>,
    pub attended: Vec<f64>,
}

/// Inference-mode attention fusion computed entry by entry.
pub fn attention_oracle(x: &[f64], tokens: &Mat, p: &FusionParams<f64>, cfg: &FusionConfig) -> OracleOut {
    let dk = cfg.d_model / cfg.heads;
    let xl = layer_norm(&vec_mat(x, &to_mat(&p.w_x)), &p.ln_x_gain.to_vec(), &p.ln_x_bias.to_vec());
    let w_y = to_mat(&p.w_y);
    let yl: Mat = tokens
        .iter()
        .map(|t| layer_norm(&vec_mat(t, &w_y), &p.ln_y_gain.to_vec(), &p.ln_y_bias.to_vec()))
        .collect();
    let mut attended = Vec::new();
    let mut weights = Vec::new();
    let mut values = Vec::new();
    for hp in &p.heads {
        let q = vec_mat(&xl, &to_mat(&hp.w_q));
        let ks: Mat = yl.iter().map(|y| vec_mat(y, &to_mat(&hp.w_k))).collect();
        let vs: Mat = yl.iter().map(|y| vec_mat(y, &to_mat(&hp.w_v))).collect();
        let logits: Vec<f64> = ks
            .iter()
            .map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        let w: Vec<f64> = ex.iter().map(|e| e / z).collect();
        for c in 0..dk {
            attended.push((0..vs.len()).map(|j| w[j] * vs[j][c]).sum());
        }
        weights.push(w);
        values.push(vs);
    }
    let mut cat = xl.clone();
    cat.extend_from_slice(&attended);
    OracleOut {
        m: vec_mat(&cat, &to_mat(&p.w_f)),
        weights,
        values,
        attended,
    }
}

// ---------------------------------------------------------------------------
// trading metrics, brute force

/// `None` = absent, `Some(inf)` = positive infinity marker.
pub fn dwr_ref(p: &[bool], r: &[f64]) -> Option<f64> {
    let mut longs = 0usize;
    let mut wins = 0usize;
    for t in 0..p.len() {
        if p[t] {
            longs += 1;
            if r[t] > 0.0 {
                wins += 1;
            }
        }
    }
    if longs == 0 {
        None
    } else {
        Some(wins as f64 / longs as f64)
    }
}

pub fn profit_factor_ref(p: &[bool], r: &[f64]) -> Option<f64> {
    let mut gain = 0.0;
    let mut loss = 0.0;
    for t in 0..p.len() {
        let s = if p[t] { r[t] } else { 0.0 };
        if s > 0.0 {
            gain += s;
        } else if s < 0.0 {
            loss -= s;
        }
    }
    if loss == 0.0 {
        if gain > 0.0 {
            Some(f64::INFINITY)
        } else {
            None
        }
    } else {
        Some(gain / loss)
    }
}

pub fn sharpe_ref(p: &[bool], r: &[f64]) -> Option<f64> {
    let n = p.len() as f64;
    let s: Vec<f64> = (0..p.len()).map(|t| if p[t] { r[t] } else { 0.0 }).collect();
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        None
    } else {
        Some(mean / var.sqrt())
    }
}

pub fn mcc_ref(p: &[bool], r: &[f64]) -> f64 {
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for t in 0..p.len() {
        match (p[t], r[t] > 0.0) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

/// Metric to the same `Option<f64>` encoding as the references.
pub fn metric_opt(m: mmfusion::evaluation::Metric<f64>) -> Option<f64> {
    use mmfusion::evaluation::Metric;
    match m {
        Metric::Value(v) => Some(v),
        Metric::PosInfinity => Some(f64::INFINITY),
        Metric::Absent(_) => None,
    }
}

pub fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) if x.is_infinite() || y.is_infinite() => x == y,
        (Some(x), Some(y)) => (x - y).abs() < tol,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// synthetic corpora

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    /// Every article of a day leans along a hidden direction; the next day's
    /// overnight move is the sign of that direction's projection of the
    /// day's mean embedding, plus noise.
    Dense,
    /// One article per day carries a marker and the signal; the others are
    /// loud noise that swamps the daily mean.
    Minority,
    /// Embeddings carry no information about the label.
    None,
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub days: usize,
    pub d_t: usize,
    pub articles_per_day: usize,
    pub signal: Signal,
    pub seed: u64,
}

pub struct Corpus {
    pub ohlcv: PathBuf,
    pub embeddings: PathBuf,
}

pub fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Writes `bars.csv` and `news.emb` into `dir`.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dates = trading_days(NaiveDate::from_ymd_opt(2019, 1, 2).unwrap(), spec.days);
    let u: Vec<f64> = (0..spec.d_t).map(|_| normal(&mut rng)).collect();
    let u_norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = u.iter().map(|v| v / u_norm).collect();

    let mut emb = format!("#dim={}\n", spec.d_t);
    // direction of the overnight move into day t+1, decided by day t's news
    let mut next_up = Vec::with_capacity(spec.days);
    for (t, date) in dates.iter().enumerate() {
        let latent = normal(&mut rng);
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let signal_slot = rng.gen_range(0..spec.articles_per_day);
        for a in 0..spec.articles_per_day {
            let v: Vec<f64> = match spec.signal {
                Signal::Dense => (0..spec.d_t).map(|i| latent * u[i] + 0.5 * normal(&mut rng)).collect(),
                Signal::None => (0..spec.d_t).map(|_| normal(&mut rng)).collect(),
                Signal::Minority => {
                    let mut v: Vec<f64> = (0..spec.d_t).map(|_| 0.3 * normal(&mut rng)).collect();
                    if a == signal_slot {
                        v[0] = 3.0;
                        v[1] = 2.0 * latent.signum() + 0.2 * normal(&mut rng);
                    } else {
                        v[0] = -1.0;
                        v[1] = 3.0 * normal(&mut rng);
                    }
                    v
                }
            };
            vectors.push(v);
        }
        let up = match spec.signal {
            Signal::Dense => {
                let mean: Vec<f64> = (0..spec.d_t)
                    .map(|i| vectors.iter().map(|v| v[i]).sum::<f64>() / vectors.len() as f64)
                    .collect();
                let proj: f64 = mean.iter().zip(&u).map(|(a, b)| a * b).sum();
                proj + 0.1 * normal(&mut rng) > 0.0
            }
            Signal::Minority => latent > 0.0,
            Signal::None => rng.gen_bool(0.5),
        };
        next_up.push(up);
        for (a, v) in vectors.iter().enumerate() {
            let sentiment: f64 = rng.gen_range(-1.0..1.0);
            let comps: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            writeln!(emb, "{},a{t}_{a},{sentiment:.4},{}", date, comps.join(" ")).unwrap();
        }
    }

    let mut csv = String::from("date,open,high,low,close,volume\n");
    let mut prev_close = 100.0f64;
    for (t, date) in dates.iter().enumerate() {
        let open = if t == 0 {
            prev_close
        } else {
            let gap = 0.001 * (1.0 + rng.gen::<f64>());
            if next_up[t - 1] {
                prev_close * (1.0 + gap)
            } else {
                prev_close * (1.0 - gap)
            }
        };
        let close = open * (1.0 + 0.02 * normal(&mut rng));
        let high = open.max(close) * (1.0 + 0.005 * rng.gen::<f64>());
        let low = open.min(close) * (1.0 - 0.005 * rng.gen::<f64>());
        let volume = 1.0e6 * (1.0 + rng.gen::<f64>());
        writeln!(csv, "{date},{open:.6},{high:.6},{low:.6},{close:.6},{volume:.0}").unwrap();
        prev_close = close;
    }

    let ohlcv = dir.join("bars.csv");
    let embeddings = dir.join("news.emb");
    std::fs::write(&ohlcv, csv).unwrap();
    std::fs::write(&embeddings, emb).unwrap();
    Corpus { ohlcv, embeddings }
}

/// A config file next to the corpus; `extra` is appended verbatim.
pub fn write_config(dir: &Path, corpus: &Corpus, seed: u64, mode: &str, extra: &str) -> PathBuf {
    let text = format!(
        "seed = {seed}\n\n[paths]\nohlcv = {:?}\nembeddings = {:?}\nout_dir = \"out\"\n\n[model]\nmode = \"{mode}\"\n\n{extra}\n",
        corpus.ohlcv.file_name().unwrap().to_str().unwrap(),
        corpus.embeddings.file_name().unwrap().to_str().unwrap(),
    );
    let path = dir.join(format!("{mode}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}
