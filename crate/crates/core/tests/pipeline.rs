use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmfusion::checkpoint::Checkpoint;
use mmfusion::config::RunConfig;
use mmfusion::evaluation::read_predictions;
use mmfusion::features::FEATURE_NAMES;
use mmfusion::pipeline::{self, CHECKPOINT_FILE, DATASET_FILE, REPORT_FILE};
use mmfusion::{Dataset, Direction, Error, ErrorClass};
use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
const SMALL: &str = "[fusion]\nd_model = 8\nheads = 2\n\n[train]\nmax_epochs = 40\n";

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

/// Copies the fixture corpus into a fresh directory and writes `<mode>.toml` beside it.
fn workspace(mode: &str, extra: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    for f in ["bars.csv", "news.emb", "predictions.csv"] {
        fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    let cfg = write_cfg(dir.path(), mode, extra);
    (dir, cfg)
}

fn write_cfg(dir: &Path, mode: &str, extra: &str) -> PathBuf {
    let text = format!(
        "seed = 11\n\n[paths]\nohlcv = \"bars.csv\"\nembeddings = \"news.emb\"\nout_dir = \"out\"\n\n[model]\nmode = \"{mode}\"\n\n{extra}\n"
    );
    let path = dir.join(format!("{mode}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfusion"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepared(mode: &str, extra: &str) -> (TempDir, RunConfig) {
    let (dir, path) = workspace(mode, extra);
    let cfg = RunConfig::load(&path).unwrap();
    pipeline::run_prepare(&cfg).unwrap();
    (dir, cfg)
}

#[test]
fn fixtures_round_trip() {
    let bars = mmfusion::ingest::load_ohlcv::<f64>(fixture("bars.csv")).unwrap();
    assert_eq!(bars.len(), 40);
    assert!(bars.windows(2).all(|w| w[0].date < w[1].date));

    let (d_t, articles) = mmfusion::textfeat::load_embeddings::<f64>(fixture("news.emb")).unwrap();
    assert_eq!(d_t, 4);
    assert!(!articles.is_empty());
    assert!(articles.iter().all(|a| a.vector.len() == 4));

    let preds = read_predictions(fs::File::open(fixture("predictions.csv")).unwrap()).unwrap();
    assert_eq!(preds.len(), 40);
    assert!(preds.keys().zip(&bars).all(|(d, b)| *d == b.date));
}

#[test]
fn prepare_is_byte_identical_across_runs() {
    let (dir, cfg) = workspace("concat", "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["prepare", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["prepare", "--config", s(&cfg), "--out", s(&b)]);
    for f in [DATASET_FILE, pipeline::QUALITY_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ds = Dataset::load(a.join(DATASET_FILE)).unwrap();
    assert_eq!(ds.feature_names, FEATURE_NAMES);
    assert_eq!(ds.d_t, 4);
}

#[test]
fn prepare_without_overlapping_news_exits_with_data_code() {
    let (dir, cfg) = workspace("concat", "");
    fs::write(
        dir.path().join("news.emb"),
        "#dim=2\n2030-01-02,x,0.1,1 2\n2030-01-03,y,0.2,3 4\n",
    )
    .unwrap();
    let out = cli(&["prepare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(ErrorClass::Data.exit_code()));
}

#[test]
fn unknown_config_key_is_a_schema_error() {
    let (_dir, cfg) = workspace("concat", "[train]\nlearning_rte = 0.1\n");
    let out = cli(&["prepare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn numeric_baseline_checkpoint_has_no_fusion() {
    let (_dir, cfg) = prepared("numeric_baseline", "");
    let outcome = pipeline::run_train(&cfg, &cfg.paths.out_dir.join(DATASET_FILE)).unwrap();
    let ckpt = Checkpoint::<f64>::load(&outcome.checkpoint_path).unwrap();
    assert!(ckpt.fusion.is_none());
    assert_eq!(ckpt.head.w.len(), FEATURE_NAMES.len());
    assert_eq!(ckpt.config_hash, cfg.hash());
    assert!(cfg.paths.out_dir.join(pipeline::LOSS_TRACE_FILE).is_file());
}

#[test]
fn attention_checkpoint_is_reproducible() {
    let (dir, cfg) = workspace("attention", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["prepare", "--config", s(&cfg), "--out", s(out)]);
        ok(&["train", "--config", s(&cfg), "--out", s(out)]);
    }
    let bytes = fs::read(a.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(bytes, fs::read(b.join(CHECKPOINT_FILE)).unwrap());
    let ckpt = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    let (fcfg, params) = ckpt.fusion.expect("attention checkpoint carries fusion weights");
    assert_eq!(fcfg.heads, 2);
    assert_eq!(params.heads.len(), 2);
}

#[test]
fn evaluate_and_report_over_five_folds() {
    let (dir, cfg) = workspace("concat", "");
    ok(&["prepare", "--config", s(&cfg)]);
    ok(&["train", "--config", s(&cfg)]);
    ok(&["evaluate", "--config", s(&cfg)]);

    let out = dir.path().join("out");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["metrics"]["folds"].as_array().unwrap().len(), 5);
    assert_eq!(report["table"]["group"], "Concatenation");
    assert!(report["config"]["paths"].get("out_dir").is_none());
    assert!(out.join(pipeline::PREDICTIONS_FILE).is_file());

    ok(&["score", "--config", s(&cfg), "--predictions", s(&dir.path().join("predictions.csv")), "--label", "coin"]);
    let tables = dir.path().join("tables");
    ok(&[
        "report",
        s(&out.join(REPORT_FILE)),
        s(&out.join("score_coin.json")),
        "--out",
        s(&tables),
    ]);
    let fusion = fs::read_to_string(tables.join(pipeline::FUSION_CLASSIFICATION)).unwrap();
    assert!(fusion.lines().any(|l| l.starts_with("Concatenation")), "{fusion}");
    let llm = fs::read_to_string(tables.join(pipeline::LLM_TABLE)).unwrap();
    assert!(llm.contains("coin"), "{llm}");
}

#[test]
fn evaluate_rejects_checkpoint_from_other_config() {
    let (dir, cfg) = workspace("concat", "");
    ok(&["prepare", "--config", s(&cfg)]);
    ok(&["train", "--config", s(&cfg)]);
    let other = write_cfg(dir.path(), "concat", "[train]\nmax_epochs = 7\n");
    let out = cli(&["evaluate", "--config", s(&other)]);
    assert_eq!(out.status.code(), Some(ErrorClass::Compatibility.exit_code()));
}

#[test]
fn feature_order_is_part_of_compatibility() {
    let (_dir, cfg) = prepared("numeric_baseline", "");
    pipeline::run_train(&cfg, &cfg.paths.out_dir.join(DATASET_FILE)).unwrap();
    let mut ckpt = Checkpoint::<f64>::load(cfg.paths.out_dir.join(CHECKPOINT_FILE)).unwrap();
    pipeline::check_compatible(&cfg, &ckpt).unwrap();

    let mut swapped = FEATURE_NAMES;
    swapped.swap(1, 2);
    ckpt.config_hash = cfg.hash_with_features(&swapped);
    let err = pipeline::check_compatible(&cfg, &ckpt).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Compatibility);
}

#[test]
fn perfect_predictions_score_one() {
    let (dir, cfg) = prepared("concat", "");
    let dataset = cfg.paths.out_dir.join(DATASET_FILE);
    let ds = Dataset::load(&dataset).unwrap();
    let mut text = String::from("date,prediction\n");
    for (d, y) in ds.dates().iter().zip(ds.labels()) {
        text += &format!("{d},{}\n", if y == Direction::Up { "up" } else { "down" });
    }
    let file = dir.path().join("perfect.csv");
    fs::write(&file, text).unwrap();
    let metrics = pipeline::run_score(&cfg, &dataset, &file, "perfect").unwrap();
    assert_eq!(metrics.mean_of("accuracy"), Some(1.0));
    assert_eq!(metrics.folds.len(), 5);
}

#[test]
fn bad_prediction_label_reports_its_line() {
    let (dir, cfg) = prepared("concat", "");
    let file = dir.path().join("bad.csv");
    fs::write(&file, "date,prediction\n2021-03-01,up\n2021-03-02,sideways\n").unwrap();
    let err = pipeline::run_score(&cfg, &cfg.paths.out_dir.join(DATASET_FILE), &file, "bad").unwrap_err();
    match err.root() {
        Error::Row { line, .. } => assert_eq!(*line, 3),
        other => panic!("expected a row error, got {other}"),
    }

    let cfg_path = dir.path().join("concat.toml");
    let out = cli(&["score", "--config", s(&cfg_path), "--predictions", s(&file)]);
    assert_eq!(out.status.code(), Some(10));
}

#[test]
fn missing_prediction_dates_are_named() {
    let (dir, cfg) = prepared("concat", "");
    let dataset = cfg.paths.out_dir.join(DATASET_FILE);
    let ds = Dataset::load(&dataset).unwrap();
    let dropped = *ds.dates().last().unwrap();
    let full = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let text: String = full
        .lines()
        .filter(|l| !l.starts_with(&dropped.to_string()))
        .map(|l| format!("{l}\n"))
        .collect();
    let file = dir.path().join("partial.csv");
    fs::write(&file, text).unwrap();
    let err = pipeline::run_score(&cfg, &dataset, &file, "partial").unwrap_err();
    match err.root() {
        Error::Coverage(dates) => assert_eq!(dates, &vec![dropped]),
        other => panic!("expected a coverage error, got {other}"),
    }
    assert_eq!(err.class(), ErrorClass::Data);
}
