use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmfusion::config::RunConfig;
use mmfusion::pipeline::{self, CHECKPOINT_FILE, DATASET_FILE};
use mmfusion::Result;

#[derive(Parser)]
#[command(name = "mmfusion", version, about = "Daily stock-movement classification from market data and news embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the aligned dataset and a data-quality report.
    Prepare(Common),
    /// Train the configured model and write a checkpoint plus loss trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Prepared dataset; defaults to <out>/dataset.json.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate under the configured split and write JSON and CSV reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score an external `date,prediction` file on the split's test dates.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        predictions: PathBuf,
        /// Row label in the prompting table; defaults to the file stem.
        #[arg(long)]
        label: Option<String>,
    },
    /// Combine report files into comparison tables.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(common) => {
            let cfg = load_config(&common)?;
            let out = pipeline::run_prepare(&cfg)?;
            let q = &out.quality;
            println!(
                "prepared {} rows ({} dropped, {} without news, {} anomalies) -> {}",
                q.aligned_rows,
                q.dropped_dates.len(),
                q.no_news_rows,
                q.anomalies.len(),
                out.dataset_path.display()
            );
            for a in &q.anomalies {
                eprintln!("warning: {}: {}", a.date, a.message);
            }
        }
        Command::Train { common, dataset } => {
            let cfg = load_config(&common)?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.out_dir.join(DATASET_FILE));
            let out = pipeline::run_train(&cfg, &dataset)?;
            println!(
                "trained on {} rows, {} epochs, final loss {:.6} -> {}",
                out.train_rows,
                out.epochs,
                out.final_loss,
                out.checkpoint_path.display()
            );
        }
        Command::Evaluate {
            common,
            dataset,
            checkpoint,
        } => {
            let cfg = load_config(&common)?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.out_dir.join(DATASET_FILE));
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.paths.out_dir.join(CHECKPOINT_FILE));
            let report = pipeline::run_evaluate(&cfg, &dataset, &checkpoint)?;
            print_summary(&report);
        }
        Command::Score {
            common,
            dataset,
            predictions,
            label,
        } => {
            let cfg = load_config(&common)?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.out_dir.join(DATASET_FILE));
            let label = label.unwrap_or_else(|| {
                predictions
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "predictions".into())
            });
            let report = pipeline::run_score(&cfg, &dataset, &predictions, &label)?;
            print_summary(&report);
        }
        Command::Report { reports, out } => {
            for p in pipeline::run_report(&reports, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn print_summary(report: &mmfusion::evaluation::MetricsReport) {
    println!("{} fold(s)", report.folds.len());
    for (name, s) in &report.mean {
        match s.mean {
            Some(v) => println!("  {name:<14} {v:.4}  (skipped {})", s.skipped),
            None => println!("  {name:<14} NA"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
