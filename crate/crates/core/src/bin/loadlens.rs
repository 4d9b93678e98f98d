use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loadlens::pipeline::{FeatureSet, Overrides, Pipeline, PipelineError, Scope};

#[derive(Parser)]
#[command(name = "loadlens", version, about = "Explainable hourly load forecasting")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "loadlens.toml")]
    config: PathBuf,
    /// Output directory; defaults to `out/` next to the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Permit spike features that read load at the prediction hour.
    #[arg(long, global = true)]
    allow_leakage: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read, fill and align the inputs; write dataset.csv and ingest_report.json.
    Ingest,
    /// Build a feature matrix and write it as CSV.
    Features {
        #[arg(long, default_value = "baseline")]
        set: FeatureSet,
    },
    /// Train the configured model family.
    Train {
        #[arg(long, default_value = "baseline")]
        set: FeatureSet,
    },
    /// Re-score a run from its saved model.
    Evaluate {
        #[arg(long)]
        run: String,
    },
    /// Shapley attributions for a run: global, peak or window:NAME.
    Explain {
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "global")]
        scope: Scope,
    },
    /// Baseline, explain, inject candidates, retrain, explain, ablate.
    Refine,
    /// Comparison table and forecast plots; every run when none are named.
    Report {
        #[arg(long, num_args = 1..)]
        runs: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let overrides = Overrides { seed: cli.seed, allow_leakage: cli.allow_leakage, out: cli.out };
    let p = Pipeline::open(&cli.config, overrides)?;
    match cli.command {
        Command::Ingest => {
            let report = p.ingest()?;
            println!(
                "{} rows from {} to {}; {} duplicate rows collapsed",
                report.rows,
                report.start.map(|t| t.to_string()).unwrap_or_default(),
                report.end.map(|t| t.to_string()).unwrap_or_default(),
                report.duplicates_collapsed
            );
            for s in &report.inputs {
                println!(
                    "  {:<24} observed {:>6}  interpolated {:>4}  forward-filled {:>4}",
                    s.name, s.counts.observed, s.counts.interpolated, s.counts.forward_filled
                );
            }
        }
        Command::Features { set } => {
            let m = p.features(set)?;
            println!("{} rows x {} features (warm-up {})", m.n_rows(), m.n_features(), m.warmup);
        }
        Command::Train { set } => {
            let r = p.train(set)?;
            println!("{}", r.run_id);
        }
        Command::Evaluate { run } => {
            let m = p.evaluate(&run)?;
            println!(
                "rmse {:.3}  mae {:.3}  mape {:.3}%  peak_mape {:.3}%",
                m.test.rmse, m.test.mae, m.test.mape, m.test.peak_mape
            );
        }
        Command::Explain { run, scope } => {
            let r = p.explain(&run, &scope)?;
            println!("{} rows; top features:", r.n_rows);
            for (i, name) in r.top(10).iter().enumerate() {
                println!("  {:>2}. {:<28} {:.4}", i + 1, name, r.mean_abs_phi[name]);
            }
        }
        Command::Refine => {
            let r = p.refine()?;
            print!("{}", std::fs::read_to_string(p.out_dir().join("refine/report.txt")).unwrap_or_default());
            println!("before {}  after {}", r.before.run_id, r.after.run_id);
        }
        Command::Report { runs } => {
            let r = p.report(&runs)?;
            print!("{}", loadlens::eval::comparison_text(&r.rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
