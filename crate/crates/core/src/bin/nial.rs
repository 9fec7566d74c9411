//! `nial` command-line interface.
//!
//! On failure the last line on stderr is `error: <category>: <message>` and
//! the exit code is nonzero (2 for usage errors, 1 otherwise).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nial_core::data::{load_csv, SynthSpec};
use nial_core::model;
use nial_core::runner::{self, Preprocess, TrainConfig};
use nial_core::{NialError, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "nial",
    version,
    about = "CNN + self-attention ECG beat classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PreprocessArg {
    None,
    Minmax,
    Standardize,
    MinmaxStandardize,
}

impl From<PreprocessArg> for Preprocess {
    fn from(p: PreprocessArg) -> Self {
        let (minmax, standardize) = match p {
            PreprocessArg::None => (false, false),
            PreprocessArg::Minmax => (true, false),
            PreprocessArg::Standardize => (false, true),
            PreprocessArg::MinmaxStandardize => (true, true),
        };
        Preprocess {
            minmax,
            standardize,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes epochs.csv, best.nial and final.nial to output.dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set train.lr=0.01 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on a labelled CSV; prints a JSON report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-row preprocessing; must match what training used.
        #[arg(long, value_enum, default_value = "minmax")]
        preprocess: PreprocessArg,
    },
    /// Compare the plateau scheduler with a static learning rate.
    BenchmarkLr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        loss_threshold: f64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic labelled dataset as CSV.
    GenSynth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        len: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report")
}

/// Prints a report; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(NialError::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, set } => {
            let cfg = TrainConfig::from_file(&config, &set)?;
            let out = runner::train(&cfg)?;
            let last = out.records.last();
            emit(&to_json(&json!({
                    "epochs_run": out.records.len(),
                    "stopped_early": out.stopped_early,
                    "best_epoch": out.best_epoch,
                    "final_lr": last.map(|r| r.lr),
                    "final_val_loss": last.map(|r| r.val_loss),
                    "final_val_accuracy": last.map(|r| r.val_accuracy),
                    "final_val_f1": last.map(|r| r.val_f1),
                    "test": out.test,
                    "output_dir": cfg.output_dir,
            })))?;
        }
        Command::Evaluate {
            checkpoint,
            data,
            preprocess,
        } => {
            let model = model::load(&checkpoint)?;
            let ds = load_csv(&data, None)?;
            let ds = Preprocess::from(preprocess).apply(&ds);
            emit(&to_json(&runner::evaluate(&model, &ds)?))?;
        }
        Command::BenchmarkLr {
            config,
            loss_threshold,
            set,
            out,
        } => {
            let cfg = TrainConfig::from_file(&config, &set)?;
            let report = runner::benchmark_lr(&cfg, loss_threshold)?;
            let text = to_json(&report);
            if let Some(path) = out {
                std::fs::write(&path, format!("{text}\n")).map_err(|e| NialError::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            emit(&text)?;
        }
        Command::GenSynth {
            classes,
            per_class,
            len,
            noise,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                n_classes: classes,
                n_per_class: per_class,
                len,
                noise_sigma: noise,
                seed,
            };
            let ds = runner::gen_synth(&spec, &out)?;
            eprintln!("wrote {} rows to {}", ds.num_samples(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let summary: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                .collect();
            eprintln!("{}", msg.trim_end());
            eprintln!(
                "error: usage: {}",
                summary.join(" ").trim_start_matches("error: ")
            );
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: {}: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::FAILURE
        }
    }
}
