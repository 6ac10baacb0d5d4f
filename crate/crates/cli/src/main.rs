use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use grkan_core::eval::{compute_eer, compute_min_tdcf, read_scores, write_scores, TdcfParams, TrialScores};
use grkan_core::harness::gradcheck::{grkan_suite, kan_suite, model_suite, GradReport};
use grkan_core::harness::{
    evaluate, generate_corpus, load_split, save_corpus, train, Checkpoint, CorpusSpec, EvalMode, Split, TrainConfig,
};

#[derive(Parser)]
#[command(name = "grkan-ssd", version, about = "GR-KAN synthetic speech detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fix,
    Var,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Module {
    All,
    Kan,
    Grkan,
    Model,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bona fide / spoof corpus.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector and write `model.ckpt` and `train.log` to `--out`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split and report EER (and min t-DCF with `--tdcf-params`).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        tdcf_params: Option<PathBuf>,
        /// Score file; defaults to `scores_<split>_<mode>.txt` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics from existing score and label files.
    Metrics {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        tdcf_params: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long, value_enum, default_value = "all")]
        module: Module,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn report_metrics(scores: &TrialScores, tdcf: Option<&Path>) -> Result<()> {
    let (eer, threshold) = compute_eer(scores)?;
    println!("trials {}", scores.len());
    println!("eer {:.4}% threshold {threshold:.6}", eer * 100.0);
    if let Some(path) = tdcf {
        let params = TdcfParams::from_config_text(&read_text(path)?)?;
        println!("min_tdcf {:.6}", compute_min_tdcf(scores, &params)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, seed, out } => {
            let spec = CorpusSpec::from_config_text(&read_text(&spec)?)?;
            let corpus = generate_corpus(&spec, seed)?;
            save_corpus(&corpus, &out)?;
            println!(
                "wrote {} / {} / {} trials to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.eval.len(),
                out.display()
            );
        }
        Command::Train { config, data, out } => {
            let cfg = TrainConfig::from_config_text(&read_text(&config)?)?;
            let train_set = load_split(&data, Split::Train)?;
            let dev_set = load_split(&data, Split::Dev)?;
            let (ckpt, log) = train(&cfg, &train_set, &dev_set)?;
            fs::create_dir_all(&out)?;
            ckpt.save(&out.join("model.ckpt"))?;
            fs::write(out.join("train.log"), log.to_text())?;
            print!("{}", log.to_text());
            println!("saved {}", out.join("model.ckpt").display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            mode,
            tdcf_params,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let split = Split::parse(&split)?;
            let (mode, mode_name) = match mode {
                Mode::Fix => (EvalMode::Fixed, "fix"),
                Mode::Var => (EvalMode::Variable, "var"),
            };
            let scores = evaluate(&ckpt, &load_split(&data, split)?, mode)?;
            let out = out.unwrap_or_else(|| {
                let dir = checkpoint.parent().unwrap_or(Path::new("."));
                dir.join(format!("scores_{}_{mode_name}.txt", split.name()))
            });
            write_scores(&out, &scores)?;
            println!("scores {}", out.display());
            report_metrics(&scores, tdcf_params.as_deref())?;
        }
        Command::Metrics {
            scores,
            labels,
            tdcf_params,
        } => {
            let scores = read_scores(&scores, &labels)?;
            report_metrics(&scores, tdcf_params.as_deref())?;
        }
        Command::Gradcheck { module } => {
            let mut reports: Vec<GradReport> = Vec::new();
            if matches!(module, Module::All | Module::Kan) {
                reports.push(kan_suite(10)?);
            }
            if matches!(module, Module::All | Module::Grkan) {
                reports.push(grkan_suite(10)?);
            }
            if matches!(module, Module::All | Module::Model) {
                reports.push(model_suite(10)?);
            }
            for r in &reports {
                println!(
                    "{:<6} {} configurations, max relative error {:.3e} (tolerance {:.0e}) {}",
                    r.module,
                    r.configurations,
                    r.worst,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAILED" }
                );
            }
            if reports.iter().any(|r| !r.passed()) {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
