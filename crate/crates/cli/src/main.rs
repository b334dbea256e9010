use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use radiomotion::pipeline::{self, ModelKind, PipelineConfig};
use radiomotion::{Error, Result};

#[derive(Parser)]
#[command(name = "radiomotion", version, about = "Dynamic radio-map dataset generation and forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML). Omitted keys take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing artifacts.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build environments, trajectories and radio-map sequences.
    Generate(Common),
    /// Train a model on the generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "radiolstm")]
        model: ModelKind,
    },
    /// Score trained models and last-frame repeat on both test splits.
    Evaluate(Common),
    /// Train and score one forecaster per context length.
    Ablate(Common),
    /// generate, train every evaluated model, then evaluate.
    All(Common),
}

fn config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_root = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log_epoch(tag: &str) -> impl FnMut(&radiomotion::optim::EpochRecord) + '_ {
    move |e| eprintln!("[{tag}] epoch {} train {:.6e} val {:.6e}", e.epoch, e.train_loss, e.val_loss)
}

fn train_one(cfg: &PipelineConfig, data: &radiomotion::dataset::SplitFrames, model: ModelKind, force: bool) -> Result<()> {
    let r = pipeline::train(cfg, data, model, force, log_epoch(model.as_str()))?;
    eprintln!(
        "trained {} in {:.1}s: best epoch {} val {:.6e}{}",
        model.as_str(),
        r.seconds,
        r.history.best_epoch,
        r.history.best_val_loss,
        if r.history.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, data: &radiomotion::dataset::SplitFrames, force: bool) -> Result<()> {
    let report = pipeline::evaluate_models(cfg, data, force)?;
    for r in &report.records {
        println!(
            "{:<18} {:<6} nmse {:.6e} rmse {:.6e} ssim {:.4} psnr {:.2} dB",
            r.model, r.split, r.aggregate.nmse, r.aggregate.rmse, r.aggregate.ssim, r.aggregate.psnr_db
        );
    }
    eprintln!("results in {}", cfg.results_dir().display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = config(&c)?;
            let r = pipeline::generate(&cfg, c.force)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("generated {} sequences ({} files) in {:.1}s under {}", r.sequences, r.files, r.seconds, cfg.dataset_dir().display());
        }
        Command::Train { common, model } => {
            let cfg = config(&common)?;
            let data = pipeline::load_dataset(&cfg)?;
            train_one(&cfg, &data, model, common.force)?;
        }
        Command::Evaluate(c) => {
            let cfg = config(&c)?;
            let data = pipeline::load_dataset(&cfg)?;
            evaluate(&cfg, &data, c.force)?;
        }
        Command::Ablate(c) => {
            let cfg = config(&c)?;
            let data = pipeline::load_dataset(&cfg)?;
            let runs = pipeline::ablate(&cfg, &data, c.force, |tc, e| {
                eprintln!("[tc={tc}] epoch {} train {:.6e} val {:.6e}", e.epoch, e.train_loss, e.val_loss)
            })?;
            for r in &runs {
                println!("Tc={:<2} pooled test nmse {:.6e}", r.tc, r.pooled_nmse());
            }
        }
        Command::All(c) => {
            let cfg = config(&c)?;
            let r = pipeline::generate(&cfg, c.force)?;
            println!("generated {} sequences in {:.1}s", r.sequences, r.seconds);
            let data = pipeline::load_dataset(&cfg)?;
            for &m in &cfg.evaluation.models {
                train_one(&cfg, &data, m, c.force)?;
            }
            evaluate(&cfg, &data, c.force)?;
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Exists(_) => "exists",
        Error::Io { .. } | Error::Png { .. } => "io",
        Error::Scenario { .. } => "scenario",
        Error::Generation(_) => "generation",
        Error::Untrained => "untrained",
        Error::Tensor(_) => "tensor",
        _ => "invalid_input",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
