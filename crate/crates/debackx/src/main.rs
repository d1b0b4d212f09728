//! Command-line surface: dataset building, stage training, end-to-end
//! translation, evaluation, and the ablation matrix.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use debackx::img::Image;
use debackx::pipeline::{
    build_data, build_pretrain, evaluate_run, predict_split, run_ablation_matrix, run_stage,
    translate_end_to_end, write_report, PipelineBundle, RunConfig, Stage,
};
use debackx::{Error, Result};

#[derive(Parser)]
#[command(name = "debackx", version, about = "In-image machine translation pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; omitted keys use built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. --set steps_vq=100.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the composed train/valid/test splits and the BPE tokenizer.
    BuildData,
    /// Build the text-image-only pretraining split.
    BuildPretrain,
    /// Train one stage to completion and write its checkpoint.
    Train {
        #[arg(long)]
        stage: String,
        /// Global seed (mandatory for training).
        #[arg(long)]
        seed: u64,
    },
    /// Translate a single image, or a whole dataset split with --split.
    Translate {
        /// Bundle directory (a training run's checkpoint directory).
        #[arg(long)]
        bundle: PathBuf,
        /// Source image (single-image mode).
        #[arg(long, conflicts_with = "split")]
        input: Option<PathBuf>,
        /// Output image path (single-image mode).
        #[arg(long, requires = "input")]
        output: Option<PathBuf>,
        /// Directory for intermediate images (single-image mode).
        #[arg(long, requires = "input")]
        intermediates: Option<PathBuf>,
        /// Dataset split to translate in batch (e.g. test).
        #[arg(long)]
        split: Option<String>,
        /// Prediction directory (batch mode).
        #[arg(long, requires = "split")]
        out_dir: Option<PathBuf>,
    },
    /// Score a prediction directory against a dataset split.
    Evaluate {
        /// Prediction directory written by `translate --split`.
        #[arg(long)]
        pred: PathBuf,
        /// Reference dataset directory (overrides the config data_dir).
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Train and evaluate ablation variants.
    Ablate {
        /// Run the full {use_pivot, use_deback} 2x2 matrix.
        #[arg(long)]
        matrix: bool,
        /// Global seed (mandatory for training).
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut pairs = Vec::new();
    for raw in &common.overrides {
        let Some((k, v)) = raw.split_once('=') else {
            return Err(Error::Input(format!("--set expects KEY=VALUE, got {raw:?}")));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    cfg.apply_overrides(&pairs)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::BuildData => {
            let report = build_data(&cfg)?;
            let total: usize = report.manifests.iter().map(|m| m.records.len()).sum();
            println!(
                "built {total} records across {} splits in {} ({} overlong pairs skipped)",
                report.manifests.len(),
                cfg.data_dir.display(),
                report.skipped
            );
        }
        Command::BuildPretrain => {
            let manifest = build_pretrain(&cfg)?;
            println!(
                "built pretrain split with {} records in {}",
                manifest.records.len(),
                cfg.data_dir.display()
            );
        }
        Command::Train { stage, seed } => {
            cfg.seed = seed;
            let report = run_stage(Stage::parse(&stage)?, &cfg)?;
            println!(
                "stage {} finished after {} steps (final loss {:.6}); checkpoint at {}",
                report.stage,
                report.steps,
                report.final_loss,
                report.checkpoint.display()
            );
        }
        Command::Translate {
            bundle,
            input,
            output,
            intermediates,
            split,
            out_dir,
        } => {
            let bundle = PipelineBundle::load(&bundle, cfg.use_deback)?;
            match (input, split) {
                (Some(input), None) => {
                    let src = Image::load_png(&input)?;
                    let outcome = translate_end_to_end(&src, &bundle)?;
                    let out_path = output
                        .unwrap_or_else(|| input.with_extension("translated.png"));
                    outcome.output.save_png(&out_path)?;
                    if let Some(dir) = intermediates {
                        std::fs::create_dir_all(&dir)?;
                        if let Some(bg) = &outcome.background {
                            bg.save_png(&dir.join("background.png"))?;
                        }
                        if let Some(ti) = &outcome.src_textimage {
                            ti.save_png(&dir.join("src_textimage.png"))?;
                        }
                        outcome.tgt_textimage.save_png(&dir.join("tgt_textimage.png"))?;
                    }
                    println!("wrote {}", out_path.display());
                    if !outcome.pivot_text.is_empty() {
                        println!("pivot text: {}", outcome.pivot_text);
                    }
                    if outcome.truncated {
                        eprintln!("warning: pivot decoding hit the length limit");
                    }
                }
                (None, Some(split)) => {
                    let out_dir = out_dir.ok_or_else(|| {
                        Error::Input("batch translation needs --out-dir".into())
                    })?;
                    let records = predict_split(&bundle, &cfg, &split, &out_dir)?;
                    println!(
                        "translated {} records from split {split:?} into {}",
                        records.len(),
                        out_dir.display()
                    );
                }
                _ => {
                    return Err(Error::Input(
                        "translate needs exactly one of --input or --split".into(),
                    ))
                }
            }
        }
        Command::Evaluate {
            pred,
            reference,
            split,
            report,
            label,
        } => {
            if let Some(dir) = reference {
                cfg.data_dir = dir;
            }
            let result = evaluate_run(&pred, &cfg, &split, &label)?;
            let path = report.unwrap_or_else(|| cfg.report_dir.join(format!("{label}.json")));
            write_report(&result, &path)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            println!("report written to {}", path.display());
        }
        Command::Ablate { matrix, seed, split } => {
            if !matrix {
                return Err(Error::Input(
                    "only --matrix mode is supported for ablate".into(),
                ));
            }
            cfg.seed = seed;
            for (label, path, report) in run_ablation_matrix(&cfg, &split)? {
                println!(
                    "{label}: bleu={:.2} wer={:.3} fd={:.4} psnr={:.2} fonts={:.3} -> {}",
                    report.bleu,
                    report.wer,
                    report.fd_surrogate,
                    report.mean_psnr,
                    report.font_consistency,
                    path.display()
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
