//! Command-line entry point: dataset synthesis, training, fine-tuning,
//! evaluation, parameter audit, and saliency export.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, corrupt checkpoint),
//! 2 usage error (bad flags, bad data, config mismatch).

use clap::{Args, Parser, Subcommand};
use facechannel::data::synth::{synth_generate, SynthSpec};
use facechannel::data::{load_dataset, load_manifest, Dataset};
use facechannel::error::{Error, Result};
use facechannel::explain::{gradcam, render_heatmap};
use facechannel::model::checkpoint::{load_checkpoint, save_checkpoint};
use facechannel::tensor::resize_bilinear;
use facechannel::train::{evaluate, train, write_history_csv, Loss, Routine, TrainSpec};
use facechannel::{build_facechannel, HeadSpec, Model, ModelConfig, SeededRng, Tensor};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "facechannel", version, about = "Facial expression recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic face dataset from a JSON spec.
    Synth {
        /// Path to a JSON generation spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for images and manifest.csv.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a manifest dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Optional JSON model config; defaults to the canonical network
        /// with a head sized from the data.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RoutineArg::Scratch)]
        routine: RoutineArg,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
    /// Load a checkpoint, replace the head, freeze the convolutional
    /// stack, and retrain only the dense layers.
    Finetune {
        #[arg(long)]
        from_checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// New head: an integer class count, or `av` for arousal/valence.
        #[arg(long)]
        new_head: String,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        out_checkpoint: PathBuf,
        #[arg(long)]
        history_csv: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report_json: Option<PathBuf>,
    },
    /// Print the model's parameter count.
    Params {
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trainable_only: bool,
        /// Count after freezing the convolutional stack.
        #[arg(long)]
        freeze_conv: bool,
    },
    /// Write a saliency overlay for one image and output unit.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class index, or `arousal` / `valence` for dimensional heads.
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum RoutineArg {
    Scratch,
    Pretrain,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) | Error::Checkpoint(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn head_for_targets(data: &Dataset<f32>) -> HeadSpec {
    if data.targets.is_categorical() {
        HeadSpec::Categorical {
            classes: data.targets.arity(),
        }
    } else {
        HeadSpec::Dimensional
    }
}

fn loss_for_targets(data: &Dataset<f32>) -> Loss {
    if data.targets.is_categorical() {
        Loss::CrossEntropy
    } else {
        Loss::Mse
    }
}

fn load_data_for(config: &ModelConfig, manifest_path: &Path) -> Result<Dataset<f32>> {
    let manifest = load_manifest(manifest_path)?;
    load_dataset(&manifest, config.input_channels, config.input_size)
}

fn read_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ModelConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Load at the model's channel count and size, in [0,1] for overlays.
fn gray_for_overlay(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let resized = resize_bilinear(img, size, size)?;
    let c = resized.shape()[0];
    let hw = size * size;
    let data = (0..hw)
        .map(|i| {
            (0..c).map(|ch| resized.data()[ch * hw + i]).sum::<f32>() / c as f32
        })
        .collect();
    Tensor::new(vec![1, size, size], data)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out, seed } => {
            let text = std::fs::read_to_string(&spec)?;
            let mut spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad synth spec: {e}")))?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = synth_generate(&spec, &out)?;
            println!(
                "wrote {} samples; manifest at {}",
                manifest.records.len(),
                out.join("manifest.csv").display()
            );
            Ok(())
        }
        Command::Train {
            data,
            config,
            routine,
            opt,
            out_checkpoint,
            history_csv,
        } => {
            let routine = match routine {
                RoutineArg::Scratch => Routine::Scratch,
                RoutineArg::Pretrain => Routine::PretrainOnly,
            };
            // Peek at the data with a throwaway canonical shape first when
            // no config is given, so the head can be sized from targets.
            let config = match config {
                Some(p) => read_config(&p)?,
                None => {
                    let probe = ModelConfig::canonical(HeadSpec::Dimensional, opt.seed);
                    let dataset = load_data_for(&probe, &data)?;
                    ModelConfig::canonical(head_for_targets(&dataset), opt.seed)
                }
            };
            let dataset = load_data_for(&config, &data)?;
            let mut model: Model<f32> = build_facechannel(&config)?;
            let spec = TrainSpec::new(opt.epochs, opt.batch, opt.lr, opt.seed, loss_for_targets(&dataset));
            let history = train(&mut model, &dataset, None, &spec)?;
            save_checkpoint(&model, &out_checkpoint, &[])?;
            if let Some(p) = history_csv {
                write_history_csv(&history, &p)?;
            }
            let label = match routine {
                Routine::Scratch => "scratch",
                _ => "pretrain",
            };
            if let Some(last) = history.last() {
                println!(
                    "{label} training done: {} epochs, final loss {:.6}, metric {:.4}",
                    history.len(),
                    last.train_loss,
                    last.train_metric
                );
            }
            println!("checkpoint written to {}", out_checkpoint.display());
            Ok(())
        }
        Command::Finetune {
            from_checkpoint,
            data,
            new_head,
            opt,
            out_checkpoint,
            history_csv,
        } => {
            let (mut model, _) = load_checkpoint::<f32>(&from_checkpoint)?;
            let head = match new_head.as_str() {
                "av" => HeadSpec::Dimensional,
                k => HeadSpec::Categorical {
                    classes: k.parse().map_err(|_| {
                        Error::Config(format!("--new-head must be an integer or 'av', got '{k}'"))
                    })?,
                },
            };
            let mut head_rng = SeededRng::from_seed_stream(opt.seed, 3);
            model.replace_head(head, &mut head_rng)?;
            model.freeze_convolutional_stack();
            let dataset = load_data_for(&model.config, &data)?;
            let spec = TrainSpec::new(opt.epochs, opt.batch, opt.lr, opt.seed, loss_for_targets(&dataset));
            let history = train(&mut model, &dataset, None, &spec)?;
            save_checkpoint(&model, &out_checkpoint, &[])?;
            if let Some(p) = history_csv {
                write_history_csv(&history, &p)?;
            }
            println!(
                "fine-tuned for {} epochs; checkpoint written to {}",
                history.len(),
                out_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            report_json,
        } => {
            let (mut model, _) = load_checkpoint::<f32>(&checkpoint)?;
            let dataset = load_data_for(&model.config, &data)?;
            let report = evaluate(&mut model, &dataset)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Data(format!("report encode: {e}")))?;
            match report_json {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Params {
            config,
            checkpoint,
            trainable_only,
            freeze_conv,
        } => {
            let mut model: Model<f32> = match (config, checkpoint) {
                (Some(p), None) => build_facechannel(&read_config(&p)?)?,
                (None, Some(p)) => load_checkpoint::<f32>(&p)?.0,
                _ => {
                    return Err(Error::Config(
                        "exactly one of --config or --checkpoint is required".into(),
                    ))
                }
            };
            if freeze_conv {
                model.freeze_convolutional_stack();
            }
            println!("{}", model.count_params(trainable_only));
            Ok(())
        }
        Command::Gradcam {
            checkpoint,
            image,
            target,
            out,
        } => {
            let (mut model, _) = load_checkpoint::<f32>(&checkpoint)?;
            let target = match (target.as_str(), &model.config.head) {
                ("arousal", HeadSpec::Dimensional) => 0,
                ("valence", HeadSpec::Dimensional) => 1,
                (t, _) => t.parse().map_err(|_| {
                    Error::Config(format!(
                        "--target must be a class index (or arousal/valence), got '{t}'"
                    ))
                })?,
            };
            let raw = facechannel::data::netpbm::decode_image::<f32>(&image)?;
            let input = facechannel::data::preprocess(
                &raw,
                model.config.input_channels,
                model.config.input_size,
            )?;
            let map = gradcam(&mut model, &input, target)?;
            let gray = gray_for_overlay(&raw, model.config.input_size)?;
            render_heatmap(&gray, &map, &out)?;
            println!("saliency overlay written to {}", out.display());
            Ok(())
        }
    }
}
