use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use navplan::error::{Error, Result};
use navplan::harness::{
    evaluate, grad_check, run_ablation, train, write_ablation_csv, AblationConfig, L2Mode,
    TrainConfig,
};
use navplan::par::Parallelism;
use navplan::planner::{plan, PlanMode, PlanRecord};
use navplan::scene::{read_scenes_jsonl, Scene};
use navplan::simworld::{generate_dataset, is_turning, write_dataset, GenConfig};

#[derive(Parser)]
#[command(name = "navplan", version, about = "Trajectory planner: data generation, training, evaluation")]
struct Cli {
    /// Run scene-level work on one thread instead of the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val JSONL plus manifest).
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Training scenes.
        #[arg(long, default_value_t = 512)]
        scenes: usize,
        /// Validation scenes (default: scenes / 4).
        #[arg(long)]
        val_scenes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of turn scenarios; the rest splits evenly between
        /// straight roads and intersections.
        #[arg(long, default_value_t = 0.5)]
        turn_fraction: f64,
    },
    /// Train a model on a generated dataset and write a checkpoint.
    Train {
        /// Dataset directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint and loss curve.
        #[arg(long)]
        out: PathBuf,
        /// Planning mode: tgt_path, tgt_cmd, tgt_emb, or no_target.
        #[arg(long, default_value = "tgt_path")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stage-one epochs (scene encoders and motion head).
        #[arg(long, default_value_t = 20)]
        epochs1: usize,
        /// Stage-two epochs (full pipeline).
        #[arg(long, default_value_t = 40)]
        epochs2: usize,
        /// Token width override.
        #[arg(long)]
        dim: Option<usize>,
        /// Batch size override.
        #[arg(long)]
        batch: Option<usize>,
        /// Base learning rate override.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        /// Checkpoint directory written by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Scene subset: all or turning.
        #[arg(long, default_value = "all")]
        subset: String,
        /// Displacement convention: instantaneous or cumulative.
        #[arg(long, default_value = "instantaneous")]
        l2_mode: String,
        /// Dataset split to score: train or val.
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Train and evaluate every (mode, seed) cell and write a CSV table.
    Ablate {
        /// Dataset directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated planning modes.
        #[arg(long, default_value = "tgt_path,tgt_cmd,tgt_emb,no_target")]
        modes: String,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[arg(long, default_value_t = 20)]
        epochs1: usize,
        #[arg(long, default_value_t = 40)]
        epochs2: usize,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value = "instantaneous")]
        l2_mode: String,
    },
    /// Finite-difference check of the full training loss.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plan one scene and emit the plan record with top-10 candidates.
    Plan {
        /// Checkpoint directory written by train.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory from gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Scene id, e.g. val_0003.
        #[arg(long)]
        scene_id: String,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Prints a result line, exiting quietly if the consumer closed the pipe.
fn emit(text: &str) {
    use std::io::Write;
    if writeln!(std::io::stdout(), "{text}").is_err() {
        std::process::exit(0);
    }
}

fn load_split(data: &Path, split: &str) -> Result<Vec<Scene>> {
    match split {
        "train" | "val" => read_scenes_jsonl(&data.join(format!("{split}.jsonl"))),
        other => Err(Error::Config(format!("unknown split {other:?}, expected train or val"))),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
        })
        .collect()
}

fn parse_modes(text: &str) -> Result<Vec<PlanMode>> {
    text.split(',').map(|s| PlanMode::parse(s.trim())).collect()
}

fn train_config(
    mode: PlanMode,
    seed: u64,
    epochs1: usize,
    epochs2: usize,
    dim: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    data: &Path,
) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs_stage1: epochs1,
        epochs_stage2: epochs2,
        seed,
        mode,
        data_dir: Some(data.to_path_buf()),
        ..TrainConfig::default()
    };
    if let Some(d) = dim {
        cfg.model.tokens.dim = d;
    }
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = lr {
        cfg.base_lr = lr;
    }
    cfg
}

fn run(cli: Cli) -> Result<bool> {
    let par = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Rayon
    };
    match cli.command {
        Command::GenData {
            out,
            scenes,
            val_scenes,
            seed,
            turn_fraction,
        } => {
            if !(0.0..=1.0).contains(&turn_fraction) {
                return Err(Error::Config(format!(
                    "turn fraction must lie in [0, 1], got {turn_fraction}"
                )));
            }
            let straight = (1.0 - turn_fraction) / 2.0;
            let cfg = GenConfig {
                train_scenes: scenes,
                val_scenes: val_scenes.unwrap_or(scenes / 4),
                kind_fractions: [straight, turn_fraction / 2.0, turn_fraction / 2.0, straight],
                seed,
                ..GenConfig::default()
            };
            let dataset = generate_dataset(&cfg)?;
            let manifest = write_dataset(&dataset, &cfg, &out)?;
            emit(&serde_json::to_string_pretty(&manifest)?);
        }
        Command::Train {
            data,
            out,
            mode,
            seed,
            epochs1,
            epochs2,
            dim,
            batch,
            lr,
        } => {
            let mode = PlanMode::parse(&mode)?;
            let scenes = load_split(&data, "train")?;
            let cfg = train_config(mode, seed, epochs1, epochs2, dim, batch, lr, &data);
            let result = train(&cfg, &scenes, Some(&out), par)?;
            emit(
                &serde_json::json!({
                    "checkpoint": result.checkpoint_dir,
                    "loss_csv": out.join("loss.csv"),
                    "steps": result.steps,
                    "final_loss": result.final_loss,
                })
                .to_string(),
            );
        }
        Command::Eval {
            ckpt,
            data,
            subset,
            l2_mode,
            split,
        } => {
            let l2_mode = L2Mode::parse(&l2_mode)?;
            let mut scenes = load_split(&data, &split)?;
            match subset.as_str() {
                "all" => {}
                "turning" => scenes.retain(is_turning),
                other => {
                    return Err(Error::Config(format!(
                        "unknown subset {other:?}, expected all or turning"
                    )))
                }
            }
            let report = evaluate(&ckpt, &scenes, l2_mode, &subset, par)?;
            emit(&serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate {
            data,
            out,
            modes,
            seeds,
            epochs1,
            epochs2,
            dim,
            batch,
            lr,
            l2_mode,
        } => {
            let cfg = AblationConfig {
                modes: parse_modes(&modes)?,
                seeds: parse_seeds(&seeds)?,
                template: train_config(
                    PlanMode::TgtPath,
                    0,
                    epochs1,
                    epochs2,
                    dim,
                    batch,
                    lr,
                    &data,
                ),
                l2_mode: L2Mode::parse(&l2_mode)?,
            };
            let train_scenes = load_split(&data, "train")?;
            let val_scenes = load_split(&data, "val")?;
            let rows = run_ablation(&cfg, &train_scenes, &val_scenes, par)?;
            write_ablation_csv(&rows, &out)?;
            emit(
                &serde_json::json!({
                    "csv": out,
                    "cells": cfg.modes.len() * cfg.seeds.len(),
                    "rows": rows.len(),
                })
                .to_string(),
            );
        }
        Command::GradCheck { seed } => {
            let report = grad_check(seed, par)?;
            let passed = report.max_rel_err < 1e-4;
            emit(
                &serde_json::json!({
                    "seed": seed,
                    "max_rel_err": report.max_rel_err,
                    "worst_param": report.worst_param,
                    "worst_coord": report.worst_coord,
                    "coords_checked": report.coords_checked,
                    "passed": passed,
                })
                .to_string(),
            );
            if !passed {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "error": "gradcheck",
                        "message": format!(
                            "max relative error {} at {}[{}] exceeds 1e-4",
                            report.max_rel_err, report.worst_param, report.worst_coord
                        ),
                    })
                );
                return Ok(false);
            }
        }
        Command::Plan {
            ckpt,
            data,
            scene_id,
            out,
        } => {
            let (store, cfg) = navplan::harness::load_trained(&ckpt)?;
            let mut scenes = load_split(&data, "train")?;
            scenes.extend(load_split(&data, "val")?);
            let scene = scenes
                .iter()
                .find(|s| s.meta.id == scene_id)
                .ok_or_else(|| Error::UnknownScene(scene_id.clone()))?;
            let output = plan(&store, &cfg.model, scene, cfg.mode)?;
            let record = PlanRecord::from_output(&scene_id, cfg.mode, &output);
            let text = serde_json::to_string_pretty(&record)?;
            std::fs::write(&out, format!("{text}\n"))?;
            emit(&text);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": err.kind(), "message": err.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}
