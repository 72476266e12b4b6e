//! Desk-scale driving planner that turns a coarse navigation route into a short
//! ego trajectory in two steps: pick a target point among sampled candidates,
//! then complete a trajectory toward it, both conditioned on encoded scene tokens.
//!
//! Module map:
//! - [`geom`]: frames, polylines, oriented boxes, shared geometry.
//! - [`scene`]: scene container, map/agent records, JSONL I/O.
//! - [`navpath`]: route interpolation, windowing, and vectorization.
//! - [`neural`]: tensors, reverse-mode graph, layers, optimizer, checkpoints.
//! - [`scene_tokens`]: map/agent token encoders and the motion forecast head.
//! - [`planner`]: candidate sampling, target scoring, trajectory completion.
//! - [`objectives`]: trajectory, target, and motion losses.
//! - [`simworld`]: synthetic scenario generator and dataset builder.
//! - [`harness`]: training loop, evaluation metrics, ablation runner.
//! - [`par`]: data-parallel map helpers with a sequential fallback.

pub mod error;
pub mod geom;
pub mod harness;
pub mod navpath;
pub mod neural;
pub mod objectives;
pub mod par;
pub mod planner;
pub mod scene;
pub mod scene_tokens;
pub mod simworld;

pub use error::{Error, Result};
