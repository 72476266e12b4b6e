//! Ablation driver: trains one model per (mode, seed) cell on identical
//! data and scores each on the full and turning-only validation sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::planner::PlanMode;
use crate::scene::Scene;
use crate::simworld::is_turning;

use super::metrics::{evaluate_with_store, L2Mode, MetricsReport};
use super::{train, TrainConfig};

/// Grid of training runs sharing one template config and dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub modes: Vec<PlanMode>,
    pub seeds: Vec<u64>,
    /// Per-cell config; only `mode` and `seed` are overridden.
    pub template: TrainConfig,
    pub l2_mode: L2Mode,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Empty("ablation modes"));
        }
        if self.seeds.is_empty() {
            return Err(Error::Empty("ablation seeds"));
        }
        self.template.validate()
    }
}

/// One evaluated cell; `report.subset` says whether it covers the full
/// validation set or the turning slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: PlanMode,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Trains every (mode, seed) cell from scratch and evaluates it on the
/// full validation set and on its turning subset. All cells see identical
/// scenes and hyperparameters apart from the planning mode and seed.
pub fn run_ablation(
    cfg: &AblationConfig,
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    par: Parallelism,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let turning: Vec<Scene> = val_scenes.iter().filter(|s| is_turning(s)).cloned().collect();
    if turning.is_empty() {
        return Err(Error::Empty("turning validation scenes"));
    }
    let mut rows = Vec::with_capacity(cfg.modes.len() * cfg.seeds.len() * 2);
    for &mode in &cfg.modes {
        for &seed in &cfg.seeds {
            let mut cell = cfg.template.clone();
            cell.mode = mode;
            cell.seed = seed;
            log::info!("ablation cell mode={} seed={seed}", mode.label());
            let fitted = train(&cell, train_scenes, None, par)?;
            for (subset, scenes) in [("all", val_scenes), ("turning", turning.as_slice())] {
                let report = evaluate_with_store(
                    &fitted.store,
                    &cell.model,
                    mode,
                    scenes,
                    cfg.l2_mode,
                    subset,
                    par,
                )?;
                rows.push(AblationRow { mode, seed, report });
            }
        }
    }
    Ok(rows)
}

/// Writes ablation rows as CSV keyed by (mode, seed, subset).
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut text = String::from(
        "mode,seed,subset,l2_1s,l2_2s,l2_3s,l2_avg,col_1s,col_2s,col_3s,col_avg\n",
    );
    for row in rows {
        let r = &row.report;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.mode.label(),
            row.seed,
            r.subset,
            r.l2_m[0],
            r.l2_m[1],
            r.l2_m[2],
            r.l2_avg_m,
            r.collision_pct[0],
            r.collision_pct[1],
            r.collision_pct[2],
            r.collision_avg_pct
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_dataset, GenConfig, Split};

    #[test]
    fn small_grid_produces_full_and_turning_rows() {
        let gen = GenConfig {
            train_scenes: 6,
            val_scenes: 4,
            kind_fractions: [0.0, 0.5, 0.5, 0.0],
            seed: 21,
            ..GenConfig::default()
        };
        let data = generate_dataset(&gen).unwrap();
        let mut template = TrainConfig {
            epochs_stage1: 1,
            epochs_stage2: 1,
            batch_size: 4,
            seed: 0,
            ..TrainConfig::default()
        };
        template.model.tokens.dim = 8;
        template.model.tokens.modes = 2;
        let cfg = AblationConfig {
            modes: vec![PlanMode::TgtPath],
            seeds: vec![4],
            template,
            l2_mode: L2Mode::Instantaneous,
        };
        let train_set: Vec<Scene> =
            data.split_scenes(Split::Train).into_iter().cloned().collect();
        let val_set: Vec<Scene> = data.split_scenes(Split::Val).into_iter().cloned().collect();
        let rows = run_ablation(&cfg, &train_set, &val_set, Parallelism::Rayon).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].report.subset, "all");
        assert_eq!(rows[1].report.subset, "turning");
        assert_eq!(rows[0].report.samples, 4);
        assert_eq!(rows[1].report.samples, 4);
        assert!(rows.iter().all(|r| r.seed == 4 && r.mode == PlanMode::TgtPath));

        let tmp = tempfile::tempdir().unwrap();
        let csv = tmp.path().join("ablation.csv");
        write_ablation_csv(&rows, &csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("mode,seed,subset,"));
        assert!(lines[1].starts_with("tgt_path,4,all,"));
        assert!(lines[2].starts_with("tgt_path,4,turning,"));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let cfg = AblationConfig {
            modes: vec![],
            seeds: vec![0],
            template: TrainConfig::default(),
            l2_mode: L2Mode::Instantaneous,
        };
        assert!(cfg.validate().is_err());
    }
}
