//! Multi-run experiments: gamma sweeps and the init × loss grid.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{fit, Dataset, Init, TrainConfig, TrainOutput};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{structure_drift, DriftReport, DEFAULT_DRIFT_K};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub final_val_map: f64,
    pub best_val_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10}  {:>13}  {:>12}", "gamma", "final_val_map", "best_val_map")?;
        for r in &self.rows {
            writeln!(f, "{:>10}  {:>13.6}  {:>12.6}", r.gamma, r.final_val_map, r.best_val_map)?;
        }
        Ok(())
    }
}

/// Trains once per gamma with everything else (seed included) fixed.
pub fn sweep_gamma(config: &TrainConfig, gammas: &[f64]) -> Result<SweepTable> {
    check_gammas(gammas)?;
    config.validate()?;
    let data = Dataset::load(config)?;
    sweep_gamma_on(config, &data, gammas)
}

pub fn sweep_gamma_on(config: &TrainConfig, data: &Dataset, gammas: &[f64]) -> Result<SweepTable> {
    check_gammas(gammas)?;
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let run = fit(&TrainConfig { gamma, ..config.clone() }, data)?;
            Ok(SweepRow {
                gamma,
                final_val_map: run.record.final_val_map,
                best_val_map: run.record.best_val_map,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable { rows })
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::Config("need at least one gamma".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::Config(format!("gamma must be positive, got {g}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Embeddings,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Random => "random",
            InitKind::Embeddings => "embeddings",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub init: InitKind,
    pub loss: LossKind,
    pub final_val_map: f64,
    pub best_val_map: f64,
    /// Initial vs last weights.
    pub drift: DriftReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    pub fn get(&self, init: InitKind, loss: LossKind) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.init == init && c.loss == loss)
    }
}

impl fmt::Display for AblationGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10}  {:<8}  {:>13}  {:>12}  {:>10}  {:>15}",
            "init", "loss", "final_val_map", "best_val_map", "nn_overlap", "frobenius_drift"
        )?;
        for c in &self.cells {
            writeln!(
                f,
                "{:<10}  {:<8}  {:>13.6}  {:>12.6}  {:>10.4}  {:>15.6}",
                c.init.to_string(),
                c.loss.name(),
                c.final_val_map,
                c.best_val_map,
                c.drift.nn_overlap,
                c.drift.frobenius_drift
            )?;
        }
        Ok(())
    }
}

pub const ABLATION_LOSSES: [LossKind; 2] = [LossKind::Bce, LossKind::LseSign];

/// Resolves the embedding file for an ablation: the explicit path, else the
/// one in `config.init`.
pub fn ablation_embeddings(config: &TrainConfig, embeddings: Option<PathBuf>) -> Result<PathBuf> {
    match (embeddings, &config.init) {
        (Some(p), _) => Ok(p),
        (None, Init::Embeddings { path }) => Ok(path.clone()),
        (None, Init::Random { .. }) => Err(Error::Config(
            "ablation needs an embeddings file (--embeddings)".into(),
        )),
    }
}

/// Runs {random, embeddings} × {bce, lse-sign} with a shared seed.
pub fn ablate(config: &TrainConfig, embeddings: Option<PathBuf>) -> Result<AblationGrid> {
    let path = ablation_embeddings(config, embeddings)?;
    let config = TrainConfig {
        init: Init::Embeddings { path },
        ..config.clone()
    };
    config.validate()?;
    let data = Dataset::load(&config)?;
    ablate_on(&config, &data).map(|(grid, _)| grid)
}

/// In-memory ablation; `data` must carry embeddings. Also returns the four
/// runs in grid order.
pub fn ablate_on(config: &TrainConfig, data: &Dataset) -> Result<(AblationGrid, Vec<TrainOutput>)> {
    if data.embeddings.is_none() {
        return Err(Error::Config("ablation needs embeddings".into()));
    }
    let random_seed = match config.init {
        Init::Random { seed } => seed,
        Init::Embeddings { .. } => config.seed,
    };
    let k = DEFAULT_DRIFT_K.min(data.classes.len().saturating_sub(1)).max(1);
    let mut cells = Vec::new();
    let mut runs = Vec::new();
    for init in [InitKind::Random, InitKind::Embeddings] {
        for loss in ABLATION_LOSSES {
            let init_spec = match init {
                InitKind::Random => Init::Random { seed: random_seed },
                InitKind::Embeddings => Init::Embeddings {
                    path: match &config.init {
                        Init::Embeddings { path } => path.clone(),
                        Init::Random { .. } => PathBuf::from("<in-memory>"),
                    },
                },
            };
            let run_config = TrainConfig {
                init: init_spec,
                loss,
                ..config.clone()
            };
            let run = fit(&run_config, data)?;
            let drift = structure_drift(run.initial.weights(), run.last.weights(), k)?;
            cells.push(AblationCell {
                init,
                loss,
                final_val_map: run.record.final_val_map,
                best_val_map: run.record.best_val_map,
                drift,
            });
            runs.push(run);
        }
    }
    Ok((AblationGrid { cells }, runs))
}
