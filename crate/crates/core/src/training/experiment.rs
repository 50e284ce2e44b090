//! Ablation grid: seeds x samples-per-class x method variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::SeedStream;
use crate::synthdata::{gen_dataset, ConfoundConfig};

use super::{evaluate, train, AugmentConfig, EvalReport, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Cross-entropy only, no augmentation.
    CeOnly,
    /// Cross-entropy with the spatial-frequency augmentation.
    Augment,
    /// Augmentation plus the discrimination loss: the full method.
    AugmentLd,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CeOnly, Variant::Augment, Variant::AugmentLd];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CeOnly => "ce-only",
            Variant::Augment => "augment",
            Variant::AugmentLd => "augment-ld",
        }
    }

    /// Sets the ablation flags for this variant.
    pub fn apply(self, cfg: &mut TrainConfig) {
        let (augment_on, ld_on) = match self {
            Variant::CeOnly => (false, false),
            Variant::Augment => (true, false),
            Variant::AugmentLd => (true, true),
        };
        cfg.augment_on = augment_on;
        cfg.ld_on = ld_on;
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce-only" => Ok(Variant::CeOnly),
            "augment" => Ok(Variant::Augment),
            "augment-ld" | "full" => Ok(Variant::AugmentLd),
            other => Err(invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub seed: u64,
    pub n_per_class: usize,
    pub variant: Variant,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("n{}_{}_s{}", self.n_per_class, self.variant, self.seed)
    }
}

/// Settings shared by every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: ConfoundConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub seeds: Vec<u64>,
    pub n_values: Vec<usize>,
    pub variants: Vec<Variant>,
}

impl ExperimentConfig {
    /// Cells in a fixed order: n, then variant, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n_per_class in &self.n_values {
            for &variant in &self.variants {
                for &seed in &self.seeds {
                    cells.push(Cell {
                        seed,
                        n_per_class,
                        variant,
                    });
                }
            }
        }
        cells
    }
}

/// Generates the cell's dataset and trains and evaluates one model on it.
/// The dataset depends only on `(seed, n)`, so all variants of a seed see
/// identical data.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell) -> Result<EvalReport> {
    let data = ConfoundConfig {
        n_per_class: cell.n_per_class,
        ..cfg.data.clone()
    };
    let (train_set, test_set) = gen_dataset(&data, SeedStream::new(cell.seed, 0))?;
    let mut tcfg = TrainConfig {
        seed: cell.seed,
        ..cfg.train.clone()
    };
    cell.variant.apply(&mut tcfg);
    let outcome = train(&train_set, data.num_classes, &tcfg, &cfg.augment)?;
    evaluate(&outcome.params, &test_set)
}

/// Mean and sample standard deviation of cell accuracies per `(n, variant)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n_per_class: usize,
    pub variant: Variant,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

pub fn summarize(results: &[(Cell, f64)]) -> Vec<GroupSummary> {
    let mut keys: Vec<(usize, Variant)> = results.iter().map(|(c, _)| (c.n_per_class, c.variant)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, v)| {
            let accs: Vec<f64> = results
                .iter()
                .filter(|(c, _)| c.n_per_class == n && c.variant == v)
                .map(|(_, a)| *a)
                .collect();
            let k = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / k;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            GroupSummary {
                n_per_class: n,
                variant: v,
                runs: accs.len(),
                mean_accuracy: mean,
                std_accuracy: std,
            }
        })
        .collect()
}
