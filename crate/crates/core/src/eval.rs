//! The 0-1 average loss, multi-seed aggregation and grid search.
//!
//! Grid-search records are line-delimited JSON. The first line is a header
//! `{"format":"drbm-grid","version":1,"rng":...}`; every further line is one
//! [`RunRecord`], ordered by cell index and then seed index.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{StateSet, UnitKind};
use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::DrbmParams;
use crate::training::{train, TerminationReason, TrainConfig, RNG_ALGORITHM};

/// Fraction of positions where `pred` and `truth` differ.
pub fn average_loss(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Usage("average loss of an empty set".into()));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Average loss of the model's arg-max predictions on `ds`.
pub fn dataset_loss(params: &DrbmParams, units: &StateSet, ds: &Dataset) -> Result<f64> {
    let predicted = params.predict_labels(units, ds.features())?;
    average_loss(&predicted, ds.labels())
}

/// Mean and population standard deviation.
pub fn aggregate_seeds(losses: &[f64]) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::Usage("no losses to aggregate".into()));
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "GridSpec::default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "GridSpec::default_hidden_sizes")]
    pub hidden_sizes: Vec<usize>,
    /// Only used for binomial units.
    #[serde(default = "GridSpec::default_bin_counts")]
    pub bin_counts: Vec<u32>,
    #[serde(default = "GridSpec::default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            etas: Self::default_etas(),
            hidden_sizes: Self::default_hidden_sizes(),
            bin_counts: Self::default_bin_counts(),
            seeds: Self::default_seeds(),
        }
    }
}

impl GridSpec {
    fn default_etas() -> Vec<f64> {
        vec![0.0001, 0.001, 0.01]
    }
    fn default_hidden_sizes() -> Vec<usize> {
        vec![50, 100, 500, 1000]
    }
    fn default_bin_counts() -> Vec<u32> {
        vec![2, 4, 8]
    }
    fn default_seeds() -> Vec<u64> {
        (0..10).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.etas.is_empty() || self.hidden_sizes.is_empty() || self.bin_counts.is_empty() || self.seeds.is_empty() {
            return Err(Error::Usage("grid lists must be non-empty".into()));
        }
        if self.etas.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Usage("grid learning rates must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) || self.bin_counts.contains(&0) {
            return Err(Error::Usage("grid sizes must be at least 1".into()));
        }
        Ok(())
    }

    /// Cells in row-major order over (eta, hidden size, bin count). Bin
    /// counts only multiply the grid for binomial units.
    pub fn cells(&self, kind: UnitKind) -> Result<Vec<GridCell>> {
        self.validate()?;
        let bins: Vec<u32> = if kind == UnitKind::Binomial { self.bin_counts.clone() } else { vec![1] };
        let mut out = Vec::new();
        for &eta in &self.etas {
            for &n_hid in &self.hidden_sizes {
                for &n in &bins {
                    out.push(GridCell {
                        index: out.len(),
                        eta,
                        n_hid,
                        variant: StateSet::new(kind, n)?,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub eta: f64,
    pub n_hid: usize,
    pub variant: StateSet,
}

impl GridCell {
    /// `template` with this cell's hyperparameters and the given seed.
    pub fn config(&self, template: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            variant: self.variant,
            n_hid: self.n_hid,
            eta_init: self.eta,
            seed,
            ..template.clone()
        }
    }

    fn selection_key(&self) -> (f64, usize, u32) {
        (self.eta, self.n_hid, self.variant.n_bins())
    }
}

/// One training run of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub eta: f64,
    pub n_hid: usize,
    pub variant: StateSet,
    #[serde(flatten)]
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Ok {
        val_loss: f64,
        test_loss: f64,
        epochs: usize,
        termination: TerminationReason,
    },
    Failed {
        error: String,
    },
}

/// Aggregated result for one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Configuration with the first seed of the grid.
    pub config: TrainConfig,
    pub per_seed_val_losses: Vec<f64>,
    pub per_seed_test_losses: Vec<f64>,
    pub mean_val_loss: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub selected_on_validation: bool,
    /// Set if any seed failed; the cell is then excluded from selection.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    pub records: Vec<RunRecord>,
    pub results: Vec<ExperimentResult>,
    /// Index into `results` of the cell chosen on validation loss.
    pub best: usize,
}

impl GridOutcome {
    pub fn best_result(&self) -> &ExperimentResult {
        &self.results[self.best]
    }

    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({ "format": "drbm-grid", "version": 1, "rng": RNG_ALGORITHM });
        let mut out = format!("{header}\n");
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialise"));
            out.push('\n');
        }
        out
    }

    /// Fixed-width table, one row per cell; losses as fractions and percent.
    pub fn summary_table(&self) -> String {
        let mut out = String::from(
            "cell  variant       eta      n_hid  val_mean  test_mean  test_std  test_%   selected\n",
        );
        for (cell, r) in self.cells.iter().zip(&self.results) {
            if let Some(e) = &r.failure {
                let _ = writeln!(
                    out,
                    "{:<5} {:<13} {:<8} {:<6} FAILED: {e}",
                    cell.index, cell.variant.to_string(), cell.eta, cell.n_hid
                );
                continue;
            }
            let _ = writeln!(
                out,
                "{:<5} {:<13} {:<8} {:<6} {:<9.6} {:<10.6} {:<9.6} {:<8.3} {}",
                cell.index,
                cell.variant.to_string(),
                cell.eta,
                cell.n_hid,
                r.mean_val_loss,
                r.mean_loss,
                r.std_loss,
                100.0 * r.mean_loss,
                if r.selected_on_validation { "*" } else { "" }
            );
        }
        out
    }
}

fn run_one(cfg: &TrainConfig, splits: &Splits) -> Result<(f64, f64, usize, TerminationReason)> {
    let report = train(cfg, &splits.train, &splits.valid)?;
    let test = dataset_loss(&report.final_params, &cfg.variant, &splits.test)?;
    Ok((report.best_val_loss, test, report.epochs_run, report.termination_reason))
}

/// Trains every (cell, seed) pair, in parallel, and selects the cell with the
/// lowest mean validation loss. Ties go to the lower learning rate, then fewer
/// hidden units, then fewer bins. Test losses are reported for every cell but
/// never consulted for selection.
pub fn grid_search(spec: &GridSpec, kind: UnitKind, template: &TrainConfig, splits: &Splits) -> Result<GridOutcome> {
    let cells = spec.cells(kind)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.seeds.len()).map(move |s| (c, s)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let cell = &cells[c];
            let seed = spec.seeds[s];
            let outcome = match run_one(&cell.config(template, seed), splits) {
                Ok((val_loss, test_loss, epochs, termination)) => RunOutcome::Ok {
                    val_loss,
                    test_loss,
                    epochs,
                    termination,
                },
                Err(e) => RunOutcome::Failed { error: e.to_string() },
            };
            RunRecord {
                cell: c,
                seed_index: s,
                seed,
                eta: cell.eta,
                n_hid: cell.n_hid,
                variant: cell.variant,
                outcome,
            }
        })
        .collect();

    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.cell == cell.index).collect();
        let mut vals = Vec::new();
        let mut tests = Vec::new();
        let mut failure = None;
        for r in &runs {
            match &r.outcome {
                RunOutcome::Ok { val_loss, test_loss, .. } => {
                    vals.push(*val_loss);
                    tests.push(*test_loss);
                }
                RunOutcome::Failed { error } => {
                    failure.get_or_insert_with(|| format!("seed {}: {error}", r.seed));
                }
            }
        }
        let (mean_val_loss, mean_loss, std_loss) = if failure.is_none() {
            let (mv, _) = aggregate_seeds(&vals)?;
            let (mt, st) = aggregate_seeds(&tests)?;
            (mv, mt, st)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        results.push(ExperimentResult {
            config: cell.config(template, spec.seeds[0]),
            per_seed_val_losses: vals,
            per_seed_test_losses: tests,
            mean_val_loss,
            mean_loss,
            std_loss,
            selected_on_validation: false,
            failure,
        });
    }

    let best = (0..cells.len())
        .filter(|&i| results[i].failure.is_none())
        .min_by(|&a, &b| {
            results[a]
                .mean_val_loss
                .total_cmp(&results[b].mean_val_loss)
                .then_with(|| {
                    let (ka, kb) = (cells[a].selection_key(), cells[b].selection_key());
                    ka.0.total_cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.cmp(&kb.2))
                })
        })
        .ok_or_else(|| {
            let why = results.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
            Error::Usage(format!("every grid cell failed; first failure: {why}"))
        })?;
    results[best].selected_on_validation = true;

    Ok(GridOutcome {
        cells,
        records,
        results,
        best,
    })
}
