//! Sweep orchestration: a Cartesian grid over the configured axes, one
//! isolated run per cell with a derived seed, optional worker-thread
//! parallelism, and deterministic aggregation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use psl_core::datakit::LabeledDataset;
use psl_core::rng::mix;

use crate::config::ExperimentConfig;
use crate::csvio::SweepRow;
use crate::error::{LabError, Result};
use crate::runner::{attack, run_experiment, RunOutput};

const TAG_CELL: u64 = 0xCE11;

/// One grid point. Axis indices are kept for seed derivation and stable
/// ordering; `None` means the axis is not swept and the base value rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub alpha: Option<f32>,
    pub epsilon: Option<f32>,
    pub lambda: Option<f32>,
    pub target: Option<usize>,
    pub percent: Option<f32>,
    /// (alpha, epsilon, lambda, target, percent) axis indices.
    pub axis_index: [usize; 5],
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = self.alpha {
            parts.push(format!("alpha{a}"));
        }
        if let Some(e) = self.epsilon {
            parts.push(format!("eps{e}"));
        }
        if let Some(l) = self.lambda {
            parts.push(format!("lambda{l}"));
        }
        if let Some(t) = self.target {
            parts.push(format!("target{t}"));
        }
        if let Some(p) = self.percent {
            parts.push(format!("pct{p}"));
        }
        if parts.is_empty() {
            parts.push("base".to_string());
        }
        parts.join("_")
    }

    /// The config this cell runs with: axis overrides plus the derived
    /// seed (documented so results are portable: cell seed =
    /// mix(base_seed, [TAG_CELL, axis indices...])).
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        if let Some(a) = self.alpha {
            cfg.attack_mode = "interpolate".into();
            cfg.attack_strength = a;
        }
        if let Some(e) = self.epsilon {
            cfg.attack_mode = "perturb".into();
            cfg.attack_strength = e;
        }
        if let Some(l) = self.lambda {
            cfg.attack_lambda = l;
        }
        if let Some(t) = self.target {
            cfg.target_class = t;
        }
        if let Some(p) = self.percent {
            cfg.poison_percent = p;
        }
        cfg.seed = self.seed;
        cfg
    }
}

/// Expands the configured axes into cells in deterministic order.
pub fn expand_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    if !cfg.sweep_alphas.is_empty() && !cfg.sweep_epsilons.is_empty() {
        return Err(LabError::config(
            "sweeping alpha and epsilon together is ambiguous; run one sweep per mode",
        ));
    }
    fn axis<T: Copy>(vals: &[T]) -> Vec<(usize, Option<T>)> {
        if vals.is_empty() {
            vec![(0, None)]
        } else {
            vals.iter().copied().enumerate().map(|(i, v)| (i, Some(v))).collect()
        }
    }
    let mut cells = Vec::new();
    for (ai, alpha) in axis(&cfg.sweep_alphas) {
        for (ei, epsilon) in axis(&cfg.sweep_epsilons) {
            for (li, lambda) in axis(&cfg.sweep_lambdas) {
                for (ti, target) in axis(&cfg.sweep_targets) {
                    for (pi, percent) in axis(&cfg.sweep_percents) {
                        let axis_index = [ai, ei, li, ti, pi];
                        let seed = mix(
                            cfg.seed,
                            &[TAG_CELL, ai as u64, ei as u64, li as u64, ti as u64, pi as u64],
                        );
                        cells.push(Cell { alpha, epsilon, lambda, target, percent, axis_index, seed });
                    }
                }
            }
        }
    }
    Ok(cells)
}

pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<(RunOutput, crate::runner::AttackOutput), String>,
}

/// Runs every cell (worker threads up to `cfg.workers`), returning
/// results in deterministic cell order. Failures are recorded per cell
/// and do not abort the sweep.
pub fn run_cells(
    cfg: &ExperimentConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    surrogate: Option<&psl_core::model::DeskCnn>,
    mut per_cell: impl FnMut(&Cell, &std::result::Result<(RunOutput, crate::runner::AttackOutput), String>) -> Result<()>,
) -> Result<Vec<CellResult>> {
    let cells = expand_cells(cfg)?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<CellResult>>> = (0..cells.len()).map(|_| Mutex::new(None)).collect();
    let workers = cfg.workers.max(1).min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = cells[i].clone();
                let cell_cfg = cell.apply(cfg);
                let outcome = (|| -> Result<(RunOutput, crate::runner::AttackOutput)> {
                    let atk = attack(&cell_cfg, train_set, surrogate)?;
                    let run = run_experiment(&cell_cfg, &atk.combined, test_set)?;
                    Ok((run, atk))
                })()
                .map_err(|e| e.to_string());
                *slots[i].lock().expect("cell slot") = Some(CellResult { cell, outcome });
            });
        }
    });

    let mut results = Vec::with_capacity(cells.len());
    for slot in slots {
        let r = slot.into_inner().expect("cell slot").expect("cell completed");
        per_cell(&r.cell, &r.outcome)?;
        results.push(r);
    }
    Ok(results)
}

/// Aggregates cell results into one row per non-target cell combination,
/// averaging final ASR and accuracy over the target-class trials.
pub fn aggregate(cfg: &ExperimentConfig, results: &[CellResult]) -> Vec<SweepRow> {
    use std::collections::BTreeMap;
    // group key: every axis index except target
    let mut groups: BTreeMap<[usize; 4], Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        let [ai, ei, li, _, pi] = r.cell.axis_index;
        groups.entry([ai, ei, li, pi]).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (_, members) in groups {
        let ok: Vec<&&CellResult> = members.iter().filter(|m| m.outcome.is_ok()).collect();
        if ok.is_empty() {
            continue;
        }
        let first = &ok[0].cell;
        let n = ok.len() as f32;
        let mean_asr = ok
            .iter()
            .map(|m| m.outcome.as_ref().expect("filtered").0.report.attack_success_rate)
            .sum::<f32>()
            / n;
        let mean_acc = ok
            .iter()
            .map(|m| m.outcome.as_ref().expect("filtered").0.report.test_accuracy)
            .sum::<f32>()
            / n;
        rows.push(SweepRow {
            alpha: first.alpha.unwrap_or(if cfg.attack_mode == "interpolate" { cfg.attack_strength } else { 0.0 }),
            epsilon: first.epsilon.unwrap_or(if cfg.attack_mode == "perturb" { cfg.attack_strength } else { 0.0 }),
            lambda: first.lambda.unwrap_or(cfg.attack_lambda),
            percent: first.percent.unwrap_or(cfg.poison_percent),
            target_trials: ok.len(),
            mean_asr,
            mean_test_acc: mean_acc,
        });
    }
    rows
}
