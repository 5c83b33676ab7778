//! Ablation grids: every cell is a full cross-validation run.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::bag::Bag;
use crate::dam::Selector;
use crate::error::{Error, Result};
use crate::metrics::{summarize, FoldReport, Summary};
use crate::pipeline::Variant;
use crate::tensor::Real;
use crate::train::{par_map, run_fold, TrainConfig};

pub const K_SWEEP: [Real; 8] = [0.0, 10.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0];
pub const R_SWEEP: [Real; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    Components,
    Selectors,
    KSweep,
    RSweep,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Components, Grid::Selectors, Grid::KSweep, Grid::RSweep];

    pub fn name(self) -> &'static str {
        match self {
            Grid::Components => "components",
            Grid::Selectors => "selectors",
            Grid::KSweep => "k-sweep",
            Grid::RSweep => "r-sweep",
        }
    }

    /// One `(label, config)` per cell, derived from `base`.
    pub fn cells(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = *base;
            f(&mut c);
            c
        };
        match self {
            Grid::Components => Variant::ALL
                .iter()
                .map(|&v| (v.name().to_string(), with(&|c| c.pipeline.variant = v)))
                .collect(),
            Grid::Selectors => Selector::ALL
                .iter()
                .map(|&s| (s.name().to_string(), with(&|c| c.pipeline.selector = s)))
                .collect(),
            Grid::KSweep => K_SWEEP
                .iter()
                .map(|&k| (format!("k={k}"), with(&|c| c.pipeline.k_percent = k)))
                .collect(),
            Grid::RSweep => R_SWEEP
                .iter()
                .map(|&r| (format!("r={r}"), with(&|c| c.pipeline.mask_ratio = r)))
                .collect(),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown grid `{s}` (components|selectors|k-sweep|r-sweep)")))
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub config: TrainConfig,
    pub reports: Vec<FoldReport>,
    pub summary: Summary,
    /// Mean over folds of the last epoch's mean training loss.
    pub final_loss: Real,
}

/// Runs every cell of `grid` with `folds`-fold cross-validation, spreading the
/// cell × fold jobs over `threads` threads.
pub fn run_grid(grid: Grid, bags: &[Bag], classes: usize, folds: usize, base: &TrainConfig, threads: usize) -> Result<Vec<CellResult>> {
    let cells = grid.cells(base);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let mut done = par_map(&jobs, threads, |&(c, f)| run_fold(bags, classes, folds, f, &cells[c].1)).into_iter();
    let mut out = Vec::with_capacity(cells.len());
    for (label, config) in cells {
        let mut reports = Vec::with_capacity(folds);
        let mut loss = 0.0;
        for _ in 0..folds {
            let (trained, report) = done.next().expect("one result per job")?;
            loss += trained.log.last().map_or(Real::NAN, |e| e.loss);
            reports.push(report);
        }
        out.push(CellResult {
            summary: summarize(&reports)?,
            final_loss: loss / folds as Real,
            label,
            config,
            reports,
        });
    }
    Ok(out)
}

pub const SUMMARY_HEADER: &str = "grid,cell,variant,selector,k_percent,mask_ratio,accuracy_mean,accuracy_std,auc_mean,auc_std,f1_mean,f1_std,final_loss,note";

/// One row per cell; `std` columns are population standard deviations over folds.
pub fn summary_csv(grid: Grid, cells: &[CellResult]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in cells {
        let p = &c.config.pipeline;
        let (auc_mean, auc_std) = c
            .summary
            .auc
            .map_or(("NA".to_string(), "NA".to_string()), |a| (format!("{:.6}", a.mean), format!("{:.6}", a.std)));
        // the note only matters where the selector is actually in play
        let note = if p.variant.uses_anchors() { p.selector.note().unwrap_or("") } else { "" };
        writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{:.6},{},{},{:.6},{:.6},{:.9},{}",
            grid,
            c.label,
            p.variant,
            p.selector,
            p.k_percent,
            p.mask_ratio,
            c.summary.accuracy.mean,
            c.summary.accuracy.std,
            auc_mean,
            auc_std,
            c.summary.f1.mean,
            c.summary.f1.std,
            c.final_loss,
            note
        )
        .unwrap();
    }
    s
}
