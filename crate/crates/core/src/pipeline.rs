//! Forward pass of every ablation variant, from a bag to its losses.

use std::fmt;
use std::str::FromStr;

use crate::arc::{self, Attention, NeighborMode, DEFAULT_HEADS, DEFAULT_MASK_RATIO};
use crate::bag::{Bag, RegionPartition};
use crate::dam::{self, Selector, DEFAULT_ALPHA, DEFAULT_K_PERCENT};
use crate::error::{Error, Result};
use crate::loss;
use crate::model::{ModelParams, ModelVars};
use crate::predictor::{self, Prediction, ScoredSet};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Which components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    /// Region features straight into the predictor: no projection, anchors or correction.
    Baseline,
    /// Anchors appended to every region, no attention correction.
    Dam,
    /// Anchors plus plain multi-head self-attention per region.
    DamMha,
    /// Anchors plus single-head self-attention per region, then masking.
    DamAcf,
    /// Anchors, cross-region attention with the neighbor region, then masking.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Dam,
        Variant::DamMha,
        Variant::DamAcf,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Dam => "dam",
            Variant::DamMha => "dam-mha",
            Variant::DamAcf => "dam-acf",
            Variant::Full => "full",
        }
    }

    pub fn uses_anchors(self) -> bool {
        self != Variant::Baseline
    }

    pub fn masks(self) -> bool {
        matches!(self, Variant::DamAcf | Variant::Full)
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
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (baseline|dam|dam-mha|dam-acf|full)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub selector: Selector,
    pub regions: usize,
    pub k_percent: Real,
    pub mask_ratio: Real,
    pub alpha: Real,
    pub neighbor: NeighborMode,
    pub heads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            selector: Selector::Dam,
            regions: 4,
            k_percent: DEFAULT_K_PERCENT,
            mask_ratio: DEFAULT_MASK_RATIO,
            alpha: DEFAULT_ALPHA,
            neighbor: NeighborMode::Wrap,
            heads: DEFAULT_HEADS,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.regions == 0 {
            return fail("regions must be at least 1".into());
        }
        if !(0.0..=100.0).contains(&self.k_percent) {
            return fail(format!("k_percent {} outside [0, 100]", self.k_percent));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return fail(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.heads == 0 {
            return fail("heads must be at least 1".into());
        }
        Ok(())
    }
}

/// Hard choices made during a forward pass. Passing them back in reproduces the
/// same discrete path, which finite-difference checks rely on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selections {
    pub anchors: Vec<usize>,
    /// Kept row indices per region (into the region's fused rows).
    pub kept: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: Var,
    pub loss_bag: Var,
    pub loss_region: Var,
    pub loss_mse: Option<Var>,
    pub prediction: Prediction,
    pub selections: Selections,
}

impl ForwardPass {
    pub fn bag_probs(&self, tape: &Tape) -> Vec<Real> {
        tape.value(self.prediction.bag_probs).data().to_vec()
    }

    pub fn scalar(tape: &Tape, v: Var) -> Real {
        tape.value(v).data()[0]
    }
}

/// Runs `bag` through the configured variant on `tape` and builds the total loss.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ModelVars,
    bag: &Bag,
    part: &RegionPartition,
    cfg: &PipelineConfig,
    fixed: Option<&Selections>,
) -> Result<ForwardPass> {
    if bag.dim() != params.dim() {
        return Err(Error::shape("forward", bag.features.shape(), &[params.dim()]));
    }
    if bag.label >= params.classes() {
        return Err(Error::Index {
            index: bag.label,
            len: params.classes(),
        });
    }
    if part.instances() != bag.len() {
        return Err(Error::shape("forward", &[bag.len()], &[part.instances()]));
    }
    let features = tape.constant(bag.features.detached());
    let mut selections = Selections::default();

    if cfg.variant == Variant::Baseline {
        let mut sets = Vec::with_capacity(part.len());
        for region in part.regions() {
            let feats = tape.gather_rows(features, region)?;
            let raw = predictor::gated_scores(tape, feats, &vars.pred)?;
            sets.push(ScoredSet { feats, raw });
        }
        return finish(tape, vars, bag.label, None, &sets, selections);
    }

    let latent = dam::project(tape, features, &vars.dam)?;
    let mse = loss::loss_mse(tape, features, latent)?;

    let anchors = match fixed {
        Some(f) => f.anchors.clone(),
        None => {
            let values = tape.value(latent);
            let emb = dam::embeddings(values, part)?;
            let scores = dam::selector_scores(cfg.selector, values, part, &emb, cfg.alpha, params.scorer())?;
            dam::top_k_indices(&scores, cfg.k_percent)?
        }
    };
    let fused = arc::fused_indices(&anchors, part.regions());
    selections.anchors = anchors;

    let mut sets = Vec::with_capacity(part.len());
    match cfg.variant {
        Variant::Dam => {
            // scores are row-wise, so each latent row is scored once
            let raw_all = predictor::gated_scores(tape, latent, &vars.pred)?;
            for rows in &fused {
                let feats = tape.gather_rows(latent, rows)?;
                let raw = tape.gather_rows(raw_all, rows)?;
                selections.kept.push((0..rows.len()).collect());
                sets.push(ScoredSet { feats, raw });
            }
        }
        Variant::DamMha => {
            for (rows, feats) in fused.iter().zip(arc::mha_rows(tape, latent, &fused, &vars.arc, cfg.heads)?) {
                let raw = predictor::gated_scores(tape, feats, &vars.pred)?;
                selections.kept.push((0..rows.len()).collect());
                sets.push(ScoredSet { feats, raw });
            }
        }
        Variant::DamAcf | Variant::Full => {
            let attention = if cfg.variant == Variant::Full {
                Attention::Cross(cfg.neighbor)
            } else {
                Attention::SelfOnly
            };
            let keep = fixed.map(|f| f.kept.as_slice());
            let corrected =
                arc::attend_and_mask(tape, latent, &fused, &vars.arc, &vars.pred, attention, cfg.mask_ratio, keep)?;
            for (set, kept) in corrected {
                selections.kept.push(kept);
                sets.push(set);
            }
        }
        Variant::Baseline => unreachable!(),
    }
    finish(tape, vars, bag.label, Some(mse), &sets, selections)
}

fn finish(
    tape: &mut Tape,
    vars: &ModelVars,
    label: usize,
    mse: Option<Var>,
    sets: &[ScoredSet],
    selections: Selections,
) -> Result<ForwardPass> {
    let prediction = predictor::predict(tape, sets, &vars.pred)?;
    let loss_region = loss::loss_region(tape, prediction.region_probs, label)?;
    let loss_bag = loss::loss_bag(tape, prediction.bag_probs, label)?;
    let total = loss::loss_total(tape, mse, loss_region, loss_bag)?;
    Ok(ForwardPass {
        loss: total,
        loss_bag,
        loss_region,
        loss_mse: mse,
        prediction,
        selections,
    })
}
