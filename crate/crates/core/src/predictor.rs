//! Gated-attention MIL head.
//!
//! Raw instance scores are `wᵀ(tanh(Vᵀf) ⊙ sigmoid(Uᵀf))`. A softmax over a set of
//! raw scores gives pooling weights; the pooled vector goes through a linear
//! classifier and a softmax. The same parameters serve every region head, the bag
//! head and the ARC masking scorer.

use crate::error::{Error, Result};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::{matmul_raw, Real, Tensor};

pub const DEFAULT_HIDDEN: usize = 128;

/// Predictor parameters bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct PredictorVars {
    /// `D×H`
    pub attn_v: Var,
    /// `D×H`
    pub attn_u: Var,
    /// `H×1`
    pub attn_w: Var,
    /// `D×C`
    pub cls_w: Var,
    /// `C`
    pub cls_b: Var,
}

/// Raw (pre-softmax) scores for the rows of `feats`, as an `S×1` column.
pub fn gated_scores(tape: &mut Tape, feats: Var, p: &PredictorVars) -> Result<Var> {
    let a = tape.matmul(feats, p.attn_v)?;
    let a = tape.tanh(a);
    let g = tape.matmul(feats, p.attn_u)?;
    let g = tape.sigmoid(g);
    let h = tape.mul(a, g)?;
    tape.matmul(h, p.attn_w)
}

/// Softmax of an `S×1` raw-score column, returned as a `1×S` row of pooling weights.
pub fn pooling_weights(tape: &mut Tape, raw: Var) -> Result<Var> {
    let s = tape.value(raw).numel();
    if s == 0 {
        return Err(Error::Empty("pooling_weights"));
    }
    let row = tape.reshape(raw, &[1, s])?;
    tape.softmax_rows(row)
}

/// Attention-weighted mean of `feats` (`S×D`) under raw scores `raw` (`S×1`): a `1×D` row.
pub fn pool(tape: &mut Tape, feats: Var, raw: Var) -> Result<Var> {
    let w = pooling_weights(tape, raw)?;
    tape.matmul(w, feats)
}

/// Class probabilities (`1×C`) for a pooled `1×D` row.
pub fn classify(tape: &mut Tape, pooled: Var, p: &PredictorVars) -> Result<Var> {
    let logits = tape.matmul(pooled, p.cls_w)?;
    let logits = tape.add_row(logits, p.cls_b)?;
    tape.softmax_rows(logits)
}

/// Features that survived masking in one region, with their raw scores.
#[derive(Debug, Clone, Copy)]
pub struct ScoredSet {
    /// `S×D`
    pub feats: Var,
    /// `S×1`
    pub raw: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    /// `L×C`
    pub region_probs: Var,
    /// `1×C`
    pub bag_probs: Var,
}

/// Region heads pool each region's kept set; the bag head pools the union of all
/// kept sets (in region order) with the same scorer and classifier.
pub fn predict(tape: &mut Tape, regions: &[ScoredSet], p: &PredictorVars) -> Result<Prediction> {
    if regions.is_empty() {
        return Err(Error::Empty("predict"));
    }
    let mut per_region = Vec::with_capacity(regions.len());
    for r in regions {
        let pooled = pool(tape, r.feats, r.raw)?;
        per_region.push(classify(tape, pooled, p)?);
    }
    let region_probs = tape.concat_rows(&per_region)?;

    let (bag_feats, bag_raw) = if regions.len() == 1 {
        (regions[0].feats, regions[0].raw)
    } else {
        let f: Vec<Var> = regions.iter().map(|r| r.feats).collect();
        let s: Vec<Var> = regions.iter().map(|r| r.raw).collect();
        (tape.concat_rows(&f)?, tape.concat_rows(&s)?)
    };
    let pooled = pool(tape, bag_feats, bag_raw)?;
    let bag_probs = classify(tape, pooled, p)?;
    Ok(Prediction {
        region_probs,
        bag_probs,
    })
}

/// Forward-only raw scores from plain parameter values.
pub fn raw_scores(feats: &Tensor, attn_v: &Tensor, attn_u: &Tensor, attn_w: &Tensor) -> Vec<Real> {
    let (s, d, h) = (feats.rows(), feats.cols(), attn_v.cols());
    let a = matmul_raw(feats.data(), attn_v.data(), s, d, h);
    let g = matmul_raw(feats.data(), attn_u.data(), s, d, h);
    (0..s)
        .map(|i| {
            (0..h)
                .map(|j| a[i * h + j].tanh() * sigmoid(g[i * h + j]) * attn_w.data()[j])
                .sum()
        })
        .collect()
}
