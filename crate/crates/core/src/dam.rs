//! Dual-level anchor mining.
//!
//! Instances are projected by a two-layer MLP, scored by their cosine similarity
//! to their own region's mean embedding and to the whole bag's mean embedding,
//! and the top `k%` become anchors. Scores are computed on plain values: the
//! ranking is a hard selection and gradients reach anchors only through the
//! row gather that extracts them.

use std::fmt;
use std::str::FromStr;

use crate::bag::RegionPartition;
use crate::error::{Error, Result};
use crate::predictor;
use crate::tape::{Tape, Var};
use crate::tensor::{cosine, Real, Tensor};

pub const DEFAULT_ALPHA: Real = 0.7;
pub const DEFAULT_K_PERCENT: Real = 20.0;

#[derive(Debug, Clone, Copy)]
pub struct DamVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `relu(x·W1 + b1)·W2 + b2`.
pub fn project(tape: &mut Tape, features: Var, p: &DamVars) -> Result<Var> {
    let h = tape.matmul(features, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, p.w2)?;
    tape.add_row(o, p.b2)
}

/// Mean embeddings of the whole bag and of each region.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub bag: Vec<Real>,
    pub regions: Vec<Vec<Real>>,
}

fn mean_of(latent: &Tensor, rows: impl Iterator<Item = usize>) -> Vec<Real> {
    let mut out = vec![0.0; latent.cols()];
    let mut n = 0usize;
    for i in rows {
        for (o, &x) in out.iter_mut().zip(latent.row(i)) {
            *o += x;
        }
        n += 1;
    }
    let inv = 1.0 / n as Real;
    out.iter_mut().for_each(|x| *x *= inv);
    out
}

pub fn embeddings(latent: &Tensor, part: &RegionPartition) -> Result<Embeddings> {
    if part.instances() != latent.rows() {
        return Err(Error::shape("embeddings", latent.shape(), &[part.instances()]));
    }
    if part.regions().iter().any(Vec::is_empty) {
        return Err(Error::Empty("embeddings region"));
    }
    Ok(Embeddings {
        bag: mean_of(latent, 0..latent.rows()),
        regions: part.regions().iter().map(|r| mean_of(latent, r.iter().copied())).collect(),
    })
}

/// `w = α·cos(f, f_reg(own region)) + (1−α)·cos(f, f_bag)` per instance.
pub fn anchor_weights(latent: &Tensor, part: &RegionPartition, emb: &Embeddings, alpha: Real) -> Result<Vec<Real>> {
    let region_of = part.region_of();
    (0..latent.rows())
        .map(|i| {
            let f = latent.row(i);
            let local = cosine(f, &emb.regions[region_of[i]])?;
            let global = cosine(f, &emb.bag)?;
            Ok(alpha * local + (1.0 - alpha) * global)
        })
        .collect()
}

/// Selected anchors: indices ranked by weight, their weights and features.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    pub weights: Vec<Real>,
    /// `T×D`
    pub features: Tensor,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `⌊k/100 · N⌋`.
pub fn anchor_count(k_percent: Real, n: usize) -> usize {
    ((k_percent / 100.0 * n as Real).floor() as usize).min(n)
}

/// Indices of the `⌊k%·N⌋` largest weights in descending order; ties go to the lower index.
pub fn top_k_indices(weights: &[Real], k_percent: Real) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::Contract(format!("k_percent {k_percent} outside [0, 100]")));
    }
    let t = anchor_count(k_percent, weights.len());
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let cmp = |&a: &usize, &b: &usize| weights[b].total_cmp(&weights[a]).then(a.cmp(&b));
    if t < order.len() && t > 0 {
        order.select_nth_unstable_by(t - 1, cmp);
    }
    order.truncate(t);
    order.sort_unstable_by(cmp);
    Ok(order)
}

pub fn select_anchors(latent: &Tensor, weights: &[Real], k_percent: Real) -> Result<AnchorSet> {
    if weights.len() != latent.rows() {
        return Err(Error::shape("select_anchors", latent.shape(), &[weights.len()]));
    }
    let indices = top_k_indices(weights, k_percent)?;
    let d = latent.cols();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in &indices {
        data.extend_from_slice(latent.row(i));
    }
    Ok(AnchorSet {
        weights: indices.iter().map(|&i| weights[i]).collect(),
        features: Tensor::matrix(indices.len(), d, data)?,
        indices,
    })
}

/// Instance-scoring rule used to pick anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Selector {
    /// Dual-level similarity.
    #[default]
    Dam,
    /// Gated-attention raw scores from the predictor's scorer.
    Attention,
    /// Largest latent coordinate of the instance. A stand-in: the source
    /// ablation names this selector without defining it.
    MaxPool,
    /// Bag-level similarity only (`α = 0`).
    Bag,
    /// Region-level similarity only (`α = 1`).
    Region,
}

impl Selector {
    pub const ALL: [Selector; 5] = [
        Selector::Attention,
        Selector::MaxPool,
        Selector::Bag,
        Selector::Region,
        Selector::Dam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Selector::Dam => "dam",
            Selector::Attention => "attention",
            Selector::MaxPool => "maxpool",
            Selector::Bag => "bag",
            Selector::Region => "region",
        }
    }

    /// Caveat to print next to results produced with this selector.
    pub fn note(self) -> Option<&'static str> {
        match self {
            Selector::MaxPool => Some("max-coordinate stand-in rule"),
            _ => None,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Selector::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown selector `{s}` (dam|attention|maxpool|bag|region)")))
    }
}

/// Gated scorer parameter values, for the attention selector.
#[derive(Debug, Clone, Copy)]
pub struct ScorerValues<'a> {
    pub attn_v: &'a Tensor,
    pub attn_u: &'a Tensor,
    pub attn_w: &'a Tensor,
}

/// Per-instance selection scores under `mode`.
pub fn selector_scores(
    mode: Selector,
    latent: &Tensor,
    part: &RegionPartition,
    emb: &Embeddings,
    alpha: Real,
    scorer: ScorerValues<'_>,
) -> Result<Vec<Real>> {
    match mode {
        Selector::Dam => anchor_weights(latent, part, emb, alpha),
        Selector::Bag => anchor_weights(latent, part, emb, 0.0),
        Selector::Region => anchor_weights(latent, part, emb, 1.0),
        Selector::Attention => Ok(predictor::raw_scores(
            latent,
            scorer.attn_v,
            scorer.attn_u,
            scorer.attn_w,
        )),
        Selector::MaxPool => Ok((0..latent.rows())
            .map(|i| latent.row(i).iter().copied().fold(Real::NEG_INFINITY, Real::max))
            .collect()),
    }
}
