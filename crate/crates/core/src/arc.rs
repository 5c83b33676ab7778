//! Anchor-guided region correction.
//!
//! Anchors are prepended to every region. Each region's queries attend over the
//! keys and values of itself and its successor region, and the corrected rows with
//! the lowest gated-attention scores are then masked out.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::predictor::{gated_scores, PredictorVars, ScoredSet};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub const DEFAULT_MASK_RATIO: Real = 0.9;
pub const DEFAULT_HEADS: usize = 4;

/// Which region the last region attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborMode {
    /// Region `L−1` attends to region 0.
    #[default]
    Wrap,
    /// Region `L−1` attends to itself only.
    SelfLast,
}

impl NeighborMode {
    pub fn name(self) -> &'static str {
        match self {
            NeighborMode::Wrap => "wrap",
            NeighborMode::SelfLast => "self-last",
        }
    }

    pub fn neighbor(self, l: usize, regions: usize) -> usize {
        match self {
            NeighborMode::Wrap => (l + 1) % regions,
            NeighborMode::SelfLast if l + 1 == regions => l,
            NeighborMode::SelfLast => l + 1,
        }
    }
}

impl fmt::Display for NeighborMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wrap" => Ok(NeighborMode::Wrap),
            "self-last" => Ok(NeighborMode::SelfLast),
            _ => Err(Error::Config(format!("unknown neighbor mode `{s}` (wrap|self-last)"))),
        }
    }
}

/// Shared `D×D` query/key/value projections.
#[derive(Debug, Clone, Copy)]
pub struct ArcVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// `[anchors; region]`, anchors first. With no anchors the region is returned as is.
pub fn fuse_anchors(tape: &mut Tape, region: Var, anchors: Option<Var>) -> Result<Var> {
    match anchors {
        Some(a) if tape.value(a).rows() > 0 => tape.concat_rows(&[a, region]),
        _ => Ok(region),
    }
}

/// `softmax(Q·Kᵀ/√d)·V` for single-head attention.
fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, d: usize) -> Result<Var> {
    let logits = tape.matmul_nt(q, k)?;
    let logits = tape.scale(logits, 1.0 / (d as Real).sqrt());
    let attn = tape.softmax_rows(logits)?;
    tape.matmul(attn, v)
}

fn project_all(tape: &mut Tape, fused: &[Var], w: Var) -> Result<Vec<Var>> {
    fused.iter().map(|&f| tape.matmul(f, w)).collect()
}

/// Cross-region attention: region `l` attends over `[K_l; K_n]`, `[V_l; V_n]` with
/// `n` its neighbor under `mode`. When the neighbor is the region itself this is
/// plain self-attention over the region.
pub fn cross_attend(tape: &mut Tape, fused: &[Var], p: &ArcVars, mode: NeighborMode) -> Result<Vec<Var>> {
    if fused.is_empty() {
        return Err(Error::Empty("cross_attend"));
    }
    let d = tape.value(fused[0]).cols();
    let q = project_all(tape, fused, p.w_q)?;
    let k = project_all(tape, fused, p.w_k)?;
    let v = project_all(tape, fused, p.w_v)?;
    let l_total = fused.len();
    let mut out = Vec::with_capacity(l_total);
    for l in 0..l_total {
        let n = mode.neighbor(l, l_total);
        let (kk, vv) = if n == l {
            (k[l], v[l])
        } else {
            (tape.concat_rows(&[k[l], k[n]])?, tape.concat_rows(&[v[l], v[n]])?)
        };
        out.push(attend(tape, q[l], kk, vv, d)?);
    }
    Ok(out)
}

/// Per-region self-attention with the same projections (no neighbor).
pub fn acf_attend(tape: &mut Tape, fused: &[Var], p: &ArcVars) -> Result<Vec<Var>> {
    let d = fused.first().map(|&f| tape.value(f).cols()).ok_or(Error::Empty("acf_attend"))?;
    let mut out = Vec::with_capacity(fused.len());
    for &f in fused {
        let q = tape.matmul(f, p.w_q)?;
        let k = tape.matmul(f, p.w_k)?;
        let v = tape.matmul(f, p.w_v)?;
        out.push(attend(tape, q, k, v, d)?);
    }
    Ok(out)
}

/// Multi-head self-attention per region: projections are split into `heads`
/// column blocks of width `D/heads`, attended independently and concatenated.
pub fn mha_fuse(tape: &mut Tape, fused: &[Var], p: &ArcVars, heads: usize) -> Result<Vec<Var>> {
    let d = fused.first().map(|&f| tape.value(f).cols()).ok_or(Error::Empty("mha_fuse"))?;
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("dimension {d} is not divisible by {heads} heads")));
    }
    let mut out = Vec::with_capacity(fused.len());
    for &f in fused {
        let q = tape.matmul(f, p.w_q)?;
        let k = tape.matmul(f, p.w_k)?;
        let v = tape.matmul(f, p.w_v)?;
        out.push(multi_head(tape, q, k, v, heads)?);
    }
    Ok(out)
}

fn multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = tape.value(q).cols();
    if heads == 1 {
        return attend(tape, q, k, v, d);
    }
    let hd = d / heads;
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        per_head.push(attend(tape, qh, kh, vh, hd)?);
    }
    tape.concat_cols(&per_head)
}

/// Number of masked rows: `⌊r·n⌋`, capped so at least one row survives.
pub fn mask_count(n: usize, ratio: Real) -> usize {
    let m = (ratio * n as Real).floor() as usize;
    m.min(n.saturating_sub(1))
}

/// Indices (ascending) that survive masking the `⌊r·n⌋` lowest scores.
/// Among equal scores the higher index is dropped first.
pub fn kept_indices(scores: &[Real], ratio: Real) -> Vec<usize> {
    let n = scores.len();
    let m = mask_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    let mut dropped = vec![false; n];
    for &i in &order[..m] {
        dropped[i] = true;
    }
    (0..n).filter(|&i| !dropped[i]).collect()
}

/// One region after masking.
#[derive(Debug, Clone)]
pub struct CorrectedRegion {
    /// Kept rows with their raw scores, ready for the predictor.
    pub set: ScoredSet,
    /// Row indices into the region's fused features that survived.
    pub kept: Vec<usize>,
    /// Whether each kept row came from an anchor (vs. a native instance).
    pub from_anchor: Vec<bool>,
    /// Raw scores of the kept rows.
    pub scores: Vec<Real>,
}

/// Scores the corrected rows with the shared gated scorer and drops the lowest
/// `⌊r·(T+Z)⌋`. `fixed` overrides the ranking with a given kept set; mask indices are
/// constants with respect to differentiation either way.
pub fn mask_low_attention(
    tape: &mut Tape,
    corrected: Var,
    scorer: &PredictorVars,
    ratio: Real,
    anchors: usize,
    fixed: Option<&[usize]>,
) -> Result<CorrectedRegion> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let raw = gated_scores(tape, corrected, scorer)?;
    let all_scores = tape.value(raw).data().to_vec();
    let kept = match fixed {
        Some(k) => k.to_vec(),
        None => kept_indices(&all_scores, ratio),
    };
    let (feats, raw_kept) = if kept.len() == all_scores.len() {
        (corrected, raw)
    } else {
        (tape.gather_rows(corrected, &kept)?, tape.gather_rows(raw, &kept)?)
    };
    Ok(CorrectedRegion {
        set: ScoredSet {
            feats,
            raw: raw_kept,
        },
        from_anchor: kept.iter().map(|&i| i < anchors).collect(),
        scores: kept.iter().map(|&i| all_scores[i]).collect(),
        kept,
    })
}

/// Rows each region's queries attend over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attention {
    /// The region plus its neighbor under the given mode.
    Cross(NeighborMode),
    /// The region alone.
    SelfOnly,
}

/// Latent row indices of every fused region: anchors first, then the region.
pub fn fused_indices(anchors: &[usize], regions: &[Vec<usize>]) -> Vec<Vec<usize>> {
    regions
        .iter()
        .map(|r| anchors.iter().chain(r).copied().collect())
        .collect()
}

fn key_indices(fused: &[Vec<usize>], attention: Attention) -> Vec<Vec<usize>> {
    let l_total = fused.len();
    (0..l_total)
        .map(|l| match attention {
            Attention::Cross(mode) if mode.neighbor(l, l_total) != l => {
                let n = mode.neighbor(l, l_total);
                fused[l].iter().chain(&fused[n]).copied().collect()
            }
            _ => fused[l].clone(),
        })
        .collect()
}

/// Same rows as `fuse_anchors` followed by `cross_attend` (or `acf_attend`) and
/// `mask_low_attention`, computed from the shared latent matrix.
///
/// Every op involved is row-wise, so projections and scores are computed once per
/// latent row and gathered. The ranking that decides which rows survive runs on
/// detached copies, and only the surviving query rows are rebuilt on the tracked
/// graph. The values match the step-by-step path bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn attend_and_mask(
    tape: &mut Tape,
    latent: Var,
    fused: &[Vec<usize>],
    p: &ArcVars,
    scorer: &PredictorVars,
    attention: Attention,
    ratio: Real,
    fixed: Option<&[Vec<usize>]>,
) -> Result<Vec<(ScoredSet, Vec<usize>)>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1)")));
    }
    if fused.is_empty() {
        return Err(Error::Empty("attend_and_mask"));
    }
    let d = tape.value(latent).cols();
    let q = tape.matmul(latent, p.w_q)?;
    let k = tape.matmul(latent, p.w_k)?;
    let v = tape.matmul(latent, p.w_v)?;
    let keys = key_indices(fused, attention);

    let kept: Vec<Vec<usize>> = match fixed {
        Some(f) if f.len() == fused.len() => f.to_vec(),
        Some(f) => return Err(Error::shape("attend_and_mask", &[fused.len()], &[f.len()])),
        None => {
            let (qd, kd, vd) = (tape.detach(q), tape.detach(k), tape.detach(v));
            let sd = PredictorVars {
                attn_v: tape.detach(scorer.attn_v),
                attn_u: tape.detach(scorer.attn_u),
                attn_w: tape.detach(scorer.attn_w),
                ..*scorer
            };
            let mut kept = Vec::with_capacity(fused.len());
            for (rows, key) in fused.iter().zip(&keys) {
                let ql = tape.gather_rows(qd, rows)?;
                let kl = tape.gather_rows(kd, key)?;
                let vl = tape.gather_rows(vd, key)?;
                let out = attend(tape, ql, kl, vl, d)?;
                let raw = gated_scores(tape, out, &sd)?;
                kept.push(kept_indices(tape.value(raw).data(), ratio));
            }
            kept
        }
    };

    let mut sets = Vec::with_capacity(fused.len());
    for ((rows, key), keep) in fused.iter().zip(&keys).zip(kept) {
        let picked: Vec<usize> = keep
            .iter()
            .map(|&i| rows.get(i).copied().ok_or(Error::Index { index: i, len: rows.len() }))
            .collect::<Result<_>>()?;
        let ql = tape.gather_rows(q, &picked)?;
        let kl = tape.gather_rows(k, key)?;
        let vl = tape.gather_rows(v, key)?;
        let feats = attend(tape, ql, kl, vl, d)?;
        let raw = gated_scores(tape, feats, scorer)?;
        sets.push((ScoredSet { feats, raw }, keep));
    }
    Ok(sets)
}

/// `mha_fuse` over fused regions given as latent row indices, projecting each
/// latent row once.
pub fn mha_rows(tape: &mut Tape, latent: Var, fused: &[Vec<usize>], p: &ArcVars, heads: usize) -> Result<Vec<Var>> {
    let d = tape.value(latent).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("dimension {d} is not divisible by {heads} heads")));
    }
    let q = tape.matmul(latent, p.w_q)?;
    let k = tape.matmul(latent, p.w_k)?;
    let v = tape.matmul(latent, p.w_v)?;
    let mut out = Vec::with_capacity(fused.len());
    for rows in fused {
        let ql = tape.gather_rows(q, rows)?;
        let kl = tape.gather_rows(k, rows)?;
        let vl = tape.gather_rows(v, rows)?;
        out.push(multi_head(tape, ql, kl, vl, heads)?);
    }
    Ok(out)
}
