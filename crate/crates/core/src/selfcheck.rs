//! Runtime oracle suite behind `ainet selfcheck`.
//!
//! Each check compares one operation against a slow, independent oracle on
//! seeded random inputs. The operations are taken from an [`Ops`] table so a
//! deliberately broken implementation can be swapped in to see the check fail.

use rand::Rng;

use crate::arc::kept_indices;
use crate::bag::Bag;
use crate::dam::top_k_indices;
use crate::error::Result;
use crate::gradcheck::{check_pipeline, GradReport};
use crate::metrics::auc_binary;
use crate::model::ModelParams;
use crate::pipeline::{PipelineConfig, Variant};
use crate::rng::substream;
use crate::synth::{generate_bag, signatures, SynthBag, SynthConfig};
use crate::tensor::Real;

const STREAM: &str = "selfcheck";
pub const GRAD_TOLERANCE: Real = 1e-4;
pub const AUC_TOLERANCE: Real = 1e-12;

type TopK = fn(&[Real], Real) -> Result<Vec<usize>>;
type Auc = fn(&[Real], &[bool]) -> Option<Real>;
type Kept = fn(&[Real], Real) -> Vec<usize>;
type Generate = fn(&SynthConfig, &[Vec<Real>], usize) -> Result<SynthBag>;
type Gradient = fn(&ModelParams, &Bag, &PipelineConfig) -> Result<GradReport>;

#[derive(Clone, Copy)]
pub struct Ops {
    pub top_k: TopK,
    pub auc: Auc,
    pub kept: Kept,
    pub generate: Generate,
    pub gradient: Gradient,
}

impl Default for Ops {
    fn default() -> Self {
        Self {
            top_k: top_k_indices,
            auc: auc_binary,
            kept: kept_indices,
            generate: generate_bag,
            gradient: check_pipeline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failures: usize, cases: usize, extra: String) -> Self {
        Self {
            name,
            passed: failures == 0,
            detail: format!("{failures}/{cases} failing{extra}"),
        }
    }
}

/// Draws from a small value set so ties are common.
fn tied_values(rng: &mut impl Rng, n: usize) -> Vec<Real> {
    let levels = rng.random_range(1..=n.max(1));
    (0..n).map(|_| rng.random_range(0..levels) as Real / levels as Real).collect()
}

fn oracle_top_k(w: &[Real], k_percent: Real) -> Vec<usize> {
    let t = (k_percent / 100.0 * w.len() as Real).floor() as usize;
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(t.min(w.len()));
    idx
}

fn oracle_auc(s: &[Real], pos: &[bool]) -> Option<Real> {
    let (mut num, mut pairs) = (0.0, 0usize);
    for i in (0..s.len()).filter(|&i| pos[i]) {
        for j in (0..s.len()).filter(|&j| !pos[j]) {
            pairs += 1;
            num += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    (pairs > 0).then(|| num / pairs as Real)
}

fn oracle_kept(s: &[Real], ratio: Real) -> Vec<usize> {
    let n = s.len();
    let m = ((ratio * n as Real).floor() as usize).min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap().then(b.cmp(&a)));
    let mut kept = idx[m..].to_vec();
    kept.sort_unstable();
    kept
}

pub fn check_top_k(ops: &Ops, cases: usize) -> Check {
    let mut rng = substream(0, STREAM, 1);
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(0..60);
        let w = tied_values(&mut rng, n);
        let k = rng.random_range(0..=100) as Real;
        if (ops.top_k)(&w, k).ok() != Some(oracle_top_k(&w, k)) {
            failures += 1;
        }
    }
    Check::new("top-k anchors vs full sort", failures, cases, String::new())
}

pub fn check_auc(ops: &Ops, cases: usize) -> Check {
    let mut rng = substream(0, STREAM, 2);
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.random_range(1..=200);
        let s = tied_values(&mut rng, n);
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let ok = match ((ops.auc)(&s, &pos), oracle_auc(&s, &pos)) {
            (Some(a), Some(b)) => (a - b).abs() <= AUC_TOLERANCE,
            (None, None) => true,
            _ => false,
        };
        failures += usize::from(!ok);
    }
    Check::new("AUC vs pairwise count", failures, cases, String::new())
}

pub fn check_mask(ops: &Ops, cases: usize) -> Check {
    let mut rng = substream(0, STREAM, 3);
    let mut failures = 0;
    for _ in 0..cases {
        let t = rng.random_range(0..40);
        let z = rng.random_range(1..80);
        let r: Real = rng.random_range(0.0..1.0);
        let s = tied_values(&mut rng, t + z);
        let kept = (ops.kept)(&s, r);
        let want = (t + z - ((r * (t + z) as Real).floor() as usize)).max(1);
        if kept.len() != want || kept != oracle_kept(&s, r) {
            failures += 1;
        }
    }
    Check::new("mask count and dropped set", failures, cases, String::new())
}

pub fn check_generator(ops: &Ops, bags: usize) -> Check {
    let cfg = SynthConfig {
        n_bags: bags,
        n_instances: 64,
        dim: 8,
        seed: 11,
        ..SynthConfig::default()
    };
    let sigs = match signatures(&cfg) {
        Ok(s) => s,
        Err(e) => return Check::new("bag label iff tumor present", 1, 1, format!(" ({e})")),
    };
    let mut failures = 0;
    for i in 0..bags {
        match (ops.generate)(&cfg, &sigs, i) {
            Ok(b) if (b.bag.label == 0) == (b.tumor_count() == 0) => {}
            _ => failures += 1,
        }
    }
    Check::new("bag label iff tumor present", failures, bags, String::new())
}

/// The tiny configuration the gradient check runs on.
pub fn gradient_fixture() -> Result<(Bag, PipelineConfig)> {
    let synth = SynthConfig {
        n_bags: 2,
        n_instances: 16,
        dim: 8,
        tumor_rate: 0.25,
        seed: 5,
        ..SynthConfig::default()
    };
    let bag = generate_bag(&synth, &signatures(&synth)?, 1)?.bag;
    let cfg = PipelineConfig {
        regions: 4,
        k_percent: 25.0,
        mask_ratio: 0.5,
        ..PipelineConfig::default()
    };
    Ok((bag, cfg))
}

pub fn check_gradients(ops: &Ops) -> Check {
    let run = || -> Result<(usize, Real)> {
        let (bag, base) = gradient_fixture()?;
        let params = ModelParams::init(8, 8, 2, 17)?;
        let mut failures = 0;
        let mut worst: Real = 0.0;
        for variant in Variant::ALL {
            let r = (ops.gradient)(&params, &bag, &PipelineConfig { variant, ..base })?;
            worst = worst.max(r.max_rel_err);
            failures += usize::from(!(r.max_rel_err < GRAD_TOLERANCE));
        }
        Ok((failures, worst))
    };
    match run() {
        Ok((failures, worst)) => Check::new(
            "loss gradient vs finite differences",
            failures,
            Variant::ALL.len(),
            format!(", worst relative error {worst:.2e}"),
        ),
        Err(e) => Check::new("loss gradient vs finite differences", 1, 1, format!(" ({e})")),
    }
}

pub fn run(ops: &Ops) -> Vec<Check> {
    vec![
        check_gradients(ops),
        check_top_k(ops, 1000),
        check_auc(ops, 100),
        check_mask(ops, 500),
        check_generator(ops, 2000),
    ]
}
