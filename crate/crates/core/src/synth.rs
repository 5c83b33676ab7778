//! Synthetic weakly-labelled bags.
//!
//! Every bag mixes `G` Gaussian "morphologies" laid out as contiguous blocks along
//! the Z-order of its coordinate grid, so regions differ from each other. A bag of
//! class `c ≥ 1` carries a sparse set of tumor instances inside one morphology
//! block, each shifted by the class's unit signature direction; class 0 bags have
//! none. The bag label is positive exactly when a tumor instance is present.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bag::{morton_order, write_bag_file, write_manifest, Bag, ManifestRecord};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng, GENERATOR, SIGNATURE};
use crate::tensor::{Real, Tensor};

/// Scale applied to standard-normal morphology centers.
pub const CENTER_SCALE: Real = 3.0;
pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_bags: usize,
    pub n_instances: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub tumor_rate: Real,
    pub n_morphologies: usize,
    pub noise_sigma: Real,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_bags: 200,
            n_instances: 256,
            dim: 32,
            n_classes: 2,
            tumor_rate: 0.05,
            n_morphologies: 4,
            noise_sigma: 0.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.tumor_rate) {
            return fail(format!("tumor_rate {} outside [0, 1]", self.tumor_rate));
        }
        if self.n_instances == 0 || self.dim == 0 || self.n_morphologies == 0 {
            return fail("instances, dim and morphologies must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.n_classes > 1 + self.dim {
            return fail(format!(
                "{} classes need {} orthogonal signatures but dim is {}",
                self.n_classes,
                self.n_classes - 1,
                self.dim
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise {} must be finite and non-negative", self.noise_sigma));
        }
        Ok(())
    }

    /// Class of bag `index`; classes cycle so every class is equally represented.
    pub fn label_of(&self, index: usize) -> usize {
        index % self.n_classes
    }
}

/// A generated bag plus the ground truth the label was derived from.
#[derive(Debug, Clone)]
pub struct SynthBag {
    pub bag: Bag,
    pub tumor: Vec<bool>,
    pub morphology: Vec<usize>,
}

impl SynthBag {
    pub fn tumor_count(&self) -> usize {
        self.tumor.iter().filter(|&&t| t).count()
    }
}

fn gaussian(rng: &mut StreamRng) -> Real {
    let x: f64 = rng.sample(StandardNormal);
    x as Real
}

/// Unit-norm, mutually orthogonal signature directions for classes `1..C`.
pub fn signatures(cfg: &SynthConfig) -> Result<Vec<Vec<Real>>> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, SIGNATURE, 0);
    let mut out: Vec<Vec<Real>> = Vec::with_capacity(cfg.n_classes - 1);
    while out.len() < cfg.n_classes - 1 {
        let mut v: Vec<Real> = (0..cfg.dim).map(|_| gaussian(&mut rng)).collect();
        for u in &out {
            let proj: Real = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let n = v.iter().map(|x| x * x).sum::<Real>().sqrt();
        // a draw that is (numerically) inside the span so far is redrawn
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    Ok(out)
}

/// Generates bag `index`; independent of every other bag.
pub fn generate_bag(cfg: &SynthConfig, signatures: &[Vec<Real>], index: usize) -> Result<SynthBag> {
    cfg.validate()?;
    let (n, d, g) = (cfg.n_instances, cfg.dim, cfg.n_morphologies);
    let label = cfg.label_of(index);
    let mut rng = substream(cfg.seed, GENERATOR, index as u64);

    let centers: Vec<Vec<Real>> = (0..g)
        .map(|_| (0..d).map(|_| CENTER_SCALE * gaussian(&mut rng)).collect())
        .collect();

    let side = (n as f64).sqrt().ceil() as usize;
    let coords: Vec<(i32, i32)> = (0..n).map(|i| ((i % side) as i32, (i / side) as i32)).collect();

    // uniform morphology membership, laid out as contiguous Z-order blocks
    let mut counts = vec![0usize; g];
    for _ in 0..n {
        counts[rng.random_range(0..g)] += 1;
    }
    let order = morton_order(&coords);
    let mut morphology = vec![0usize; n];
    let mut blocks: Vec<Vec<usize>> = Vec::with_capacity(g);
    let mut start = 0;
    for (m, &c) in counts.iter().enumerate() {
        let block = order[start..start + c].to_vec();
        for &i in &block {
            morphology[i] = m;
        }
        blocks.push(block);
        start += c;
    }

    let mut tumor = vec![false; n];
    if label >= 1 {
        let occupied: Vec<usize> = (0..g).filter(|&m| counts[m] > 0).collect();
        let block = &blocks[occupied[rng.random_range(0..occupied.len())]];
        let p = (cfg.tumor_rate * n as Real / block.len() as Real).min(1.0);
        for &i in block {
            tumor[i] = (rng.random::<f64>() as Real) < p;
        }
        if !tumor.iter().any(|&t| t) {
            tumor[block[rng.random_range(0..block.len())]] = true;
        }
    }

    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let center = &centers[morphology[i]];
        for (j, &c) in center.iter().enumerate() {
            let mut x = c + cfg.noise_sigma * gaussian(&mut rng);
            if tumor[i] {
                x += signatures[label - 1][j];
            }
            data.push(x);
        }
    }
    let features = Tensor::matrix(n, d, data)?;
    let bag = Bag::new(format!("bag_{index:05}"), features, coords, label)?;
    Ok(SynthBag { bag, tumor, morphology })
}

/// Writes `n_bags` `.aifb` files and `manifest.csv` into `out_dir`; returns the manifest path.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sigs = signatures(cfg)?;
    let mut records = Vec::with_capacity(cfg.n_bags);
    for i in 0..cfg.n_bags {
        let sb = generate_bag(cfg, &sigs, i)?;
        let rel = format!("{}.aifb", sb.bag.id);
        let path = out_dir.join(&rel);
        write_bag_file(&sb.bag, &path)?;
        records.push(ManifestRecord {
            bag_id: sb.bag.id.clone(),
            rel_path: rel,
            path,
            label: sb.bag.label,
        });
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
