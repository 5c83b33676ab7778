//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Every key is optional and
//! falls back to its default; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

pub const DEFAULT_FOLDS: usize = 5;

/// Keys in the order [`RunConfig::to_text`] writes them, with a short description.
pub const KEYS: [(&str, &str); 24] = [
    ("seed", "run seed for init, shuffling, folds and generation"),
    ("epochs", "training epochs"),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "decoupled weight decay (weights only)"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    ("eps", "AdamW denominator epsilon"),
    ("variant", "baseline | dam | dam-mha | dam-acf | full"),
    ("selector", "dam | attention | maxpool | bag | region"),
    ("regions", "regions per bag"),
    ("k_percent", "anchor percentage in [0, 100]"),
    ("mask_ratio", "masked fraction in [0, 1)"),
    ("alpha", "region-vs-bag similarity mix in [0, 1]"),
    ("neighbor_mode", "wrap | self-last"),
    ("heads", "heads of the multi-head ablation arm"),
    ("hidden", "gated attention hidden width"),
    ("folds", "cross-validation folds"),
    ("n_classes", "number of classes"),
    ("n_bags", "generated bags"),
    ("n_instances", "instances per generated bag"),
    ("dim", "feature dimension of generated bags"),
    ("tumor_rate", "expected tumor fraction in positive bags"),
    ("n_morphologies", "morphology clusters per bag"),
    ("noise_sigma", "instance noise standard deviation"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub folds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            folds: DEFAULT_FOLDS,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn classes(&self) -> usize {
        self.synth.n_classes
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {line_no}: `{key}` given twice")));
            }
            cfg.set(key, value, line_no)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let t = &mut self.train;
        let p = &mut t.pipeline;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = parse_value(key, value, line)?;
                s.seed = t.seed;
            }
            "epochs" => t.epochs = parse_value(key, value, line)?,
            "lr" => t.optim.lr = parse_value(key, value, line)?,
            "weight_decay" => t.optim.weight_decay = parse_value(key, value, line)?,
            "beta1" => t.optim.beta1 = parse_value(key, value, line)?,
            "beta2" => t.optim.beta2 = parse_value(key, value, line)?,
            "eps" => t.optim.eps = parse_value(key, value, line)?,
            "variant" => p.variant = value.parse()?,
            "selector" => p.selector = value.parse()?,
            "regions" => p.regions = parse_value(key, value, line)?,
            "k_percent" => p.k_percent = parse_value(key, value, line)?,
            "mask_ratio" => p.mask_ratio = parse_value(key, value, line)?,
            "alpha" => p.alpha = parse_value(key, value, line)?,
            "neighbor_mode" => p.neighbor = value.parse()?,
            "heads" => p.heads = parse_value(key, value, line)?,
            "hidden" => t.hidden = parse_value(key, value, line)?,
            "folds" => self.folds = parse_value(key, value, line)?,
            "n_classes" => s.n_classes = parse_value(key, value, line)?,
            "n_bags" => s.n_bags = parse_value(key, value, line)?,
            "n_instances" => s.n_instances = parse_value(key, value, line)?,
            "dim" => s.dim = parse_value(key, value, line)?,
            "tumor_rate" => s.tumor_rate = parse_value(key, value, line)?,
            "n_morphologies" => s.n_morphologies = parse_value(key, value, line)?,
            "noise_sigma" => s.noise_sigma = parse_value(key, value, line)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        Ok(())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let p = &t.pipeline;
        let s = &self.synth;
        let values: [String; 24] = [
            t.seed.to_string(),
            t.epochs.to_string(),
            t.optim.lr.to_string(),
            t.optim.weight_decay.to_string(),
            t.optim.beta1.to_string(),
            t.optim.beta2.to_string(),
            t.optim.eps.to_string(),
            p.variant.to_string(),
            p.selector.to_string(),
            p.regions.to_string(),
            p.k_percent.to_string(),
            p.mask_ratio.to_string(),
            p.alpha.to_string(),
            p.neighbor.to_string(),
            p.heads.to_string(),
            t.hidden.to_string(),
            self.folds.to_string(),
            s.n_classes.to_string(),
            s.n_bags.to_string(),
            s.n_instances.to_string(),
            s.dim.to_string(),
            s.tumor_rate.to_string(),
            s.n_morphologies.to_string(),
            s.noise_sigma.to_string(),
        ];
        let mut out = String::new();
        for ((key, doc), value) in KEYS.iter().zip(values) {
            writeln!(out, "# {doc}\n{key} = {value}").unwrap();
        }
        out
    }
}
