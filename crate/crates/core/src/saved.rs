//! A trained model together with the settings needed to run it again.
//!
//! The settings travel in the `.aipm` file as one-element `meta.*` tensors next
//! to the parameters, so evaluation needs nothing but the model file.

use std::path::Path;

use crate::arc::NeighborMode;
use crate::dam::Selector;
use crate::error::{Error, Result};
use crate::model::{read_aipm, write_aipm, ModelParams};
use crate::pipeline::{PipelineConfig, Variant};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub pipeline: PipelineConfig,
    /// Seed the model was trained with; it also fixes the fold assignment.
    pub seed: u64,
}

fn meta(name: &str, v: Real) -> (String, Tensor) {
    (format!("meta.{name}"), Tensor::vector(vec![v]))
}

fn index_of<T: PartialEq>(all: &[T], x: &T) -> Real {
    all.iter().position(|a| a == x).unwrap_or(0) as Real
}

const NEIGHBORS: [NeighborMode; 2] = [NeighborMode::Wrap, NeighborMode::SelfLast];

impl SavedModel {
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let p = &self.pipeline;
        let mut out = self.params.named();
        out.extend([
            meta("variant", index_of(&Variant::ALL, &p.variant)),
            meta("selector", index_of(&Selector::ALL, &p.selector)),
            meta("regions", p.regions as Real),
            meta("k_percent", p.k_percent),
            meta("mask_ratio", p.mask_ratio),
            meta("alpha", p.alpha),
            meta("neighbor", index_of(&NEIGHBORS, &p.neighbor)),
            meta("heads", p.heads as Real),
            // 64-bit seeds do not fit a float exactly, so they are stored in halves
            meta("seed_hi", (self.seed >> 32) as Real),
            meta("seed_lo", (self.seed & 0xffff_ffff) as Real),
        ]);
        out
    }

    pub fn from_named(named: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| -> Result<Real> {
            let key = format!("meta.{name}");
            named
                .iter()
                .find(|(n, _)| *n == key)
                .and_then(|(_, t)| (t.numel() == 1).then(|| t.data()[0]))
                .ok_or_else(|| Error::Config(format!("model file lacks {key}")))
        };
        let index = |name: &str, len: usize| -> Result<usize> {
            let v = get(name)?;
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < len {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("model file has invalid meta.{name} = {v}")))
            }
        };
        let pipeline = PipelineConfig {
            variant: Variant::ALL[index("variant", Variant::ALL.len())?],
            selector: Selector::ALL[index("selector", Selector::ALL.len())?],
            regions: index("regions", usize::MAX)?,
            k_percent: get("k_percent")?,
            mask_ratio: get("mask_ratio")?,
            alpha: get("alpha")?,
            neighbor: NEIGHBORS[index("neighbor", NEIGHBORS.len())?],
            heads: index("heads", usize::MAX)?,
        };
        pipeline.validate()?;
        let half = 1usize << 32;
        let seed = ((index("seed_hi", half)? as u64) << 32) | index("seed_lo", half)? as u64;
        Ok(Self {
            params: ModelParams::from_named(named)?,
            pipeline,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_aipm(path, &self.to_named())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&read_aipm(path)?)
    }
}
