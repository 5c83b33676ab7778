//! Learnable parameters of the full pipeline and the `.aipm` model file.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::arc::ArcVars;
use crate::bag::Reader;
use crate::dam::{DamVars, ScorerValues};
use crate::error::{Error, FormatError, Result};
use crate::optim::ParamSlot;
use crate::predictor::PredictorVars;
use crate::rng::{substream, INIT};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const PARAM_COUNT: usize = 12;

pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "dam.mlp_w1",
    "dam.mlp_b1",
    "dam.mlp_w2",
    "dam.mlp_b2",
    "arc.w_q",
    "arc.w_k",
    "arc.w_v",
    "pred.attn_v",
    "pred.attn_u",
    "pred.attn_w",
    "pred.cls_w",
    "pred.cls_b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub attn_v: Tensor,
    pub attn_u: Tensor,
    pub attn_w: Tensor,
    pub cls_w: Tensor,
    pub cls_b: Tensor,
}

/// All parameters registered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub dam: DamVars,
    pub arc: ArcVars,
    pub pred: PredictorVars,
    pub all: [Var; PARAM_COUNT],
}

impl ModelVars {
    /// Groups vars given in [`PARAM_NAMES`] order.
    pub fn from_array(all: [Var; PARAM_COUNT]) -> Self {
        Self {
            dam: DamVars {
                w1: all[0],
                b1: all[1],
                w2: all[2],
                b2: all[3],
            },
            arc: ArcVars {
                w_q: all[4],
                w_k: all[5],
                w_v: all[6],
            },
            pred: PredictorVars {
                attn_v: all[7],
                attn_u: all[8],
                attn_w: all[9],
                cls_w: all[10],
                cls_b: all[11],
            },
            all,
        }
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with("_b1") || name.ends_with("_b2") || name.ends_with("cls_b")
}

impl ModelParams {
    /// Weights uniform in `±√(6/(fan_in+fan_out))`, biases zero, drawn from the
    /// `init` substream of `seed`.
    pub fn init(dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "invalid model size dim={dim} hidden={hidden} classes={classes}"
            )));
        }
        let shapes: [&[usize]; PARAM_COUNT] = [
            &[dim, dim],
            &[dim],
            &[dim, dim],
            &[dim],
            &[dim, dim],
            &[dim, dim],
            &[dim, dim],
            &[dim, hidden],
            &[dim, hidden],
            &[hidden, 1],
            &[dim, classes],
            &[classes],
        ];
        let mut made: Vec<Tensor> = Vec::with_capacity(PARAM_COUNT);
        for (i, (shape, name)) in shapes.iter().zip(PARAM_NAMES).enumerate() {
            let t = if is_bias(name) {
                Tensor::zeros(shape)
            } else {
                let bound = (6.0 / (shape[0] + shape[1]) as Real).sqrt();
                let mut rng = substream(seed, INIT, i as u64);
                let n = shape[0] * shape[1];
                let data = (0..n)
                    .map(|_| (rng.random::<f64>() as Real * 2.0 - 1.0) * bound)
                    .collect();
                Tensor::new(shape.to_vec(), data)?
            };
            made.push(t.with_grad());
        }
        Self::from_tensors(made)
    }

    fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let arr: [Tensor; PARAM_COUNT] = ts
            .try_into()
            .map_err(|_| Error::Contract("wrong parameter count".into()))?;
        let [mlp_w1, mlp_b1, mlp_w2, mlp_b2, w_q, w_k, w_v, attn_v, attn_u, attn_w, cls_w, cls_b] = arr;
        let p = Self {
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            w_q,
            w_k,
            w_v,
            attn_v,
            attn_u,
            attn_w,
            cls_w,
            cls_b,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let (d, h, c) = (self.dim(), self.hidden(), self.classes());
        let want: [Vec<usize>; PARAM_COUNT] = [
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d, h],
            vec![d, h],
            vec![h, 1],
            vec![d, c],
            vec![c],
        ];
        for ((t, w), name) in self.tensors().iter().zip(&want).zip(PARAM_NAMES) {
            if t.shape() != w.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {w:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mlp_w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.attn_v.cols()
    }

    pub fn classes(&self) -> usize {
        self.cls_w.cols()
    }

    pub fn tensors(&self) -> [&Tensor; PARAM_COUNT] {
        [
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.attn_v,
            &self.attn_u,
            &self.attn_w,
            &self.cls_w,
            &self.cls_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; PARAM_COUNT] {
        [
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.attn_v,
            &mut self.attn_u,
            &mut self.attn_w,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }

    /// Optimizer slots: decay on weights, not biases.
    pub fn slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.tensors_mut()
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(tensor, name)| ParamSlot {
                tensor,
                decay: !is_bias(name),
            })
            .collect()
    }

    pub fn scorer(&self) -> ScorerValues<'_> {
        ScorerValues {
            attn_v: &self.attn_v,
            attn_u: &self.attn_u,
            attn_w: &self.attn_w,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars::from_array(self.tensors().map(|t| tape.param(t)))
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Adds the gradients accumulated on `tape` into the parameters' buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ModelVars) -> Result<()> {
        for (t, &v) in self.tensors_mut().into_iter().zip(&vars.all) {
            tape.accumulate_into(v, t)?;
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        PARAM_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (n.to_string(), t.detached()))
            .collect()
    }

    /// Rebuilds parameters from named tensors; names outside the parameter set are ignored.
    pub fn from_named(named: &[(String, Tensor)]) -> Result<Self> {
        let mut ts = Vec::with_capacity(PARAM_COUNT);
        for name in PARAM_NAMES {
            let t = named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.detached().with_grad())
                .ok_or_else(|| Error::Config(format!("model file lacks parameter {name}")))?;
            ts.push(t);
        }
        Self::from_tensors(ts)
    }
}

pub const AIPM_MAGIC: [u8; 4] = *b"AIPM";
pub const AIPM_VERSION: u32 = 1;

pub fn encode_named(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&AIPM_MAGIC);
    out.extend_from_slice(&AIPM_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    out
}

pub fn decode_named(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(AIPM_MAGIC)?;
    let version = r.u32()?;
    if version != AIPM_VERSION {
        return Err(FormatError::Version {
            expected: AIPM_VERSION,
            found: version,
        });
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FormatError::BadName("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if !(1..=2).contains(&rank) {
            return Err(FormatError::Invalid(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Invalid(format!("tensor {name} is too large")))?;
        let mut data = Vec::with_capacity(n.min(bytes.len() / 8));
        for i in 0..n {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite(i));
            }
            data.push(v as Real);
        }
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Invalid(e.to_string()))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

pub fn write_aipm(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_named(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_aipm(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_named(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
