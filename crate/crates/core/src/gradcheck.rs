//! Central finite-difference gradient checking.

use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelVars, PARAM_COUNT};
use crate::pipeline::{forward, PipelineConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_STEP: Real = 1e-5;
/// Denominator floor for the relative error, so entries with vanishing
/// gradients are compared in absolute terms.
pub const REL_FLOOR: Real = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub entries: usize,
    pub max_rel_err: Real,
    /// `(tensor index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

/// `|a − b| / max(|a| + |b|, REL_FLOOR)`.
pub fn rel_err(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of `f` against central differences for every entry of
/// every tensor in `params`. `f` builds a scalar from the registered leaves.
pub fn check<F>(params: &[Tensor], step: Real, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (mut tape, vars, out) = eval(params)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<Real>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[Real]>::to_vec).unwrap_or_default())
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradReport {
        entries: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for ti in 0..work.len() {
        for ei in 0..work[ti].numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + step;
            let (t, _, o) = eval(&work)?;
            let plus = t.value(o).data()[0];
            work[ti].data_mut()[ei] = orig - step;
            let (t, _, o) = eval(&work)?;
            let minus = t.value(o).data()[0];
            work[ti].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic[ti][ei], numeric);
            report.entries += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((ti, ei));
            }
        }
    }
    Ok(report)
}

/// Checks `∂loss/∂θ` of the whole pipeline for every parameter entry. Anchor and
/// mask choices are taken from the unperturbed pass and held fixed, so the
/// perturbed passes differentiate the same discrete path.
pub fn check_pipeline(params: &ModelParams, bag: &Bag, cfg: &PipelineConfig) -> Result<GradReport> {
    let part = bag.partition(cfg.regions)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let fixed = forward(&mut tape, params, &vars, bag, &part, cfg, None)?.selections;

    let tensors: Vec<Tensor> = params.tensors().iter().map(|t| t.detached()).collect();
    check(&tensors, DEFAULT_STEP, |tape, vars| {
        let all: [Var; PARAM_COUNT] = vars
            .try_into()
            .map_err(|_| Error::Contract("parameter count changed".into()))?;
        let mv = ModelVars::from_array(all);
        Ok(forward(tape, params, &mv, bag, &part, cfg, Some(&fixed))?.loss)
    })
}
