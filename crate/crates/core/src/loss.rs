//! Training objectives: feature-consistency MSE, region and bag cross-entropy, and their sum.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Probabilities are clamped into `[PROB_FLOOR, 1 − PROB_FLOOR]` before the log.
pub const PROB_FLOOR: Real = 1e-12;

/// `(1/N) Σ_i ‖f_ins[i] − f_latent[i]‖²` over an `N×D` pair.
pub fn loss_mse(tape: &mut Tape, f_ins: Var, f_latent: Var) -> Result<Var> {
    let n = tape.value(f_ins).rows();
    if n == 0 {
        return Err(Error::Empty("loss_mse"));
    }
    let s = tape.sq_diff_sum(f_ins, f_latent)?;
    Ok(tape.scale(s, 1.0 / n as Real))
}

/// Mean over rows of `−log p[label]` for an `M×C` probability matrix.
pub fn cross_entropy(tape: &mut Tape, probs: Var, label: usize) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let (m, c) = match shape[..] {
        [m, c] => (m, c),
        [c] => (1, c),
        _ => unreachable!("tensors have rank 1 or 2"),
    };
    if label >= c {
        return Err(Error::Index { index: label, len: c });
    }
    if m == 0 {
        return Err(Error::Empty("cross_entropy"));
    }
    let idx: Vec<usize> = (0..m).map(|i| i * c + label).collect();
    let picked = tape.select(probs, &idx)?;
    let clamped = tape.clamp(picked, PROB_FLOOR, 1.0 - PROB_FLOOR);
    let logs = tape.log(clamped);
    let total = tape.sum(logs);
    Ok(tape.scale(total, -1.0 / m as Real))
}

/// Region-level loss: every region inherits the bag label.
pub fn loss_region(tape: &mut Tape, region_probs: Var, label: usize) -> Result<Var> {
    cross_entropy(tape, region_probs, label)
}

pub fn loss_bag(tape: &mut Tape, bag_probs: Var, label: usize) -> Result<Var> {
    cross_entropy(tape, bag_probs, label)
}

/// `bag + region + mse`, evaluated in that order. `mse` is absent for the baseline.
pub fn loss_total(tape: &mut Tape, mse: Option<Var>, region: Var, bag: Var) -> Result<Var> {
    let s = tape.add(bag, region)?;
    match mse {
        Some(m) => tape.add(s, m),
        None => Ok(s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(tape: &Tape, v: Var) -> Real {
        tape.value(v).data()[0]
    }

    #[test]
    fn mse_closed_forms() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap());
        let l = loss_mse(&mut tape, a, a).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
        let shifted: Vec<Real> = tape.value(a).data().iter().map(|x| x + 1.0).collect();
        let b = tape.constant(Tensor::matrix(2, 3, shifted).unwrap());
        let l = loss_mse(&mut tape, a, b).unwrap();
        assert!((scalar(&tape, l) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mse_matches_summation_oracle() {
        let x: [Real; 6] = [0.3, -1.1, 2.0, 0.7, -0.4, 1.9];
        let y = [1.3, 0.2, -0.5, 0.7, 0.6, 2.4];
        let oracle: Real = (0..3)
            .map(|i| (0..2).map(|j| (x[i * 2 + j] - y[i * 2 + j]).powi(2)).sum::<Real>())
            .sum::<Real>()
            / 3.0;
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(3, 2, x.to_vec()).unwrap());
        let b = tape.constant(Tensor::matrix(3, 2, y.to_vec()).unwrap());
        let l = loss_mse(&mut tape, a, b).unwrap();
        assert!((scalar(&tape, l) - oracle).abs() < 1e-12);
        let c = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(loss_mse(&mut tape, a, c).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut tape = Tape::new();
        let sure = tape.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap());
        let l = loss_region(&mut tape, sure, 1).unwrap();
        assert!(scalar(&tape, l) < 1e-11);
        let half = tape.constant(Tensor::matrix(3, 2, vec![0.5; 6]).unwrap());
        let l = loss_region(&mut tape, half, 0).unwrap();
        assert!((scalar(&tape, l) - (2.0 as Real).ln()).abs() < 1e-12);
        let third = tape.constant(Tensor::matrix(1, 3, vec![1.0 / 3.0; 3]).unwrap());
        let l = loss_bag(&mut tape, third, 2).unwrap();
        assert!((scalar(&tape, l) - (3.0 as Real).ln()).abs() < 1e-12);
        // confident mistake stays finite
        let wrong = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let l = loss_bag(&mut tape, wrong, 1).unwrap();
        assert!((scalar(&tape, l) - (1e12 as Real).ln()).abs() < 1e-9);
        assert!(loss_bag(&mut tape, wrong, 2).is_err());
    }

    #[test]
    fn mixed_region_confidences_match_oracle() {
        let p = [0.2, 0.8, 0.65, 0.35];
        let oracle = -((0.8 as Real).ln() + (0.35 as Real).ln()) / 2.0;
        let mut tape = Tape::new();
        let probs = tape.constant(Tensor::matrix(2, 2, p.to_vec()).unwrap());
        let l = loss_region(&mut tape, probs, 1).unwrap();
        assert!((scalar(&tape, l) - oracle).abs() < 1e-12);
    }

    #[test]
    fn total_is_plain_sum() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let t = loss_total(&mut tape, Some(z), z, z).unwrap();
        assert_eq!(scalar(&tape, t), 0.0);
        let (a, b, c) = (
            tape.constant(Tensor::scalar(0.1)),
            tape.constant(Tensor::scalar(0.2)),
            tape.constant(Tensor::scalar(0.3)),
        );
        let t = loss_total(&mut tape, Some(a), b, c).unwrap();
        assert!((scalar(&tape, t) - 0.6).abs() < 1e-15);
        assert_eq!(scalar(&tape, t), 0.3 + 0.2 + 0.1);
    }
}
