//! Finite-difference checks for every differentiable primitive and the full pipeline.

use ainet_core::gradcheck::{check, check_pipeline, DEFAULT_STEP};
use ainet_core::model::ModelParams;
use ainet_core::pipeline::{PipelineConfig, Variant};
use ainet_core::synth::{generate_bag, signatures, SynthConfig};
use ainet_core::{Real, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: Real = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_grad<F>(name: &str, params: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let report = check(params, DEFAULT_STEP, f).unwrap();
    assert!(
        report.max_rel_err < TOL,
        "{name}: max relative error {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

/// Reduces any tensor to a scalar with fixed, non-uniform weights so that every
/// output element contributes a distinct adjoint.
fn weighted_sum(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i as Real) * 0.7 + 0.3).sin()).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

#[test]
fn primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let c = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);
    let pos = Tensor::new(vec![3, 4], a.data().iter().map(|x| x.abs() + 0.5).collect()).unwrap();

    assert_grad("matmul", &[a.clone(), b.clone()], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert_grad("matmul_nt", &[a.clone(), c.clone()], |t, v| {
        let y = t.matmul_nt(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert_grad("add/sub/mul", &[a.clone(), c.clone()], |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let k = t.scale(m, -1.7);
        weighted_sum(t, k)
    });
    assert_grad("add_row", &[a.clone(), row.clone()], |t, v| {
        let y = t.add_row(v[0], v[1])?;
        weighted_sum(t, y)
    });
    assert_grad("relu", &[a.clone()], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y)
    });
    assert_grad("tanh/sigmoid", &[a.clone()], |t, v| {
        let x = t.tanh(v[0]);
        let y = t.sigmoid(x);
        weighted_sum(t, y)
    });
    assert_grad("log", &[pos.clone()], |t, v| {
        let y = t.log(v[0]);
        weighted_sum(t, y)
    });
    assert_grad("softmax_rows", &[a.clone()], |t, v| {
        let y = t.softmax_rows(v[0])?;
        weighted_sum(t, y)
    });
    assert_grad("mean_rows", &[a.clone()], |t, v| {
        let y = t.mean_rows(v[0])?;
        weighted_sum(t, y)
    });
    assert_grad("concat_rows/cols", &[a.clone(), c.clone()], |t, v| {
        let r = t.concat_rows(&[v[0], v[1]])?;
        let k = t.concat_cols(&[v[1], v[0]])?;
        let s1 = weighted_sum(t, r)?;
        let s2 = weighted_sum(t, k)?;
        t.add(s1, s2)
    });
    assert_grad("slice/transpose", &[a.clone()], |t, v| {
        let s = t.slice_cols(v[0], 1, 2)?;
        let y = t.transpose(s)?;
        weighted_sum(t, y)
    });
    assert_grad("gather/select/reshape", &[a.clone()], |t, v| {
        let g = t.gather_rows(v[0], &[2, 0, 2])?;
        let r = t.reshape(g, &[12])?;
        let s = t.select(r, &[0, 5, 5, 11])?;
        weighted_sum(t, s)
    });
    assert_grad("sq_diff_sum", &[a.clone(), c.clone()], |t, v| t.sq_diff_sum(v[0], v[1]));
    assert_grad("clamp", &[a], |t, v| {
        let y = t.clamp(v[0], -0.5, 0.5);
        weighted_sum(t, y)
    });
}

fn tiny_bag(seed: u64, index: usize) -> ainet_core::Bag {
    let cfg = SynthConfig {
        n_instances: 16,
        dim: 8,
        tumor_rate: 0.25,
        seed,
        ..SynthConfig::default()
    };
    let sigs = signatures(&cfg).unwrap();
    generate_bag(&cfg, &sigs, index).unwrap().bag
}

fn pipeline_check(variant: Variant, hidden: usize) -> Real {
    let bag = tiny_bag(5, 1);
    let cfg = PipelineConfig {
        variant,
        regions: 4,
        k_percent: 25.0,
        mask_ratio: 0.5,
        ..PipelineConfig::default()
    };
    let params = ModelParams::init(8, hidden, 2, 17).unwrap();
    check_pipeline(&params, &bag, &cfg).unwrap().max_rel_err
}

#[test]
fn full_pipeline_matches_finite_differences() {
    let err = pipeline_check(Variant::Full, 16);
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn every_variant_matches_finite_differences() {
    for v in [Variant::Baseline, Variant::Dam, Variant::DamMha, Variant::DamAcf] {
        let err = pipeline_check(v, 8);
        assert!(err < TOL, "{v}: max relative error {err}");
    }
}
