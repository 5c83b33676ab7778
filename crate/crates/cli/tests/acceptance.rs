//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Expected values come from the small oracles below, not from the library.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ainet_core::arc::{cross_attend, fuse_anchors, kept_indices, ArcVars};
use ainet_core::bag::{partition, read_bag_file, write_bag_file};
use ainet_core::dam::{anchor_weights, embeddings, select_anchors};
use ainet_core::loss::{loss_bag, loss_mse, loss_region, loss_total};
use ainet_core::metrics::auc_binary;
use ainet_core::model::{read_aipm, write_aipm};
use ainet_core::pipeline::forward;
use ainet_core::selfcheck::{check_gradients, Ops};
use ainet_core::synth::{generate_bag, generate_dataset, signatures};
use ainet_core::train::{default_threads, par_map, run_fold};
use ainet_core::{Bag, ModelParams, NeighborMode, PipelineConfig, Real, SynthConfig, Tape, Tensor, TrainConfig, Variant};

type Outcome = Result<String, String>;

fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + stream)
}

fn tied_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<Real> {
    let levels = rng.random_range(1..=n.max(1));
    (0..n).map(|_| rng.random_range(0..levels) as Real / levels as Real).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn grid_coords(n: usize) -> Vec<(i32, i32)> {
    let side = (n as f64).sqrt().ceil() as usize;
    (0..n).map(|i| ((i % side) as i32, (i / side) as i32)).collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let c = check_gradients(&Ops::default());
    let secs = start.elapsed().as_secs_f64();
    ensure(c.passed, || c.detail.clone())?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", c.detail))
}

fn oracle_top_k(w: &[Real], k_percent: Real) -> Vec<usize> {
    let t = (k_percent / 100.0 * w.len() as Real).floor() as usize;
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(t);
    idx
}

fn anchors() -> Outcome {
    let mut rng = rng(2);
    for case in 0..1000 {
        let n = rng.random_range(1..60);
        let w = tied_values(&mut rng, n);
        let k = rng.random_range(0..=100) as Real;
        let latent = random_matrix(&mut rng, n, 3);
        let set = select_anchors(&latent, &w, k).map_err(|e| e.to_string())?;
        let want = oracle_top_k(&w, k);
        ensure(set.indices == want, || format!("case {case}: {:?} vs {want:?}", set.indices))?;
        for (r, &i) in want.iter().enumerate() {
            ensure(set.features.row(r) == latent.row(i), || format!("case {case}: anchor row {r} differs"))?;
        }
    }
    for case in 0..200 {
        let n = rng.random_range(4..40);
        let l = rng.random_range(1..=4);
        let d = rng.random_range(1..6);
        let latent = random_matrix(&mut rng, n, d);
        let part = partition(&grid_coords(n), l).unwrap();
        let emb = embeddings(&latent, &part).unwrap();
        let alpha: Real = rng.random_range(0.0..=1.0);
        let w = anchor_weights(&latent, &part, &emb, alpha).unwrap();
        let w1 = anchor_weights(&latent, &part, &emb, 1.0).unwrap();
        let w0 = anchor_weights(&latent, &part, &emb, 0.0).unwrap();
        for i in 0..n {
            let mix = alpha * w1[i] + (1.0 - alpha) * w0[i];
            ensure(w[i].to_bits() == mix.to_bits(), || format!("linearity case {case}, entry {i}"))?;
        }
    }
    Ok("1000 top-k cases, 200 linearity cases".into())
}

fn mask() -> Outcome {
    let mut rng = rng(3);
    for case in 0..500 {
        let t = rng.random_range(0..40);
        let z = rng.random_range(1..80);
        let r: Real = rng.random_range(0.0..1.0);
        let n = t + z;
        let s = tied_values(&mut rng, n);
        let kept = kept_indices(&s, r);
        let want_count = (n - (r * n as Real).floor() as usize).max(1);
        // ascending score, later index first among ties, so the earliest of a tie survives
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap().then(b.cmp(&a)));
        let mut want = order[n - want_count..].to_vec();
        want.sort_unstable();
        ensure(kept.len() == want_count, || format!("case {case}: kept {} want {want_count}", kept.len()))?;
        ensure(kept == want, || format!("case {case}: kept set differs"))?;
    }
    Ok("500 triples".into())
}

fn uniform_attention() -> Outcome {
    let mut rng = rng(4);
    let mut worst: Real = 0.0;
    for case in 0..100 {
        let l = if case < 10 { 1 } else { rng.random_range(1..=6) };
        let mode = if case % 2 == 0 { NeighborMode::Wrap } else { NeighborMode::SelfLast };
        let d = rng.random_range(1..6);
        let t = rng.random_range(0..4);
        let z = rng.random_range(1..7);
        let mut tape = Tape::new();
        let anchor_rows = random_matrix(&mut rng, t, d);
        let anchors = (t > 0).then(|| tape.constant(anchor_rows));
        let mut fused = Vec::new();
        for _ in 0..l {
            let region = tape.constant(random_matrix(&mut rng, z, d));
            fused.push(fuse_anchors(&mut tape, region, anchors).map_err(|e| e.to_string())?);
        }
        let p = ArcVars {
            w_q: tape.constant(Tensor::zeros(&[d, d])),
            w_k: tape.constant(Tensor::zeros(&[d, d])),
            w_v: tape.constant(Tensor::identity(d)),
        };
        let out = cross_attend(&mut tape, &fused, &p, mode).map_err(|e| e.to_string())?;
        for (i, &o) in out.iter().enumerate() {
            let own = tape.value(fused[i]);
            let other = tape.value(fused[mode.neighbor(i, l)]);
            let rows = own.rows() + other.rows();
            let mean: Vec<Real> = (0..d)
                .map(|j| ((0..own.rows()).map(|r| own.get(r, j)).sum::<Real>() + (0..other.rows()).map(|r| other.get(r, j)).sum::<Real>()) / rows as Real)
                .collect();
            let got = tape.value(o);
            ensure(got.rows() == own.rows(), || format!("case {case}: {} output rows", got.rows()))?;
            for r in 0..got.rows() {
                for j in 0..d {
                    worst = worst.max((got.get(r, j) - mean[j]).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("100 configurations, max deviation {worst:.1e}"))
}

fn generator() -> Outcome {
    let cfg = SynthConfig {
        n_bags: 20_000,
        ..SynthConfig::default()
    };
    let sigs = signatures(&cfg).map_err(|e| e.to_string())?;
    let bags: Vec<usize> = (0..cfg.n_bags).collect();
    let results = par_map(&bags, default_threads(), |&i| {
        generate_bag(&cfg, &sigs, i).map(|b| (b.bag.label, b.tumor_count()))
    });
    let (mut violations, mut positives, mut tumor) = (0, 0usize, 0usize);
    for r in results {
        let (label, count) = r.map_err(|e| e.to_string())?;
        violations += usize::from((label == 0) != (count == 0));
        if label > 0 {
            positives += 1;
            tumor += count;
        }
    }
    let fraction = tumor as Real / (positives * cfg.n_instances) as Real;
    ensure(violations == 0, || format!("{violations} label violations"))?;
    ensure((fraction - cfg.tumor_rate).abs() <= 0.02, || format!("tumor fraction {fraction:.4}"))?;
    Ok(format!("{} bags, {positives} positive, tumor fraction {fraction:.4}", cfg.n_bags))
}

fn pairwise_auc(s: &[Real], pos: &[bool]) -> Option<Real> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for i in (0..s.len()).filter(|&i| pos[i]) {
        for j in (0..s.len()).filter(|&j| !pos[j]) {
            pairs += 1;
            wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
        }
    }
    (pairs > 0).then(|| wins / pairs as Real)
}

fn auc() -> Outcome {
    let mut rng = rng(6);
    for case in 0..100 {
        let n = rng.random_range(1..=200);
        let s: Vec<Real> = if case % 3 == 0 {
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
        } else {
            let levels = rng.random_range(1..8);
            (0..n).map(|_| rng.random_range(0..levels) as Real / levels as Real).collect()
        };
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let got = auc_binary(&s, &pos);
        match (got, pairwise_auc(&s, &pos)) {
            (Some(a), Some(b)) => ensure((a - b).abs() <= 1e-12, || format!("case {case}: {a} vs {b}"))?,
            (None, None) => {}
            (a, b) => return Err(format!("case {case}: {a:?} vs {b:?}")),
        }
        let shifted: Vec<Real> = s.iter().map(|v| 5.0 * v.powi(3) + 2.0).collect();
        ensure(auc_binary(&shifted, &pos) == got, || format!("case {case}: transform changed the AUC"))?;
    }
    Ok("100 score sets".into())
}

fn losses() -> Outcome {
    let mut rng = rng(7);
    for case in 0..100 {
        let c = rng.random_range(2..6);
        let l = rng.random_range(1..5);
        let label = rng.random_range(0..c);
        let mut row = || {
            let raw: Vec<Real> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: Real = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let region_rows: Vec<Vec<Real>> = (0..l).map(|_| row()).collect();
        let bag_row = row();
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..5);
        let a = random_matrix(&mut rng, n, d);
        let b = random_matrix(&mut rng, n, d);

        let mut tape = Tape::new();
        let rp = tape.constant(Tensor::from_rows(&region_rows).unwrap());
        let bp = tape.constant(Tensor::vector(bag_row.clone()));
        let (fa, fb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let lr = loss_region(&mut tape, rp, label).map_err(|e| e.to_string())?;
        let lb = loss_bag(&mut tape, bp, label).map_err(|e| e.to_string())?;
        let lm = loss_mse(&mut tape, fa, fb).map_err(|e| e.to_string())?;
        let total = loss_total(&mut tape, Some(lm), lr, lb).map_err(|e| e.to_string())?;
        let v = |t: &Tape, x| t.value(x).data()[0];
        let sum = (v(&tape, lb) + v(&tape, lr)) + v(&tape, lm);
        ensure(v(&tape, total).to_bits() == sum.to_bits(), || format!("case {case}: total is not the component sum"))?;

        let want_region = region_rows.iter().map(|r| -r[label].ln()).sum::<Real>() / l as Real;
        let want_mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<Real>() / n as Real;
        ensure((v(&tape, lr) - want_region).abs() < 1e-12, || format!("case {case}: region CE"))?;
        ensure((v(&tape, lb) + bag_row[label].ln()).abs() < 1e-12, || format!("case {case}: bag CE"))?;
        ensure((v(&tape, lm) - want_mse).abs() < 1e-12, || format!("case {case}: MSE"))?;

        let uniform = tape.constant(Tensor::vector(vec![1.0 / c as Real; c]));
        let ce = loss_bag(&mut tape, uniform, label).map_err(|e| e.to_string())?;
        ensure((v(&tape, ce) - (c as Real).ln()).abs() < 1e-12, || format!("case {case}: uniform CE"))?;
        let same = tape.constant(a.clone());
        let zero = loss_mse(&mut tape, fa, same).map_err(|e| e.to_string())?;
        ensure(v(&tape, zero) == 0.0, || format!("case {case}: identical-feature MSE"))?;
    }
    Ok("100 cases".into())
}

fn direction() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = generate_dataset(&SynthConfig::default(), dir.path()).map_err(|e| e.to_string())?;
    let records = ainet_core::bag::read_manifest(&manifest, 2).map_err(|e| e.to_string())?;
    let bags = ainet_core::bag::load_bags(&records).map_err(|e| e.to_string())?;
    let variants = [Variant::Baseline, Variant::Dam, Variant::Full];
    let seeds = [42u64, 43, 44];
    let folds = 5;
    let mut jobs = Vec::new();
    for &seed in &seeds {
        for &variant in &variants {
            for fold in 0..folds {
                jobs.push((seed, variant, fold));
            }
        }
    }
    let start = Instant::now();
    let results = par_map(&jobs, default_threads(), |&(seed, variant, fold)| {
        let mut cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        cfg.pipeline.variant = variant;
        run_fold(&bags, 2, folds, fold, &cfg).map(|(_, r)| r.accuracy)
    });
    let accs: Vec<Real> = results.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut per_seed = Vec::new();
    let mut mean = [0.0; 3];
    for (s, &seed) in seeds.iter().enumerate() {
        let mut row = Vec::new();
        for v in 0..variants.len() {
            let start = (s * variants.len() + v) * folds;
            let a = accs[start..start + folds].iter().sum::<Real>() / folds as Real;
            mean[v] += a / seeds.len() as Real;
            row.push(format!("{a:.3}"));
        }
        per_seed.push(format!("seed {seed} [{}]", row.join(" ")));
    }
    let detail = format!(
        "mean accuracy baseline {:.4}, dam {:.4}, full {:.4}; {} ({:.0}s)",
        mean[0],
        mean[1],
        mean[2],
        per_seed.join(", "),
        start.elapsed().as_secs_f64()
    );
    ensure(mean[2] >= mean[1] && mean[1] >= mean[0], || detail.clone())?;
    Ok(detail)
}

fn ainet(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ainet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const SMALL: &str = "epochs = 3\nhidden = 8\nfolds = 2\n";

fn small_workspace() -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ainet(&["generate", "--out", "data", "--bags", "10", "--instances", "25", "--dim", "8", "--tumor-rate", "0.2"], dir.path())?;
    fs::write(dir.path().join("small.cfg"), SMALL).map_err(|e| e.to_string())?;
    Ok(dir)
}

fn finite_in_unit(field: &str) -> bool {
    field.parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v))
}

fn k_zero() -> Outcome {
    let dir = small_workspace()?;
    let p = dir.path();
    ainet(&["ablate", "--manifest", "data/manifest.csv", "--config", "small.cfg", "--grid", "k-sweep", "--out", "ab"], p)?;
    let summary = fs::read_to_string(p.join("ab/k-sweep_summary.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 8, || format!("{} cells", rows.len()))?;
    let k0 = rows.iter().find(|r| r[1] == "k=0").ok_or("no k=0 cell")?;
    ensure(k0[12].parse::<f64>().is_ok_and(f64::is_finite), || format!("final loss {}", k0[12]))?;
    for &i in &[6, 10] {
        ensure(finite_in_unit(k0[i]), || format!("metric column {i} = {}", k0[i]))?;
    }

    // the same cell on the library side: no anchors, finite losses
    let cfg = SynthConfig {
        n_bags: 2,
        n_instances: 25,
        dim: 8,
        ..SynthConfig::default()
    };
    let bag: Bag = generate_bag(&cfg, &signatures(&cfg).unwrap(), 1).unwrap().bag;
    let params = ModelParams::init(8, 8, 2, 3).unwrap();
    for variant in Variant::ALL {
        let pc = PipelineConfig {
            variant,
            k_percent: 0.0,
            ..PipelineConfig::default()
        };
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let part = bag.partition(pc.regions).unwrap();
        let pass = forward(&mut tape, &params, &vars, &bag, &part, &pc, None).map_err(|e| e.to_string())?;
        ensure(pass.selections.anchors.is_empty(), || format!("{variant}: anchors selected"))?;
        ensure(tape.value(pass.loss).is_finite(), || format!("{variant}: loss not finite"))?;
    }
    Ok("8 cells completed, k=0 finite".into())
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        let bytes = fs::read(&e).unwrap();
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), bytes));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn determinism() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|_| -> Result<_, String> {
            let dir = small_workspace()?;
            let p = dir.path();
            let m = "data/manifest.csv";
            ainet(&["train", "--manifest", m, "--config", "small.cfg", "--variant", "full", "--fold", "1", "--out", "out/model.aipm"], p)?;
            ainet(&["evaluate", "--manifest", m, "--model", "out/model.aipm", "--fold", "1", "--folds", "2", "--out", "out/eval"], p)?;
            ainet(&["ablate", "--manifest", m, "--config", "small.cfg", "--grid", "components", "--out", "out/ab"], p)?;
            let mut files = tree(&p.join("data"));
            files.extend(tree(&p.join("out")));
            Ok(files)
        })
        .collect::<Result<_, _>>()?;
    ensure(runs[0] == runs[1], || "outputs differ between runs".into())?;
    Ok(format!("{} files byte-identical", runs[0].len()))
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = rng(11);
    for case in 0..100 {
        let n = rng.random_range(1..50);
        let d = rng.random_range(1..10);
        let coords: Vec<(i32, i32)> = (0..n).map(|_| (rng.random_range(-500..500), rng.random_range(-500..500))).collect();
        let bag = Bag::new("b", random_matrix(&mut rng, n, d), coords, 0).map_err(|e| e.to_string())?;
        let (a, b) = (dir.path().join("a.aifb"), dir.path().join("b.aifb"));
        write_bag_file(&bag, &a).map_err(|e| e.to_string())?;
        let back = read_bag_file(&a).map_err(|e| e.to_string())?;
        write_bag_file(&Bag::new("b", back.features, back.coords, 0).map_err(|e| e.to_string())?, &b).map_err(|e| e.to_string())?;
        ensure(fs::read(&a).unwrap() == fs::read(&b).unwrap(), || format!("aifb case {case}"))?;

        let count = rng.random_range(1..6);
        let named: Vec<(String, Tensor)> = (0..count)
            .map(|i| {
                let t = if rng.random_bool(0.5) {
                    Tensor::vector((0..rng.random_range(1..8)).map(|_| rng.random_range(-1e3..1e3)).collect())
                } else {
                    let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
                    random_matrix(&mut rng, r, c)
                };
                (format!("t{i}.{}", rng.random_range(0..1000)), t)
            })
            .collect();
        let (a, b) = (dir.path().join("a.aipm"), dir.path().join("b.aipm"));
        write_aipm(&a, &named).map_err(|e| e.to_string())?;
        write_aipm(&b, &read_aipm(&a).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(fs::read(&a).unwrap() == fs::read(&b).unwrap(), || format!("aipm case {case}"))?;
    }
    Ok("100 .aifb and 100 .aipm artifacts".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient check", gradients),
        ("anchor selection and weight linearity", anchors),
        ("mask count and dropped set", mask),
        ("uniform attention", uniform_attention),
        ("generator label rule and tumor fraction", generator),
        ("AUC oracle and rank invariance", auc),
        ("loss additivity and closed forms", losses),
        ("direction of effect full >= dam >= baseline", direction),
        ("k=0 sweep cell", k_zero),
        ("command determinism", determinism),
        ("format round trips", round_trips),
    ];
    // optional criterion numbers on the command line restrict the run
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let outcome = run();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {:>2} {name}: {detail}", i + 1);
        failed += usize::from(outcome.is_err());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
