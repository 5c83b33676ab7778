//! Training loop, per-fold evaluation and cross-validation.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;

use crate::bag::{Bag, RegionPartition};
use crate::error::{Error, Result};
use crate::metrics::{predict_class, stratified_folds, BagPrediction, FoldReport, THRESHOLD};
use crate::model::ModelParams;
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::pipeline::{forward, ForwardPass, PipelineConfig};
use crate::predictor::DEFAULT_HIDDEN;
use crate::rng::{substream, SHUFFLE};
use crate::tape::Tape;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optim: AdamWConfig,
    pub pipeline: PipelineConfig,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            optim: AdamWConfig::default(),
            pipeline: PipelineConfig::default(),
            hidden: DEFAULT_HIDDEN,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        let o = &self.optim;
        if !(o.lr >= 0.0 && o.lr.is_finite()) || !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::Config(format!("lr {} / weight_decay {} must be finite and non-negative", o.lr, o.weight_decay)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config(format!("betas ({}, {}) outside [0, 1)", o.beta1, o.beta2)));
        }
        if !(o.eps > 0.0) {
            return Err(Error::Config(format!("eps {} must be positive", o.eps)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be at least 1".into()));
        }
        Ok(())
    }
}

/// Means over one epoch's bags. `train_accuracy` uses the predictions made
/// before each bag's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: Real,
    pub loss_bag: Real,
    pub loss_region: Real,
    pub loss_mse: Real,
    pub train_accuracy: Real,
}

pub const LOG_HEADER: &str = "epoch,loss,loss_bag,loss_region,loss_mse,train_accuracy";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9},{:.6}",
            e.epoch, e.loss, e.loss_bag, e.loss_region, e.loss_mse, e.train_accuracy
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: Real,
    pub loss_bag: Real,
    pub loss_region: Real,
    pub loss_mse: Real,
    pub correct: bool,
}

fn check_finite(v: Real, what: &str, bag: &Bag) -> Result<Real> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} is {v} on bag {}", bag.id)))
    }
}

/// Forward, backward and one optimizer update on a single bag.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamWState,
    bag: &Bag,
    part: &RegionPartition,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let fp = forward(&mut tape, params, &vars, bag, part, &cfg.pipeline, None)?;
    let stats = StepStats {
        loss: check_finite(ForwardPass::scalar(&tape, fp.loss), "loss", bag)?,
        loss_bag: ForwardPass::scalar(&tape, fp.loss_bag),
        loss_region: ForwardPass::scalar(&tape, fp.loss_region),
        loss_mse: fp.loss_mse.map_or(0.0, |v| ForwardPass::scalar(&tape, v)),
        correct: predict_class(&fp.bag_probs(&tape), THRESHOLD) == bag.label,
    };
    tape.backward(fp.loss)?;
    params.zero_grads();
    params.accumulate_grads(&tape, &vars)?;
    for t in params.tensors() {
        if !t.grad().is_some_and(|g| g.iter().all(|x| x.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient on bag {}", bag.id)));
        }
    }
    adamw_step(&mut params.slots(), state, &cfg.optim)?;
    Ok(stats)
}

/// Trains from a fresh initialization for `cfg.epochs` epochs, one bag per
/// update, visiting bags in a per-epoch shuffled order.
pub fn train(bags: &[Bag], classes: usize, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if bags.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let dim = bags[0].dim();
    let mut params = ModelParams::init(dim, cfg.hidden, classes, cfg.seed)?;
    let parts = bags
        .iter()
        .map(|b| b.partition(cfg.pipeline.regions))
        .collect::<Result<Vec<_>>>()?;
    let mut state = AdamWState::for_tensors(params.tensors());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..bags.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, SHUFFLE, epoch as u64));
        let mut sum = [0.0; 4];
        let mut correct = 0usize;
        for &i in &order {
            let s = train_step(&mut params, &mut state, &bags[i], &parts[i], cfg)?;
            for (acc, v) in sum.iter_mut().zip([s.loss, s.loss_bag, s.loss_region, s.loss_mse]) {
                *acc += v;
            }
            correct += usize::from(s.correct);
        }
        let n = bags.len() as Real;
        log.push(EpochLog {
            epoch,
            loss: sum[0] / n,
            loss_bag: sum[1] / n,
            loss_region: sum[2] / n,
            loss_mse: sum[3] / n,
            train_accuracy: correct as Real / n,
        });
    }
    Ok(Trained { params, log })
}

/// Bag-level class probabilities under `params`.
pub fn predict_bag(params: &ModelParams, bag: &Bag, cfg: &PipelineConfig) -> Result<Vec<Real>> {
    let part = bag.partition(cfg.regions)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let fp = forward(&mut tape, params, &vars, bag, &part, cfg, None)?;
    let probs = fp.bag_probs(&tape);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!("non-finite prediction on bag {}", bag.id)));
    }
    Ok(probs)
}

pub fn evaluate(params: &ModelParams, bags: &[Bag], cfg: &PipelineConfig, fold: usize) -> Result<FoldReport> {
    if bags.is_empty() {
        return Err(Error::Empty("test fold"));
    }
    let predictions = bags
        .iter()
        .map(|b| {
            Ok(BagPrediction {
                bag_id: b.id.clone(),
                label: b.label,
                probs: predict_bag(params, b, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FoldReport::from_predictions(fold, predictions, params.classes())
}

/// Train and test indices of `fold` under `fold_ids`.
pub fn split(fold_ids: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold_ids.len()).partition(|&i| fold_ids[i] != fold)
}

pub fn pick(bags: &[Bag], idx: &[usize]) -> Vec<Bag> {
    idx.iter().map(|&i| bags[i].clone()).collect()
}

/// Trains and evaluates one fold of a stratified split seeded by `cfg.seed`.
pub fn run_fold(bags: &[Bag], classes: usize, folds: usize, fold: usize, cfg: &TrainConfig) -> Result<(Trained, FoldReport)> {
    if fold >= folds {
        return Err(Error::Config(format!("fold {fold} out of range for {folds} folds")));
    }
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let ids = stratified_folds(&labels, folds, cfg.seed)?;
    let (train_idx, test_idx) = split(&ids, fold);
    let trained = train(&pick(bags, &train_idx), classes, cfg)?;
    let report = evaluate(&trained.params, &pick(bags, &test_idx), &cfg.pipeline, fold)?;
    Ok((trained, report))
}

/// Full k-fold run: one independently trained model per fold, spread over up
/// to `threads` threads. Results do not depend on `threads`.
pub fn cross_validate(
    bags: &[Bag],
    classes: usize,
    folds: usize,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<Vec<(Trained, FoldReport)>> {
    let jobs: Vec<usize> = (0..folds).collect();
    par_map(&jobs, threads, |&f| run_fold(bags, classes, folds, f, cfg))
        .into_iter()
        .collect()
}

/// `items.iter().map(f)` on up to `threads` scoped threads, results in input order.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break done;
                        }
                        done.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("worker thread panicked"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Threads to use when the caller has no preference.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Variant;
    use crate::synth::{generate_bag, signatures, SynthConfig};

    fn tiny_bags(n: usize) -> Vec<Bag> {
        let cfg = SynthConfig {
            n_bags: n,
            n_instances: 16,
            dim: 8,
            tumor_rate: 0.25,
            seed: 3,
            ..SynthConfig::default()
        };
        let sigs = signatures(&cfg).unwrap();
        (0..n).map(|i| generate_bag(&cfg, &sigs, i).unwrap().bag).collect()
    }

    fn tiny_cfg(variant: Variant) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            hidden: 6,
            pipeline: PipelineConfig {
                variant,
                k_percent: 25.0,
                mask_ratio: 0.5,
                ..PipelineConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_at_init() {
        let bags = tiny_bags(1);
        let mut cfg = tiny_cfg(Variant::Full);
        cfg.epochs = 1;
        cfg.optim.lr = 0.0;
        let out = train(&bags, 2, &cfg).unwrap();
        let init = ModelParams::init(8, 6, 2, cfg.seed).unwrap();
        assert_eq!(out.params.named(), init.named());
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let bags = tiny_bags(6);
        for v in Variant::ALL {
            let a = train(&bags, 2, &tiny_cfg(v)).unwrap();
            let b = train(&bags, 2, &tiny_cfg(v)).unwrap();
            assert_eq!(a.log, b.log);
            assert_eq!(a.params.named(), b.params.named());
            assert!(a.log.iter().all(|e| e.loss.is_finite()));
        }
    }

    #[test]
    fn cross_validation_covers_every_bag_once() {
        let bags = tiny_bags(10);
        let runs = cross_validate(&bags, 2, 5, &tiny_cfg(Variant::Dam), 3).unwrap();
        let reports: Vec<FoldReport> = runs.iter().map(|(_, r)| r.clone()).collect();
        let serial = cross_validate(&bags, 2, 5, &tiny_cfg(Variant::Dam), 1).unwrap();
        assert_eq!(reports, serial.into_iter().map(|(_, r)| r).collect::<Vec<_>>());
        let mut seen: Vec<String> = reports
            .iter()
            .flat_map(|r| r.predictions.iter().map(|p| p.bag_id.clone()))
            .collect();
        seen.sort();
        let mut all: Vec<String> = bags.iter().map(|b| b.id.clone()).collect();
        all.sort();
        assert_eq!(seen, all);
        assert!(reports.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    }

    #[test]
    fn log_layout() {
        let log = [EpochLog {
            epoch: 0,
            loss: 1.5,
            loss_bag: 0.5,
            loss_region: 0.25,
            loss_mse: 0.75,
            train_accuracy: 0.5,
        }];
        let csv = log_csv(&log);
        assert_eq!(
            csv,
            format!("{LOG_HEADER}\n0,1.500000000,0.500000000,0.250000000,0.750000000,0.500000\n")
        );
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(train(&[], 2, &tiny_cfg(Variant::Full)).is_err());
        let p = ModelParams::init(8, 6, 2, 1).unwrap();
        assert!(evaluate(&p, &[], &PipelineConfig::default(), 0).is_err());
    }
}
