//! Training loops: pre-training on auxiliary tasks, plain fine-tuning on the
//! target, and two-stage joint training with adaptive task weights.

mod config;
mod data;

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    AuxData, AuxKind, AuxTaskConfig, EncoderSettings, MetaSplit, PartitionMode, Scheme, TargetConfig, TrainConfig,
};
pub use data::{
    build_model, epoch_batches, evaluate, prepare, train_pool, AuxGraph, EvalSplit, Model, Prepared, TargetData,
};

use crate::autodiff::{ParamGroup, ParamVector, Tape};
use crate::error::{Error, Result};
use crate::graph::{split_batch, Graph};
use crate::models::Checkpoint;
use crate::record::{CurveRow, Phase, RunRecord};
use crate::tasks::{forward_losses, task_losses_and_grads, validate_tasks, TaskBatch, TaskKind, TaskSpec};
use crate::weighting::{joint_loss, meta_gradient, meta_step, strategy_weights, WeightSignals, WeightingModel};

/// Independent random streams of one seeded run.
pub(crate) mod streams {
    pub const INIT: u64 = 0;
    pub const TARGET: u64 = 1;
    pub const AUX: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const DATA: u64 = 5;
    pub const TASK_DATA: u64 = 6;
    pub const WEIGHTING: u64 = 7;
    pub const PRE_INIT: u64 = 8;
    pub const PRE_AUX: u64 = 9;
    pub const PRE_DROPOUT: u64 = 10;
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Result of [`pretrain`].
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
}

/// Result of a fine-tuning or joint-training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the parameters after the last step.
    pub model: Model,
    /// Parameters with the best validation metric (used for the test metrics).
    pub best_params: ParamVector,
    pub weighting: Option<WeightingModel>,
    pub record: RunRecord,
}

fn guard(cfg: &TrainConfig, what: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v > cfg.max_loss {
        return Err(Error::numeric(what, format!("loss {v} exceeds the divergence guard {}", cfg.max_loss)));
    }
    Ok(())
}

fn steps_per_epoch(items: usize, batch_size: usize) -> usize {
    items.div_ceil(batch_size).max(1)
}

/// Minimizes the unweighted sum of the auxiliary losses on `g`.
pub fn pretrain(cfg: &TrainConfig, g: &Graph) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if cfg.aux_tasks.is_empty() {
        return Err(Error::config("pre-training needs at least one auxiliary task"));
    }
    if cfg.aux_tasks.iter().any(|t| t.kind == AuxKind::TargetCopy) {
        return Err(Error::config("a target copy cannot be pre-trained"));
    }
    let started = Instant::now();
    let mut model = build_model(cfg, g, None, None, &mut stream(cfg.seed, streams::PRE_INIT))?;
    let mut opt = crate::autodiff::Optimizer::new(cfg.optimizer);
    let mut arng = stream(cfg.seed, streams::PRE_AUX);
    let mut drng = stream(cfg.seed, streams::PRE_DROPOUT);
    let tasks: Vec<&TaskSpec> = model.tasks.iter().collect();
    let spe = steps_per_epoch(g.num_nodes(), cfg.batch_size);
    let mut rows = Vec::new();
    let mut step = 0u64;
    for _ in 0..cfg.pretrain_epochs {
        for _ in 0..spe {
            let batches = tasks
                .iter()
                .map(|t| t.source.sample(g, cfg.batch_size, &mut arng))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TaskBatch> = batches.iter().collect();
            let (values, grads) = {
                let mut tape = Tape::new(&model.params);
                let ls = forward_losses(&mut tape, &model.encoder, g, &tasks, &refs, Some(&mut drng as &mut dyn RngCore))?;
                let terms: Vec<(f64, _)> = ls.iter().map(|&l| (1.0, l)).collect();
                let total = tape.weighted_sum(&terms)?;
                guard(cfg, "pretrain", tape.scalar(total)?)?;
                let values = ls.iter().map(|&l| tape.scalar(l)).collect::<Result<Vec<_>>>()?;
                (values, tape.backward(total)?)
            };
            opt.step(&mut model.params, &grads, cfg.pretrain_lr)?;
            for (t, v) in tasks.iter().zip(values) {
                rows.push(CurveRow {
                    step,
                    phase: Phase::Pretrain,
                    task_id: t.task_id,
                    loss: v,
                    weight: 1.0,
                    sim: None,
                    valid_metric: None,
                });
            }
            step += 1;
        }
    }
    let fingerprint = cfg.fingerprint();
    let checkpoint = Checkpoint {
        encoder: model.encoder.config().clone(),
        params: model.params.clone(),
        weighting: None,
        fingerprint: fingerprint.clone(),
        step,
    };
    Ok(PretrainOutcome {
        checkpoint,
        record: RunRecord {
            rows,
            epochs_run: cfg.pretrain_epochs,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            fingerprint,
            ..RunRecord::default()
        },
    })
}

/// Fresh model for `prep`, with the encoder (and optionally auxiliary heads)
/// taken from `init`. Returns the step counter to continue from.
fn init_model(cfg: &TrainConfig, prep: &Prepared, init: Option<&Checkpoint>) -> Result<(Model, u64)> {
    let mut model = build_model(cfg, &prep.graph, Some(&prep.target), prep.aux_graph.as_ref(), &mut stream(cfg.seed, streams::INIT))?;
    let Some(ck) = init else {
        return Ok((model, 0));
    };
    if &ck.encoder != model.encoder.config() {
        return Err(Error::config(format!(
            "checkpoint encoder {:?} does not match the configured encoder {:?}",
            ck.encoder,
            model.encoder.config()
        )));
    }
    model.params.overwrite_from(&ck.params.restrict_group(ParamGroup::Shared))?;
    if cfg.reuse_heads {
        let aux: Vec<String> = model.tasks[1..].iter().map(|t| format!("{}.", t.head.prefix())).collect();
        let heads = ck.params.restrict(|e| aux.iter().any(|p| e.name.starts_with(p.as_str())));
        model.params.overwrite_from(&heads)?;
    }
    Ok((model, ck.step))
}

fn clean_target_loss(model: &Model, g: &Graph, batch: &TaskBatch) -> Result<f64> {
    let mut tape = Tape::new(&model.params);
    let ls = forward_losses(&mut tape, &model.encoder, g, &[&model.tasks[0]], &[batch], None)?;
    tape.scalar(ls[0])
}

/// Best-validation bookkeeping with patience.
struct Tracker {
    best: Option<f64>,
    best_epoch: Option<usize>,
    best_params: ParamVector,
    since: usize,
    patience: usize,
}

impl Tracker {
    fn new(params: &ParamVector, patience: usize) -> Self {
        Self {
            best: None,
            best_epoch: None,
            best_params: params.clone(),
            since: 0,
            patience,
        }
    }

    /// Records an epoch's validation value; `true` means stop.
    fn update(&mut self, epoch: usize, valid: f64, params: &ParamVector) -> bool {
        if self.best.is_none_or(|b| valid > b) {
            self.best = Some(valid);
            self.best_epoch = Some(epoch);
            self.best_params = params.clone();
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

fn end_epoch(
    model: &Model,
    prep: &Prepared,
    tracker: &mut Tracker,
    rows: &mut [CurveRow],
    epoch: usize,
    last_step: u64,
) -> Result<bool> {
    let metric = prep.target.primary_metric();
    let valid = evaluate(model, &model.params, &prep.graph, &prep.target, EvalSplit::Valid)?[&metric];
    for r in rows.iter_mut().rev().take_while(|r| r.step == last_step) {
        if r.phase == Phase::Train {
            r.valid_metric = Some(valid);
        }
    }
    Ok(tracker.update(epoch, valid, &model.params))
}

fn finish(
    model: Model,
    prep: &Prepared,
    tracker: Tracker,
    weighting: Option<WeightingModel>,
    rows: Vec<CurveRow>,
    epochs_run: usize,
    aborted: Option<String>,
    cfg: &TrainConfig,
    started: Instant,
) -> Result<TrainOutcome> {
    let test_metrics = if aborted.is_none() {
        evaluate(&model, &tracker.best_params, &prep.graph, &prep.target, EvalSplit::Test)?
    } else {
        Default::default()
    };
    Ok(TrainOutcome {
        record: RunRecord {
            rows,
            test_metrics,
            best_valid: tracker.best,
            best_epoch: tracker.best_epoch,
            epochs_run,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            fingerprint: cfg.fingerprint(),
            aborted,
        },
        best_params: tracker.best_params,
        model,
        weighting,
    })
}

/// Trains on the target loss alone, from `init` or from scratch. Auxiliary
/// tasks in `cfg` are ignored.
pub fn finetune_no_aux(cfg: &TrainConfig, prep: &Prepared, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let target_only = TrainConfig {
        aux_tasks: Vec::new(),
        ..cfg.clone()
    };
    let (mut model, mut step) = init_model(&target_only, prep, init)?;
    let g = &prep.graph;
    let mut opt = crate::autodiff::Optimizer::new(cfg.optimizer);
    let mut trng = stream(cfg.seed, streams::TARGET);
    let mut drng = stream(cfg.seed, streams::DROPOUT);
    let pool = train_pool(&prep.target);
    let mut tracker = Tracker::new(&model.params, cfg.patience);
    let mut rows = Vec::new();
    let mut aborted = None;
    let mut epochs_run = 0;
    'epochs: for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        for sup in epoch_batches(&prep.target, g, &pool, cfg.batch_size, &mut trng)? {
            let attempt = (|| -> Result<f64> {
                let clean = clean_target_loss(&model, g, &sup)?;
                guard(cfg, "target loss", clean)?;
                let grads = {
                    let mut tape = Tape::new(&model.params);
                    let ls = forward_losses(&mut tape, &model.encoder, g, &[&model.tasks[0]], &[&sup], Some(&mut drng as &mut dyn RngCore))?;
                    guard(cfg, "joint loss", tape.scalar(ls[0])?)?;
                    tape.backward(ls[0])?
                };
                opt.step(&mut model.params, &grads, cfg.finetune_lr)?;
                Ok(clean)
            })();
            match attempt {
                Ok(loss) => rows.push(CurveRow {
                    step,
                    phase: Phase::Train,
                    task_id: 0,
                    loss,
                    weight: 1.0,
                    sim: Some(1.0),
                    valid_metric: None,
                }),
                Err(e @ Error::Numeric { .. }) => {
                    aborted = Some(format!("step {step}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        if end_epoch(&model, prep, &mut tracker, &mut rows, epoch, step - 1)? {
            break;
        }
    }
    finish(model, prep, tracker, None, rows, epochs_run, aborted, cfg, started)
}

struct JointRun<'a> {
    cfg: &'a TrainConfig,
    prep: &'a Prepared,
    model: Model,
    weighting: Option<WeightingModel>,
    opt: crate::autodiff::Optimizer,
    aux_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    split_rng: ChaCha8Rng,
    meta_pool: Vec<usize>,
    rows: Vec<CurveRow>,
}

impl JointRun<'_> {
    fn batches_with(&self, sup: &TaskBatch, aux: &[TaskBatch]) -> Vec<TaskBatch> {
        std::iter::once(sup.clone())
            .chain(self.model.tasks[1..].iter().zip(aux).map(|(t, b)| {
                if t.kind == TaskKind::AuxTargetCopy {
                    sup.clone()
                } else {
                    b.clone()
                }
            }))
            .collect()
    }

    /// `(train part, meta batch)` for stage 1, if the batch can be split.
    fn meta_split(&mut self, sup: &TaskBatch) -> Result<Option<(TaskBatch, TaskBatch)>> {
        if !self.meta_pool.is_empty() {
            let n = self.meta_pool.len().min(self.cfg.batch_size);
            let picked: Vec<usize> = index::sample(&mut self.split_rng, self.meta_pool.len(), n)
                .into_iter()
                .map(|i| self.meta_pool[i])
                .collect();
            let meta = epoch_batches(&self.prep.target, &self.prep.graph, &picked, usize::MAX, &mut self.split_rng)?
                .pop()
                .expect("non-empty meta pool");
            return Ok(Some((sup.clone(), meta)));
        }
        if sup.len() < 2 {
            return Ok(None);
        }
        sup.split(self.cfg.split_ratio, self.split_rng.random()).map(Some)
    }

    fn push_rows(&mut self, step: u64, phase: Phase, losses: &[f64], weights: &[f64], sims: &[f64]) {
        for (i, ((&loss, &weight), &sim)) in losses.iter().zip(weights).zip(sims).enumerate() {
            self.rows.push(CurveRow {
                step,
                phase,
                task_id: i,
                loss,
                weight,
                sim: Some(sim),
                valid_metric: None,
            });
        }
    }

    fn step(&mut self, sup: &TaskBatch, step: u64) -> Result<()> {
        let cfg = self.cfg;
        let g = &self.prep.graph;
        let k = self.model.k();
        let aux = self.model.tasks[1..]
            .iter()
            .map(|t| {
                if t.kind == TaskKind::AuxTargetCopy {
                    Ok(sup.clone())
                } else {
                    t.source.sample(g, cfg.batch_size, &mut self.aux_rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        // Stage 1: signals on the train part, then the weighting update.
        let mut train_part = sup.clone();
        if k > 0 {
            if let Some((tr, meta)) = self.meta_split(sup)? {
                let b1 = self.batches_with(&tr, &aux);
                let refs: Vec<&TaskBatch> = b1.iter().collect();
                let tasks: Vec<&TaskSpec> = self.model.tasks.iter().collect();
                let (losses, grads): (Vec<f64>, Vec<ParamVector>) =
                    task_losses_and_grads(&self.model.params, &self.model.encoder, g, &tasks, &refs)?
                        .into_iter()
                        .unzip();
                let sig = WeightSignals::from_grads(&grads, losses)?;
                let w = strategy_weights(cfg.strategy, &sig, self.weighting.as_ref())?;
                let (l, s) = (sig.losses.clone(), sig.sims.clone());
                self.push_rows(step, Phase::Meta, &l, &w, &s);
                if let Some(wm) = self.weighting.as_mut() {
                    let (target, encoder) = (&self.model.tasks[0], &self.model.encoder);
                    let mg = meta_gradient(wm, &sig, &grads, &self.model.params, cfg.finetune_lr, |th| {
                        let mut r = task_losses_and_grads(th, encoder, g, &[target], &[&meta])?;
                        Ok(r.pop().expect("one task"))
                    })?;
                    meta_step(wm, &mg.grad, cfg.weighting_lr)?;
                }
                train_part = tr;
            }
        }

        // Stage 2: signals on the full batch, weights from the updated model.
        let sup2 = if cfg.same_batch { &train_part } else { sup };
        let b2 = self.batches_with(sup2, &aux);
        let refs: Vec<&TaskBatch> = b2.iter().collect();
        let sig = if k > 0 {
            let tasks: Vec<&TaskSpec> = self.model.tasks.iter().collect();
            let (losses, grads): (Vec<f64>, Vec<ParamVector>) =
                task_losses_and_grads(&self.model.params, &self.model.encoder, g, &tasks, &refs)?
                    .into_iter()
                    .unzip();
            WeightSignals::from_grads(&grads, losses)?
        } else {
            let l0 = clean_target_loss(&self.model, g, sup2)?;
            guard(cfg, "target loss", l0)?;
            WeightSignals::new(vec![1.0], vec![l0])?
        };
        let weights = strategy_weights(cfg.strategy, &sig, self.weighting.as_ref())?;
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::numeric("task weights", format!("weight {w}")));
        }

        // Real update on the weighted joint loss; zero-weight tasks are left out.
        let active: Vec<usize> = (0..=k).filter(|&i| weights[i] != 0.0).collect();
        let tasks: Vec<&TaskSpec> = active.iter().map(|&i| &self.model.tasks[i]).collect();
        let batches: Vec<&TaskBatch> = active.iter().map(|&i| refs[i]).collect();
        let w: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
        let grads = {
            let mut tape = Tape::new(&self.model.params);
            let ls = forward_losses(&mut tape, &self.model.encoder, g, &tasks, &batches, Some(&mut self.dropout_rng as &mut dyn RngCore))?;
            let joint = joint_loss(&mut tape, &w, &ls)?;
            guard(cfg, "joint loss", tape.scalar(joint)?)?;
            tape.backward(joint)?
        };
        self.opt.step(&mut self.model.params, &grads, cfg.finetune_lr)?;
        let (l, s) = (sig.losses.clone(), sig.sims.clone());
        self.push_rows(step, Phase::Train, &l, &weights, &s);
        Ok(())
    }
}

/// Two-stage joint training of the target and auxiliary tasks under `cfg.strategy`.
pub fn train_joint(cfg: &TrainConfig, prep: &Prepared, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let started = Instant::now();
    let (model, mut step) = init_model(cfg, prep, init)?;
    validate_tasks(&model.tasks)?;
    let k = model.k();
    let weighting = WeightingModel::for_strategy(
        cfg.strategy,
        k + 1,
        cfg.weighting.clone(),
        &mut stream(cfg.seed, streams::WEIGHTING),
    )?;
    let mut split_rng = stream(cfg.seed, streams::SPLIT);
    let mut pool = train_pool(&prep.target);
    let mut meta_pool = Vec::new();
    if cfg.meta_split == MetaSplit::HeldOut && weighting.is_some() && k > 0 {
        let (a, b) = split_batch(&pool, cfg.split_ratio, split_rng.random())?;
        pool = a;
        meta_pool = b;
    }
    let mut tracker = Tracker::new(&model.params, cfg.patience);
    let mut trng = stream(cfg.seed, streams::TARGET);
    let mut run = JointRun {
        cfg,
        prep,
        model,
        weighting,
        opt: crate::autodiff::Optimizer::new(cfg.optimizer),
        aux_rng: stream(cfg.seed, streams::AUX),
        dropout_rng: stream(cfg.seed, streams::DROPOUT),
        split_rng,
        meta_pool,
        rows: Vec::new(),
    };
    let mut aborted = None;
    let mut epochs_run = 0;
    'epochs: for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        for sup in epoch_batches(&prep.target, &prep.graph, &pool, cfg.batch_size, &mut trng)? {
            match run.step(&sup, step) {
                Ok(()) => {}
                Err(e @ Error::Numeric { .. }) => {
                    aborted = Some(format!("step {step}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
        if end_epoch(&run.model, prep, &mut tracker, &mut run.rows, epoch, step - 1)? {
            break;
        }
    }
    let JointRun {
        model, weighting, rows, ..
    } = run;
    finish(model, prep, tracker, weighting, rows, epochs_run, aborted, cfg, started)
}

/// Runs the configured transfer scheme on `g`. Pre-training rows (P&F) come
/// first in the record.
pub fn run_scheme(cfg: &TrainConfig, g: &Graph) -> Result<TrainOutcome> {
    let prep = prepare(cfg, g)?;
    match cfg.scheme {
        Scheme::Mtl => train_joint(cfg, &prep, None),
        Scheme::PretrainFinetune => {
            let pre = pretrain(cfg, &prep.pretrain_graph)?;
            let mut out = train_joint(cfg, &prep, Some(&pre.checkpoint))?;
            let mut rows = pre.record.rows;
            rows.append(&mut out.record.rows);
            out.record.rows = rows;
            out.record.wall_clock_secs += pre.record.wall_clock_secs;
            Ok(out)
        }
    }
}
