//! Task weighting: the learned weighting network, gradient cosine
//! similarity, joint-loss assembly, the one-step look-ahead meta-gradient and
//! the baseline strategies.

use std::sync::Arc;

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, ParamGroup, ParamRegistry, ParamVector, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `softplus⁻¹(1) = ln(e − 1)`: the layer-2 bias that makes an idle model output 1.
pub const UNIT_BIAS: f64 = 0.541_324_854_612_918_1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    NoAux,
    Fixed,
    CosineGate,
    SelarLike,
    AuxTsOneSim,
    AuxTsAllSims,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::NoAux,
        Strategy::Fixed,
        Strategy::CosineGate,
        Strategy::SelarLike,
        Strategy::AuxTsOneSim,
        Strategy::AuxTsAllSims,
    ];

    /// Whether the strategy uses a weighting model trained by meta steps.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            Strategy::SelarLike | Strategy::AuxTsOneSim | Strategy::AuxTsAllSims
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoAux => "no-aux",
            Strategy::Fixed => "fixed",
            Strategy::CosineGate => "cosine-gate",
            Strategy::SelarLike => "selar-like",
            Strategy::AuxTsOneSim => "aux-ts-one-sim",
            Strategy::AuxTsAllSims => "aux-ts-all-sims",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which similarities the weighting model sees for task `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `[sim_i]`.
    OneSim,
    /// `[sim_0, …, sim_K]`, identical for every task.
    AllSims,
    /// `[0]`: the one-sim layout with the similarity zeroed out.
    NoSim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightingConfig {
    pub hidden: usize,
    pub type_dim: usize,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            type_dim: 4,
        }
    }
}

/// Per-step inputs of the weighting model.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSignals {
    /// Cosine similarity of each task's shared gradient with the target's; `sims[0] = 1`.
    pub sims: Vec<f64>,
    /// Unweighted loss of each task.
    pub losses: Vec<f64>,
}

impl WeightSignals {
    pub fn new(sims: Vec<f64>, losses: Vec<f64>) -> Result<Self> {
        if sims.len() != losses.len() || sims.is_empty() {
            return Err(Error::usage(format!(
                "{} similarities for {} losses",
                sims.len(),
                losses.len()
            )));
        }
        if sims[0] != 1.0 {
            return Err(Error::usage(format!("sim_0 must be 1, got {}", sims[0])));
        }
        if let Some(s) = sims.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::numeric("weight signals", format!("similarity {s} outside [-1, 1]")));
        }
        if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::numeric("weight signals", format!("loss {l}")));
        }
        Ok(Self { sims, losses })
    }

    /// Signals with `sims` computed as cosine similarities of the shared parts of
    /// `grads` against `grads[0]`; `sim_0` is pinned to 1.
    pub fn from_grads(grads: &[ParamVector], losses: Vec<f64>) -> Result<Self> {
        let first = grads.first().ok_or_else(|| Error::usage("no task gradients"))?;
        let first = first.restrict_group(ParamGroup::Shared);
        let mut sims = vec![1.0];
        for g in &grads[1..] {
            sims.push(cosine_similarity(&first, &g.restrict_group(ParamGroup::Shared))?);
        }
        Self::new(sims, losses)
    }

    pub fn num_tasks(&self) -> usize {
        self.sims.len()
    }
}

/// `u·v / (‖u‖‖v‖)`, or 0 when either norm is below `1e-12`.
pub fn cosine_similarity(u: &ParamVector, v: &ParamVector) -> Result<f64> {
    let dot = u.dot(v)?;
    let (nu2, nv2) = (u.dot(u)?, v.dot(v)?);
    if nu2 < 1e-24 || nv2 < 1e-24 {
        return Ok(0.0);
    }
    // sqrt(fl(d·d)) == d, so identical gradients give exactly 1.
    Ok((dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

/// `g(·; w) = softplus(W₂ relu(W₁ x + b₁) + b₂)` over
/// `x = [sims] ⊕ type_emb[task] ⊕ [loss]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightingModel {
    variant: Variant,
    num_tasks: usize,
    config: WeightingConfig,
    params: ParamVector,
}

impl WeightingModel {
    /// Fresh model for `num_tasks = K + 1` tasks.
    pub fn new(variant: Variant, num_tasks: usize, config: WeightingConfig, rng: &mut impl Rng) -> Result<Self> {
        if num_tasks == 0 || config.hidden == 0 {
            return Err(Error::config("weighting model needs tasks and a positive hidden size"));
        }
        let sim_dim = Self::sim_dim_for(variant, num_tasks);
        let d_in = sim_dim + config.type_dim + 1;
        let h = config.hidden;
        let fan_in = |n: usize, rng: &mut dyn rand::RngCore, len: usize| -> Vec<f64> {
            let a = 1.0 / (n as f64).sqrt();
            (0..len).map(|_| rng.random_range(-a..=a)).collect()
        };
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut reg = ParamRegistry::new();
        reg.register("wm.l1.w", &[d_in, h], ParamGroup::Weighting, fan_in(d_in, rng, d_in * h))?;
        reg.register("wm.l1.b", &[1, h], ParamGroup::Weighting, vec![0.0; h])?;
        reg.register("wm.l2.w", &[h, 1], ParamGroup::Weighting, fan_in(h, rng, h))?;
        reg.register("wm.l2.b", &[1, 1], ParamGroup::Weighting, vec![UNIT_BIAS])?;
        if config.type_dim > 0 {
            let emb = (0..num_tasks * config.type_dim).map(|_| rng.sample(normal)).collect();
            reg.register("wm.type_emb", &[num_tasks, config.type_dim], ParamGroup::Weighting, emb)?;
        }
        Ok(Self {
            variant,
            num_tasks,
            config,
            params: reg.freeze(),
        })
    }

    /// Model for a learned strategy (`None` for the fixed rules).
    pub fn for_strategy(
        strategy: Strategy,
        num_tasks: usize,
        config: WeightingConfig,
        rng: &mut impl Rng,
    ) -> Result<Option<Self>> {
        let variant = match strategy {
            Strategy::AuxTsOneSim => Variant::OneSim,
            Strategy::AuxTsAllSims => Variant::AllSims,
            Strategy::SelarLike => Variant::NoSim,
            _ => return Ok(None),
        };
        Self::new(variant, num_tasks, config, rng).map(Some)
    }

    fn sim_dim_for(variant: Variant, num_tasks: usize) -> usize {
        match variant {
            Variant::AllSims => num_tasks,
            Variant::OneSim | Variant::NoSim => 1,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn config(&self) -> &WeightingConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Constant part of each task's input row: `(sims, loss)`.
    fn input_parts(&self, signals: &WeightSignals) -> Result<(Tensor, Tensor)> {
        let n = signals.num_tasks();
        if n != self.num_tasks {
            return Err(Error::usage(format!(
                "model built for {} tasks, got signals for {n}",
                self.num_tasks
            )));
        }
        if let Some(s) = signals.sims.iter().chain(&signals.losses).find(|x| !x.is_finite()) {
            return Err(Error::numeric("weight_forward", format!("non-finite signal {s}")));
        }
        let sims = match self.variant {
            Variant::OneSim => Tensor::matrix(n, 1, signals.sims.clone())?,
            Variant::NoSim => Tensor::zeros(&[n, 1]),
            Variant::AllSims => {
                let row = &signals.sims;
                Tensor::matrix(n, n, (0..n).flat_map(|_| row.iter().copied()).collect())?
            }
        };
        let losses = Tensor::matrix(n, 1, signals.losses.clone())?;
        Ok((sims, losses))
    }

    /// Builds the `(K+1) x 1` weight column on a tape bound to this model's parameters.
    fn forward(&self, tape: &mut Tape, signals: &WeightSignals) -> Result<Var> {
        let (sims, losses) = self.input_parts(signals)?;
        let s = tape.constant(sims)?;
        let l = tape.constant(losses)?;
        let x = if self.config.type_dim > 0 {
            let emb = tape.param("wm.type_emb")?;
            tape.concat_cols(&[s, emb, l])?
        } else {
            tape.concat_cols(&[s, l])?
        };
        let w1 = tape.param("wm.l1.w")?;
        let b1 = tape.param("wm.l1.b")?;
        let w2 = tape.param("wm.l2.w")?;
        let b2 = tape.param("wm.l2.b")?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, w2)?;
        let o = tape.add_row(o, b2)?;
        tape.softplus(o)
    }

    /// Weight of every task.
    pub fn weights(&self, signals: &WeightSignals) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, signals)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `g(sim, type_emb[task_id], loss; w)` for one task.
    pub fn weight_forward(&self, signals: &WeightSignals, task_id: usize) -> Result<f64> {
        if task_id >= self.num_tasks {
            return Err(Error::usage(format!(
                "task {task_id} out of range for {} tasks",
                self.num_tasks
            )));
        }
        Ok(self.weights(signals)?[task_id])
    }

    /// `∇_w Σ_i c_i g_i` for constant coefficients `c`.
    pub fn weighted_output_grad(&self, signals: &WeightSignals, coeffs: &[f64]) -> Result<ParamVector> {
        if coeffs.len() != self.num_tasks {
            return Err(Error::usage("one coefficient per task required"));
        }
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, signals)?;
        let c = Arc::new(Tensor::matrix(coeffs.len(), 1, coeffs.to_vec())?);
        let prod = tape.mul_const(out, c)?;
        let total = tape.sum(prod)?;
        tape.backward(total)
    }
}

/// `Σ_i weights[i]·losses[i]`, with the weights as constants.
pub fn joint_loss(tape: &mut Tape, weights: &[f64], losses: &[Var]) -> Result<Var> {
    if weights.len() != losses.len() {
        return Err(Error::usage(format!(
            "{} weights for {} losses",
            weights.len(),
            losses.len()
        )));
    }
    let terms: Vec<(f64, Var)> = weights.iter().copied().zip(losses.iter().copied()).collect();
    tape.weighted_sum(&terms)
}

/// Result of [`meta_gradient`].
#[derive(Clone, Debug)]
pub struct MetaGradient {
    /// `∇_w L_sup(θ̂(w))`, in the weighting model's layout.
    pub grad: ParamVector,
    /// Task weights used for the virtual step.
    pub weights: Vec<f64>,
    /// `grad_i · u` for each task, over shared parameters.
    pub alignments: Vec<f64>,
    /// Target loss on the meta batch at `θ̂`.
    pub meta_loss: f64,
}

/// Exact gradient of the look-ahead target loss with respect to the weighting model.
///
/// `task_grads[i]` is task `i`'s full gradient (encoder and heads) at `theta`.
/// The virtual step is `θ̂ = θ − α Σ_i g_i·shared(grad_i) − α Σ_i head(grad_i)`.
/// `meta_loss_grad(θ̂)` returns the target loss on the meta batch and its
/// gradient there. Because `θ̂` depends on `w` only through the scalar weights,
/// `∇_w L_sup(θ̂) = −α Σ_i (shared(grad_i) · u) ∇_w g_i` with
/// `u = shared(∇_θ L_sup(θ̂))`. `theta` is not modified.
pub fn meta_gradient<F>(
    model: &WeightingModel,
    signals: &WeightSignals,
    task_grads: &[ParamVector],
    theta: &ParamVector,
    alpha: f64,
    meta_loss_grad: F,
) -> Result<MetaGradient>
where
    F: FnOnce(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if !(alpha > 0.0) {
        return Err(Error::config(format!("virtual step size must be positive, got {alpha}")));
    }
    if task_grads.len() != signals.num_tasks() {
        return Err(Error::usage("one gradient per task required"));
    }
    let weights = model.weights(signals)?;
    let layout = theta.layout().clone();
    let mut theta_hat = theta.clone();
    for (grad, &w) in task_grads.iter().zip(&weights) {
        theta.check_layout(grad, "meta_gradient")?;
        for e in layout.entries() {
            let scale = if e.group == ParamGroup::Shared { alpha * w } else { alpha };
            let dst = &mut theta_hat.values_mut()[e.range()];
            for (t, g) in dst.iter_mut().zip(&grad.values()[e.range()]) {
                *t -= scale * g;
            }
        }
    }
    let (meta_loss, u) = meta_loss_grad(&theta_hat)?;
    theta.check_layout(&u, "meta_gradient")?;
    let u = u.restrict_group(ParamGroup::Shared);
    let alignments = task_grads
        .iter()
        .map(|g| g.restrict_group(ParamGroup::Shared).dot(&u))
        .collect::<Result<Vec<f64>>>()?;
    let grad = model.weighted_output_grad(signals, &alignments)?.scale(-alpha);
    Ok(MetaGradient {
        grad,
        weights,
        alignments,
        meta_loss,
    })
}

/// `w ← w − β·grad` over every weighting-model parameter.
pub fn meta_step(model: &mut WeightingModel, grad: &ParamVector, beta: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::config(format!("weighting learning rate must be positive, got {beta}")));
    }
    model.params.axpy(-beta, grad)
}

/// Task weights under a strategy. Learned strategies need `model`.
pub fn strategy_weights(strategy: Strategy, signals: &WeightSignals, model: Option<&WeightingModel>) -> Result<Vec<f64>> {
    let n = signals.num_tasks();
    Ok(match strategy {
        Strategy::NoAux => (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        Strategy::Fixed => vec![1.0; n],
        Strategy::CosineGate => signals
            .sims
            .iter()
            .enumerate()
            .map(|(i, &s)| if i == 0 || s >= 0.0 { 1.0 } else { 0.0 })
            .collect(),
        _ => {
            let model = model.ok_or_else(|| {
                Error::config(format!("strategy {strategy} needs a weighting model"))
            })?;
            model.weights(signals)?
        }
    })
}

/// Output of an all-zero weighting model: `softplus(0) = ln 2`.
pub fn idle_weight() -> f64 {
    softplus(0.0)
}
