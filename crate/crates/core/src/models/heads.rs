use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::uniform_init;
use crate::autodiff::{ParamGroup, ParamRegistry, ParamVector, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeadKind {
    /// Linear layer to class logits.
    NodeClassifier { classes: usize },
    /// `score(u, v) = (z_u · P) · z_v` with `P` initialized to the identity.
    EdgeScorer,
    /// Linear layer back to feature space.
    AttributeDecoder { out_dim: usize },
    /// One-hidden-layer ReLU MLP on `[z_u ⊕ z_v]` to a single logit.
    PairClassifier { hidden: usize },
}

/// Task-specific output layer. Parameters are named `head.<task name>.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    kind: HeadKind,
    prefix: String,
    emb_dim: usize,
}

impl TaskHead {
    /// Describes a head without registering anything.
    pub fn new(kind: HeadKind, task_name: &str, emb_dim: usize) -> Result<Self> {
        match kind {
            HeadKind::NodeClassifier { classes: 0 } => {
                return Err(Error::config("node classifier needs at least one class"))
            }
            HeadKind::AttributeDecoder { out_dim: 0 } | HeadKind::PairClassifier { hidden: 0 } => {
                return Err(Error::config("head width must be positive"))
            }
            _ => {}
        }
        if emb_dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        Ok(Self {
            kind,
            prefix: format!("head.{task_name}"),
            emb_dim,
        })
    }

    /// Registers fresh parameters in group `Task(task_id)`.
    pub fn register(
        kind: HeadKind,
        task_name: &str,
        task_id: usize,
        emb_dim: usize,
        reg: &mut ParamRegistry,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let head = Self::new(kind, task_name, emb_dim)?;
        for (name, t) in head.initial_values(rng)? {
            let shape = t.shape().to_vec();
            reg.register(name, &shape, ParamGroup::Task(task_id), t.into_data())?;
        }
        Ok(head)
    }

    pub fn kind(&self) -> &HeadKind {
        &self.kind
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Freshly drawn parameter values, in registration order.
    pub fn initial_values(&self, rng: &mut impl Rng) -> Result<Vec<(String, Tensor)>> {
        let d = self.emb_dim;
        let linear = |rng: &mut _, n_in, n_out| -> Result<Tensor> {
            Tensor::matrix(n_in, n_out, uniform_init(rng, n_in, n_out))
        };
        Ok(match self.kind {
            HeadKind::NodeClassifier { classes } => vec![
                (self.name("w"), linear(rng, d, classes)?),
                (self.name("b"), Tensor::zeros(&[1, classes])),
            ],
            HeadKind::EdgeScorer => vec![(self.name("p"), Tensor::identity(d))],
            HeadKind::AttributeDecoder { out_dim } => vec![
                (self.name("w"), linear(rng, d, out_dim)?),
                (self.name("b"), Tensor::zeros(&[1, out_dim])),
            ],
            HeadKind::PairClassifier { hidden } => vec![
                (self.name("w1"), linear(rng, 2 * d, hidden)?),
                (self.name("b1"), Tensor::zeros(&[1, hidden])),
                (self.name("w2"), linear(rng, hidden, 1)?),
                (self.name("b2"), Tensor::zeros(&[1, 1])),
            ],
        })
    }

    /// Overwrites this head's entries in `params` with fresh values.
    pub fn reinitialize(&self, params: &mut ParamVector, rng: &mut impl Rng) -> Result<()> {
        for (name, t) in self.initial_values(rng)? {
            params.set(&name, &t)?;
        }
        Ok(())
    }

    /// Class logits for `nodes`, one row each.
    pub fn node_logits(&self, tape: &mut Tape, z: Var, nodes: Arc<[usize]>) -> Result<Var> {
        let HeadKind::NodeClassifier { .. } = self.kind else {
            return Err(self.wrong_kind("node logits"));
        };
        self.affine(tape, z, nodes)
    }

    /// Reconstructed feature rows for `nodes`.
    pub fn decode(&self, tape: &mut Tape, z: Var, nodes: Arc<[usize]>) -> Result<Var> {
        let HeadKind::AttributeDecoder { .. } = self.kind else {
            return Err(self.wrong_kind("attribute decoding"));
        };
        self.affine(tape, z, nodes)
    }

    fn affine(&self, tape: &mut Tape, z: Var, nodes: Arc<[usize]>) -> Result<Var> {
        let rows = tape.gather_rows(z, nodes)?;
        let w = tape.param(&self.name("w"))?;
        let b = tape.param(&self.name("b"))?;
        let out = tape.matmul(rows, w)?;
        tape.add_row(out, b)
    }

    /// One score (logit) per `(src[i], dst[i])` pair, as an `m x 1` column.
    pub fn pair_scores(&self, tape: &mut Tape, z: Var, src: Arc<[usize]>, dst: Arc<[usize]>) -> Result<Var> {
        if src.len() != dst.len() {
            return Err(Error::usage("pair endpoints differ in length"));
        }
        let zu = tape.gather_rows(z, src)?;
        let zv = tape.gather_rows(z, dst)?;
        match self.kind {
            HeadKind::EdgeScorer => {
                let p = tape.param(&self.name("p"))?;
                let proj = tape.matmul(zu, p)?;
                let prod = tape.mul(proj, zv)?;
                tape.row_sum(prod)
            }
            HeadKind::PairClassifier { .. } => {
                let cat = tape.concat_cols(&[zu, zv])?;
                let w1 = tape.param(&self.name("w1"))?;
                let b1 = tape.param(&self.name("b1"))?;
                let w2 = tape.param(&self.name("w2"))?;
                let b2 = tape.param(&self.name("b2"))?;
                let h = tape.matmul(cat, w1)?;
                let h = tape.add_row(h, b1)?;
                let h = tape.relu(h)?;
                let out = tape.matmul(h, w2)?;
                tape.add_row(out, b2)
            }
            _ => Err(self.wrong_kind("pair scores")),
        }
    }

    fn wrong_kind(&self, what: &str) -> Error {
        Error::usage(format!("head `{}` ({:?}) cannot produce {what}", self.prefix, self.kind))
    }
}
