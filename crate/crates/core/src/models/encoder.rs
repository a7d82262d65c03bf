use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::uniform_init;
use crate::autodiff::{ParamGroup, ParamRegistry, Propagator, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Gcn,
    Gin,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gin => "gin",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub input_dim: usize,
    /// Output width of each layer; the last entry is the embedding size.
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, input_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden_dims: vec![64, 64],
            dropout: 0.2,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("encoder input_dim must be positive"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::config(format!(
                "encoder needs at least one layer with positive width, got {:?}",
                self.hidden_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// GCN or GIN stack over a fixed graph operator.
///
/// Hidden layers use ReLU; the last layer is linear so embeddings can take
/// either sign (dot-product scorers need that). GIN uses ε = 0 and a 2-layer
/// MLP per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnEncoder {
    config: EncoderConfig,
}

impl GnnEncoder {
    /// Registers the encoder's parameters (group `Shared`) and returns the encoder.
    pub fn register(config: EncoderConfig, reg: &mut ParamRegistry, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let enc = Self { config };
        for (name, shape) in enc.param_shapes() {
            let init = if name.ends_with(".b") {
                vec![0.0; shape[1]]
            } else {
                uniform_init(rng, shape[0], shape[1])
            };
            reg.register(name, &shape, ParamGroup::Shared, init)?;
        }
        Ok(enc)
    }

    /// Encoder over parameters already present in some vector (e.g. loaded from a checkpoint).
    pub fn from_config(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        *self.config.hidden_dims.last().expect("validated non-empty")
    }

    /// `(name, shape)` of every parameter, in registration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut d_in = self.config.input_dim;
        for (l, &d_out) in self.config.hidden_dims.iter().enumerate() {
            match self.config.kind {
                EncoderKind::Gcn => {
                    out.push((format!("enc.l{l}.w"), vec![d_in, d_out]));
                    out.push((format!("enc.l{l}.b"), vec![1, d_out]));
                }
                EncoderKind::Gin => {
                    out.push((format!("enc.l{l}.mlp0.w"), vec![d_in, d_out]));
                    out.push((format!("enc.l{l}.mlp0.b"), vec![1, d_out]));
                    out.push((format!("enc.l{l}.mlp1.w"), vec![d_out, d_out]));
                    out.push((format!("enc.l{l}.mlp1.b"), vec![1, d_out]));
                }
            }
            d_in = d_out;
        }
        out
    }

    /// The graph operator this encoder aggregates with.
    pub fn propagator(&self, g: &Graph) -> Arc<Propagator> {
        match self.config.kind {
            EncoderKind::Gcn => g.gcn_propagator(),
            EncoderKind::Gin => g.sum_propagator(),
        }
    }

    /// Embeddings of every node of `g` from the feature node `x`.
    ///
    /// Dropout is applied to hidden representations only when `dropout` is
    /// given; masks are drawn from it layer by layer.
    pub fn encode(&self, tape: &mut Tape, g: &Graph, x: Var, dropout: Option<&mut dyn RngCore>) -> Result<Var> {
        self.encode_with(tape, self.propagator(g), x, dropout)
    }

    pub fn encode_with(
        &self,
        tape: &mut Tape,
        prop: Arc<Propagator>,
        x: Var,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let (n, d) = tape.value(x).dims2()?;
        if d != self.config.input_dim {
            return Err(Error::config(format!(
                "encoder expects {} feature columns, got {d}",
                self.config.input_dim
            )));
        }
        if prop.size() != n {
            return Err(Error::config(format!(
                "graph operator is {0}x{0} but features have {n} rows",
                prop.size()
            )));
        }
        let layers = self.config.hidden_dims.len();
        let mut h = x;
        for l in 0..layers {
            if l > 0 && self.config.dropout > 0.0 {
                if let Some(rng) = dropout.as_deref_mut() {
                    h = apply_dropout(tape, h, self.config.dropout, rng)?;
                }
            }
            h = match self.config.kind {
                EncoderKind::Gcn => {
                    let w = tape.param(&format!("enc.l{l}.w"))?;
                    let b = tape.param(&format!("enc.l{l}.b"))?;
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.propagate(prop.clone(), hw)?;
                    tape.add_row(agg, b)?
                }
                EncoderKind::Gin => {
                    let agg = tape.propagate(prop.clone(), h)?;
                    let w0 = tape.param(&format!("enc.l{l}.mlp0.w"))?;
                    let b0 = tape.param(&format!("enc.l{l}.mlp0.b"))?;
                    let w1 = tape.param(&format!("enc.l{l}.mlp1.w"))?;
                    let b1 = tape.param(&format!("enc.l{l}.mlp1.b"))?;
                    let a = tape.matmul(agg, w0)?;
                    let a = tape.add_row(a, b0)?;
                    let a = tape.relu(a)?;
                    let a = tape.matmul(a, w1)?;
                    tape.add_row(a, b1)?
                }
            };
            if l + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Inverted dropout: keeps each entry with probability `1 − p`, scaled by `1/(1 − p)`.
fn apply_dropout(tape: &mut Tape, h: Var, p: f64, rng: &mut dyn RngCore) -> Result<Var> {
    let shape = tape.value(h).shape().to_vec();
    let keep = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros(&shape);
    for m in mask.data_mut() {
        if rng.random::<f64>() >= p {
            *m = keep;
        }
    }
    tape.mul_const(h, Arc::new(mask))
}
