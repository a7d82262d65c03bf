use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::OptimizerKind;
use crate::error::{Error, Result};
use crate::models::EncoderKind;
use crate::weighting::{Strategy, WeightingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Joint training from random initialization.
    #[default]
    Mtl,
    /// Pre-train on auxiliary tasks, then train jointly from the checkpoint.
    #[serde(rename = "pf", alias = "pretrain-finetune")]
    PretrainFinetune,
}

/// How nodes are divided between pre-training and fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Seeded node partition; the fine-tune side is split 1/3 each into train/valid/test.
    #[default]
    NodeSplit,
    /// Both phases use the whole graph; labeled nodes are split 1/3 each.
    SameGraph,
}

/// Which partition feeds the auxiliary tasks while fine-tuning under P&F.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AuxData {
    #[default]
    Finetune,
    /// Auxiliary batches come from the pretrain partition; the encoder then
    /// runs on the whole graph.
    Pretrain,
}

/// Where the meta batch of the weighting update comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MetaSplit {
    /// Every target batch is split afresh into a train and a meta part.
    #[default]
    PerBatch,
    /// A fixed share of the target train pool is held out once and sampled from.
    HeldOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetConfig {
    #[default]
    NodeClassification,
    /// Links of `edge_type` (all links on untyped graphs); `held_out` of them
    /// are removed from the graph and split evenly into valid and test.
    LinkPrediction {
        #[serde(default)]
        edge_type: Option<u8>,
        #[serde(default = "default_held_out")]
        held_out: f64,
    },
}

fn default_held_out() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AuxKind {
    EdgeGeneration,
    AttributeGeneration {
        #[serde(default = "default_mask")]
        mask_fraction: f64,
    },
    MetapathPrediction {
        node_types: Vec<u8>,
        /// One entry per hop; `null` accepts any edge type.
        #[serde(default)]
        edge_types: Option<Vec<Option<u8>>>,
        /// Size of the positive (and negative) pair pool.
        #[serde(default = "default_pairs")]
        pairs: usize,
    },
    /// The target task again, on the target's own batches.
    TargetCopy,
}

fn default_mask() -> f64 {
    0.15
}

fn default_pairs() -> usize {
    2000
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxTaskConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: AuxKind,
    #[serde(default = "one")]
    pub loss_scale: f64,
}

impl AuxTaskConfig {
    pub fn edge(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: AuxKind::EdgeGeneration,
            loss_scale: 1.0,
        }
    }

    pub fn attribute(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: AuxKind::AttributeGeneration {
                mask_fraction: default_mask(),
            },
            loss_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub kind: EncoderKind,
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gcn,
            hidden_dims: vec![64, 64],
            dropout: 0.2,
        }
    }
}

/// Every knob of a training run. Missing JSON fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub strategy: Strategy,
    pub encoder: EncoderSettings,
    pub target: TargetConfig,
    pub aux_tasks: Vec<AuxTaskConfig>,
    /// GNN learning rate while pre-training.
    pub pretrain_lr: f64,
    /// GNN learning rate for joint training and fine-tuning (also the virtual step size).
    pub finetune_lr: f64,
    /// Weighting-model learning rate.
    pub weighting_lr: f64,
    pub optimizer: OptimizerKind,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of each target batch used for the stage-1 gradients.
    pub split_ratio: f64,
    pub meta_split: MetaSplit,
    /// Use the train part of the target batch in stage 2 as well.
    pub same_batch: bool,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Negatives per positive for pair tasks.
    pub negatives: usize,
    /// Hidden width of pair-classifier heads.
    pub pair_hidden: usize,
    pub weighting: WeightingConfig,
    pub partition: PartitionMode,
    pub pretrain_fraction: f64,
    pub aux_data: AuxData,
    /// Keep pre-trained auxiliary heads instead of reinitializing them.
    pub reuse_heads: bool,
    /// Divergence guard on the joint loss.
    pub max_loss: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Mtl,
            strategy: Strategy::AuxTsAllSims,
            encoder: EncoderSettings::default(),
            target: TargetConfig::NodeClassification,
            aux_tasks: vec![AuxTaskConfig::edge("edge"), AuxTaskConfig::attribute("attr")],
            pretrain_lr: 1e-3,
            finetune_lr: 5e-4,
            weighting_lr: 1e-5,
            optimizer: OptimizerKind::Adam,
            pretrain_epochs: 50,
            epochs: 100,
            batch_size: 256,
            split_ratio: 0.5,
            meta_split: MetaSplit::PerBatch,
            same_batch: false,
            patience: 20,
            negatives: 5,
            pair_hidden: 32,
            weighting: WeightingConfig::default(),
            partition: PartitionMode::NodeSplit,
            pretrain_fraction: 0.7,
            aux_data: AuxData::Finetune,
            reuse_heads: false,
            max_loss: 1e6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pretrain_lr", self.pretrain_lr),
            ("finetune_lr", self.finetune_lr),
            ("weighting_lr", self.weighting_lr),
            ("max_loss", self.max_loss),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.scheme == Scheme::PretrainFinetune && self.pretrain_epochs == 0 {
            return Err(Error::config("pretrain_epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.negatives == 0 || self.pair_hidden == 0 {
            return Err(Error::config("batch_size, negatives and pair_hidden must be positive"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(Error::config("pretrain_fraction must lie in (0, 1)"));
        }
        let mut names = std::collections::HashSet::new();
        for t in &self.aux_tasks {
            if t.name.is_empty() || t.name == "target" || !names.insert(t.name.as_str()) {
                return Err(Error::config(format!("auxiliary task name `{}` is empty, reserved or repeated", t.name)));
            }
            if !(t.loss_scale > 0.0 && t.loss_scale.is_finite()) {
                return Err(Error::config(format!("task `{}`: loss_scale must be positive", t.name)));
            }
        }
        Ok(())
    }

    /// Number of auxiliary tasks `K`.
    pub fn k(&self) -> usize {
        self.aux_tasks.len()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
