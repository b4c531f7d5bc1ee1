//! Experiment configuration files.
//!
//! A config is a TOML document with four optional sections. Every key has a
//! default; unknown keys are rejected. Method-dependent defaults (learning
//! rates, decay and patience) are filled in by [`ExperimentConfig::resolved`].
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! train = "train.sfsb"     # relative paths resolve against the config file
//! val = "val.sfsb"
//!
//! [train]
//! method = "adversarial"   # adversarial | knn | supervised
//! min_epochs = 50
//! max_epochs = 500
//! batch_size = 8
//! flow_lr = 5e-4           # 1e-4 unless adversarial
//! embedder_lr = 5e-5
//! beta1 = 0.0
//! beta2 = 0.99
//! weight_decay = 4e-4
//! lr_decay = 0.75          # 0.5 unless adversarial
//! lr_patience = 10         # 5 unless adversarial
//! stop_patience = 40       # 20 unless adversarial
//! augment = true
//! match_negative_size = true
//!
//! [model]
//! local = [32]
//! global = [64]
//! decoder = [64, 32]
//! zero_init_decoder = false
//! pool = "delta"           # joint | per_frame | delta
//! affine_head = true
//! support_points = false
//! embedder = [32, 64, 128]
//!
//! [loss]
//! gamma_cc = 1.0
//! gamma_knn = 1.0
//! margin = 1.0
//! cycle = "cos_l2"         # none | cos | mse | l2 | cos_mse | cos_l2
//! schedule = "inv_sqrt"    # last_only | inv_sqrt | inv | inv_square
//! knn_k = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CycleLoss, LossWeights, ScheduleKind};
use crate::nets::{EmbedderSpec, FlowExtractorSpec, GlobalPool};
use crate::training::{AdamConfig, Method, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    pub train: TrainSection,
    pub model: ModelSection,
    pub loss: LossSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub val: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_lr: Option<f64>,
    pub embedder_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_patience: Option<usize>,
    pub augment: bool,
    pub match_negative_size: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub local: Vec<usize>,
    pub global: Vec<usize>,
    pub decoder: Vec<usize>,
    pub zero_init_decoder: bool,
    pub pool: GlobalPool,
    pub affine_head: bool,
    pub support_points: bool,
    pub embedder: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub gamma_cc: f64,
    pub gamma_knn: f64,
    pub margin: f64,
    pub cycle: CycleLoss,
    pub schedule: ScheduleKind,
    pub knn_k: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: "train.sfsb".into(),
            val: "val.sfsb".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Method::Adversarial);
        Self {
            method: t.method,
            min_epochs: t.min_epochs,
            max_epochs: t.max_epochs,
            batch_size: t.batch_size,
            flow_lr: None,
            embedder_lr: t.embedder_adam.lr,
            beta1: t.flow_adam.beta1,
            beta2: t.flow_adam.beta2,
            weight_decay: t.flow_adam.weight_decay,
            lr_decay: None,
            lr_patience: None,
            stop_patience: None,
            augment: t.augment,
            match_negative_size: t.match_negative_size,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let f = FlowExtractorSpec::default();
        Self {
            local: f.local,
            global: f.global,
            decoder: f.decoder,
            zero_init_decoder: f.zero_init_decoder,
            pool: f.pool,
            affine_head: f.affine_head,
            support_points: f.support_points,
            embedder: EmbedderSpec::default().stages,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            gamma_cc: w.gamma_cc,
            gamma_knn: w.gamma_knn,
            margin: w.margin,
            cycle: CycleLoss::default(),
            schedule: ScheduleKind::default(),
            knn_k: 1,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config. Nothing is read from disk.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train_config()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths become relative to its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.train, &mut cfg.data.val] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// The same config with every method-dependent default written out.
    pub fn resolved(&self) -> Self {
        let t = TrainConfig::new(self.train.method);
        let mut out = self.clone();
        out.train.flow_lr.get_or_insert(t.flow_adam.lr);
        out.train.lr_decay.get_or_insert(t.lr_decay);
        out.train.lr_patience.get_or_insert(t.lr_patience);
        out.train.stop_patience.get_or_insert(t.stop_patience);
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The training settings this config describes, validated.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let r = self.resolved();
        let (s, m, l) = (&r.train, &r.model, &r.loss);
        let adam = |lr: f64| AdamConfig {
            lr,
            beta1: s.beta1,
            beta2: s.beta2,
            weight_decay: s.weight_decay,
            ..AdamConfig::default()
        };
        let cfg = TrainConfig {
            method: s.method,
            min_epochs: s.min_epochs,
            max_epochs: s.max_epochs,
            batch_size: s.batch_size,
            flow_adam: adam(s.flow_lr.unwrap()),
            embedder_adam: adam(s.embedder_lr),
            lr_decay: s.lr_decay.unwrap(),
            lr_patience: s.lr_patience.unwrap(),
            stop_patience: s.stop_patience.unwrap(),
            seed: r.seed,
            weights: LossWeights {
                gamma_cc: l.gamma_cc,
                gamma_knn: l.gamma_knn,
                margin: l.margin,
            },
            cycle: l.cycle,
            schedule: l.schedule,
            knn_k: l.knn_k,
            match_negative_size: s.match_negative_size,
            augment: s.augment,
            flow: FlowExtractorSpec {
                local: m.local.clone(),
                global: m.global.clone(),
                decoder: m.decoder.clone(),
                zero_init_decoder: m.zero_init_decoder,
                pool: m.pool,
                affine_head: m.affine_head,
                support_points: m.support_points,
            },
            embedder: EmbedderSpec {
                stages: m.embedder.clone(),
            },
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}
