//! Flat JSON run configuration. Missing keys take their defaults; unknown
//! keys and type mismatches are rejected with a JSON pointer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{GlobalMode, HeadConfig, PoolMode};
use crate::training::{DecaySchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scales: Vec<usize>,
    /// Shorthand for a single scale; overrides `scales` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parts: Option<usize>,
    pub channels: usize,
    pub reduced_channels: usize,
    pub part_pool: PoolMode,
    pub global_mode: GlobalMode,
    pub local_features: bool,
    pub relation: bool,

    pub n_k: usize,
    pub n_m: usize,
    pub epochs: u32,
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub seed: u64,
    pub decay_start_epoch: u32,
    pub decay_period: u32,
    pub decay_factor: f64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_parts(&HeadConfig::default(), &TrainConfig::default())
    }
}

impl RunConfig {
    pub fn from_parts(head: &HeadConfig, train: &TrainConfig) -> Self {
        RunConfig {
            scales: head.scales.clone(),
            parts: None,
            channels: head.channels,
            reduced_channels: head.reduced_channels,
            part_pool: head.part_pool,
            global_mode: head.global_mode,
            local_features: head.local_features,
            relation: head.relation,
            n_k: train.n_k,
            n_m: train.n_m,
            epochs: train.epochs,
            lr_head: train.lr_head,
            lr_backbone: train.lr_backbone,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            lambda: train.lambda,
            alpha: train.alpha,
            seed: train.seed,
            decay_start_epoch: train.schedule.start_epoch,
            decay_period: train.schedule.period,
            decay_factor: train.schedule.factor,
            data: None,
            out: None,
        }
    }

    /// Head settings; not validated until the head is built.
    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            scales: self.parts.map_or_else(|| self.scales.clone(), |p| vec![p]),
            channels: self.channels,
            reduced_channels: self.reduced_channels,
            part_pool: self.part_pool,
            global_mode: self.global_mode,
            local_features: self.local_features,
            relation: self.relation,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            n_k: self.n_k,
            n_m: self.n_m,
            epochs: self.epochs,
            lr_head: self.lr_head,
            lr_backbone: self.lr_backbone,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            alpha: self.alpha,
            seed: self.seed,
            schedule: DecaySchedule {
                start_epoch: self.decay_start_epoch,
                period: self.decay_period,
                factor: self.decay_factor,
            },
        }
    }

    /// Resolved configuration as emitted into reports.
    pub fn to_json(&self) -> serde_json::Value {
        let mut resolved = RunConfig::from_parts(&self.head(), &self.train());
        resolved.data = self.data.clone();
        resolved.out = self.out.clone();
        serde_json::to_value(resolved).expect("config serializes")
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    // serde would accept a JSON array positionally for a struct
    if !text.trim_start().starts_with('{') {
        return Err(Error::ConfigField {
            pointer: "/".into(),
            msg: "config must be a JSON object".into(),
        });
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer: String = e
            .path()
            .iter()
            .filter_map(|seg| match seg {
                serde_path_to_error::Segment::Map { key } => Some(format!("/{key}")),
                serde_path_to_error::Segment::Seq { index } => Some(format!("/{index}")),
                _ => None,
            })
            .collect();
        Error::ConfigField {
            pointer: if pointer.is_empty() { "/".into() } else { pointer },
            msg: e.into_inner().to_string(),
        }
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
