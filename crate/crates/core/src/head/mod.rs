//! Part-based person representation head.
//!
//! A backbone feature map is cut into `P` horizontal bands, each band is
//! pooled into a part vector, and two branches turn the part set into the
//! final representation: the one-vs-rest relation module for local features
//! and global contrastive pooling (GCP) for the global feature.

mod layers;
mod model;
mod parts;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layers::{apply_stat_updates, Affine, BatchNorm, Mode, Residual, BN_EPS, BN_MOMENTUM};
pub use model::{GcpParams, GlobalBranch, HeadOutput, PartBranch, ReidHead, RelationParams, ScaleHead};
pub use parts::{
    contrastive_pool, global_pool, part_vector, pool_parts, rest_vectors, split_parts, ContrastivePooling, FeatureMap,
    PartSet,
};

/// Spatial pooling used for part vectors and the pooled global variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Gmp,
    Gap,
}

/// How the global feature `q_0` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalMode {
    /// No global feature.
    #[serde(rename = "none")]
    None,
    #[serde(rename = "gap")]
    Gap,
    #[serde(rename = "gmp")]
    Gmp,
    /// Sum of the GAP and GMP vectors before projection.
    #[serde(rename = "gap+gmp")]
    GapGmp,
    #[serde(rename = "gcp")]
    Gcp,
}

impl GlobalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "-" => Ok(GlobalMode::None),
            "gap" => Ok(GlobalMode::Gap),
            "gmp" => Ok(GlobalMode::Gmp),
            "gap+gmp" | "gmp+gap" => Ok(GlobalMode::GapGmp),
            "gcp" => Ok(GlobalMode::Gcp),
            other => Err(Error::Config(format!("unknown global pooling mode {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GlobalMode::None => "-",
            GlobalMode::Gap => "GAP",
            GlobalMode::Gmp => "GMP",
            GlobalMode::GapGmp => "GAP+GMP",
            GlobalMode::Gcp => "GCP",
        }
    }
}

impl PoolMode {
    pub fn label(self) -> &'static str {
        match self {
            PoolMode::Gmp => "GMP",
            PoolMode::Gap => "GAP",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Part counts; one independent head per entry, concatenated in order.
    pub scales: Vec<usize>,
    /// Backbone channels `C`.
    pub channels: usize,
    /// Reduced channels `c` of every output feature.
    pub reduced_channels: usize,
    pub part_pool: PoolMode,
    pub global_mode: GlobalMode,
    /// Emit the local part features `q_1..q_P`.
    pub local_features: bool,
    /// One-vs-rest relation module on the local features.
    pub relation: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            scales: vec![6],
            channels: 2048,
            reduced_channels: 256,
            part_pool: PoolMode::Gmp,
            global_mode: GlobalMode::Gcp,
            local_features: true,
            relation: true,
        }
    }
}

impl HeadConfig {
    /// Single-scale model with six parts.
    pub fn single_scale() -> Self {
        Self::default()
    }

    /// Multi-scale model over two, four and six parts.
    pub fn multi_scale() -> Self {
        HeadConfig {
            scales: vec![2, 4, 6],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if self.scales.contains(&0) {
            return Err(Error::Config("part count must be positive".into()));
        }
        let mut sorted = self.scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.scales.len() {
            return Err(Error::Config(format!("duplicate scales in {:?}", self.scales)));
        }
        if self.reduced_channels == 0 || self.reduced_channels >= self.channels {
            return Err(Error::Config(format!(
                "reduced channels c={} must satisfy 0 < c < C={}",
                self.reduced_channels, self.channels
            )));
        }
        if self.global_mode == GlobalMode::None && !self.local_features {
            return Err(Error::Config("head emits no features (no global, no local)".into()));
        }
        if self.relation && !self.local_features {
            return Err(Error::Config("relation module requires local features".into()));
        }
        if self.relation {
            if let Some(&p) = self.scales.iter().find(|&&p| p < 2) {
                return Err(Error::Config(format!("relation module needs at least 2 parts, got {p}")));
            }
        }
        Ok(())
    }

    /// Checks a feature map geometry against this head.
    pub fn check_map(&self, height: usize, channels: usize) -> Result<()> {
        if channels != self.channels {
            return Err(Error::Config(format!(
                "feature map has {channels} channels, head expects {}",
                self.channels
            )));
        }
        for &p in &self.scales {
            if height % p != 0 {
                return Err(Error::Config(format!("{p} parts do not divide map height {height}")));
            }
        }
        Ok(())
    }

    /// Number of `q` features at one scale.
    pub fn features_at(&self, parts: usize) -> usize {
        usize::from(self.global_mode != GlobalMode::None) + if self.local_features { parts } else { 0 }
    }

    /// Number of `q` features over all scales (classifier bank size).
    pub fn feature_count(&self) -> usize {
        self.scales.iter().map(|&p| self.features_at(p)).sum()
    }

    /// Length of the final representation.
    pub fn representation_dim(&self) -> usize {
        self.feature_count() * self.reduced_channels
    }
}
