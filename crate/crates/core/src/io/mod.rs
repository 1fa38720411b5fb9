//! On-disk formats, manifests, run configuration and the synthetic dataset.

pub(crate) mod binary;
mod config;
mod embedding;
mod feature;
mod manifest;
mod synth;

pub use config::{load_config, parse_config, RunConfig};
pub use embedding::{read_embeddings, write_embeddings, EmbeddingMeta, EmbeddingSet, EMBEDDING_MAGIC};
pub use feature::{decode_feature, encode_feature, read_feature, write_feature, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{load_manifest, parse_manifest, Manifest, ManifestEntry, Split};
pub use synth::{synth_generate, SynthSpec};
