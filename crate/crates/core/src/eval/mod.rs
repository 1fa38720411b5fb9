//! Embedding extraction, distance ranking, CMC/mAP and the ablation harness.

mod ablation;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::FeatureMap;
use crate::io::{EmbeddingMeta, EmbeddingSet, Manifest, Split};
use crate::par::{map_chunks, Exec};
use crate::training::Model;

pub use ablation::{ablation_run, default_grid, AblationRow, AblationTable, Variant};
pub use metrics::{average_precision, distance_matrix, evaluate, DistanceMatrix, EvalResult, RowMeta, CMC_DEPTH};

/// Maps per forward pass during extraction.
const EMBED_CHUNK: usize = 32;

/// Inference-mode representations of `maps`, in order.
pub fn embed_all(model: &Model, maps: &[FeatureMap], exec: Exec) -> Result<Vec<Vec<f32>>> {
    let cfg = model.head.config();
    for (i, m) in maps.iter().enumerate() {
        cfg.check_map(m.height, m.channels)
            .map_err(|e| Error::Data(format!("map {i}: {e}")))?;
    }
    map_chunks(exec, maps.len(), EMBED_CHUNK, |range| {
        let refs: Vec<&FeatureMap> = maps[range].iter().collect();
        vec![model.embed(&refs)]
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()
    .map(|chunks| chunks.concat())
}

/// Embeds one manifest split. Geometry errors name the offending file.
pub fn embed_split(
    model: &Model,
    manifest: &Manifest,
    split: Split,
    config: serde_json::Value,
    exec: Exec,
) -> Result<EmbeddingSet> {
    let rows = manifest.indices(split);
    let maps = manifest.read_maps(&rows, exec)?;
    let cfg = model.head.config();
    for (k, m) in maps.iter().enumerate() {
        cfg.check_map(m.height, m.channels)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest.resolved[rows[k]].display())))?;
    }
    let embeddings = embed_all(model, &maps, exec)?;
    let entries: Vec<_> = rows.iter().map(|&i| &manifest.entries[i]).collect();
    let meta = EmbeddingMeta {
        ids: entries.iter().map(|e| e.id.clone()).collect(),
        person_ids: entries.iter().map(|e| e.person_id).collect(),
        camera_ids: entries.iter().map(|e| e.camera_id).collect(),
        split,
        config,
    };
    EmbeddingSet::new(cfg.representation_dim(), embeddings, meta)
}

fn row_meta(set: &EmbeddingSet) -> Vec<RowMeta> {
    set.meta
        .person_ids
        .iter()
        .zip(&set.meta.camera_ids)
        .map(|(&person_id, &camera_id)| RowMeta { person_id, camera_id })
        .collect()
}

/// Ranks `gallery` for every row of `query`.
pub fn evaluate_sets(query: &EmbeddingSet, gallery: &EmbeddingSet, exec: Exec) -> Result<EvalResult> {
    if query.dim != gallery.dim {
        return Err(Error::Data(format!(
            "query embeddings have dimension {}, gallery {}",
            query.dim, gallery.dim
        )));
    }
    let d = distance_matrix(&query.values, &gallery.values, query.dim, exec)?;
    evaluate(&d, &row_meta(query), &row_meta(gallery), CMC_DEPTH, exec)
}

/// Evaluation report: the result plus the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: serde_json::Value,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub cmc: Vec<f64>,
    pub n_valid_queries: usize,
}

impl Report {
    pub fn new(config: serde_json::Value, result: &EvalResult) -> Self {
        Report {
            config,
            map: result.map,
            cmc: result.cmc.clone(),
            n_valid_queries: result.n_valid_queries,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("valid queries  {}\nmAP            {:.4}\n", self.n_valid_queries, self.map);
        for k in [1, 5, 10, 20, 50] {
            if let Some(v) = self.cmc.get(k - 1) {
                s.push_str(&format!("rank-{k:<9}{v:.4}\n"));
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
