use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_chunks, map_range, Exec};

/// Default CMC depth.
pub const CMC_DEPTH: usize = 50;

/// Row-major `|Q|×|G|` unsquared Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.values[q * self.cols + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.cols..(q + 1) * self.cols]
    }
}

/// Distances between flat row-major `query` and `gallery` matrices of width `dim`.
pub fn distance_matrix(query: &[f32], gallery: &[f32], dim: usize, exec: Exec) -> Result<DistanceMatrix> {
    if dim == 0 || query.len() % dim != 0 || gallery.len() % dim != 0 {
        return Err(Error::Data(format!(
            "embedding lengths {} and {} are not multiples of dimension {dim}",
            query.len(),
            gallery.len()
        )));
    }
    let (rows, cols) = (query.len() / dim, gallery.len() / dim);
    let values = map_chunks(exec, rows, 16, |range| {
        let mut out = Vec::with_capacity(range.len() * cols);
        for q in range {
            let a = &query[q * dim..(q + 1) * dim];
            for b in gallery.chunks_exact(dim) {
                let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
                out.push(s.sqrt());
            }
        }
        out
    });
    Ok(DistanceMatrix { rows, cols, values })
}

/// Identity and camera of one embedding row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowMeta {
    pub person_id: i64,
    pub camera_id: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "mAP")]
    pub map: f64,
    /// `cmc[k-1]` is the rank-k accuracy.
    pub cmc: Vec<f64>,
    /// `None` for queries without a valid match.
    pub per_query_ap: Vec<Option<f64>>,
    pub n_valid_queries: usize,
}

impl EvalResult {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc.get(k - 1).or(self.cmc.last()).copied().unwrap_or(0.0)
    }
}

/// `(1/R)·Σ_k rel(k)·precision@k` over a ranked relevance list.
pub fn average_precision(ranked: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Ranked relevance list of one query after the cross-camera and junk filters.
fn ranked_relevance(d: &[f64], q: RowMeta, gallery: &[RowMeta]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..gallery.len())
        .filter(|&j| {
            let g = gallery[j];
            g.person_id != -1 && !(g.person_id == q.person_id && g.camera_id == q.camera_id)
        })
        .collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order.iter().map(|&j| gallery[j].person_id == q.person_id).collect()
}

/// Single-query cross-camera evaluation.
pub fn evaluate(
    dist: &DistanceMatrix,
    query: &[RowMeta],
    gallery: &[RowMeta],
    depth: usize,
    exec: Exec,
) -> Result<EvalResult> {
    if query.len() != dist.rows || gallery.len() != dist.cols {
        return Err(Error::Data(format!(
            "metadata for {}x{} rows does not match a {}x{} distance matrix",
            query.len(),
            gallery.len(),
            dist.rows,
            dist.cols
        )));
    }
    let per_query: Vec<Option<(f64, usize)>> = map_range(exec, query.len(), |i| {
        let ranked = ranked_relevance(dist.row(i), query[i], gallery);
        let ap = average_precision(&ranked)?;
        let first = ranked.iter().position(|&r| r).expect("ap implies a hit");
        Some((ap, first))
    });
    let mut cmc = vec![0.0; depth];
    let mut ap_sum = 0.0;
    let mut valid = 0usize;
    for &(ap, first) in per_query.iter().flatten() {
        valid += 1;
        ap_sum += ap;
        for c in cmc.iter_mut().skip(first) {
            *c += 1.0;
        }
    }
    if valid == 0 {
        log::warn!("no query has a valid cross-camera match");
    } else {
        cmc.iter_mut().for_each(|c| *c /= valid as f64);
    }
    Ok(EvalResult {
        map: if valid == 0 { 0.0 } else { ap_sum / valid as f64 },
        cmc,
        per_query_ap: per_query.iter().map(|r| r.map(|(ap, _)| ap)).collect(),
        n_valid_queries: valid,
    })
}
