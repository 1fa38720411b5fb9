use serde::{Deserialize, Serialize};

use super::metrics::{distance_matrix, evaluate, RowMeta, CMC_DEPTH};
use super::embed_all;
use crate::error::Result;
use crate::head::{FeatureMap, GlobalMode, HeadConfig, PoolMode};
use crate::io::{Manifest, Split};
use crate::par::{map_range, Exec};
use crate::training::{train, TrainConfig, TrainSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub head: HeadConfig,
}

/// Baseline rows, then every global mode × relation on/off × {P6, P2+4+6}.
///
/// Channel widths come from `base`.
pub fn default_grid(base: &HeadConfig) -> Vec<Variant> {
    let make = |name: String, scales: Vec<usize>, part_pool, global_mode, local_features, relation| Variant {
        name,
        head: HeadConfig {
            scales,
            channels: base.channels,
            reduced_channels: base.reduced_channels,
            part_pool,
            global_mode,
            local_features,
            relation,
        },
    };
    let mut grid = vec![
        make("gf-gap".into(), vec![6], PoolMode::Gap, GlobalMode::Gap, false, false),
        make("lf-gap".into(), vec![6], PoolMode::Gap, GlobalMode::None, true, false),
        make("gap-gap".into(), vec![6], PoolMode::Gap, GlobalMode::Gap, true, false),
    ];
    for (ext, scales) in [(false, vec![6]), (true, vec![2, 4, 6])] {
        for relation in [false, true] {
            for mode in [GlobalMode::Gmp, GlobalMode::Gap, GlobalMode::GapGmp, GlobalMode::Gcp] {
                let name = format!(
                    "{}{}{}",
                    mode.label().to_ascii_lowercase(),
                    if relation { "-rm" } else { "" },
                    if ext { "-ext" } else { "" }
                );
                grid.push(make(name, scales.clone(), PoolMode::Gmp, mode, true, relation));
            }
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub gf: bool,
    pub lf: bool,
    pub rm: bool,
    pub ext: bool,
    pub gf_pool: String,
    pub lf_pool: String,
    pub f_dim: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
}

impl AblationRow {
    pub fn describe(v: &Variant) -> Self {
        let h = &v.head;
        AblationRow {
            name: v.name.clone(),
            gf: h.global_mode != GlobalMode::None,
            lf: h.local_features,
            rm: h.relation,
            ext: h.scales.len() > 1,
            gf_pool: h.global_mode.label().into(),
            lf_pool: if h.local_features { h.part_pool.label().into() } else { "-".into() },
            f_dim: h.representation_dim(),
            map: f64::NAN,
            rank1: f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config: serde_json::Value,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let tick = |b: bool| if b { "x" } else { "" };
        let mut s = format!(
            "{:<14} {:^3} {:^3} {:^3} {:^4} {:>8} {:>7} {:>6} {:>7} {:>7}\n",
            "variant", "GF", "LF", "RM", "Ext.", "GF pool", "LF pool", "F-dim", "mAP", "rank-1"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:^3} {:^3} {:^3} {:^4} {:>8} {:>7} {:>6} {:>7.4} {:>7.4}\n",
                r.name,
                tick(r.gf),
                tick(r.lf),
                tick(r.rm),
                tick(r.ext),
                r.gf_pool,
                r.lf_pool,
                r.f_dim,
                r.map,
                r.rank1
            ));
        }
        s.push_str(&format!("ordering by mAP: {}\n", self.ordering().join(" > ")));
        s
    }

    /// Variant names by descending mAP, ties in grid order.
    pub fn ordering(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.rows[b].map.total_cmp(&self.rows[a].map).then(a.cmp(&b)));
        idx.into_iter().map(|i| self.rows[i].name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

/// Trains and evaluates every variant with the same training config.
pub fn ablation_run(
    cfg: &TrainConfig,
    manifest: &Manifest,
    grid: &[Variant],
    config: serde_json::Value,
    exec: Exec,
) -> Result<AblationTable> {
    cfg.validate()?;
    for v in grid {
        v.head.validate()?;
    }
    let train_set: TrainSet = manifest.train_set(exec)?;
    let load = |split| -> Result<(Vec<FeatureMap>, Vec<RowMeta>)> {
        let rows = manifest.indices(split);
        let meta = rows
            .iter()
            .map(|&i| RowMeta {
                person_id: manifest.entries[i].person_id,
                camera_id: manifest.entries[i].camera_id,
            })
            .collect();
        Ok((manifest.read_maps(&rows, exec)?, meta))
    };
    let (q_maps, q_meta) = load(Split::Query)?;
    let (g_maps, g_meta) = load(Split::Gallery)?;
    let rows = map_range(exec, grid.len(), |i| -> Result<AblationRow> {
        let v = &grid[i];
        log::info!("ablation variant {}", v.name);
        let outcome = train(cfg, &v.head, &train_set)?;
        let q = embed_all(&outcome.model, &q_maps, exec)?.concat();
        let g = embed_all(&outcome.model, &g_maps, exec)?.concat();
        let d = distance_matrix(&q, &g, v.head.representation_dim(), exec)?;
        let result = evaluate(&d, &q_meta, &g_meta, CMC_DEPTH, exec)?;
        Ok(AblationRow {
            map: result.map,
            rank1: result.rank(1),
            ..AblationRow::describe(v)
        })
    });
    Ok(AblationTable {
        config,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}
