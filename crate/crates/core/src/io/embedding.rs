//! `RIDE` embedding files: `"RIDE" | count u32 | dim u32 | f32[count·dim]`,
//! with row metadata in a JSON sidecar at `<path>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::{count_u32, put_f32s, put_u32, read_file, write_file, ByteReader};
use super::manifest::Split;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"RIDE";

/// Sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingMeta {
    pub ids: Vec<String>,
    pub person_ids: Vec<i64>,
    pub camera_ids: Vec<i64>,
    pub split: Split,
    /// Resolved configuration that produced the rows.
    pub config: serde_json::Value,
}

/// Row-major representation matrix plus per-row metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub values: Vec<f32>,
    pub meta: EmbeddingMeta,
}

impl EmbeddingSet {
    pub fn new(dim: usize, rows: Vec<Vec<f32>>, meta: EmbeddingMeta) -> Result<Self> {
        if let Some(r) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!("row {r} has length {}, expected {dim}", rows[r].len())));
        }
        let set = EmbeddingSet {
            dim,
            values: rows.concat(),
            meta,
        };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        let m = &self.meta;
        if m.ids.len() != n || m.person_ids.len() != n || m.camera_ids.len() != n {
            return Err(Error::Data(format!(
                "metadata lists {} ids, {} person ids, {} camera ids for {n} rows",
                m.ids.len(),
                m.person_ids.len(),
                m.camera_ids.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    set.check()?;
    let mut out = Vec::with_capacity(12 + 4 * set.values.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, count_u32(set.len(), "row count")?);
    put_u32(&mut out, count_u32(set.dim, "dimension")?);
    put_f32s(&mut out, &set.values);
    write_file(path, &out)?;
    let mut json = serde_json::to_vec_pretty(&set.meta)?;
    json.push(b'\n');
    write_file(&sidecar_path(path), &json)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(EMBEDDING_MAGIC)?;
    let count = r.u32("row count")? as usize;
    let at = r.offset();
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(r.error(at, "zero embedding dimension"));
    }
    let n = count.checked_mul(dim).ok_or_else(|| r.error(at, "size overflows"))?;
    let values = r.f32s(n, "rows")?;
    r.finish()?;
    let side = sidecar_path(path);
    let text = read_file(&side)?;
    let meta: EmbeddingMeta = serde_json::from_slice(&text).map_err(|e| Error::Format {
        path: side.clone(),
        offset: e.column() as u64,
        msg: format!("bad sidecar JSON at line {}: {e}", e.line()),
    })?;
    let set = EmbeddingSet { dim, values, meta };
    set.check().map_err(|e| Error::Format {
        path: side,
        offset: 0,
        msg: e.to_string(),
    })?;
    Ok(set)
}
