//! JSON Lines dataset manifests.
//!
//! One object per line: `{"id", "feature_path", "person_id", "camera_id", "split"}`.
//! Relative feature paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::feature::read_feature;
use crate::error::{Error, Result};
use crate::head::FeatureMap;
use crate::par::{map_range, Exec};
use crate::training::TrainSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Query, Split::Gallery];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: String,
    /// `-1` marks junk images.
    pub person_id: i64,
    pub camera_id: i64,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Absolute or manifest-relative resolved path per entry.
    pub resolved: Vec<PathBuf>,
    /// Train person id to dense label, ascending by person id.
    pub train_labels: BTreeMap<i64, usize>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path, true)
}

/// Parses manifest text; `check_paths` verifies that every feature file exists.
pub fn parse_manifest(text: &str, path: &Path, check_paths: bool) -> Result<Manifest> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let err = |line: usize, msg: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    let mut resolved = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if !seen.insert(entry.id.clone()) {
            return Err(err(line, format!("duplicate id {:?}", entry.id)));
        }
        if entry.person_id < -1 {
            return Err(err(line, format!("person_id {} is below -1", entry.person_id)));
        }
        if entry.split == Split::Train && entry.person_id < 0 {
            return Err(err(line, "junk person_id -1 in the train split".into()));
        }
        let file = base.join(&entry.feature_path);
        if check_paths && !file.is_file() {
            return Err(err(line, format!("feature file {} not found", file.display())));
        }
        resolved.push(file);
        entries.push(entry);
    }
    let mut train_ids: Vec<i64> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.person_id)
        .collect();
    train_ids.sort_unstable();
    train_ids.dedup();
    let train_labels = train_ids.into_iter().enumerate().map(|(l, id)| (id, l)).collect();
    Ok(Manifest {
        path: path.to_path_buf(),
        entries,
        resolved,
        train_labels,
    })
}

impl Manifest {
    /// Row indices of `split`, in file order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn counts(&self) -> BTreeMap<Split, usize> {
        Split::ALL.iter().map(|&s| (s, self.count(s))).collect()
    }

    pub fn classes(&self) -> usize {
        self.train_labels.len()
    }

    /// Reads the feature files of the given rows, preserving order.
    pub fn read_maps(&self, rows: &[usize], exec: Exec) -> Result<Vec<FeatureMap>> {
        map_range(exec, rows.len(), |k| read_feature(&self.resolved[rows[k]]))
            .into_iter()
            .collect()
    }

    pub fn train_set(&self, exec: Exec) -> Result<TrainSet> {
        let rows = self.indices(Split::Train);
        let maps = self.read_maps(&rows, exec)?;
        let labels = rows
            .iter()
            .map(|&i| self.train_labels[&self.entries[i].person_id])
            .collect();
        TrainSet::new(maps, labels)
    }
}
