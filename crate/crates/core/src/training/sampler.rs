use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Identity-balanced mini-batch: `n_k` identities × `n_m` images each,
/// grouped identity-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PkBatch {
    /// Indices into the training set.
    pub indices: Vec<usize>,
    /// Dense identity label per entry.
    pub labels: Vec<usize>,
}

/// PK sampler over densely labeled training images.
#[derive(Clone, Debug)]
pub struct PkSampler {
    /// (dense label, image indices) for every populated identity.
    groups: Vec<(usize, Vec<usize>)>,
    n_k: usize,
    n_m: usize,
}

impl PkSampler {
    /// `labels[i]` is the dense identity of training image `i`.
    pub fn new(labels: &[usize], n_k: usize, n_m: usize) -> Result<Self> {
        if n_k == 0 || n_m == 0 {
            return Err(Error::Config("n_k and n_m must be positive".into()));
        }
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut by_label = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            by_label[l].push(i);
        }
        let groups: Vec<(usize, Vec<usize>)> = by_label
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        if groups.len() < n_k {
            return Err(Error::Data(format!(
                "training split has {} identities, a batch needs {n_k}",
                groups.len()
            )));
        }
        Ok(PkSampler { groups, n_k, n_m })
    }

    pub fn batch_size(&self) -> usize {
        self.n_k * self.n_m
    }

    pub fn identities(&self) -> usize {
        self.groups.len()
    }

    /// Draws one batch. Identities are chosen uniformly without replacement;
    /// images without replacement when an identity has at least `n_m`,
    /// otherwise with replacement.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> PkBatch {
        let mut indices = Vec::with_capacity(self.batch_size());
        let mut labels = Vec::with_capacity(self.batch_size());
        for slot in index::sample(rng, self.groups.len(), self.n_k).into_iter() {
            let (label, images) = (self.groups[slot].0, &self.groups[slot].1);
            if images.len() >= self.n_m {
                for j in index::sample(rng, images.len(), self.n_m).into_iter() {
                    indices.push(images[j]);
                    labels.push(label);
                }
            } else {
                for _ in 0..self.n_m {
                    indices.push(images[rng.gen_range(0..images.len())]);
                    labels.push(label);
                }
            }
        }
        PkBatch { indices, labels }
    }
}
