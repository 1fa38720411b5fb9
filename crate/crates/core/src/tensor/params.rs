use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable; receives gradients, momentum and weight decay.
    Trainable,
    /// Batch-norm running statistic; never touched by the optimizer.
    RunningStat,
}

#[derive(Clone, Debug)]
struct Entry<S> {
    name: String,
    kind: ParamKind,
    value: Tensor<S>,
}

/// Ordered, named collection of every tensor a model owns.
///
/// Registration order is stable and defines checkpoint record order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S = f32> {
    entries: Vec<Entry<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter {name} registered twice"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, kind, value });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == ParamKind::Trainable)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let cur = &self.entries[id.0].value;
        if cur.shape() != value.shape() {
            return Err(Error::shape("param set", cur.shape(), value.shape()));
        }
        self.entries[id.0].value = value;
        Ok(())
    }

    /// Total scalar count over trainable entries.
    pub fn trainable_len(&self) -> usize {
        self.trainable().map(|id| self.get(id).len()).sum()
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_kinds() {
        let mut s = ParamStore::<f32>::new();
        let w = s.register("w", ParamKind::Trainable, Tensor::zeros(&[2, 2]));
        let m = s.register("m", ParamKind::RunningStat, Tensor::zeros(&[2]));
        assert_eq!(s.find("m"), Some(m));
        assert_eq!(s.trainable().collect::<Vec<_>>(), vec![w]);
        assert_eq!(s.trainable_len(), 4);
        assert!(s.set(w, Tensor::zeros(&[4])).is_err());
    }
}
