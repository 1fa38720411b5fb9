//! Training objectives: per-feature identity cross-entropy over a classifier
//! bank, batch-hard triplet on the final representation, and their weighted
//! sum `L = L_triplet + λ·L_ce`. Both losses are sums over the batch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::head::{Affine, HeadOutput};
use crate::tensor::{Graph, ParamStore, Real, Var};

/// One unshared linear classifier per `q` feature.
#[derive(Clone, Debug)]
pub struct ClassifierBank {
    classifiers: Vec<Affine>,
    classes: usize,
}

impl ClassifierBank {
    pub fn new<R: Rng>(store: &mut ParamStore, features: usize, dim: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Config("classifier bank needs at least one class".into()));
        }
        let classifiers = (0..features)
            .map(|i| Affine::new(store, &format!("bank.{i}"), dim, classes, rng))
            .collect();
        Ok(ClassifierBank { classifiers, classes })
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn classifiers(&self) -> &[Affine] {
        &self.classifiers
    }
}

/// `−Σ_n Σ_i log softmax(W_i·q_i^n)[y^n]`, over every feature including the
/// global ones.
pub fn cross_entropy_loss<S: Real>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    bank: &ClassifierBank,
    features: &[Var],
    labels: &[usize],
) -> Result<Var> {
    if features.len() != bank.len() {
        return Err(Error::invalid(
            "cross_entropy_loss",
            format!("{} features but {} classifiers", features.len(), bank.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= bank.classes) {
        return Err(Error::invalid(
            "cross_entropy_loss",
            format!("label {bad} out of range for {} classes", bank.classes),
        ));
    }
    let mut terms = Vec::with_capacity(features.len());
    for (&q, clf) in features.iter().zip(&bank.classifiers) {
        let logits = clf.forward(g, store, q)?;
        terms.push(g.softmax_cross_entropy(logits, labels)?);
    }
    sum_scalars(g, &terms)
}

/// Batch-hard triplet loss on `[N, D]` embeddings with unsquared distances.
pub fn batch_hard_triplet<S: Real>(g: &mut Graph<S>, embeddings: Var, labels: &[usize], alpha: f64) -> Result<Var> {
    g.batch_hard_triplet(embeddings, labels, S::from_f64(alpha))
}

fn sum_scalars<S: Real>(g: &mut Graph<S>, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::invalid("loss", "no terms to sum"))?;
    rest.iter().try_fold(first, |acc, &t| g.add(acc, t))
}

/// Handles to the combined loss and its two recorded components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub triplet: Var,
    pub ce: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda: f64,
}

/// `L = L_triplet + λ·L_ce`, triplet on the final concatenated representation.
pub fn combined_loss<S: Real>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    bank: &ClassifierBank,
    out: &HeadOutput,
    labels: &[usize],
    weights: LossWeights,
) -> Result<LossTerms> {
    let ce = cross_entropy_loss(g, store, bank, &out.features, labels)?;
    let triplet = batch_hard_triplet(g, out.representation, labels, weights.alpha)?;
    let weighted = g.scale(ce, S::from_f64(weights.lambda));
    let total = g.add(triplet, weighted)?;
    Ok(LossTerms { total, triplet, ce })
}
