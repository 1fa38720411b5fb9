//! PK-sampled SGD training of the head and classifier bank.

mod checkpoint;
mod optim;
mod sampler;
mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{apply_stat_updates, FeatureMap, HeadConfig, Mode, ReidHead};
use crate::objectives::{combined_loss, ClassifierBank, LossWeights};
use crate::tensor::{Graph, ParamStore};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{sgd_update, Sgd};
pub use sampler::{PkBatch, PkSampler};
pub use schedule::{lr_at, DecaySchedule};

/// Stream used by the batch sampler; parameter init uses stream 0.
const SAMPLER_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Identities per batch.
    pub n_k: usize,
    /// Images per identity.
    pub n_m: usize,
    pub epochs: u32,
    pub lr_head: f64,
    /// Kept for config compatibility; nothing in this crate trains a backbone.
    pub lr_backbone: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the cross-entropy term.
    pub lambda: f64,
    /// Triplet margin.
    pub alpha: f64,
    pub seed: u64,
    pub schedule: DecaySchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_k: 16,
            n_m: 4,
            epochs: 80,
            lr_head: 1e-2,
            lr_backbone: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 2.0,
            alpha: 0.3,
            seed: 0,
            schedule: DecaySchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_head", self.lr_head),
            ("lr_backbone", self.lr_backbone),
            ("decay_factor", self.schedule.factor),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let weights = [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_k < 2 || self.n_m < 2 {
            return Err(Error::Config(format!(
                "n_k and n_m must be at least 2, got {} and {}",
                self.n_k, self.n_m
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.schedule.period == 0 {
            return Err(Error::Config("decay_period must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }
}

/// Head, classifier bank and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub head: ReidHead,
    pub bank: ClassifierBank,
    pub store: ParamStore,
}

impl Model {
    pub fn new(head: HeadConfig, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let features = head.feature_count();
        let dim = head.reduced_channels;
        let head = ReidHead::new(head, &mut store, &mut rng)?;
        let bank = ClassifierBank::new(&mut store, features, dim, classes, &mut rng)?;
        Ok(Model { head, bank, store })
    }

    pub fn embed(&self, maps: &[&FeatureMap]) -> Result<Vec<Vec<f32>>> {
        self.head.embed(&self.store, maps)
    }

    pub fn to_checkpoint(&self, train: &TrainConfig, epoch: u32, rng_digest: String) -> Checkpoint {
        Checkpoint {
            params: self
                .store
                .ids()
                .map(|id| (self.store.name(id).to_string(), self.store.get(id).clone()))
                .collect(),
            meta: CheckpointMeta {
                head: self.head.config().clone(),
                train: train.clone(),
                classes: self.bank.classes(),
                rng_digest,
            },
            epoch,
        }
    }

    /// Rebuilds the model described by `ck` and loads every tensor by name.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(ck.meta.head.clone(), ck.meta.classes, 0)?;
        if ck.params.len() != model.store.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                ck.params.len(),
                model.store.len()
            )));
        }
        for (name, t) in &ck.params {
            let id = model
                .store
                .find(name)
                .ok_or_else(|| Error::Data(format!("checkpoint tensor {name:?} does not belong to the model")))?;
            model.store.set(id, t.clone())?;
        }
        Ok(model)
    }
}

/// Densely labeled training maps.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub maps: Vec<FeatureMap>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TrainSet {
    pub fn new(maps: Vec<FeatureMap>, labels: Vec<usize>) -> Result<Self> {
        if maps.len() != labels.len() {
            return Err(Error::Data(format!("{} maps but {} labels", maps.len(), labels.len())));
        }
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(TrainSet { maps, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub loss: f64,
    pub triplet: f64,
    pub ce: f64,
    pub batches: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

pub fn train(cfg: &TrainConfig, head: &HeadConfig, data: &TrainSet) -> Result<TrainOutcome> {
    train_with(cfg, head, data, |_| {})
}

/// Trains and calls `on_epoch` after every epoch.
pub fn train_with<F: FnMut(&EpochLog)>(
    cfg: &TrainConfig,
    head: &HeadConfig,
    data: &TrainSet,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    head.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    for (i, m) in data.maps.iter().enumerate() {
        head.check_map(m.height, m.channels)
            .map_err(|e| Error::Data(format!("training map {i}: {e}")))?;
    }
    let sampler = PkSampler::new(&data.labels, cfg.n_k, cfg.n_m)?;
    let mut model = Model::new(head.clone(), data.classes, cfg.seed)?;
    let mut sgd = Sgd::new(&model.store, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SAMPLER_STREAM);

    let batches = data.len().div_ceil(sampler.batch_size());
    let weights = cfg.loss_weights();
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, &cfg.schedule, cfg.lr_head);
        let (mut loss, mut triplet, mut ce) = (0.0, 0.0, 0.0);
        for _ in 0..batches {
            let batch = sampler.sample(&mut rng);
            let maps: Vec<&FeatureMap> = batch.indices.iter().map(|&i| &data.maps[i]).collect();
            let mut g = Graph::<f32>::new();
            let x = g.input(FeatureMap::batch(&maps)?);
            let out = model.head.forward(&mut g, &model.store, x, Mode::Train)?;
            let terms = combined_loss(&mut g, &model.store, &model.bank, &out, &batch.labels, weights)?;
            let total = g.value(terms.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::Data(format!("non-finite loss {total} at epoch {epoch}")));
            }
            loss += total;
            triplet += g.value(terms.triplet).item() as f64;
            ce += g.value(terms.ce).item() as f64;
            let grads = g.backward(terms.total)?;
            sgd.step(&mut model.store, &grads, lr)?;
            apply_stat_updates(&mut model.store, g.stat_updates());
        }
        let n = batches as f64;
        let entry = EpochLog {
            epoch,
            lr,
            loss: loss / n,
            triplet: triplet / n,
            ce: ce / n,
            batches,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.5} (triplet {:.5}, ce {:.5})",
            entry.loss,
            entry.triplet,
            entry.ce
        );
        on_epoch(&entry);
        log.push(entry);
    }
    let checkpoint = model.to_checkpoint(cfg, cfg.epochs, rng_digest(&rng));
    Ok(TrainOutcome { model, checkpoint, log })
}

/// FNV-1a over the generator's seed, stream and word position.
fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&rng.get_seed());
    eat(&rng.get_stream().to_le_bytes());
    eat(&rng.get_word_pos().to_le_bytes());
    format!("{h:016x}")
}
