use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamKind, ParamStore};

/// One coordinate-wise update of classic momentum SGD with coupled decay:
/// `v ← μ·v + g + λ_wd·w`, `w ← w − lr·v`.
pub fn sgd_update(w: &mut [f32], g: &[f32], v: &mut [f32], lr: f32, momentum: f32, weight_decay: f32) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *w;
        *w -= lr * *v;
    }
}

/// SGD with momentum and weight decay over every trainable entry of a
/// [`ParamStore`]. Running statistics are never touched.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
    steps: u64,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        let velocity = store
            .ids()
            .map(|id| match store.kind(id) {
                ParamKind::Trainable => vec![0.0; store.get(id).len()],
                ParamKind::RunningStat => Vec::new(),
            })
            .collect();
        Sgd {
            momentum: momentum as f32,
            weight_decay: weight_decay as f32,
            velocity,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn velocity(&self, id: crate::tensor::ParamId) -> &[f32] {
        &self.velocity[id.index()]
    }

    /// Applies one step. Trainable parameters the loss never reached are
    /// treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients<f32>, lr: f64) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(Error::invalid(
                "sgd_step",
                format!("optimizer tracks {} tensors, store has {}", self.velocity.len(), store.len()),
            ));
        }
        let ids: Vec<_> = store.trainable().collect();
        for id in ids {
            let n = store.get(id).len();
            let zeros;
            let g = match grads.param(id) {
                Some(t) if t.shape() == store.get(id).shape() => t.data(),
                Some(t) => return Err(Error::shape("sgd_step", store.get(id).shape(), t.shape())),
                None => {
                    zeros = vec![0.0; n];
                    &zeros
                }
            };
            sgd_update(
                store.get_mut(id).data_mut(),
                g,
                &mut self.velocity[id.index()],
                lr as f32,
                self.momentum,
                self.weight_decay,
            );
        }
        self.steps += 1;
        Ok(())
    }
}
