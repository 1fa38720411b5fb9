use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamKind, ParamStore, Real, StatUpdate, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are queued for update.
    Train,
    /// Running statistics only; output is independent of batch composition.
    Eval,
}

/// Affine map `x·W + b`; a 1×1 convolution on a 1×1 map.
#[derive(Clone, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Affine {
    /// Weights uniform in ±1/√d_in, zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let w: Vec<f32> = (0..d_in * d_out).map(|_| dist.sample(rng)).collect();
        let weight = store.register(
            format!("{name}.weight"),
            ParamKind::Trainable,
            Tensor::new(vec![d_in, d_out], w).expect("consistent shape"),
        );
        let bias = store.register(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[d_out]));
        Affine {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        BatchNorm {
            gamma: store.register(format!("{name}.gamma"), ParamKind::Trainable, Tensor::full(&[d], 1.0)),
            beta: store.register(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(&[d])),
            running_mean: store.register(format!("{name}.running_mean"), ParamKind::RunningStat, Tensor::zeros(&[d])),
            running_var: store.register(format!("{name}.running_var"), ParamKind::RunningStat, Tensor::full(&[d], 1.0)),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, batch_mean, batch_var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                g.push_stat_update(StatUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: self.momentum,
                    batch_mean,
                    batch_var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.get(self.running_mean).data().to_vec();
                let var = store.get(self.running_var).data().to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

/// Folds queued batch statistics into the running estimates:
/// `running ← (1 − m)·running + m·batch`.
pub fn apply_stat_updates<S: Real>(store: &mut ParamStore<S>, updates: &[StatUpdate<S>]) {
    for u in updates {
        let m = S::from_f64(u.momentum);
        for (id, batch) in [(u.running_mean, &u.batch_mean), (u.running_var, &u.batch_var)] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = (S::one() - m) * *r + m * b;
            }
        }
    }
}

/// Affine → batch norm → ReLU; the residual sub-network of both the
/// relation module and GCP.
#[derive(Clone, Debug)]
pub struct Residual {
    pub affine: Affine,
    pub bn: BatchNorm,
}

impl Residual {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Residual {
            affine: Affine::new(store, &format!("{name}.fc"), d_in, d_out, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), d_out),
        }
    }

    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var, mode: Mode) -> Result<Var> {
        let z = self.affine.forward(g, store, x)?;
        let z = self.bn.forward(g, store, z, mode)?;
        Ok(g.relu(z))
    }
}
