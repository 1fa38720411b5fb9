//! Finite-difference oracle suite: every differentiable op on its own, then
//! the full single-scale head with the combined loss.
//!
//! Inputs are redrawn when a failing coordinate sits so close to a kink (ReLU
//! gate, max selection or hinge) that even the smallest refinement stencil
//! crosses it, since finite differences are meaningless there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::head::{HeadConfig, Mode};
use crate::objectives::{combined_loss, LossWeights};
use crate::par::Exec;
use crate::tensor::gradcheck::{grad_check, GradCheckOptions, GradReport};
use crate::tensor::{Graph, ParamKind, ParamStore, Tensor, Var};
use crate::training::Model;

pub const TOLERANCE: f64 = 1e-4;
const MAX_ATTEMPTS: u64 = 4;

/// Geometry of the full-head case.
pub const HEAD_PARTS: usize = 6;
pub const HEAD_CHANNELS: usize = 64;
pub const HEAD_REDUCED: usize = 32;
pub const HEAD_BATCH: usize = 8;
const MAP_H: usize = 6;
const MAP_W: usize = 2;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradReport,
    /// Input draws used, including rejected kinked ones.
    pub attempts: u64,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max)
    }

    pub fn pass(&self) -> bool {
        self.cases.iter().all(|c| c.report.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            s.push_str(&format!(
                "{:<18} coords {:>6}  refined {:>5}  max rel err {:.3e}  {}{}\n",
                c.name,
                c.report.checked,
                c.report.refined,
                c.report.max_rel_err,
                if c.report.pass { "ok" } else { "FAIL" },
                if c.attempts > 1 { format!("  (draws {})", c.attempts) } else { String::new() }
            ));
        }
        s.push_str(&format!("max rel err {:.3e} (tolerance {TOLERANCE:.0e})\n", self.max_rel_err()));
        s
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + Sync>;

/// Draws a case from `seed` and checks it, redrawing while failures are kinked.
fn run_case<F>(name: &str, seed: u64, exec: Exec, draw: F) -> Result<CaseResult>
where
    F: Fn(&mut ChaCha8Rng) -> Result<(Build, ParamStore<f64>)>,
{
    let opts = GradCheckOptions {
        tolerance: TOLERANCE,
        exec,
        ..GradCheckOptions::default()
    };
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)));
        let (build, params) = draw(&mut rng)?;
        let report = grad_check(&build, &params, opts)?;
        let kinked = report.kinked > 0;
        if kinked {
            log::info!("{name}: {} kinked coordinates, redrawing", report.kinked);
        }
        last = Some(CaseResult {
            name: name.to_string(),
            report,
            attempts: attempt + 1,
        });
        if !kinked {
            break;
        }
    }
    last.ok_or_else(|| Error::invalid("gradient suite", "no attempts"))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("shape")
}

fn param(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) -> crate::tensor::ParamId {
    store.register(name, ParamKind::Trainable, t)
}

/// Weighted sum `Σ w ⊙ x` so that every output coordinate carries a distinct gradient.
fn probe(g: &mut Graph<f64>, x: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = g.input(w.clone());
    let flat_x = g.reshape(x, vec![1, w.len()])?;
    let flat_w = g.reshape(wv, vec![w.len(), 1])?;
    let zero = g.input(Tensor::zeros(&[1]));
    let y = g.linear(flat_x, flat_w, zero)?;
    Ok(g.sum_all(y))
}

fn op_cases(seed: u64, exec: Exec) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();

    out.push(run_case("linear", seed, exec, |rng| {
        let mut s = ParamStore::new();
        let x = param(&mut s, "x", normal(rng, &[3, 4]));
        let w = param(&mut s, "w", normal(rng, &[4, 5]));
        let b = param(&mut s, "b", normal(rng, &[5]));
        let probe_w = normal(rng, &[3, 5]);
        let build: Build = Box::new(move |g, s| {
            let (x, w, b) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.linear(x, w, b)?;
            probe(g, y, &probe_w)
        });
        Ok((build, s))
    })?);

    out.push(run_case("batch_norm", seed + 1, exec, |rng| {
        let mut s = ParamStore::new();
        let x = param(&mut s, "x", normal(rng, &[5, 3]));
        let gamma = param(&mut s, "gamma", normal(rng, &[3]));
        let beta = param(&mut s, "beta", normal(rng, &[3]));
        let probe_w = normal(rng, &[5, 3]);
        let build: Build = Box::new(move |g, s| {
            let (x, gm, bt) = (g.param(s, x), g.param(s, gamma), g.param(s, beta));
            let (y, _, _) = g.batch_norm_train(x, gm, bt, crate::head::BN_EPS)?;
            probe(g, y, &probe_w)
        });
        Ok((build, s))
    })?);

    out.push(run_case("relu_add_sub", seed + 2, exec, |rng| {
        let mut s = ParamStore::new();
        let a = param(&mut s, "a", normal(rng, &[4, 3]));
        let b = param(&mut s, "b", normal(rng, &[4, 3]));
        let k = rng.gen_range(0.5..2.0);
        let probe_w = normal(rng, &[4, 3]);
        let build: Build = Box::new(move |g, s| {
            let (a, b) = (g.param(s, a), g.param(s, b));
            let sum = g.add(a, b)?;
            let r = g.relu(sum);
            let d = g.sub(r, b)?;
            let y = g.scale(d, k);
            probe(g, y, &probe_w)
        });
        Ok((build, s))
    })?);

    out.push(run_case("concat_select", seed + 3, exec, |rng| {
        let mut s = ParamStore::new();
        let a = param(&mut s, "a", normal(rng, &[2, 3, 4]));
        let b = param(&mut s, "b", normal(rng, &[2, 2, 4]));
        let probe_w = normal(rng, &[2, 3, 4]);
        let build: Build = Box::new(move |g, s| {
            let (a, b) = (g.param(s, a), g.param(s, b));
            let c = g.concat(&[a, b], 1)?;
            let sel = g.index_select(c, 1, &[4, 0, 2])?;
            probe(g, sel, &probe_w)
        });
        Ok((build, s))
    })?);

    out.push(run_case("mean_max", seed + 4, exec, |rng| {
        let mut s = ParamStore::new();
        let x = param(&mut s, "x", normal(rng, &[2, 5, 3]));
        let pm = normal(rng, &[2, 3]);
        let px = normal(rng, &[2, 3]);
        let build: Build = Box::new(move |g, s| {
            let x = g.param(s, x);
            let m = g.mean(x, 1)?;
            let x_max = g.max(x, 1)?;
            let a = probe(g, m, &pm)?;
            let b = probe(g, x_max, &px)?;
            g.add(a, b)
        });
        Ok((build, s))
    })?);

    out.push(run_case("cross_entropy", seed + 5, exec, |rng| {
        let mut s = ParamStore::new();
        let logits = param(&mut s, "logits", normal(rng, &[4, 5]));
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
        let build: Build = Box::new(move |g, s| {
            let l = g.param(s, logits);
            g.softmax_cross_entropy(l, &labels)
        });
        Ok((build, s))
    })?);

    out.push(run_case("batch_hard_triplet", seed + 6, exec, |rng| {
        let mut s = ParamStore::new();
        let emb = param(&mut s, "emb", normal(rng, &[8, 3]));
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let build: Build = Box::new(move |g, s| {
            let e = g.param(s, emb);
            g.batch_hard_triplet(e, &labels, 1.0)
        });
        Ok((build, s))
    })?);

    Ok(out)
}

/// Full `P=6` head in training mode plus `L_triplet + λ·L_ce`, batch of 8
/// (4 identities × 2 images).
pub fn full_head_case(seed: u64, exec: Exec) -> Result<CaseResult> {
    run_case("full_head_p6", seed, exec, |rng| {
        let cfg = HeadConfig {
            scales: vec![HEAD_PARTS],
            channels: HEAD_CHANNELS,
            reduced_channels: HEAD_REDUCED,
            ..HeadConfig::default()
        };
        let model = Model::new(cfg, 4, rng.gen())?;
        let maps = normal(rng, &[HEAD_BATCH, MAP_H, MAP_W, HEAD_CHANNELS]);
        let labels: Vec<usize> = (0..HEAD_BATCH).map(|i| i / 2).collect();
        let params = model.store.cast::<f64>();
        let weights = LossWeights { alpha: 0.3, lambda: 2.0 };
        let build: Build = Box::new(move |g, s| {
            let x = g.input(maps.clone());
            let out = model.head.forward(g, s, x, Mode::Train)?;
            Ok(combined_loss(g, s, &model.bank, &out, &labels, weights)?.total)
        });
        Ok((build, params))
    })
}

/// Every op case followed by the full-head case.
pub fn run_suite(seed: u64, exec: Exec) -> Result<SuiteReport> {
    let mut cases = op_cases(seed, exec)?;
    cases.push(full_head_case(seed, exec)?);
    Ok(SuiteReport { cases })
}
