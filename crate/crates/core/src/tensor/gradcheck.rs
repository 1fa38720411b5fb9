//! Central finite-difference oracle for graph gradients.
//!
//! The oracle runs in `f64` on promoted copies of the parameters, steps each
//! trainable coordinate by `±h` and compares against the analytic gradient
//! with `rel_err = |a − n| / max(|a|, |n|, floor)`. The floor is the larger
//! of `1e-8` and `1e5·ε·|L|/s` for loss `L` and step `s`, so disagreement
//! within about ten rounding units of the stencil (at the usual `1e-4`
//! tolerance) is not mistaken for a gradient error. That matters for
//! gradients that are exactly zero, such as a bias feeding batch norm.
//!
//! A coordinate whose plain estimate is not well inside the tolerance (above
//! a tenth of it) is re-estimated with the
//! Richardson combination `(4·D(s/2) − D(s)) / 3` of two central
//! differences, which cancels the `O(s²)` truncation term. The stencil starts
//! at `s = h`; if any of its points takes a different branch than the base
//! point it shrinks tenfold, at most [`REFINE_SHRINKS`] times.

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::par::{self, Exec};

pub const DEFAULT_STEP: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-8;
const NOISE_UNITS: f64 = 1e5;
pub const REFINE_SHRINKS: u32 = 2;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance: 1e-4,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub failures: usize,
    /// Coordinates re-estimated after the plain `±h` difference.
    pub refined: usize,
    /// Failing coordinates with no branch-free stencil down to the smallest
    /// step (ReLU gate, max selection or hinge within reach).
    pub kinked: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error with the fixed `1e-8` floor.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, REL_FLOOR)
}

pub fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for a central difference of `loss` with step `step`.
pub fn noise_floor(loss: f64, step: f64) -> f64 {
    (NOISE_UNITS * f64::EPSILON * loss.abs() / step).max(REL_FLOOR)
}

/// Analytic gradient for every trainable parameter (zeros where unreached).
pub fn analytic_gradients<F>(build: &F, params: &ParamStore<f64>) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let grads = g.backward(loss)?;
    Ok(params
        .ids()
        .map(|id| match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; params.get(id).len()],
        })
        .collect())
}

/// Compares `analytic` (indexed by parameter id) with central differences
/// over every trainable coordinate of `params`.
pub fn compare<F>(build: &F, params: &ParamStore<f64>, analytic: &[Vec<f64>], opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + Sync,
{
    let mut base = Graph::new();
    let base_loss = build(&mut base, params)?;
    let base_loss = base.value(base_loss).item();
    let base_digest = base.branch_digest();

    let coords: Vec<(ParamId, usize)> = params
        .trainable()
        .flat_map(|id| (0..params.get(id).len()).map(move |k| (id, k)))
        .collect();

    let eval = |store: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok((g.value(loss).item(), g.branch_digest()))
    };

    let h = opts.step;
    let central = |store: &mut ParamStore<f64>, id: ParamId, k: usize, step: f64| -> Result<(f64, bool)> {
        let orig = store.get(id).data()[k];
        store.get_mut(id).data_mut()[k] = orig + step;
        let (fp, dp) = eval(store)?;
        store.get_mut(id).data_mut()[k] = orig - step;
        let (fm, dm) = eval(store)?;
        store.get_mut(id).data_mut()[k] = orig;
        Ok(((fp - fm) / (2.0 * step), dp != base_digest || dm != base_digest))
    };
    let first: Vec<Result<(f64, bool)>> = par::map_chunks(opts.exec, coords.len(), 256, |range| {
        let mut store = params.clone();
        range.map(|c| central(&mut store, coords[c].0, coords[c].1, h)).collect()
    });
    let first = first.into_iter().collect::<Result<Vec<_>>>()?;

    let missed: Vec<usize> = (0..coords.len())
        .filter(|&c| {
            let (id, k) = coords[c];
            // negated so a NaN estimate also counts as missed
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            !(rel_err_floor(analytic[id.index()][k], first[c].0, noise_floor(base_loss, h)) <= opts.tolerance / 10.0)
        })
        .collect();
    // (estimate, smallest step in the stencil)
    let refined: Vec<Result<Option<(f64, f64)>>> = par::map_chunks(opts.exec, missed.len(), 16, |range| {
        let mut store = params.clone();
        range
            .map(|m| {
                let (id, k) = coords[missed[m]];
                let mut step = h;
                for _ in 0..=REFINE_SHRINKS {
                    let (wide, crossed_wide) = central(&mut store, id, k, step)?;
                    let (narrow, crossed_narrow) = central(&mut store, id, k, step / 2.0)?;
                    if !crossed_wide && !crossed_narrow {
                        return Ok(Some(((4.0 * narrow - wide) / 3.0, step / 2.0)));
                    }
                    step /= 10.0;
                }
                Ok(None)
            })
            .collect()
    });

    let mut numeric: Vec<f64> = first.iter().map(|&(n, _)| n).collect();
    let mut floor = vec![noise_floor(base_loss, h); coords.len()];
    let mut unresolved = vec![false; coords.len()];
    for (&c, r) in missed.iter().zip(refined) {
        match r? {
            Some((n, step)) => {
                numeric[c] = n;
                floor[c] = noise_floor(base_loss, step);
            }
            None => unresolved[c] = true,
        }
    }

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: coords.len(),
        failures: 0,
        refined: missed.len(),
        kinked: 0,
        tolerance: opts.tolerance,
        pass: true,
    };
    for (c, &(id, k)) in coords.iter().enumerate() {
        let err = rel_err_floor(analytic[id.index()][k], numeric[c], floor[c]);
        if err > opts.tolerance || err.is_nan() {
            report.failures += 1;
            if unresolved[c] {
                report.kinked += 1;
            }
        }
        if err > report.max_rel_err || err.is_nan() {
            report.max_rel_err = err;
            report.worst = Some((params.name(id).to_string(), k));
        }
    }
    report.pass = report.failures == 0;
    Ok(report)
}

/// Full check: analytic gradients from `build`, compared to central differences.
pub fn grad_check<F>(build: &F, params: &ParamStore<f64>, opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var> + Sync,
{
    let analytic = analytic_gradients(build, params)?;
    compare(build, params, &analytic, opts)
}
