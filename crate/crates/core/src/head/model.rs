use rand::Rng;

use super::layers::{Affine, Mode, Residual};
use super::parts::{contrastive_pool, global_pool, part_vector, pool_parts, rest_vectors, FeatureMap};
use super::{GlobalMode, HeadConfig, PoolMode};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Real, Var};

/// Relation branch of one part: `proj_r` for the rest vector and the
/// residual sub-network over `[p̄_i, r̄_i]`.
#[derive(Clone, Debug)]
pub struct RelationParams {
    pub proj_r: Affine,
    pub residual: Residual,
}

/// Unshared parameters of one local feature `q_i`.
#[derive(Clone, Debug)]
pub struct PartBranch {
    pub proj_p: Affine,
    pub relation: Option<RelationParams>,
}

impl PartBranch {
    /// `q_i = p̄_i + R_p([p̄_i, r̄_i])`, or `q_i = p̄_i` without the relation branch.
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        part: Var,
        rest: Option<Var>,
        mode: Mode,
    ) -> Result<Var> {
        let p_bar = self.proj_p.forward(g, store, part)?;
        match (&self.relation, rest) {
            (None, _) => Ok(p_bar),
            (Some(rel), Some(rest)) => {
                let r_bar = rel.proj_r.forward(g, store, rest)?;
                let joint = g.concat(&[p_bar, r_bar], 1)?;
                let res = rel.residual.forward(g, store, joint, mode)?;
                g.add(p_bar, res)
            }
            (Some(_), None) => Err(Error::invalid("relation_feature", "rest vector missing")),
        }
    }
}

/// Bottlenecks for the max and contrastive vectors plus the residual `R_g`.
#[derive(Clone, Debug)]
pub struct GcpParams {
    pub proj_max: Affine,
    pub proj_cont: Affine,
    pub residual: Residual,
}

impl GcpParams {
    /// `q_0 = p̄_max + R_g([p̄_max, p̄_cont])` from `[N, P, C]` part vectors.
    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, parts: Var, mode: Mode) -> Result<Var> {
        let (_, p_max, p_cont) = contrastive_pool(g, parts)?;
        let max_bar = self.proj_max.forward(g, store, p_max)?;
        let cont_bar = self.proj_cont.forward(g, store, p_cont)?;
        let joint = g.concat(&[max_bar, cont_bar], 1)?;
        let res = self.residual.forward(g, store, joint, mode)?;
        g.add(max_bar, res)
    }
}

#[derive(Clone, Debug)]
pub enum GlobalBranch {
    /// GAP, GMP or GAP+GMP over the whole map, then a projection.
    Pooled { mode: GlobalMode, proj: Affine },
    Contrastive(GcpParams),
}

impl GlobalBranch {
    pub fn forward<S: Real>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        maps: Var,
        parts: Var,
        mode: Mode,
    ) -> Result<Var> {
        match self {
            GlobalBranch::Pooled { mode: pool, proj } => {
                let pooled = match pool {
                    GlobalMode::Gap => global_pool(g, maps, PoolMode::Gap)?,
                    GlobalMode::Gmp => global_pool(g, maps, PoolMode::Gmp)?,
                    GlobalMode::GapGmp => {
                        let a = global_pool(g, maps, PoolMode::Gap)?;
                        let m = global_pool(g, maps, PoolMode::Gmp)?;
                        g.add(a, m)?
                    }
                    GlobalMode::Gcp | GlobalMode::None => {
                        return Err(Error::Config(format!("{pool:?} is not a pooled global mode")))
                    }
                };
                proj.forward(g, store, pooled)
            }
            GlobalBranch::Contrastive(gcp) => gcp.forward(g, store, parts, mode),
        }
    }
}

/// Head for one part count.
#[derive(Clone, Debug)]
pub struct ScaleHead {
    pub parts: usize,
    pub global: Option<GlobalBranch>,
    pub locals: Vec<PartBranch>,
}

/// Graph handles produced by a head forward pass.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    /// Every `q` feature, `[N, c]` each, in representation order.
    pub features: Vec<Var>,
    /// Per-scale concatenations `[N, (P+1)·c]`.
    pub scale_representations: Vec<Var>,
    /// Final `[N, Σ (P+1)·c]` representation.
    pub representation: Var,
}

/// Multi-scale part-based head; scales share nothing.
#[derive(Clone, Debug)]
pub struct ReidHead {
    config: HeadConfig,
    scales: Vec<ScaleHead>,
}

impl ReidHead {
    /// Registers every parameter in `store` under `p{P}.…` names.
    pub fn new<R: Rng>(config: HeadConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (big, small) = (config.channels, config.reduced_channels);
        let scales = config
            .scales
            .iter()
            .map(|&p| {
                let prefix = format!("p{p}");
                let global = match config.global_mode {
                    GlobalMode::None => None,
                    GlobalMode::Gcp => Some(GlobalBranch::Contrastive(GcpParams {
                        proj_max: Affine::new(store, &format!("{prefix}.gcp.proj_max"), big, small, rng),
                        proj_cont: Affine::new(store, &format!("{prefix}.gcp.proj_cont"), big, small, rng),
                        residual: Residual::new(store, &format!("{prefix}.gcp.rg"), 2 * small, small, rng),
                    })),
                    pooled => Some(GlobalBranch::Pooled {
                        mode: pooled,
                        proj: Affine::new(store, &format!("{prefix}.global.proj"), big, small, rng),
                    }),
                };
                let locals = if config.local_features {
                    (0..p)
                        .map(|i| {
                            let name = format!("{prefix}.part{i}");
                            PartBranch {
                                proj_p: Affine::new(store, &format!("{name}.proj_p"), big, small, rng),
                                relation: config.relation.then(|| RelationParams {
                                    proj_r: Affine::new(store, &format!("{name}.proj_r"), big, small, rng),
                                    residual: Residual::new(store, &format!("{name}.rp"), 2 * small, small, rng),
                                }),
                            }
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                ScaleHead { parts: p, global, locals }
            })
            .collect();
        Ok(ReidHead { config, scales })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn scales(&self) -> &[ScaleHead] {
        &self.scales
    }

    /// Features of one scale: `[q_0, q_1, …, q_P]` (absent parts omitted).
    pub fn forward_scale<S: Real>(
        &self,
        scale: &ScaleHead,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        maps: Var,
        mode: Mode,
    ) -> Result<Vec<Var>> {
        let parts = pool_parts(g, maps, scale.parts, self.config.part_pool)?;
        let mut feats = Vec::with_capacity(scale.parts + 1);
        if let Some(global) = &scale.global {
            feats.push(global.forward(g, store, maps, parts, mode)?);
        }
        if !scale.locals.is_empty() {
            let rest = if self.config.relation {
                Some(rest_vectors(g, parts)?)
            } else {
                None
            };
            for (i, branch) in scale.locals.iter().enumerate() {
                let p_i = part_vector(g, parts, i)?;
                let r_i = rest.as_ref().map(|r| r[i]);
                feats.push(branch.forward(g, store, p_i, r_i, mode)?);
            }
        }
        Ok(feats)
    }

    /// Forward over `[N, H, W, C]` maps.
    pub fn forward<S: Real>(&self, g: &mut Graph<S>, store: &ParamStore<S>, maps: Var, mode: Mode) -> Result<HeadOutput> {
        let shape = g.shape(maps).to_vec();
        if shape.len() != 4 {
            return Err(Error::invalid("head forward", format!("expected [N, H, W, C], got {shape:?}")));
        }
        self.config.check_map(shape[1], shape[3])?;
        let mut features = Vec::with_capacity(self.config.feature_count());
        let mut scale_representations = Vec::with_capacity(self.scales.len());
        for scale in &self.scales {
            let feats = self.forward_scale(scale, g, store, maps, mode)?;
            scale_representations.push(g.concat(&feats, 1)?);
            features.extend(feats);
        }
        let representation = if scale_representations.len() == 1 {
            scale_representations[0]
        } else {
            g.concat(&scale_representations, 1)?
        };
        Ok(HeadOutput {
            features,
            scale_representations,
            representation,
        })
    }

    /// Inference-mode representations, one row per map, in input order.
    pub fn embed(&self, store: &ParamStore, maps: &[&FeatureMap]) -> Result<Vec<Vec<f32>>> {
        if maps.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::<f32>::new();
        let x = g.input(FeatureMap::batch(maps)?);
        let out = self.forward(&mut g, store, x, Mode::Eval)?;
        let dim = self.config.representation_dim();
        Ok(g.value(out.representation).data().chunks_exact(dim).map(<[f32]>::to_vec).collect())
    }
}
