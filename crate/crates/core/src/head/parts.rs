use super::PoolMode;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// `H×W×C` activation volume, stored with index `(h·W + w)·C + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("feature map", format!("empty geometry {height}x{width}x{channels}")));
        }
        if values.len() != height * width * channels {
            return Err(Error::invalid(
                "feature map",
                format!("{height}x{width}x{channels} needs {} values, got {}", height * width * channels, values.len()),
            ));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn get(&self, h: usize, w: usize, c: usize) -> f32 {
        self.values[(h * self.width + w) * self.channels + c]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Stacks maps of identical geometry into an `[N, H, W, C]` tensor.
    pub fn batch<S: Real>(maps: &[&FeatureMap]) -> Result<Tensor<S>> {
        let first = maps.first().ok_or_else(|| Error::invalid("feature batch", "no maps"))?;
        let dims = first.dims();
        let mut data = Vec::with_capacity(maps.len() * first.values.len());
        for m in maps {
            if m.dims() != dims {
                return Err(Error::shape(
                    "feature batch",
                    &[dims.0, dims.1, dims.2],
                    &[m.height, m.width, m.channels],
                ));
            }
            data.extend(m.values.iter().map(|&v| S::from_f64(v as f64)));
        }
        Tensor::new(vec![maps.len(), dims.0, dims.1, dims.2], data)
    }
}

/// Splits a map into `parts` horizontal bands, top to bottom.
pub fn split_parts(map: &FeatureMap, parts: usize) -> Result<Vec<FeatureMap>> {
    if parts == 0 || map.height % parts != 0 {
        return Err(Error::Config(format!("{parts} parts do not divide map height {}", map.height)));
    }
    let rows = map.height / parts;
    let band = rows * map.width * map.channels;
    Ok(map
        .values
        .chunks_exact(band)
        .map(|chunk| FeatureMap {
            height: rows,
            width: map.width,
            channels: map.channels,
            values: chunk.to_vec(),
        })
        .collect())
}

/// Pools `[N, H, W, C]` maps into `[N, P, C]` part vectors.
pub fn pool_parts<S: Real>(g: &mut Graph<S>, maps: Var, parts: usize, mode: PoolMode) -> Result<Var> {
    let shape = g.shape(maps).to_vec();
    if shape.len() != 4 {
        return Err(Error::invalid("pool_parts", format!("expected [N, H, W, C], got {shape:?}")));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if parts == 0 || h % parts != 0 {
        return Err(Error::Config(format!("{parts} parts do not divide map height {h}")));
    }
    let cells = (h / parts) * w;
    let banded = g.reshape(maps, vec![n, parts, cells, c])?;
    match mode {
        PoolMode::Gmp => g.max(banded, 2),
        PoolMode::Gap => g.mean(banded, 2),
    }
}

/// Whole-map spatial pooling of `[N, H, W, C]` maps into `[N, C]`.
pub fn global_pool<S: Real>(g: &mut Graph<S>, maps: Var, mode: PoolMode) -> Result<Var> {
    let shape = g.shape(maps).to_vec();
    if shape.len() != 4 {
        return Err(Error::invalid("global_pool", format!("expected [N, H, W, C], got {shape:?}")));
    }
    let flat = g.reshape(maps, vec![shape[0], shape[1] * shape[2], shape[3]])?;
    match mode {
        PoolMode::Gmp => g.max(flat, 1),
        PoolMode::Gap => g.mean(flat, 1),
    }
}

/// Part `i` of `[N, P, C]` as `[N, C]`.
pub fn part_vector<S: Real>(g: &mut Graph<S>, parts: Var, i: usize) -> Result<Var> {
    let shape = g.shape(parts).to_vec();
    let sel = g.index_select(parts, 1, &[i])?;
    g.reshape(sel, vec![shape[0], shape[2]])
}

/// One-vs-rest aggregation: `r_i` is the mean of every part except `i`.
pub fn rest_vectors<S: Real>(g: &mut Graph<S>, parts: Var) -> Result<Vec<Var>> {
    let p = g.shape(parts)[1];
    if p < 2 {
        return Err(Error::invalid("one_vs_rest", format!("needs at least 2 parts, got {p}")));
    }
    (0..p)
        .map(|i| {
            let others: Vec<usize> = (0..p).filter(|&j| j != i).collect();
            let sel = g.index_select(parts, 1, &others)?;
            g.mean(sel, 1)
        })
        .collect()
}

/// Average, max and contrastive (`avg − max`) pooling across parts.
///
/// Each output is `[N, C]`; the contrastive vector is never positive and is
/// exactly zero when all parts coincide.
pub fn contrastive_pool<S: Real>(g: &mut Graph<S>, parts: Var) -> Result<(Var, Var, Var)> {
    let avg = g.mean(parts, 1)?;
    let max = g.max(parts, 1)?;
    let cont = g.sub(avg, max)?;
    Ok((avg, max, cont))
}

/// The `P` pooled part vectors of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PartSet {
    pub parts: Vec<Vec<f32>>,
}

/// Average, max and contrastive vectors of a [`PartSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastivePooling {
    pub avg: Vec<f32>,
    pub max: Vec<f32>,
    pub cont: Vec<f32>,
}

impl PartSet {
    pub fn new(parts: Vec<Vec<f32>>) -> Result<Self> {
        let c = parts.first().map(Vec::len).unwrap_or(0);
        if c == 0 || parts.iter().any(|p| p.len() != c) {
            return Err(Error::invalid("part set", "parts must be non-empty and of equal length"));
        }
        Ok(PartSet { parts })
    }

    /// Pools a single map into `parts` vectors.
    pub fn from_map(map: &FeatureMap, parts: usize, mode: PoolMode) -> Result<Self> {
        let mut g = Graph::<f32>::new();
        let x = g.input(FeatureMap::batch(&[map])?);
        let pooled = pool_parts(&mut g, x, parts, mode)?;
        Ok(PartSet {
            parts: g
                .value(pooled)
                .data()
                .chunks_exact(map.channels)
                .map(<[f32]>::to_vec)
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.parts[0].len()
    }

    fn input(&self, g: &mut Graph<f32>) -> Var {
        let data = self.parts.concat();
        g.input(Tensor::new(vec![1, self.len(), self.channels()], data).expect("validated part set"))
    }

    /// Rest vectors `r_1..r_P`.
    pub fn rest_vectors(&self) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::new();
        let x = self.input(&mut g);
        let rest = rest_vectors(&mut g, x)?;
        Ok(rest.into_iter().map(|r| g.value(r).data().to_vec()).collect())
    }

    pub fn contrastive(&self) -> ContrastivePooling {
        let mut g = Graph::new();
        let x = self.input(&mut g);
        let (avg, max, cont) = contrastive_pool(&mut g, x).expect("rank-3 part tensor");
        ContrastivePooling {
            avg: g.value(avg).data().to_vec(),
            max: g.value(max).data().to_vec(),
            cont: g.value(cont).data().to_vec(),
        }
    }
}
