//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the crate's scoring or loss code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// `p` random part vectors of width `c`; occasionally repeats a part so
/// ties in the max are exercised.
pub fn random_parts(rng: &mut ChaCha8Rng, p: usize, c: usize) -> Vec<Vec<f32>> {
    let scale = 10f32.powi(rng.gen_range(-2..3));
    let mut parts: Vec<Vec<f32>> = (0..p).map(|_| (0..c).map(|_| scale * normal(rng)).collect()).collect();
    if p > 1 && rng.gen_bool(0.2) {
        let (a, b) = (rng.gen_range(0..p), rng.gen_range(0..p));
        parts[a] = parts[b].clone();
    }
    parts
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Batch-hard triplet by scanning every (anchor, positive, negative) triple:
/// per anchor the loss is the largest hinge over all its triples.
pub fn brute_triplet(emb: &[Vec<f64>], labels: &[usize], alpha: f64) -> f64 {
    let n = emb.len();
    let mut total = 0.0;
    for a in 0..n {
        let mut worst = 0.0f64;
        for p in (0..n).filter(|&p| labels[p] == labels[a]) {
            for q in (0..n).filter(|&q| labels[q] != labels[a]) {
                let hinge = alpha + euclid(&emb[a], &emb[p]) - euclid(&emb[a], &emb[q]);
                worst = worst.max(hinge);
            }
        }
        total += worst;
    }
    total
}

/// Random batch of at most `max_n` embeddings with at least two identities.
pub fn random_batch(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.gen_range(2..=max_n);
    let d = rng.gen_range(1..=8);
    let ids = rng.gen_range(2..=n.min(5));
    let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ids)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let emb = (0..n).map(|_| (0..d).map(|_| normal(rng) as f64).collect()).collect();
    (emb, labels)
}

/// `−log(e^{l_y} / Σ_j e^{l_j})` evaluated literally.
pub fn direct_ce(logits: &[f64], y: usize) -> f64 {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    -(logits[y].exp() / z).ln()
}

pub fn naive_distances(q: &[Vec<f32>], g: &[Vec<f32>]) -> Vec<Vec<f64>> {
    q.iter()
        .map(|a| {
            g.iter()
                .map(|b| {
                    let mut s = 0.0f64;
                    for k in 0..a.len() {
                        let diff = a[k] as f64 - b[k] as f64;
                        s += diff * diff;
                    }
                    s.sqrt()
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Meta {
    pub pid: i64,
    pub cam: i64,
}

pub struct Scores {
    pub map: f64,
    pub cmc: Vec<f64>,
    pub ap: Vec<Option<f64>>,
}

/// Cross-camera single-query scoring. Ranks by repeated minimum selection
/// (lowest gallery index wins ties), drops junk (`pid == -1`) and same
/// identity on the same camera, then reads AP and the first hit off the list.
pub fn brute_scores(dist: &[Vec<f64>], query: &[Meta], gallery: &[Meta], depth: usize) -> Scores {
    let mut ap = Vec::new();
    let mut hits_at = vec![0usize; depth];
    let mut valid = 0usize;
    for (qi, q) in query.iter().enumerate() {
        let mut left: Vec<usize> = (0..gallery.len()).collect();
        let mut ranked = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for k in 1..left.len() {
                if dist[qi][left[k]] < dist[qi][left[best]] {
                    best = k;
                }
            }
            let j = left.remove(best);
            let g = gallery[j];
            if g.pid == -1 || (g.pid == q.pid && g.cam == q.cam) {
                continue;
            }
            ranked.push(g.pid == q.pid);
        }
        let relevant = ranked.iter().filter(|&&r| r).count();
        if relevant == 0 {
            ap.push(None);
            continue;
        }
        valid += 1;
        let mut sum = 0.0;
        for k in 0..ranked.len() {
            if ranked[k] {
                let prec = ranked[..=k].iter().filter(|&&r| r).count() as f64 / (k + 1) as f64;
                sum += prec;
            }
        }
        ap.push(Some(sum / relevant as f64));
        let first = ranked.iter().position(|&r| r).unwrap();
        for slot in hits_at.iter_mut().skip(first) {
            *slot += 1;
        }
    }
    let denom = valid.max(1) as f64;
    let present: Vec<f64> = ap.iter().flatten().copied().collect();
    Scores {
        map: if valid == 0 { 0.0 } else { present.iter().sum::<f64>() / valid as f64 },
        cmc: hits_at.iter().map(|&h| if valid == 0 { 0.0 } else { h as f64 / denom }).collect(),
        ap,
    }
}

/// Random gallery of at most `max_g` rows with integer-valued distances so
/// ties are common, plus a few queries.
pub fn random_gallery(rng: &mut ChaCha8Rng, max_g: usize) -> (Vec<Vec<f64>>, Vec<Meta>, Vec<Meta>) {
    let ng = rng.gen_range(1..=max_g);
    let nq = rng.gen_range(1..=6);
    let ids = rng.gen_range(1..=5i64);
    let meta = |rng: &mut ChaCha8Rng| Meta {
        pid: if rng.gen_bool(0.1) { -1 } else { rng.gen_range(0..ids) },
        cam: rng.gen_range(0..3),
    };
    let gallery: Vec<Meta> = (0..ng).map(|_| meta(rng)).collect();
    let query: Vec<Meta> = (0..nq)
        .map(|_| Meta {
            pid: rng.gen_range(0..ids),
            cam: rng.gen_range(0..3),
        })
        .collect();
    let coarse = rng.gen_bool(0.5);
    let dist = (0..nq)
        .map(|_| {
            (0..ng)
                .map(|_| {
                    if coarse {
                        rng.gen_range(0..4) as f64
                    } else {
                        rng.gen::<f64>() * 10.0
                    }
                })
                .collect()
        })
        .collect();
    (dist, query, gallery)
}
