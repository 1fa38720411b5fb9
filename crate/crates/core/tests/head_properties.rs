mod common;

use rand::Rng;
use rrid_core::head::{global_pool, pool_parts, FeatureMap, GlobalMode, HeadConfig, PartSet, PoolMode};
use rrid_core::tensor::{Graph, Tensor};
use rrid_core::training::Model;

fn random_map(rng: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    let v = (0..h * w * c).map(|_| common::normal(rng)).collect();
    FeatureMap::new(h, w, c, v).unwrap()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn representation_lengths() {
    assert_eq!(HeadConfig::single_scale().representation_dim(), 1792);
    assert_eq!(HeadConfig::multi_scale().representation_dim(), 3840);
    let mut rng = common::rng(11);
    let map = random_map(&mut rng, 12, 2, 16);
    for scales in [vec![6], vec![2, 4, 6], vec![3]] {
        for global_mode in [GlobalMode::None, GlobalMode::Gap, GlobalMode::GapGmp, GlobalMode::Gcp] {
            let head = HeadConfig {
                scales: scales.clone(),
                channels: 16,
                reduced_channels: 4,
                global_mode,
                ..HeadConfig::default()
            };
            let model = Model::new(head.clone(), 3, 0).unwrap();
            let emb = model.embed(&[&map]).unwrap();
            let expect = scales.iter().map(|&p| p + usize::from(global_mode != GlobalMode::None)).sum::<usize>() * 4;
            assert_eq!(emb[0].len(), expect);
            assert_eq!(head.representation_dim(), expect);
        }
    }
}

#[test]
fn contrastive_vector_is_never_positive() {
    let mut rng = common::rng(1);
    for _ in 0..1000 {
        let p = rng.gen_range(1..=8);
        let c = rng.gen_range(1..=16);
        let set = PartSet::new(common::random_parts(&mut rng, p, c)).unwrap();
        let pooled = set.contrastive();
        assert!(pooled.cont.iter().all(|&v| v <= 0.0), "{:?}", pooled.cont);
        assert!(pooled.avg.iter().zip(&pooled.max).all(|(a, m)| a <= m));

        let same = PartSet::new(vec![set.parts[0].clone(); p]).unwrap();
        assert!(same.contrastive().cont.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn max_of_part_maxima_is_whole_map_maximum() {
    let mut rng = common::rng(2);
    for _ in 0..1000 {
        let p = [1, 2, 3, 4, 6][rng.gen_range(0..5)];
        let h = p * rng.gen_range(1..=4);
        let (w, c) = (rng.gen_range(1..=4), rng.gen_range(1..=8));
        let map = random_map(&mut rng, h, w, c);
        let set = PartSet::from_map(&map, p, PoolMode::Gmp).unwrap();
        let mut g = Graph::<f32>::new();
        let x = g.input(FeatureMap::batch(&[&map]).unwrap());
        let whole = global_pool(&mut g, x, PoolMode::Gmp).unwrap();
        assert_eq!(set.contrastive().max, g.value(whole).data());

        let gap = PartSet::from_map(&map, p, PoolMode::Gap).unwrap();
        for (a, m) in gap.parts.iter().flatten().zip(set.parts.iter().flatten()) {
            assert!(a <= m);
        }
    }
}

#[test]
fn one_vs_rest_reconstructs_the_part_sum() {
    let mut rng = common::rng(3);
    for k in 0..1000 {
        let p = [2, 4, 6][k % 3];
        let c = rng.gen_range(1..=16);
        let parts = common::random_parts(&mut rng, p, c);
        let rest = PartSet::new(parts.clone()).unwrap().rest_vectors().unwrap();
        let sum: Vec<f64> = (0..c).map(|j| parts.iter().map(|v| v[j] as f64).sum()).collect();
        // relative to the summed magnitudes: the signed sum can cancel to
        // far below the f32 rounding of its terms
        let mags: Vec<f64> = (0..c).map(|j| parts.iter().map(|v| (v[j] as f64).abs()).sum()).collect();
        let scale = inf_norm(&mags).max(f64::MIN_POSITIVE);
        for i in 0..p {
            let resid: Vec<f64> = (0..c)
                .map(|j| (p - 1) as f64 * rest[i][j] as f64 + parts[i][j] as f64 - sum[j])
                .collect();
            assert!(inf_norm(&resid) < 1e-5 * scale, "P={p} i={i}: {:e} vs {:e}", inf_norm(&resid), scale);
        }
    }
}

/// Which `c`-wide blocks of the embedding move when band `band` changes.
fn moved_blocks(head: &HeadConfig, band: usize) -> Vec<bool> {
    let mut rng = common::rng(40 + band as u64);
    let model = Model::new(head.clone(), 4, 5).unwrap();
    let map = random_map(&mut rng, 12, 3, 16);
    let mut bumped = map.clone();
    let rows = 12 / head.scales[0];
    for h in band * rows..(band + 1) * rows {
        for w in 0..3 {
            for c in 0..16 {
                bumped.values[(h * 3 + w) * 16 + c] += 3.0 + common::normal(&mut rng);
            }
        }
    }
    let a = model.embed(&[&map]).unwrap().remove(0);
    let b = model.embed(&[&bumped]).unwrap().remove(0);
    a.chunks(head.reduced_channels)
        .zip(b.chunks(head.reduced_channels))
        .map(|(x, y)| x != y)
        .collect()
}

#[test]
fn parts_are_local_without_relations() {
    let head = HeadConfig {
        scales: vec![4],
        channels: 16,
        reduced_channels: 8,
        global_mode: GlobalMode::None,
        relation: false,
        ..HeadConfig::default()
    };
    for band in 0..4 {
        let moved = moved_blocks(&head, band);
        let expect: Vec<bool> = (0..4).map(|i| i == band).collect();
        assert_eq!(moved, expect);
    }
}

#[test]
fn relations_spread_a_local_change() {
    let head = HeadConfig {
        scales: vec![4],
        channels: 16,
        reduced_channels: 8,
        global_mode: GlobalMode::None,
        relation: true,
        ..HeadConfig::default()
    };
    for band in 0..4 {
        assert!(moved_blocks(&head, band).iter().all(|&m| m));
    }
}

#[test]
fn eval_embedding_ignores_batch_composition() {
    let mut rng = common::rng(9);
    let head = HeadConfig {
        scales: vec![2, 4],
        channels: 16,
        reduced_channels: 4,
        ..HeadConfig::default()
    };
    let model = Model::new(head, 3, 1).unwrap();
    let maps: Vec<FeatureMap> = (0..5).map(|_| random_map(&mut rng, 8, 2, 16)).collect();
    let refs: Vec<&FeatureMap> = maps.iter().collect();
    let batch = model.embed(&refs).unwrap();
    for (i, m) in maps.iter().enumerate() {
        assert_eq!(model.embed(&[m]).unwrap()[0], batch[i]);
    }
}

#[test]
fn max_pool_gradient_goes_to_one_cell_per_channel() {
    let mut rng = common::rng(4);
    let map = random_map(&mut rng, 6, 2, 5);
    let mut g = Graph::<f64>::new();
    let x = g.input(FeatureMap::batch(&[&map]).unwrap());
    let parts = pool_parts(&mut g, x, 3, PoolMode::Gmp).unwrap();
    let loss = g.sum_all(parts);
    let grads = g.backward(loss).unwrap();
    let dx: &Tensor<f64> = grads.leaf(x).unwrap();
    // per band and channel, exactly one cell receives the whole unit gradient
    for band in 0..3 {
        for c in 0..5 {
            let cells: Vec<f64> = (band * 2..band * 2 + 2)
                .flat_map(|h| (0..2).map(move |w| (h, w)))
                .map(|(h, w)| dx.data()[(h * 2 + w) * 5 + c])
                .collect();
            assert_eq!(cells.iter().filter(|&&v| v != 0.0).count(), 1);
            assert_eq!(cells.iter().sum::<f64>(), 1.0);
        }
    }
}
