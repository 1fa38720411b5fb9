//! Sequential vs rayon execution of the two data-parallel hot paths:
//! distance ranking with CMC/mAP, and batched embedding extraction.
//! Set `RRID_THREADS` to pin the pool size.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rrid_core::eval::{distance_matrix, embed_all, evaluate, RowMeta, CMC_DEPTH};
use rrid_core::head::{FeatureMap, HeadConfig};
use rrid_core::par::{init_threads_from_env, Exec};
use rrid_core::training::Model;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn ranking(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (nq, ng, dim) = (400, 2000, 224);
    let q: Vec<f32> = (0..nq * dim).map(|_| rng.gen()).collect();
    let g: Vec<f32> = (0..ng * dim).map(|_| rng.gen()).collect();
    let meta = |rng: &mut ChaCha8Rng, n| -> Vec<RowMeta> {
        (0..n)
            .map(|_| RowMeta {
                person_id: rng.gen_range(0..100),
                camera_id: rng.gen_range(0..6),
            })
            .collect()
    };
    let (qm, gm) = (meta(&mut rng, nq), meta(&mut rng, ng));
    let mut group = c.benchmark_group("distance_and_ranking");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let d = distance_matrix(&q, &g, dim, exec).unwrap();
                black_box(evaluate(&d, &qm, &gm, CMC_DEPTH, exec).unwrap())
            })
        });
    }
    group.finish();
}

fn extraction(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = HeadConfig {
        scales: vec![2, 4, 6],
        channels: 64,
        reduced_channels: 32,
        ..HeadConfig::default()
    };
    let model = Model::new(head, 10, 0).unwrap();
    let maps: Vec<FeatureMap> = (0..256)
        .map(|_| FeatureMap::new(12, 4, 64, (0..12 * 4 * 64).map(|_| rng.gen()).collect()).unwrap())
        .collect();
    let mut group = c.benchmark_group("embed_all");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(embed_all(&model, &maps, exec).unwrap()))
        });
    }
    group.finish();
}

fn setup(c: &mut Criterion) {
    init_threads_from_env().expect("valid RRID_THREADS");
    ranking(c);
    extraction(c);
}

criterion_group!(benches, setup);
criterion_main!(benches);
