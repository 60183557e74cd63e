use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use draovg::clustering::rbf_affinity_with;
use draovg::par::Exec;
use draovg::prototype::{probability_matrix, Semantic, SemanticPrototype};
use draovg::retrieval::{distance_matrix_with, IdentityDescriptor};
use draovg::tensor_io::{FeatureMaps, FeatureVector, LayerTag, Viewpoint};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    FeatureVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn descriptors(n: usize, rng: &mut ChaCha8Rng) -> Vec<IdentityDescriptor> {
    (0..n)
        .map(|i| IdentityDescriptor {
            image_id: format!("i{i}"),
            vehicle_id: format!("v{}", i / 4),
            f_front: vector(rng, 64),
            f_back: vector(rng, 64),
            f_disc: vector(rng, 256),
            tag: Viewpoint::Front,
            absence_flags: vec![false; 3],
        })
        .collect()
}

fn bench_distance_matrix(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = descriptors(200, &mut rng);
    let g = descriptors(800, &mut rng);
    let mut group = c.benchmark_group("distance_matrix_200x800");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| distance_matrix_with(exec, &q, &g, 0.1, 0.65).unwrap())
        });
    }
    group.finish();
}

fn bench_affinity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<FeatureVector> = (0..1024).map(|_| vector(&mut rng, 64)).collect();
    let mut group = c.benchmark_group("rbf_affinity_1024");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| rbf_affinity_with(exec, &points, 0.5).unwrap())
        });
    }
    group.finish();
}

fn bench_localization(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps: Vec<FeatureMaps> = (0..256)
        .map(|_| {
            let data = (0..14 * 14 * 64).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            FeatureMaps::new(14, 14, 64, data, LayerTag::Pool4).unwrap()
        })
        .collect();
    let proto = SemanticPrototype::new(vector(&mut rng, 64), LayerTag::Pool4, Semantic::Sticker).unwrap();
    let mut group = c.benchmark_group("probability_matrix_256_images");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.try_map_slice(&maps, |m| probability_matrix(m, &proto)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_distance_matrix, bench_affinity, bench_localization);
criterion_main!(benches);
