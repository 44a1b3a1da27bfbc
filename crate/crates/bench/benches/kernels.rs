use std::rc::Rc;

use condfip_core::attention::{init_attention, multi_head_attention, AttentionShape};
use condfip_core::decoder::{decode_rows, init_decoder};
use condfip_core::encoder::{condition_of, encoder_loss, init_encoder};
use condfip_core::model::ModelConfig;
use condfip_core::sim::{sample_scm, simulate_dataset, MechanismMix, ScmDistributionConfig};
use condfip_core::{Mask, Normalizer, ParamStore, Tape, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = AttentionShape::new(32, 4).unwrap();
    let mut store = ParamStore::new();
    init_attention(&mut store, "a", shape, false, &mut rng);
    for (batch, tokens) in [(100, 5), (5, 100), (400, 20)] {
        let x = Tensor::<f32>::from_fn(&[batch, tokens, 32], |_| rng.gen_range(-1.0..1.0));
        let mask = Rc::new(Mask::from_fn(tokens, tokens, |i, j| j < i));
        for kind in [Normalizer::Softmax, Normalizer::Dag] {
            let id = BenchmarkId::new(format!("{kind:?}"), format!("{batch}x{tokens}"));
            group.bench_with_input(id, &x, |b, x| {
                b.iter(|| {
                    let mut tape = Tape::new();
                    let v = tape.input(x.clone()).unwrap();
                    multi_head_attention(&mut tape, &store, "a", v, v, Some(mask.clone()), shape, kind).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn dataset(d: usize, n: usize) -> condfip_core::sim::Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
    let scm = sample_scm(&ScmDistributionConfig::p_in(d, MechanismMix::Both), &mut rng).unwrap();
    simulate_dataset(&scm, n, 0, &mut rng).unwrap().standardized().unwrap()
}

fn encoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("encoder");
    group.sample_size(20);
    let config = ModelConfig::desk();
    let store = init_encoder(&config, &mut ChaCha8Rng::seed_from_u64(1));
    for d in [5, 10, 20] {
        let ds = dataset(d, 100);
        group.bench_function(BenchmarkId::new("condition", d), |b| b.iter(|| condition_of(&store, &config, &ds.x, &ds.dag).unwrap()));
        group.bench_function(BenchmarkId::new("loss+backward", d), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let loss = encoder_loss(&mut tape, &store, &config, &ds).unwrap();
                tape.gradients(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn decoder(c: &mut Criterion) {
    let mut group = c.benchmark_group("decoder");
    group.sample_size(20);
    let config = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let store = init_decoder(&config, &mut rng);
    for d in [5, 10, 20] {
        let ds = dataset(d, 100);
        let mu = Array2::from_shape_fn((d, config.width), |_| rng.gen_range(-1.0..1.0));
        group.bench_function(BenchmarkId::new("decode_rows", d), |b| b.iter(|| decode_rows(&store, &config, &mu, &ds.dag, &ds.x).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, attention, encoder, decoder);
criterion_main!(benches);
