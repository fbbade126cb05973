use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stablespike::neuron::{lif_sequence, LifParams};
use stablespike::optim::Sgd;
use stablespike::train::train_step;
use stablespike::{Graph, TrainConfig};
use stablespike_bench::{conv_inputs, pattern, training_fixture};

fn conv(c: &mut Criterion) {
    let (x, w) = conv_inputs();
    c.bench_function("conv2d forward 32x2x24x24 -> 16", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            g.conv2d(xv, wv, 1).unwrap()
        })
    });
    c.bench_function("conv2d forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let wv = g.param(w.clone());
            let y = g.conv2d(xv, wv, 1).unwrap();
            let l = g.mean(y);
            g.backward(l).unwrap()
        })
    });
}

fn lif(c: &mut Criterion) {
    let inputs: Vec<_> = (0..4).map(|t| pattern(&[32, 16, 24, 24], t).map(|v| v + 0.5)).collect();
    let p = LifParams::default();
    c.bench_function("lif_sequence T=4 32x16x24x24", |b| b.iter(|| lif_sequence(&inputs, &p).unwrap()));
}

fn step(c: &mut Criterion) {
    let (data, model) = training_fixture();
    let (inputs, labels) = data.batch(&(0..32).collect::<Vec<_>>());
    let mut group = c.benchmark_group("train_step batch 32 T=4");
    group.sample_size(10);
    for (name, cfg) in [("baseline", TrainConfig::default().baseline()), ("method", TrainConfig::default())] {
        group.bench_function(name, |b| {
            let mut m = model.clone();
            let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| train_step(&mut m, &mut opt, &inputs, &labels, &cfg, &mut rng, 0.01).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, lif, step);
criterion_main!(benches);
