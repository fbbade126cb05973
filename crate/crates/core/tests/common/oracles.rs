//! Independent oracles shared by the integration tests and the acceptance
//! suite. Each returns measurements; callers decide the tolerance.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stablespike::data::FrameDataset;
use stablespike::gradcheck::check_gradients;
use stablespike::model::{build_mlp, Layer};
use stablespike::neuron::{lif_step_graph, LifParams};
use stablespike::train::{assemble_loss, LossTerms, NoiseSource};
use stablespike::{ForwardOptions, Graph, Result, SnnModel, SpikeFn, Tensor, TrainConfig, Var};

pub const FD_STEP: f64 = 1e-4;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[lo, hi)` kept at least `gap` away from every point in `kinks`.
pub fn uniform_away(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// `mean(y ⊙ w)` for a fixed random `w`, turning any node into a scalar with
/// a generic upstream gradient.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, g.value(y).shape(), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.mean(p))
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn op_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;
    let theta = 1.0;
    let width = 1.0;
    let ramp_kinks = [theta - width / 2.0, theta + width / 2.0];
    vec![
        ("add", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 1)
        })),
        ("sub", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 2)
        })),
        ("mul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 3)
        })),
        ("scale", vec![uniform(r, &[5], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.scale(v[0], -1.7);
            project(g, y, 4)
        })),
        ("add_scalar", vec![uniform(r, &[5], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.add_scalar(v[0], 0.3);
            project(g, y, 5)
        })),
        ("sum_all", vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.sum_all(v)?;
            project(g, y, 6)
        })),
        ("average", vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.average(v)?;
            project(g, y, 7)
        })),
        ("matmul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 8)
        })),
        ("add_bias", vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.add_bias(v[0], v[1])?;
            project(g, y, 9)
        })),
        ("conv2d", vec![uniform(r, &[2, 3, 5, 4], -1.0, 1.0), uniform(r, &[4, 3, 3, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.conv2d(v[0], v[1], 1)?;
            project(g, y, 10)
        })),
        ("conv2d_valid", vec![uniform(r, &[1, 2, 5, 5], -1.0, 1.0), uniform(r, &[3, 2, 3, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.conv2d(v[0], v[1], 0)?;
            project(g, y, 11)
        })),
        ("avg_pool2", vec![uniform(r, &[2, 3, 4, 6], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.avg_pool2(v[0])?;
            project(g, y, 12)
        })),
        ("global_avg_pool", vec![uniform(r, &[2, 3, 3, 3], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, 13)
        })),
        ("mean_axis", vec![uniform(r, &[3, 4, 2], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.mean_axis(v[0], 1)?;
            project(g, y, 14)
        })),
        ("max_axis", vec![uniform(r, &[3, 5], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.max_axis(v[0], 1)?;
            project(g, y, 15)
        })),
        ("mean", vec![uniform(r, &[7], -1.0, 1.0)], Box::new(|g, v| Ok(g.mean(v[0])))),
        ("square", vec![uniform(r, &[6], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.square(v[0]);
            project(g, y, 16)
        })),
        ("log", vec![uniform(r, &[6], 0.2, 2.0)], Box::new(|g, v| {
            let y = g.log(v[0]);
            project(g, y, 17)
        })),
        ("exp", vec![uniform(r, &[6], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.exp(v[0]);
            project(g, y, 18)
        })),
        ("softmax", vec![uniform(r, &[3, 4], -2.0, 2.0)], Box::new(|g, v| {
            let y = g.softmax(v[0], 2.0);
            project(g, y, 19)
        })),
        ("log_softmax", vec![uniform(r, &[3, 4], -2.0, 2.0)], Box::new(|g, v| {
            let y = g.log_softmax(v[0], 0.5);
            project(g, y, 20)
        })),
        ("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], Box::new(|g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            project(g, y, 21)
        })),
        ("spike", vec![uniform_away(r, &[4, 5], 0.0, 2.0, &ramp_kinks, 1e-2)], Box::new(move |g, v| {
            let y = g.spike(v[0], theta, width, SpikeFn::Ramp);
            project(g, y, 22)
        })),
        ("cross_entropy", vec![uniform(r, &[4, 3], -2.0, 2.0)], Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))),
        ("soft_kl", vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)], Box::new(|g, v| g.soft_kl(v[0], v[1], 2.0))),
        ("row_kl", vec![uniform(r, &[3, 5], 0.0, 1.0), uniform(r, &[3, 5], 0.0, 1.0)], Box::new(|g, v| g.row_kl(v[0], v[1]))),
        ("row_cosine_distance", vec![uniform(r, &[3, 5], 0.0, 1.0), uniform(r, &[3, 5], 0.0, 1.0)], Box::new(|g, v| g.row_cosine_distance(v[0], v[1]))),
        ("lif_sequence", vec![uniform_away(r, &[3, 2, 4], 0.0, 1.2, &[0.3, 0.5, 1.5], 2e-2)], Box::new(|g, v| {
            // three timesteps of one LIF layer, all through the ramp rule
            let p = LifParams::default();
            let mut state = None;
            let mut outs = Vec::new();
            for t in 0..3 {
                let input = slice_step(g, v[0], t)?;
                let (s, h) = lif_step_graph(g, state, input, &p, SpikeFn::Ramp, false)?;
                state = Some(h);
                outs.push(s);
            }
            let y = g.sum_all(&outs)?;
            project(g, y, 23)
        })),
    ]
}

/// Timestep `t` of a `[T, ...]` node as a differentiable node: a one-hot
/// weighted sum over the leading axis (the engine has no slicing op).
fn slice_step(g: &mut Graph, x: Var, t: usize) -> Result<Var> {
    let s = g.value(x).shape().to_vec();
    let steps = s[0];
    let rest: usize = s[1..].iter().product();
    let flat = g.reshape(x, &[steps, rest])?;
    let onehot = Tensor::new(vec![1, steps], (0..steps).map(|i| if i == t { 1.0 } else { 0.0 }).collect())?;
    let sel = g.constant(onehot);
    let picked = g.matmul(sel, flat)?;
    g.reshape(picked, &s[1..])
}

/// Max relative error of every op kind's analytic gradient against central differences.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    op_cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let r = check_gradients(&inputs, FD_STEP, |g, v| f(g, v)).expect("gradient check runs");
            (name, r.max_relative_error())
        })
        .collect()
}

/// `detach` is declared as a stop-gradient: the analytic gradient through it is exactly zero.
pub fn detach_gradient_norm() -> f64 {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.3, -0.7, 1.1]));
    let d = g.detach(x);
    let sq = g.square(d);
    let loss = g.mean(sq);
    let grads = g.backward(loss).expect("backward");
    grads.get(x).map_or(0.0, |t| t.data().iter().map(|v| v.abs()).sum())
}

/// 2-layer MLP_SNN fixture: `T = 3`, 8 hidden units per layer, 4 samples.
pub struct MlpFixture {
    pub model: SnnModel,
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub noise: Tensor,
}

pub fn mlp_fixture() -> MlpFixture {
    let model = build_mlp([2, 3, 3], &[8, 8], 4, 5).expect("mlp builds");
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inputs = (0..3).map(|_| uniform(&mut rng, &[4, 2, 3, 3], 0.0, 1.5)).collect();
    let noise = Tensor::from_fn(&[4, 8], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    MlpFixture {
        model,
        inputs,
        labels: vec![0, 1, 2, 3],
        noise,
    }
}

/// Distance of the nearest membrane charge to a ramp kink, over all LIF
/// layers and timesteps of the fixture's forward pass.
pub fn mlp_kink_margin(fx: &MlpFixture) -> f64 {
    let p = fx.model.lif;
    let kinks = [p.theta - p.surrogate_width / 2.0, p.theta + p.surrogate_width / 2.0];
    // Recompute charges layer by layer from the ramp forward pass.
    let mut g = Graph::new();
    let params = fx.model.register(&mut g, false);
    let opts = ForwardOptions {
        spike_fn: SpikeFn::Ramp,
        detach_reset: false,
    };
    let _ = fx.model.forward(&mut g, &params, &fx.inputs, opts).expect("forward");
    let mut margin = f64::INFINITY;
    let leak = p.leak();
    let mut h: Vec<Option<Tensor>> = vec![None; fx.model.lif_layers()];
    for x in &fx.inputs {
        let batch = x.shape()[0];
        let mut cur = x.clone().reshape(&[batch, x.len() / batch]).expect("flatten");
        let mut li = 0;
        for layer in &fx.model.backbone {
            match *layer {
                Layer::Linear { weight, bias } => {
                    let w = &fx.model.params[weight];
                    let b = &fx.model.params[bias];
                    let (k, n) = (w.shape()[0], w.shape()[1]);
                    cur = Tensor::from_fn(&[batch, n], |idx| {
                        let (i, j) = (idx / n, idx % n);
                        b.data()[j] + (0..k).map(|q| cur.data()[i * k + q] * w.data()[q * n + j]).sum::<f64>()
                    });
                }
                Layer::Lif => {
                    let charge = match &h[li] {
                        Some(prev) => prev.zip_map(&cur, "charge", |a, b| leak * a + b).expect("shapes"),
                        None => cur.clone(),
                    };
                    for &c in charge.data() {
                        for k in kinks {
                            margin = margin.min((c - k).abs());
                        }
                    }
                    let s = charge.map(|c| ((c - p.theta) / p.surrogate_width + 0.5).clamp(0.0, 1.0));
                    h[li] = Some(charge.zip_map(&s, "reset", |c, s| c - s * p.theta).expect("shapes"));
                    cur = s;
                    li += 1;
                }
                _ => {}
            }
        }
    }
    margin
}

/// Gradient errors of `L_CE`, `L_spike`, `L_noise` and the total loss with
/// respect to every parameter of the fixture. Detach flags are off so the
/// finite differences see the same function the analytic gradient describes.
pub fn mlp_loss_gradient_errors(fx: &MlpFixture) -> Vec<(&'static str, f64)> {
    let cfg = TrainConfig {
        timesteps: 3,
        detach_anchor: false,
        detach_clean: false,
        ..TrainConfig::default()
    };
    type Picker = (&'static str, fn(&LossTerms) -> Var);
    let pickers: [Picker; 4] = [
        ("L_CE", |t| t.ce),
        ("L_spike", |t| t.spike.expect("spike term")),
        ("L_noise", |t| t.noise.expect("noise term")),
        ("total", |t| t.total),
    ];
    pickers
        .into_iter()
        .map(|(name, pick)| {
            let r = check_gradients(&fx.model.params, FD_STEP, |g, vars| {
                let t = assemble_loss(
                    g,
                    vars,
                    &fx.model,
                    &fx.inputs,
                    &fx.labels,
                    &cfg,
                    NoiseSource::Fixed(&fx.noise),
                    SpikeFn::Ramp,
                )?;
                Ok(pick(&t))
            })
            .expect("gradient check runs");
            (name, r.max_relative_error())
        })
        .collect()
}

/// Brute-force spike counts per LIF layer and total SynOps for `data`, from
/// an independent forward pass over one sample at a time.
pub fn brute_force_counts(model: &SnnModel, data: &FrameDataset) -> Vec<u64> {
    let mut counts = vec![0u64; model.lif_layers()];
    for i in 0..data.len() {
        let (inputs, _) = data.batch(&[i]);
        let mut g = Graph::new();
        let params = model.register(&mut g, false);
        let rec = model.forward(&mut g, &params, &inputs, ForwardOptions::default()).expect("forward");
        for (l, steps) in rec.layer_spikes.iter().enumerate() {
            for &s in steps {
                for &v in g.value(s).data() {
                    if v == 1.0 {
                        counts[l] += 1;
                    } else {
                        assert_eq!(v, 0.0, "non-binary spike");
                    }
                }
            }
        }
    }
    counts
}

/// Mismatches between `bit_combine` / `stable_and` and direct boolean
/// enumeration over every binary pattern of `T = 3` timesteps × 4 elements,
/// plus mismatches of AND against elementwise min and product.
pub fn bitop_enumeration_mismatches() -> usize {
    use stablespike::skeleton::{bit_combine, stable_and, BitOp};
    let (t, n) = (3usize, 4usize);
    let mut bad = 0;
    for pattern in 0u32..(1 << (t * n)) {
        let bit = |step: usize, e: usize| (pattern >> (step * n + e)) & 1 == 1;
        let spikes: Vec<Tensor> = (0..t)
            .map(|s| Tensor::from_fn(&[n], |e| if bit(s, e) { 1.0 } else { 0.0 }))
            .collect();
        for (op, f) in [
            (BitOp::And, (|a, b| a && b) as fn(bool, bool) -> bool),
            (BitOp::Or, |a, b| a || b),
            (BitOp::Xor, |a, b| a != b),
        ] {
            let out = bit_combine(&spikes, op).expect("binary input");
            for (s, o) in out.iter().enumerate().take(t - 1) {
                for e in 0..n {
                    let want = if f(bit(s, e), bit(s + 1, e)) { 1.0 } else { 0.0 };
                    bad += usize::from(o.data()[e] != want);
                }
            }
        }
        let and = stable_and(&spikes).expect("binary input");
        for s in 0..t - 1 {
            for e in 0..n {
                let (a, b) = (spikes[s].data()[e], spikes[s + 1].data()[e]);
                let v = and[s].data()[e];
                bad += usize::from(v != a.min(b)) + usize::from(v != a * b);
            }
        }
    }
    bad
}

fn rates_of(trace: &[Tensor]) -> (Tensor, Tensor) {
    use stablespike::skeleton::{firing_rate, stable_and, stable_firing_rate};
    let phi = firing_rate(trace).expect("rate");
    let phi_s = stable_firing_rate(&stable_and(trace).expect("and")).expect("rate");
    (phi_s, phi)
}

/// `(violations, equality failures)` of `Φ̃ ≤ Φ` over every binary trace with
/// `2 ≤ T ≤ 5`, with `Φ̃ = Φ` required on all-ones and all-zeros traces.
pub fn dominance_exhaustive() -> (usize, usize) {
    let mut violations = 0;
    let mut equality = 0;
    for t in 2..=5usize {
        // one element per pattern, all 2^T patterns side by side
        let n = 1usize << t;
        let trace: Vec<Tensor> = (0..t)
            .map(|s| Tensor::from_fn(&[n], |p| ((p >> s) & 1) as f64))
            .collect();
        let (phi_s, phi) = rates_of(&trace);
        for p in 0..n {
            let (a, b) = (phi_s.data()[p], phi.data()[p]);
            violations += usize::from(a > b);
            if p == 0 || p == n - 1 {
                equality += usize::from(a != b);
            }
        }
    }
    (violations, equality)
}

/// Violations of `Φ̃ ≤ Φ` over `count` random element traces with random
/// `T ∈ [2, 8]` and random firing probabilities.
pub fn dominance_random(count: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = 1000;
    let mut violations = 0;
    let mut done = 0;
    while done < count {
        let n = chunk.min(count - done);
        let t = rng.random_range(2..=8);
        let p: f64 = rng.random();
        let trace: Vec<Tensor> = (0..t)
            .map(|_| Tensor::from_fn(&[n], |_| if rng.random_bool(p) { 1.0 } else { 0.0 }))
            .collect();
        let (phi_s, phi) = rates_of(&trace);
        violations += phi_s.data().iter().zip(phi.data()).filter(|(a, b)| a > b).count();
        done += n;
    }
    violations
}

pub struct NoiseStat {
    pub p: f64,
    pub draws: usize,
    pub spikes: usize,
    pub sigma_distance: f64,
}

/// Amplitude-aware noise drawn `draws` times at each stable rate.
pub fn noise_frequencies(draws: usize, seed: u64) -> Vec<NoiseStat> {
    use stablespike::noise::sample_noise;
    use stablespike::NoiseKind;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [0.0, 0.25, 0.5, 0.75, 1.0]
        .into_iter()
        .map(|p| {
            let rate = Tensor::full(&[draws], p);
            let eps = sample_noise(&rate, NoiseKind::AmplitudeAware, &mut rng).expect("valid rate");
            let spikes = eps.data().iter().filter(|&&v| v == 1.0).count();
            let mean = draws as f64 * p;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            let sigma_distance = if sd == 0.0 {
                if spikes as f64 == mean { 0.0 } else { f64::INFINITY }
            } else {
                (spikes as f64 - mean).abs() / sd
            };
            NoiseStat {
                p,
                draws,
                spikes,
                sigma_distance,
            }
        })
        .collect()
}

/// Perturbed values outside the lattice `{k/(T−1) : k = 0..2(T−1)}`, over
/// random binary traces and noise for `T ∈ [2, 6]`.
pub fn lattice_violations(seed: u64) -> usize {
    use stablespike::noise::{in_perturbed_lattice, perturb, sample_noise};
    use stablespike::skeleton::{stable_and, stable_firing_rate};
    use stablespike::NoiseKind;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for t in 2..=6usize {
        for kind in [NoiseKind::AmplitudeAware, NoiseKind::FixedP(0.4), NoiseKind::FixedP(0.6)] {
            let trace: Vec<Tensor> = (0..t)
                .map(|_| Tensor::from_fn(&[5000], |_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }))
                .collect();
            let rate = stable_firing_rate(&stable_and(&trace).expect("and")).expect("rate");
            let eps = sample_noise(&rate, kind, &mut rng).expect("noise");
            let noisy = perturb(&rate, &eps).expect("perturb");
            bad += noisy.data().iter().filter(|&&v| !in_perturbed_lattice(v, t)).count();
            // independent lattice test: k = v·(T−1) must be an integer in [0, 2(T−1)]
            bad += noisy
                .data()
                .iter()
                .filter(|&&v| {
                    let k = v * (t - 1) as f64;
                    (k - k.round()).abs() > 1e-9 || k < -1e-9 || k > 2.0 * (t - 1) as f64 + 1e-9
                })
                .count();
        }
    }
    bad
}

/// Brute-force SynOps and energy for `model` on `data`: every spike of an LIF
/// layer is charged the number of weights it touches in the next weight layer,
/// found by walking the layer list; the first weight layer's dense MACs are
/// counted by direct enumeration of its output positions.
pub fn brute_force_energy(model: &SnnModel, data: &FrameDataset, e_ac: f64, e_mac: f64) -> (u64, f64) {
    let counts = brute_force_counts(model, data);
    // fan-out: weights reachable from one neuron of each LIF layer
    let mut fanouts = Vec::new();
    let layers = &model.backbone;
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, Layer::Lif) {
            let next = layers[i + 1..].iter().find_map(|n| match *n {
                Layer::Conv { weight, .. } => {
                    let s = model.params[weight].shape();
                    Some(s[0] * s[2] * s[3])
                }
                Layer::Linear { weight, .. } => Some(model.params[weight].shape()[1]),
                _ => None,
            });
            fanouts.push(next.unwrap_or(model.classes) as u64);
        }
    }
    let synops: u64 = counts.iter().zip(&fanouts).map(|(c, f)| c * f).sum();
    // first-layer MACs by enumerating output cells
    let [c, h, w] = model.input_shape;
    let macs_per_step: u64 = match layers.iter().find(|l| matches!(l, Layer::Conv { .. } | Layer::Linear { .. })) {
        Some(&Layer::Conv { weight, pad, .. }) => {
            let s = model.params[weight].shape();
            let (o, kh, kw) = (s[0], s[2], s[3]);
            let mut n = 0u64;
            for _oy in 0..(h + 2 * pad + 1 - kh) {
                for _ox in 0..(w + 2 * pad + 1 - kw) {
                    n += (o * c * kh * kw) as u64;
                }
            }
            n
        }
        Some(&Layer::Linear { weight, .. }) => {
            let s = model.params[weight].shape();
            (s[0] * s[1]) as u64
        }
        _ => 0,
    };
    let steps = (data.len() * data.timesteps()) as u64;
    let energy = (synops as f64 * e_ac + (macs_per_step * steps) as f64 * e_mac) / data.len() as f64;
    (synops, energy)
}

/// Plain SNN forward of `model`'s weights with no trainer machinery: layer
/// primitives on a throwaway graph, LIF dynamics from the tensor-level
/// neuron, per-step classifier, logits summed in order and scaled by `1/T`.
pub fn vanilla_logits(model: &SnnModel, inputs: &[Tensor]) -> Tensor {
    use stablespike::neuron::{lif_step, MembraneState};
    let batch = inputs[0].shape()[0];
    let mut g = Graph::new();
    let p: Vec<Var> = model.params.iter().map(|t| g.constant(t.clone())).collect();
    let mut membranes: Vec<Option<MembraneState>> = vec![None; model.lif_layers()];
    let mut sum: Option<Tensor> = None;
    for x in inputs {
        let mut h = x.clone();
        let mut li = 0;
        for layer in &model.backbone {
            let hv = g.constant(h.clone());
            h = match *layer {
                Layer::Conv { weight, bias, pad } => {
                    let y = g.conv2d(hv, p[weight], pad).unwrap();
                    let y = g.add_bias(y, p[bias]).unwrap();
                    g.value(y).clone()
                }
                Layer::Linear { weight, bias } => {
                    let y = g.matmul(hv, p[weight]).unwrap();
                    let y = g.add_bias(y, p[bias]).unwrap();
                    g.value(y).clone()
                }
                Layer::AvgPool => {
                    let y = g.avg_pool2(hv).unwrap();
                    g.value(y).clone()
                }
                Layer::Flatten => {
                    let n = h.len() / batch;
                    h.reshape(&[batch, n]).unwrap()
                }
                Layer::Lif => {
                    let prev = membranes[li].take().unwrap_or_else(|| MembraneState::zeros(h.shape()));
                    let step = lif_step(&prev, &h, &model.lif).unwrap();
                    membranes[li] = Some(step.state);
                    li += 1;
                    step.spikes
                }
            };
        }
        let hv = g.constant(h);
        let logits = model.classifier_forward(&mut g, &p, hv).unwrap();
        let l = g.value(logits).clone();
        sum = Some(match sum {
            None => l,
            Some(s) => s.zip_map(&l, "sum", |a, b| a + b).unwrap(),
        });
    }
    let inv = 1.0 / inputs.len() as f64;
    sum.unwrap().map(|v| v * inv)
}

/// Small synthetic event set binned at `t`, for fast training checks.
pub fn small_event_frames(train: usize, test: usize, t: usize, seed: u64) -> (FrameDataset, FrameDataset) {
    use stablespike::data::{SynthDataset, SynthParams};
    let p = SynthParams {
        width: 12,
        height: 12,
        train_count: train,
        test_count: test,
        thickness: (2, 3),
        length: (4, 10),
        travel: (4, 8),
        emit_prob: 0.5,
        ..SynthParams::default()
    };
    let ds = SynthDataset::generate(seed, &p).expect("synthetic data");
    (
        FrameDataset::from_streams(&ds.train, t, 12, 12, 4).expect("bin"),
        FrameDataset::from_streams(&ds.test, t, 12, 12, 4).expect("bin"),
    )
}
