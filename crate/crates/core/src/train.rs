//! Dual-consistency training: loss assembly, the training step, `fit`,
//! evaluation and the spike/energy/variance metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::data::FrameDataset;
use crate::error::{Error, Result};
use crate::grad::{Graph, SpikeFn, Var};
use crate::model::{dense_stage_maps, Arch, ForwardOptions, ForwardRecord, Layer, SnnModel};
use crate::neuron::LifParams;
use crate::noise::{perturbation_loss_graph, sample_noise, NoiseKind};
use crate::optim::{step_decay_lr, Sgd};
use crate::skeleton::{combine_graph, rate_graph, spike_consistency_graph, BitOp, ConsistencyFn};
use crate::tensor::Tensor;

/// RNG stream (of a `ChaCha8Rng` seeded with the global seed) that shuffles training batches.
pub const SHUFFLE_STREAM: u64 = 1;
/// RNG stream that draws perturbation noise.
pub const NOISE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub timesteps: usize,
    pub tau: f64,
    pub theta: f64,
    pub surrogate_width: f64,
    /// Truncate BPTT through the soft-reset subtraction.
    pub detach_reset: bool,

    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub consistency_fn: ConsistencyFn,
    pub bit_op: BitOp,
    /// Apply the skeleton loss at every LIF stage instead of only the backbone output.
    pub dense: bool,
    pub detach_anchor: bool,
    pub detach_clean: bool,
    /// Feed a detached skeleton rate into the noisy classifier branch.
    pub detach_noise_input: bool,
    pub noise: NoiseKind,

    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,

    pub energy_ac_pj: f64,
    pub energy_mac_pj: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::ConvSnnMini,
            timesteps: 4,
            tau: 2.0,
            theta: 1.0,
            surrogate_width: 1.0,
            detach_reset: false,
            beta: 1.0,
            gamma: 1.0,
            alpha: 2.0,
            consistency_fn: ConsistencyFn::Mse,
            bit_op: BitOp::And,
            dense: false,
            detach_anchor: true,
            detach_clean: true,
            detach_noise_input: false,
            noise: NoiseKind::AmplitudeAware,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-3,
            lr_decay_every: 10,
            lr_decay_factor: 0.1,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            energy_ac_pj: 0.9,
            energy_mac_pj: 4.6,
        }
    }
}

impl TrainConfig {
    /// The same run with both consistency terms switched off.
    pub fn baseline(&self) -> Self {
        Self {
            beta: 0.0,
            gamma: 0.0,
            ..self.clone()
        }
    }

    pub fn lif(&self) -> LifParams {
        LifParams {
            tau: self.tau,
            theta: self.theta,
            surrogate_width: self.surrogate_width,
        }
    }

    pub fn consistency_active(&self) -> bool {
        self.beta > 0.0 || self.gamma > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        self.lif().validate()?;
        self.noise.validate()?;
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("beta and gamma must be >= 0 (got {}, {})", self.beta, self.gamma));
        }
        if self.timesteps == 0 {
            return bad("timesteps must be >= 1".into());
        }
        if self.consistency_active() && self.timesteps < 2 {
            return bad("consistency losses need timesteps >= 2".into());
        }
        if !(self.alpha > 0.0) {
            return bad(format!("temperature alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr, momentum and weight_decay must be >= 0".into());
        }
        if !(self.energy_ac_pj >= 0.0) || !(self.energy_mac_pj >= 0.0) {
            return bad("energy constants must be >= 0".into());
        }
        Ok(())
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            spike_fn: SpikeFn::Heaviside,
            detach_reset: self.detach_reset,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_decay_lr(self.lr, self.lr_decay_factor, self.lr_decay_every, epoch)
    }
}

/// Scalar values of the loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub ce: f64,
    pub spike: f64,
    pub noise: f64,
    pub total: f64,
}

/// Where the perturbation noise comes from.
pub enum NoiseSource<'a> {
    Sample(&'a mut dyn RngCore),
    /// A pre-drawn noise tensor shaped like the backbone output.
    Fixed(&'a Tensor),
}

/// The recorded graph of one loss evaluation.
pub struct LossGraph {
    pub graph: Graph,
    pub params: Vec<Var>,
    pub record: ForwardRecord,
    pub ce: Var,
    pub spike: Option<Var>,
    pub noise: Option<Var>,
    pub total: Var,
    /// The drawn noise, when the perturbation branch ran.
    pub noise_sample: Option<Tensor>,
}

impl LossGraph {
    pub fn components(&self) -> LossComponents {
        let v = |x: Option<Var>| x.map_or(0.0, |x| self.graph.value(x).item());
        LossComponents {
            ce: self.graph.value(self.ce).item(),
            spike: v(self.spike),
            noise: v(self.noise),
            total: self.graph.value(self.total).item(),
        }
    }
}

/// Loss nodes of one evaluation of `L_CE + β·L_spike + γ·L_noise`.
pub struct LossTerms {
    pub record: ForwardRecord,
    pub ce: Var,
    pub spike: Option<Var>,
    pub noise: Option<Var>,
    pub total: Var,
    /// The drawn noise, when the perturbation branch ran.
    pub noise_sample: Option<Tensor>,
}

/// Forward pass plus `L_CE + β·L_spike + γ·L_noise` on a fresh graph.
pub fn build_loss(
    model: &SnnModel,
    inputs: &[Tensor],
    labels: &[usize],
    cfg: &TrainConfig,
    noise: NoiseSource<'_>,
    spike_fn: SpikeFn,
) -> Result<LossGraph> {
    let mut graph = Graph::new();
    let params = model.register(&mut graph, true);
    let t = assemble_loss(&mut graph, &params, model, inputs, labels, cfg, noise, spike_fn)?;
    Ok(LossGraph {
        graph,
        params,
        record: t.record,
        ce: t.ce,
        spike: t.spike,
        noise: t.noise,
        total: t.total,
        noise_sample: t.noise_sample,
    })
}

/// Record the forward pass and all loss terms on `g`, with `params` standing
/// in for `model.params`.
///
/// With `β = 0` the skeleton loss is not built; with `γ = 0` the noisy branch
/// is skipped and no noise is drawn.
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss(
    g: &mut Graph,
    params: &[Var],
    model: &SnnModel,
    inputs: &[Tensor],
    labels: &[usize],
    cfg: &TrainConfig,
    noise: NoiseSource<'_>,
    spike_fn: SpikeFn,
) -> Result<LossTerms> {
    if cfg.consistency_active() && inputs.len() < 2 {
        return Err(Error::TooFewTimesteps {
            what: "consistency losses",
            needed: 2,
            got: inputs.len(),
        });
    }
    let opts = ForwardOptions {
        spike_fn,
        detach_reset: cfg.detach_reset,
    };
    let record = model.forward(g, params, inputs, opts)?;
    let ce = g.cross_entropy(record.logits, labels)?;
    let mut total = ce;

    let mut spike = None;
    let mut noise_var = None;
    let mut noise_sample = None;
    if cfg.consistency_active() {
        let backbone_skeleton = combine_graph(g, &record.backbone, cfg.bit_op)?;
        let backbone_anchor = rate_graph(g, &backbone_skeleton)?;

        if cfg.beta > 0.0 {
            let stages: Vec<Vec<Var>> = if cfg.dense {
                dense_stage_maps(&record)?.to_vec()
            } else {
                vec![record.backbone.clone()]
            };
            let last = stages.len() - 1;
            let mut per_stage = Vec::with_capacity(stages.len());
            for (i, stage) in stages.iter().enumerate() {
                let anchor = if i == last {
                    backbone_anchor
                } else {
                    let skeleton = combine_graph(g, stage, cfg.bit_op)?;
                    rate_graph(g, &skeleton)?
                };
                let rate = rate_graph(g, stage)?;
                per_stage.push(spike_consistency_graph(g, anchor, rate, cfg.consistency_fn, cfg.detach_anchor)?);
            }
            let l = g.average(&per_stage)?;
            let weighted = g.scale(l, cfg.beta);
            total = g.add(total, weighted)?;
            spike = Some(l);
        }

        if cfg.gamma > 0.0 {
            let eps = match noise {
                NoiseSource::Sample(rng) => sample_noise(g.value(backbone_anchor), cfg.noise, rng)?,
                NoiseSource::Fixed(t) => t.clone(),
            };
            let base = if cfg.detach_noise_input {
                g.detach(backbone_anchor)
            } else {
                backbone_anchor
            };
            let eps_var = g.constant(eps.clone());
            let perturbed = g.add(base, eps_var)?;
            let noisy_logits = model.classifier_forward(g, params, perturbed)?;
            let l = perturbation_loss_graph(g, record.logits, noisy_logits, cfg.alpha, cfg.detach_clean)?;
            let weighted = g.scale(l, cfg.gamma);
            total = g.add(total, weighted)?;
            noise_var = Some(l);
            noise_sample = Some(eps);
        }
    }

    Ok(LossTerms {
        record,
        ce,
        spike,
        noise: noise_var,
        total,
        noise_sample,
    })
}

fn check_finite(c: &LossComponents) -> Result<()> {
    for (component, value) in [("ce", c.ce), ("spike", c.spike), ("noise", c.noise), ("total", c.total)] {
        if !value.is_finite() {
            return Err(Error::NonFinite { component, value });
        }
    }
    Ok(())
}

/// Result of one optimization step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub losses: LossComponents,
    /// Correct clean predictions in the batch.
    pub correct: usize,
}

/// One step: loss graph, backward, SGD update of `model.params`.
pub fn train_step(
    model: &mut SnnModel,
    opt: &mut Sgd,
    inputs: &[Tensor],
    labels: &[usize],
    cfg: &TrainConfig,
    noise_rng: &mut dyn RngCore,
    lr: f64,
) -> Result<StepOutcome> {
    let lg = build_loss(model, inputs, labels, cfg, NoiseSource::Sample(noise_rng), SpikeFn::Heaviside)?;
    let losses = lg.components();
    check_finite(&losses)?;
    let correct = count_correct(lg.graph.value(lg.record.logits), labels);
    let mut grads = lg.graph.backward(lg.total)?;
    let param_grads: Vec<Option<Tensor>> = lg.params.iter().map(|&p| grads.take(p)).collect();
    opt.step(&mut model.params, &param_grads, lr);
    Ok(StepOutcome { losses, correct })
}

/// Index of the first maximal logit in each row.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count()
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(size.max(1)).map(move |s| s..(s + size).min(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Clean, noise-free accuracy of `model` on `data`.
pub fn evaluate(model: &SnnModel, data: &FrameDataset, batch_size: usize) -> Result<Evaluation> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for r in batches(data.len(), batch_size) {
        let (inputs, labels) = data.batch(&idx[r]);
        correct += count_correct(&model.infer(&inputs)?, &labels);
    }
    Ok(Evaluation {
        accuracy: if data.is_empty() { 0.0 } else { 100.0 * correct as f64 / data.len() as f64 },
        correct,
        total: data.len(),
    })
}

/// Per-layer spike statistics and the SynOps energy estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringReport {
    pub samples: usize,
    pub timesteps: usize,
    /// Spikes emitted by each LIF layer over all samples and timesteps.
    pub spikes: Vec<u64>,
    /// Neurons per sample in each LIF layer.
    pub neurons: Vec<usize>,
    /// Accumulate operations each spike of a layer triggers downstream.
    pub fan_out: Vec<usize>,
    /// `spikes / (neurons · T · samples) · 100`.
    pub rates_percent: Vec<f64>,
    /// Dense multiply-accumulates of the first weight layer per sample and timestep.
    pub first_layer_macs: u64,
    /// Total spike-driven accumulates over all samples.
    pub synops: u64,
    /// Estimated energy per sample in picojoules.
    pub energy_pj: f64,
}

/// `(fan-out per LIF layer, first-layer MACs per timestep)` for one sample.
fn layer_costs(model: &SnnModel) -> (Vec<usize>, u64) {
    let [c, mut h, mut w] = model.input_shape;
    let mut channels = c;
    let mut first_macs = None;
    let mut pending_lif = 0usize;
    let mut fan_out = Vec::new();
    for layer in &model.backbone {
        match *layer {
            Layer::Conv { weight, pad, .. } => {
                let s = model.params[weight].shape();
                let (o, kh, kw) = (s[0], s[2], s[3]);
                h = h + 2 * pad + 1 - kh;
                w = w + 2 * pad + 1 - kw;
                first_macs.get_or_insert((h * w * o * channels * kh * kw) as u64);
                fan_out.extend(std::iter::repeat_n(o * kh * kw, pending_lif));
                pending_lif = 0;
                channels = o;
            }
            Layer::Linear { weight, .. } => {
                let s = model.params[weight].shape();
                first_macs.get_or_insert((s[0] * s[1]) as u64);
                fan_out.extend(std::iter::repeat_n(s[1], pending_lif));
                pending_lif = 0;
            }
            Layer::AvgPool => {
                h /= 2;
                w /= 2;
            }
            Layer::Flatten => {}
            Layer::Lif => pending_lif += 1,
        }
    }
    fan_out.extend(std::iter::repeat_n(model.classes, pending_lif));
    (fan_out, first_macs.unwrap_or(0))
}

/// Spike counts per LIF layer for one evaluation forward pass.
pub fn count_layer_spikes(g: &Graph, record: &ForwardRecord) -> Vec<u64> {
    record
        .layer_spikes
        .iter()
        .map(|steps| {
            steps
                .iter()
                .map(|&s| g.value(s).data().iter().filter(|&&v| v != 0.0).count() as u64)
                .sum()
        })
        .collect()
}

/// Firing rates (%) per LIF layer and `Σ SynOps·E_AC + MACs·E_MAC` per sample.
pub fn firing_and_energy(model: &SnnModel, data: &FrameDataset, cfg: &TrainConfig) -> Result<FiringReport> {
    let lif_layers = model.lif_layers();
    let mut spikes = vec![0u64; lif_layers];
    let mut neurons = vec![0usize; lif_layers];
    let idx: Vec<usize> = (0..data.len()).collect();
    for r in batches(data.len(), cfg.batch_size) {
        let batch = r.len();
        let (inputs, _) = data.batch(&idx[r]);
        let mut g = Graph::new();
        let params = model.register(&mut g, false);
        let rec = model.forward(&mut g, &params, &inputs, ForwardOptions::default())?;
        for (l, n) in count_layer_spikes(&g, &rec).into_iter().enumerate() {
            spikes[l] += n;
            neurons[l] = g.value(rec.layer_spikes[l][0]).len() / batch;
        }
    }
    let (fan_out, first_layer_macs) = layer_costs(model);
    let samples = data.len();
    let timesteps = data.timesteps();
    let rates_percent = spikes
        .iter()
        .zip(&neurons)
        .map(|(&s, &n)| {
            let denom = (n * timesteps * samples) as f64;
            if denom == 0.0 {
                0.0
            } else {
                100.0 * s as f64 / denom
            }
        })
        .collect();
    let synops: u64 = spikes.iter().zip(&fan_out).map(|(&s, &f)| s * f as u64).sum();
    let total_macs = first_layer_macs * (timesteps * samples) as u64;
    let energy_total = synops as f64 * cfg.energy_ac_pj + total_macs as f64 * cfg.energy_mac_pj;
    Ok(FiringReport {
        samples,
        timesteps,
        spikes,
        neurons,
        fan_out,
        rates_percent,
        first_layer_macs,
        synops,
        energy_pj: if samples == 0 { 0.0 } else { energy_total / samples as f64 },
    })
}

/// Mean normalized Hamming distance between adjacent backbone spike maps.
pub fn timestep_variance(g: &Graph, record: &ForwardRecord) -> Result<f64> {
    maps_variance(&record.backbone.iter().map(|&v| g.value(v)).collect::<Vec<_>>())
}

pub(crate) fn maps_variance(maps: &[&Tensor]) -> Result<f64> {
    if maps.len() < 2 {
        return Err(Error::TooFewTimesteps {
            what: "timestep_variance",
            needed: 2,
            got: maps.len(),
        });
    }
    let per_pair: f64 = maps
        .windows(2)
        .map(|w| {
            let diff = w[0].data().iter().zip(w[1].data()).filter(|(a, b)| a != b).count();
            diff as f64 / w[0].len() as f64
        })
        .sum();
    Ok(per_pair / (maps.len() - 1) as f64)
}

/// Sample-weighted mean of [`timestep_variance`] over a dataset.
pub fn dataset_timestep_variance(model: &SnnModel, data: &FrameDataset, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut acc = 0.0;
    for r in batches(data.len(), batch_size) {
        let n = r.len();
        let (inputs, _) = data.batch(&idx[r]);
        let mut g = Graph::new();
        let params = model.register(&mut g, false);
        let rec = model.forward(&mut g, &params, &inputs, ForwardOptions::default())?;
        acc += n as f64 * timestep_variance(&g, &rec)?;
    }
    Ok(if data.is_empty() { 0.0 } else { acc / data.len() as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: LossComponents,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    /// Loss components of every optimization step, in order.
    pub step_losses: Vec<LossComponents>,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    pub best_epoch: Option<usize>,
    pub firing: FiringReport,
    pub timestep_variance: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluation-only report: accuracy, firing/energy and timestep variance on
/// `test`, with no training history.
pub fn evaluation_report(model: &SnnModel, test: &FrameDataset, cfg: &TrainConfig) -> Result<MetricsReport> {
    let eval = evaluate(model, test, cfg.batch_size)?;
    let firing = firing_and_energy(model, test, cfg)?;
    let timestep_variance = if test.timesteps() >= 2 {
        Some(dataset_timestep_variance(model, test, cfg.batch_size)?)
    } else {
        None
    };
    Ok(MetricsReport {
        config: cfg.clone(),
        epochs: Vec::new(),
        step_losses: Vec::new(),
        final_test_accuracy: eval.accuracy,
        best_test_accuracy: eval.accuracy,
        best_epoch: None,
        firing,
        timestep_variance,
    })
}

pub struct FitOutcome {
    pub report: MetricsReport,
    pub model: SnnModel,
    pub best_model: SnnModel,
}

/// Train for `cfg.epochs` epochs, evaluating on `test` after each one.
///
/// With `run_dir`, the config echo, per-epoch metrics (`metrics.jsonl`), the
/// final report and the best/last checkpoints are written there.
pub fn fit(
    train: &FrameDataset,
    test: &FrameDataset,
    mut model: SnnModel,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.timesteps() != cfg.timesteps && !train.is_empty() {
        return Err(Error::InvalidParam(format!(
            "dataset binned with T={} but config asks for T={}",
            train.timesteps(),
            cfg.timesteps
        )));
    }
    model.lif = cfg.lif();
    model.dense_hooks = cfg.dense;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);

    let mut metrics_file = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("config.txt");
            fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
            let p = dir.join("metrics.jsonl");
            Some((fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(usize, f64, SnnModel)> = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossComponents::default();
        let mut correct = 0;
        let mut steps = 0;
        for r in batches(order.len(), cfg.batch_size) {
            let (inputs, labels) = train.batch(&order[r]);
            let out = train_step(&mut model, &mut opt, &inputs, &labels, cfg, &mut noise_rng, lr)?;
            sum.ce += out.losses.ce;
            sum.spike += out.losses.spike;
            sum.noise += out.losses.noise;
            sum.total += out.losses.total;
            correct += out.correct;
            steps += 1;
            step_losses.push(out.losses);
        }
        let n = steps.max(1) as f64;
        let test_eval = evaluate(&model, test, cfg.batch_size)?;
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: LossComponents {
                ce: sum.ce / n,
                spike: sum.spike / n,
                noise: sum.noise / n,
                total: sum.total / n,
            },
            train_accuracy: if train.is_empty() { 0.0 } else { 100.0 * correct as f64 / train.len() as f64 },
            test_accuracy: test_eval.accuracy,
        };
        if let Some((f, p)) = metrics_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m).expect("metrics serialize")).map_err(|e| Error::io(&*p, e))?;
        }
        if best.as_ref().is_none_or(|(_, acc, _)| m.test_accuracy > *acc) {
            best = Some((epoch, m.test_accuracy, model.clone()));
            if let Some(dir) = run_dir {
                Checkpoint::new(&model, Some(&opt), epoch + 1).save(&dir.join(checkpoint::BEST_FILE))?;
            }
        }
        epochs.push(m);
    }

    let mut report = evaluation_report(&model, test, cfg)?;
    let best_model = match best {
        Some((e, a, m)) => {
            report.best_epoch = Some(e);
            report.best_test_accuracy = a;
            m
        }
        None => model.clone(),
    };
    report.epochs = epochs;
    report.step_losses = step_losses;
    if let Some(dir) = run_dir {
        Checkpoint::new(&model, Some(&opt), cfg.epochs).save(&dir.join(checkpoint::LAST_FILE))?;
        let p = dir.join("report.json");
        fs::write(&p, report.to_json()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(FitOutcome {
        report,
        model,
        best_model,
    })
}
