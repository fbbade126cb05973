//! Desk-scale spiking architectures with a backbone/classifier split.
//!
//! The backbone runs once per timestep with shared weights and carried
//! membrane state. The classifier (global average pool for conv backbones,
//! then one linear map) is applied to each timestep's backbone spikes and the
//! logits are averaged over time.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, SpikeFn, Var};
use crate::neuron::{lif_step_graph, LifParams};
use crate::tensor::Tensor;

/// Square kernel size of every conv layer in the mini models.
pub const CONV_KERNEL: usize = 3;

/// Extra factor on the Kaiming-uniform weight bound. Sparse, non-negative
/// spike inputs carry far less energy than the unit-variance inputs Kaiming
/// scaling assumes; at gain 1 the deeper LIF layers of the mini models start
/// silent and never receive surrogate gradient.
pub const INIT_GAIN: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    MlpSnn,
    ConvSnnMini,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::MlpSnn => "MLP_SNN",
            Arch::ConvSnnMini => "CONV_SNN_MINI",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MLP_SNN" => Ok(Arch::MlpSnn),
            "CONV_SNN_MINI" => Ok(Arch::ConvSnnMini),
            _ => Err(Error::UnknownName {
                kind: "architecture",
                name: s.to_string(),
            }),
        }
    }
}

/// Backbone layer; weight layers refer to entries of [`SnnModel::params`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv { weight: usize, bias: usize, pad: usize },
    Linear { weight: usize, bias: usize },
    AvgPool,
    Flatten,
    Lif,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub global_pool: bool,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnnModel {
    pub arch: Arch,
    /// `[C, H, W]` of one timestep of input.
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub seed: u64,
    pub lif: LifParams,
    pub params: Vec<Tensor>,
    pub backbone: Vec<Layer>,
    pub classifier: Classifier,
    pub dense_hooks: bool,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub spike_fn: SpikeFn,
    pub detach_reset: bool,
}

/// Everything the losses and metrics need from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    /// Backbone output spikes per timestep.
    pub backbone: Vec<Var>,
    /// Classifier logits per timestep.
    pub step_logits: Vec<Var>,
    /// Mean of `step_logits`.
    pub logits: Var,
    /// Spikes of every LIF layer, `[layer][timestep]`.
    pub layer_spikes: Vec<Vec<Var>>,
    dense_hooks: bool,
}

/// Per-stage spike maps (one stage per LIF layer), available only when the
/// model was built with dense hooks.
pub fn dense_stage_maps(record: &ForwardRecord) -> Result<&[Vec<Var>]> {
    if !record.dense_hooks {
        return Err(Error::HooksDisabled);
    }
    Ok(&record.layer_spikes)
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Tensor>,
}

impl Builder {
    /// Kaiming-uniform weights (gain √2, fan-in) scaled by [`INIT_GAIN`] and `±1/√fan_in` biases.
    fn weight_pair(&mut self, weight_shape: &[usize], fan_in: usize, out: usize) -> (usize, usize) {
        let bound = INIT_GAIN * (6.0 / fan_in as f64).sqrt();
        let w = Tensor::from_fn(weight_shape, |_| self.rng.random_range(-bound..bound));
        let bb = 1.0 / (fan_in as f64).sqrt();
        let b = Tensor::from_fn(&[out], |_| self.rng.random_range(-bb..bb));
        self.params.push(w);
        self.params.push(b);
        (self.params.len() - 2, self.params.len() - 1)
    }

    fn conv(&mut self, in_ch: usize, out_ch: usize) -> Layer {
        let k = CONV_KERNEL;
        let (weight, bias) = self.weight_pair(&[out_ch, in_ch, k, k], in_ch * k * k, out_ch);
        Layer::Conv {
            weight,
            bias,
            pad: k / 2,
        }
    }

    fn linear(&mut self, inp: usize, out: usize) -> Layer {
        let (weight, bias) = self.weight_pair(&[inp, out], inp, out);
        Layer::Linear { weight, bias }
    }
}

/// Build one of the named architectures with deterministic initialization.
pub fn build_architecture(arch: Arch, input_shape: [usize; 3], classes: usize, seed: u64) -> Result<SnnModel> {
    match arch {
        Arch::MlpSnn => build_mlp(input_shape, &[128, 64], classes, seed),
        Arch::ConvSnnMini => {
            let [c, h, w] = input_shape;
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::InvalidShape {
                    op: "build_architecture",
                    msg: format!("CONV_SNN_MINI needs H and W divisible by 4, got {h}x{w}"),
                });
            }
            check_dims(input_shape, classes)?;
            let mut b = Builder {
                rng: ChaCha8Rng::seed_from_u64(seed),
                params: Vec::new(),
            };
            let backbone = vec![
                b.conv(c, 16),
                Layer::Lif,
                Layer::AvgPool,
                b.conv(16, 32),
                Layer::Lif,
                Layer::AvgPool,
                b.conv(32, 32),
                Layer::Lif,
            ];
            let Layer::Linear { weight, bias } = b.linear(32, classes) else {
                unreachable!()
            };
            Ok(SnnModel {
                arch,
                input_shape,
                classes,
                seed,
                lif: LifParams::default(),
                params: b.params,
                backbone,
                classifier: Classifier {
                    global_pool: true,
                    weight,
                    bias,
                },
                dense_hooks: false,
            })
        }
    }
}

fn check_dims(input_shape: [usize; 3], classes: usize) -> Result<()> {
    if input_shape.contains(&0) || classes < 2 {
        return Err(Error::InvalidShape {
            op: "build_architecture",
            msg: format!("input {input_shape:?} with {classes} classes"),
        });
    }
    Ok(())
}

/// Flatten, then `linear + LIF` per hidden width, then a linear classifier.
pub fn build_mlp(input_shape: [usize; 3], hidden: &[usize], classes: usize, seed: u64) -> Result<SnnModel> {
    check_dims(input_shape, classes)?;
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::InvalidParam(format!("hidden widths {hidden:?}")));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Vec::new(),
    };
    let mut backbone = vec![Layer::Flatten];
    let mut width = input_shape.iter().product();
    for &h in hidden {
        backbone.push(b.linear(width, h));
        backbone.push(Layer::Lif);
        width = h;
    }
    let Layer::Linear { weight, bias } = b.linear(width, classes) else {
        unreachable!()
    };
    Ok(SnnModel {
        arch: Arch::MlpSnn,
        input_shape,
        classes,
        seed,
        lif: LifParams::default(),
        params: b.params,
        backbone,
        classifier: Classifier {
            global_pool: false,
            weight,
            bias,
        },
        dense_hooks: false,
    })
}

impl SnnModel {
    pub fn with_dense_hooks(mut self, on: bool) -> Self {
        self.dense_hooks = on;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn lif_layers(&self) -> usize {
        self.backbone.iter().filter(|l| matches!(l, Layer::Lif)).count()
    }

    /// Put every parameter on the graph, in `params` order.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.clone(), trainable)).collect()
    }

    fn check_input(&self, inputs: &[Tensor]) -> Result<usize> {
        let first = inputs.first().ok_or(Error::TooFewTimesteps {
            what: "forward",
            needed: 1,
            got: 0,
        })?;
        let s = first.shape();
        let [c, h, w] = self.input_shape;
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::InvalidShape {
                op: "forward",
                msg: format!("expected [B, {c}, {h}, {w}] per timestep, got {s:?}"),
            });
        }
        if let Some(bad) = inputs.iter().find(|t| t.shape() != s) {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: s.to_vec(),
                right: bad.shape().to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Run every timestep of `inputs` (each `[B, C, H, W]`) through the model.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        inputs: &[Tensor],
        opts: ForwardOptions,
    ) -> Result<ForwardRecord> {
        let batch = self.check_input(inputs)?;
        let lif_count = self.lif_layers();
        let mut membranes: Vec<Option<Var>> = vec![None; lif_count];
        let mut layer_spikes: Vec<Vec<Var>> = vec![Vec::with_capacity(inputs.len()); lif_count];
        let mut backbone = Vec::with_capacity(inputs.len());
        let mut step_logits = Vec::with_capacity(inputs.len());

        for x in inputs {
            let mut h = g.constant(x.clone());
            let mut lif_idx = 0;
            for layer in &self.backbone {
                h = match *layer {
                    Layer::Conv { weight, bias, pad } => {
                        let y = g.conv2d(h, params[weight], pad)?;
                        g.add_bias(y, params[bias])?
                    }
                    Layer::Linear { weight, bias } => {
                        let y = g.matmul(h, params[weight])?;
                        g.add_bias(y, params[bias])?
                    }
                    Layer::AvgPool => g.avg_pool2(h)?,
                    Layer::Flatten => {
                        let n = g.value(h).len() / batch;
                        g.reshape(h, &[batch, n])?
                    }
                    Layer::Lif => {
                        let (s, state) = lif_step_graph(
                            g,
                            membranes[lif_idx],
                            h,
                            &self.lif,
                            opts.spike_fn,
                            opts.detach_reset,
                        )?;
                        membranes[lif_idx] = Some(state);
                        layer_spikes[lif_idx].push(s);
                        lif_idx += 1;
                        s
                    }
                };
            }
            backbone.push(h);
            step_logits.push(self.classifier_forward(g, params, h)?);
        }
        let logits = g.average(&step_logits)?;
        Ok(ForwardRecord {
            backbone,
            step_logits,
            logits,
            layer_spikes,
            dense_hooks: self.dense_hooks,
        })
    }

    /// Time-free classifier pass over one backbone-shaped tensor (spikes or rates).
    pub fn classifier_forward(&self, g: &mut Graph, params: &[Var], features: Var) -> Result<Var> {
        let pooled = if self.classifier.global_pool {
            g.global_avg_pool(features)?
        } else {
            features
        };
        let y = g.matmul(pooled, params[self.classifier.weight])?;
        g.add_bias(y, params[self.classifier.bias])
    }

    /// Evaluation-mode logits: no gradients, no consistency branches.
    pub fn infer(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let params = self.register(&mut g, false);
        let rec = self.forward(&mut g, &params, inputs, ForwardOptions::default())?;
        Ok(g.value(rec.logits).clone())
    }
}
