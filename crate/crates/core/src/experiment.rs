//! Multi-run drivers: ablation tables over one config axis and paired
//! baseline/method sweeps over the number of timesteps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EventStream, FrameDataset};
use crate::error::{Error, Result};
use crate::model::build_architecture;
use crate::noise::NoiseKind;
use crate::skeleton::{BitOp, ConsistencyFn};
use crate::train::{fit, FitOutcome, TrainConfig};

/// Labelled event streams, re-binned on demand for each `T`.
#[derive(Clone, Debug)]
pub struct EventData {
    pub train: Vec<EventStream>,
    pub test: Vec<EventStream>,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl EventData {
    pub fn frames(&self, timesteps: usize) -> Result<(FrameDataset, FrameDataset)> {
        Ok((
            FrameDataset::from_streams(&self.train, timesteps, self.height, self.width, self.classes)?,
            FrameDataset::from_streams(&self.test, timesteps, self.height, self.width, self.classes)?,
        ))
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [2, self.height, self.width]
    }
}

/// Build the configured architecture (initialized from `cfg.seed`) and fit it.
pub fn run_config(
    cfg: &TrainConfig,
    train: &FrameDataset,
    test: &FrameDataset,
    run_dir: Option<&Path>,
) -> Result<FitOutcome> {
    let shape = train
        .sample_shape()
        .ok_or_else(|| Error::InvalidParam("empty training set".into()))?;
    let model = build_architecture(cfg.arch, shape, train.classes, cfg.seed)?;
    fit(train, test, model, cfg, run_dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationAxis {
    BitOp,
    Noise,
    ConsistencyFn,
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::BitOp => "bitop",
            AblationAxis::Noise => "noise",
            AblationAxis::ConsistencyFn => "consistency_fn",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bitop" | "bit_op" => Ok(AblationAxis::BitOp),
            "noise" => Ok(AblationAxis::Noise),
            "consistency_fn" | "consistency" => Ok(AblationAxis::ConsistencyFn),
            _ => Err(Error::UnknownName {
                kind: "ablation axis",
                name: s.to_string(),
            }),
        }
    }
}

/// Fixed spike probabilities of the noise ablation.
pub const FIXED_P_GRID: [f64; 3] = [0.4, 0.5, 0.6];
/// Gaussian standard deviations of the noise ablation.
pub const GAUSSIAN_STD_GRID: [f64; 3] = [0.1, 0.5, 1.0];

/// One labelled config per variant of `axis`, everything else taken from `base`.
pub fn ablation_variants(axis: AblationAxis, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    match axis {
        AblationAxis::BitOp => BitOp::ALL
            .iter()
            .map(|&op| (op.to_string(), TrainConfig { bit_op: op, ..base.clone() }))
            .collect(),
        AblationAxis::ConsistencyFn => ConsistencyFn::ALL
            .iter()
            .map(|&f| (f.to_string(), TrainConfig { consistency_fn: f, ..base.clone() }))
            .collect(),
        AblationAxis::Noise => std::iter::once(NoiseKind::AmplitudeAware)
            .chain(FIXED_P_GRID.iter().map(|&p| NoiseKind::FixedP(p)))
            .chain(GAUSSIAN_STD_GRID.iter().map(|&s| NoiseKind::Gaussian(s)))
            .map(|n| (n.to_string(), TrainConfig { noise: n, ..base.clone() }))
            .collect(),
    }
}

/// Outcome of one config trained under several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    /// Final test accuracy (%) per seed.
    pub accuracies: Vec<f64>,
    /// Mean adjacent-timestep Hamming variance on the test set per seed.
    pub variances: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_variance: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Train `cfg` once per seed (the seed sets weight init, shuffling and noise).
pub fn run_seeds(
    label: &str,
    cfg: &TrainConfig,
    seeds: &[u64],
    train: &FrameDataset,
    test: &FrameDataset,
) -> Result<RunSummary> {
    let mut accuracies = Vec::with_capacity(seeds.len());
    let mut variances = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let c = TrainConfig { seed, ..cfg.clone() };
        let out = run_config(&c, train, test, None)?;
        accuracies.push(out.report.final_test_accuracy);
        variances.push(out.report.timestep_variance.unwrap_or(0.0));
    }
    Ok(RunSummary {
        label: label.to_string(),
        seeds: seeds.to_vec(),
        mean_accuracy: mean(&accuracies),
        mean_variance: mean(&variances),
        accuracies,
        variances,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    /// The same config with both consistency terms off.
    pub baseline: RunSummary,
    pub rows: Vec<RunSummary>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&RunSummary> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub fn run_ablation(
    axis: AblationAxis,
    base: &TrainConfig,
    seeds: &[u64],
    train: &FrameDataset,
    test: &FrameDataset,
) -> Result<AblationTable> {
    let baseline = run_seeds("baseline", &base.baseline(), seeds, train, test)?;
    let rows = ablation_variants(axis, base)
        .iter()
        .map(|(label, cfg)| run_seeds(label, cfg, seeds, train, test))
        .collect::<Result<_>>()?;
    Ok(AblationTable { axis, baseline, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub timesteps: usize,
    pub baseline: RunSummary,
    pub method: RunSummary,
    /// `method.mean_accuracy − baseline.mean_accuracy`.
    pub delta: f64,
}

/// Seeds of repetition `r`: `base_seed + r`, shared by baseline and method.
pub fn repetition_seeds(base_seed: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|r| base_seed + r).collect()
}

/// Independent baseline and method trainings for every `T`.
pub fn sweep_timesteps(base: &TrainConfig, ts: &[usize], repeats: usize, data: &EventData) -> Result<Vec<SweepRow>> {
    if let Some(&t) = ts.iter().find(|&&t| t < 2) {
        return Err(Error::TooFewTimesteps {
            what: "sweep_T",
            needed: 2,
            got: t,
        });
    }
    let seeds = repetition_seeds(base.seed, repeats);
    ts.iter()
        .map(|&t| {
            let (train, test) = data.frames(t)?;
            let cfg = TrainConfig {
                timesteps: t,
                ..base.clone()
            };
            let baseline = run_seeds("baseline", &cfg.baseline(), &seeds, &train, &test)?;
            let method = run_seeds("method", &cfg, &seeds, &train, &test)?;
            Ok(SweepRow {
                timesteps: t,
                delta: method.mean_accuracy - baseline.mean_accuracy,
                baseline,
                method,
            })
        })
        .collect()
}
