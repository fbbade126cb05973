//! Amplitude-aware spike noise, its ablation variants, and the temperature-softened
//! perturbation-consistency loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Bernoulli spike with probability equal to the local stable firing rate.
    #[default]
    AmplitudeAware,
    /// Bernoulli spike with one fixed probability everywhere.
    FixedP(f64),
    /// Zero-mean continuous Gaussian noise.
    Gaussian(f64),
}


impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::AmplitudeAware => Ok(()),
            NoiseKind::FixedP(p) if (0.0..=1.0).contains(&p) => Ok(()),
            NoiseKind::FixedP(p) => Err(Error::InvalidParam(format!("noise probability {p} outside [0, 1]"))),
            NoiseKind::Gaussian(s) if s >= 0.0 && s.is_finite() => Ok(()),
            NoiseKind::Gaussian(s) => Err(Error::InvalidParam(format!("noise std {s} must be >= 0"))),
        }
    }

    /// Spike-valued kinds keep the perturbed rate on the discrete lattice.
    pub fn is_spike(&self) -> bool {
        !matches!(self, NoiseKind::Gaussian(_))
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::AmplitudeAware => f.write_str("aware"),
            NoiseKind::FixedP(p) => write!(f, "fixed:{p}"),
            NoiseKind::Gaussian(s) => write!(f, "gaussian:{s}"),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    /// Accepts `aware`, `fixed:<p>` and `gaussian:<std>`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownName {
            kind: "noise kind",
            name: s.to_string(),
        };
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> { a.ok_or_else(unknown)?.trim().parse().map_err(|_| unknown()) };
        let kind = match head.trim().to_ascii_lowercase().as_str() {
            "aware" | "amplitude_aware" if arg.is_none() => NoiseKind::AmplitudeAware,
            "fixed" => NoiseKind::FixedP(num(arg)?),
            "gaussian" => NoiseKind::Gaussian(num(arg)?),
            _ => return Err(unknown()),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Draw one noise value per element of `rate` (the stable firing rate).
///
/// Spike kinds draw `u` uniformly from `(0, 1]` and fire iff `u <= p`, so a
/// probability of exactly 0 never fires and exactly 1 always does.
pub fn sample_noise<R: Rng + ?Sized>(rate: &Tensor, kind: NoiseKind, rng: &mut R) -> Result<Tensor> {
    kind.validate()?;
    if kind.is_spike() {
        if let Some(bad) = rate.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParam(format!("spike noise probability {bad} outside [0, 1]")));
        }
    }
    let mut bernoulli = |p: f64| {
        let u = 1.0 - rng.random::<f64>();
        if u <= p {
            1.0
        } else {
            0.0
        }
    };
    let data: Vec<f64> = match kind {
        NoiseKind::AmplitudeAware => rate.data().iter().map(|&p| bernoulli(p)).collect(),
        NoiseKind::FixedP(p) => rate.data().iter().map(|_| bernoulli(p)).collect(),
        NoiseKind::Gaussian(std) => rate
            .data()
            .iter()
            .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect(),
    };
    Tensor::new(rate.shape().to_vec(), data)
}

/// `Φ_noise = Φ̃ + ε`.
pub fn perturb(stable_rate: &Tensor, noise: &Tensor) -> Result<Tensor> {
    stable_rate.zip_map(noise, "perturb", |a, b| a + b)
}

/// Whether `value` lies on `{0, 1/(T−1), …, 1, 1 + 1/(T−1), …, 2}`.
pub fn in_perturbed_lattice(value: f64, timesteps: usize) -> bool {
    if timesteps < 2 || !(0.0..=2.0).contains(&value) {
        return false;
    }
    let steps = (timesteps - 1) as f64;
    let scaled = value * steps;
    (scaled - scaled.round()).abs() < 1e-9
}

/// Row-wise softmax of `[B, K]` logits at temperature `alpha`, max-shifted.
pub fn soften(logits: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParam(format!("temperature must be positive, got {alpha}")));
    }
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let p = g.softmax(x, alpha);
    Ok(g.value(p).clone())
}

/// `α² · KL(p ‖ p_noise)` averaged over the batch, with `p` from the clean
/// logits. The clean side is detached unless `detach_clean` is false.
pub fn perturbation_loss_graph(
    g: &mut Graph,
    clean: Var,
    noisy: Var,
    alpha: f64,
    detach_clean: bool,
) -> Result<Var> {
    let clean = if detach_clean { g.detach(clean) } else { clean };
    g.soft_kl(clean, noisy, alpha)
}

pub fn perturbation_loss(clean: &Tensor, noisy: &Tensor, alpha: f64) -> Result<f64> {
    let mut g = Graph::new();
    let c = g.constant(clean.clone());
    let n = g.constant(noisy.clone());
    let l = perturbation_loss_graph(&mut g, c, n, alpha, true)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extreme_probabilities_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zeros = Tensor::zeros(&[1000]);
        let ones = Tensor::full(&[1000], 1.0);
        let kind = NoiseKind::AmplitudeAware;
        assert_eq!(sample_noise(&zeros, kind, &mut rng).unwrap().sum(), 0.0);
        assert_eq!(sample_noise(&ones, kind, &mut rng).unwrap().sum(), 1000.0);
    }

    #[test]
    fn half_probability_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let eps = sample_noise(&Tensor::full(&[n], 0.5), NoiseKind::AmplitudeAware, &mut rng).unwrap();
        let sigma = (0.25 / n as f64).sqrt();
        assert!((eps.mean() - 0.5).abs() < 3.0 * sigma, "{}", eps.mean());
    }

    #[test]
    fn rejects_out_of_range_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = Tensor::from_vec(vec![0.5, 1.5]);
        assert!(sample_noise(&bad, NoiseKind::AmplitudeAware, &mut rng).is_err());
        assert!(sample_noise(&bad, NoiseKind::Gaussian(0.1), &mut rng).is_ok());
        assert!(NoiseKind::FixedP(1.2).validate().is_err());
        assert!(NoiseKind::Gaussian(-1.0).validate().is_err());
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("aware".parse::<NoiseKind>().unwrap(), NoiseKind::AmplitudeAware);
        assert_eq!("fixed:0.4".parse::<NoiseKind>().unwrap(), NoiseKind::FixedP(0.4));
        assert_eq!("gaussian:1.0".parse::<NoiseKind>().unwrap(), NoiseKind::Gaussian(1.0));
        assert!("fixed".parse::<NoiseKind>().is_err());
        assert!("fixed:2".parse::<NoiseKind>().is_err());
        for k in [NoiseKind::AmplitudeAware, NoiseKind::FixedP(0.6), NoiseKind::Gaussian(0.5)] {
            assert_eq!(k.to_string().parse::<NoiseKind>().unwrap(), k);
        }
    }

    #[test]
    fn perturb_examples() {
        let r = Tensor::from_vec(vec![0.5]);
        assert_eq!(perturb(&r, &Tensor::from_vec(vec![1.0])).unwrap().item(), 1.5);
        assert_eq!(perturb(&r, &Tensor::from_vec(vec![0.0])).unwrap(), r);
    }

    #[test]
    fn lattice_membership() {
        assert!(in_perturbed_lattice(1.5, 3));
        assert!(in_perturbed_lattice(2.0 / 3.0, 4));
        assert!(!in_perturbed_lattice(0.25, 3));
        assert!(!in_perturbed_lattice(2.5, 3));
    }

    #[test]
    fn soften_examples() {
        let u = soften(&Tensor::new(vec![1, 4], vec![3.0; 4]).unwrap(), 2.0).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let p = soften(&Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap(), 2.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.data()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let hot = soften(&Tensor::new(vec![1, 3], vec![5.0, -1.0, 0.0]).unwrap(), 1e9).unwrap();
        assert!(hot.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-8));
        assert!(soften(&hot, 0.0).is_err());
    }

    #[test]
    fn identical_logits_have_zero_loss() {
        let o = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, 0.0]).unwrap();
        assert!(perturbation_loss(&o, &o, 2.0).unwrap().abs() < 1e-15);
    }
}
