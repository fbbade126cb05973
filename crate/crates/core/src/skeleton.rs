//! Stable spike skeletons: adjacent-timestep bit combination, firing rates and
//! the spike-map consistency loss.
//!
//! The plain functions operate on binary [`Tensor`]s with boolean truth tables.
//! The `*_graph` variants use the arithmetic forms (`a·b`, `a+b−ab`, `a+b−2ab`)
//! which agree with the truth tables on `{0,1}` and stay differentiable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, Var};
use crate::tensor::{check_same, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitOp {
    #[default]
    And,
    Or,
    Xor,
}

impl BitOp {
    pub const ALL: [BitOp; 3] = [BitOp::And, BitOp::Or, BitOp::Xor];

    pub fn apply(self, a: bool, b: bool) -> bool {
        match self {
            BitOp::And => a & b,
            BitOp::Or => a | b,
            BitOp::Xor => a ^ b,
        }
    }
}

impl fmt::Display for BitOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BitOp::And => "AND",
            BitOp::Or => "OR",
            BitOp::Xor => "XOR",
        })
    }
}

impl FromStr for BitOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AND" => Ok(BitOp::And),
            "OR" => Ok(BitOp::Or),
            "XOR" => Ok(BitOp::Xor),
            _ => Err(Error::UnknownName {
                kind: "bit operation",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyFn {
    #[default]
    Mse,
    Kl,
    Cosine,
}

impl ConsistencyFn {
    pub const ALL: [ConsistencyFn; 3] = [ConsistencyFn::Mse, ConsistencyFn::Kl, ConsistencyFn::Cosine];
}

impl fmt::Display for ConsistencyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConsistencyFn::Mse => "MSE",
            ConsistencyFn::Kl => "KL",
            ConsistencyFn::Cosine => "COSINE",
        })
    }
}

impl FromStr for ConsistencyFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MSE" => Ok(ConsistencyFn::Mse),
            "KL" => Ok(ConsistencyFn::Kl),
            "COSINE" | "COS" => Ok(ConsistencyFn::Cosine),
            _ => Err(Error::UnknownName {
                kind: "consistency function",
                name: s.to_string(),
            }),
        }
    }
}

fn check_train(what: &'static str, spikes: &[Tensor], needed: usize) -> Result<()> {
    if spikes.len() < needed {
        return Err(Error::TooFewTimesteps {
            what,
            needed,
            got: spikes.len(),
        });
    }
    for s in spikes {
        check_same(what, &spikes[0], s)?;
        if !s.is_binary() {
            return Err(Error::NonBinary(what));
        }
    }
    Ok(())
}

/// Combine each adjacent pair `(S_t, S_{t+1})` under `op`, yielding `T−1` maps.
pub fn bit_combine(spikes: &[Tensor], op: BitOp) -> Result<Vec<Tensor>> {
    check_train("bit_combine", spikes, 2)?;
    Ok(spikes
        .windows(2)
        .map(|w| {
            w[0].zip_map(&w[1], "bit_combine", |a, b| {
                if op.apply(a == 1.0, b == 1.0) {
                    1.0
                } else {
                    0.0
                }
            })
            .expect("shapes checked")
        })
        .collect())
}

/// `S̃_t = S_t AND S_{t+1}` for `t = 0..T−2`.
pub fn stable_and(spikes: &[Tensor]) -> Result<Vec<Tensor>> {
    bit_combine(spikes, BitOp::And)
}

fn mean_over(maps: &[Tensor], what: &'static str) -> Result<Tensor> {
    let first = maps.first().ok_or(Error::TooFewTimesteps { what, needed: 1, got: 0 })?;
    let mut acc = vec![0.0; first.len()];
    for m in maps {
        check_same(what, first, m)?;
        acc.iter_mut().zip(m.data()).for_each(|(a, v)| *a += v);
    }
    let n = maps.len() as f64;
    Tensor::new(first.shape().to_vec(), acc.into_iter().map(|v| v / n).collect())
}

/// `Φ = (1/T) Σ_t S_t`.
pub fn firing_rate(spikes: &[Tensor]) -> Result<Tensor> {
    mean_over(spikes, "firing_rate")
}

/// `Φ̃ = (1/(T−1)) Σ_t S̃_t` over the skeleton slices.
pub fn stable_firing_rate(skeleton: &[Tensor]) -> Result<Tensor> {
    mean_over(skeleton, "stable_firing_rate")
}

/// Arithmetic (differentiable) adjacent-pair combination on a graph.
pub fn combine_graph(g: &mut Graph, spikes: &[Var], op: BitOp) -> Result<Vec<Var>> {
    if spikes.len() < 2 {
        return Err(Error::TooFewTimesteps {
            what: "combine_graph",
            needed: 2,
            got: spikes.len(),
        });
    }
    spikes
        .windows(2)
        .map(|w| {
            let prod = g.mul(w[0], w[1])?;
            match op {
                BitOp::And => Ok(prod),
                BitOp::Or | BitOp::Xor => {
                    let sum = g.add(w[0], w[1])?;
                    let k = if op == BitOp::Or { 1.0 } else { 2.0 };
                    let scaled = g.scale(prod, k);
                    g.sub(sum, scaled)
                }
            }
        })
        .collect()
}

/// Mean over the time list on a graph (`Φ` from spikes or `Φ̃` from a skeleton).
pub fn rate_graph(g: &mut Graph, maps: &[Var]) -> Result<Var> {
    g.average(maps)
}

/// Spike-map consistency loss between the skeleton rate `anchor` and the rate
/// `rate`. MSE averages over every element (batch included); KL and COSINE
/// treat axis 0 as the batch, compare per-sample flattened vectors, and divide
/// by the vector length so all three sit on the same per-element scale.
pub fn spike_consistency_graph(
    g: &mut Graph,
    anchor: Var,
    rate: Var,
    func: ConsistencyFn,
    detach_anchor: bool,
) -> Result<Var> {
    let anchor = if detach_anchor { g.detach(anchor) } else { anchor };
    match func {
        ConsistencyFn::Mse => {
            let diff = g.sub(anchor, rate)?;
            let sq = g.square(diff);
            Ok(g.mean(sq))
        }
        ConsistencyFn::Kl => g.row_kl(anchor, rate),
        ConsistencyFn::Cosine => g.row_cosine_distance(anchor, rate),
    }
}

/// Value of the consistency loss for plain tensors.
pub fn spike_consistency_loss(anchor: &Tensor, rate: &Tensor, func: ConsistencyFn) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(anchor.clone());
    let r = g.constant(rate.clone());
    let l = spike_consistency_graph(&mut g, a, r, func, true)?;
    Ok(g.value(l).item())
}
