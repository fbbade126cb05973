//! Central finite-difference checks of reverse-mode gradients.
//!
//! Non-smooth spike functions have no finite-difference derivative, so checks
//! through LIF layers build the graph with [`SpikeFn::Ramp`](crate::SpikeFn),
//! whose exact derivative is the rectangular surrogate used in training.

use crate::error::Result;
use crate::grad::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)` per input.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error; two (near-)zero vectors compare equal.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compare gradients of the scalar `f(inputs)` with central differences of
/// step `h`. `f` receives the inputs as trainable leaves on a fresh graph.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut d = vec![0.0; inputs[i].len()];
        for (j, dj) in d.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *dj = (up - down) / (2.0 * h);
        }
        numeric.push(Tensor::new(inputs[i].shape().to_vec(), d)?);
    }
    let relative_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a.data(), n.data()))
        .collect();
    Ok(GradCheck {
        relative_errors,
        analytic,
        numeric,
    })
}
