//! Central finite differences as an independent reference for `backward`.
//!
//! `compare_gradients` evaluates the same loss builder analytically (one
//! recorded forward plus backward) and numerically (two perturbed forward
//! passes per coordinate). The builder must be deterministic; graphs with
//! discrete choices should pin them (see the `*_pinned` ops) so both
//! probes stay on the branch selected at the base point.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Analytic and numeric gradients for a set of parameters, in the same
/// order and coordinate layout as the parameters themselves.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradReport {
    /// Largest relative difference between the two gradient estimates.
    /// The denominator is floored so that structurally tiny gradients are
    /// compared on an absolute scale instead of amplifying rounding noise.
    pub fn max_relative_error(&self, floor: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, n) in self.analytic.iter().zip(&self.numeric) {
            for (x, y) in a.iter().zip(n) {
                let denom = x.abs().max(y.abs()).max(floor);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }
}

/// Runs `build` once with recording to collect analytic gradients, then
/// probes every coordinate of every parameter with central differences of
/// the given step.
pub fn compare_gradients(
    params: &[Tensor],
    mut build: impl FnMut(&mut Tape) -> Result<Tensor>,
    step: f64,
) -> Result<GradReport> {
    if let Some(p) = params.iter().find(|p| !p.requires_grad()) {
        return Err(Error::Autodiff(format!(
            "gradient check on a tensor without a gradient buffer (shape {:?})",
            p.shape()
        )));
    }

    for p in params {
        p.zero_grad();
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().expect("parameters track gradients"))
        .collect();

    let eval = |build: &mut dyn FnMut(&mut Tape) -> Result<Tensor>| -> Result<f64> {
        let mut tape = Tape::no_grad();
        Ok(build(&mut tape)?.item())
    };

    let mut numeric = Vec::with_capacity(params.len());
    for p in params {
        let base = p.values();
        let mut grad = vec![0.0; base.len()];
        let mut probe = base.clone();
        for i in 0..base.len() {
            probe[i] = base[i] + step;
            p.set_values(&probe);
            let plus = eval(&mut build)?;
            probe[i] = base[i] - step;
            p.set_values(&probe);
            let minus = eval(&mut build)?;
            probe[i] = base[i];
            p.set_values(&probe);
            grad[i] = (plus - minus) / (2.0 * step);
        }
        numeric.push(grad);
    }

    Ok(GradReport { analytic, numeric })
}
