//! Weight-perturbation local step.
//!
//! The gradient at the current point is rescaled to length `alpha`, the
//! loss gradient is re-evaluated at the shifted point, and the descent step
//! is taken from the unshifted parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slice_norm2, Objective};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub alpha: f64,
    pub grad_floor: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            alpha: 5e-2,
            grad_floor: 1e-12,
        }
    }
}

impl PerturbConfig {
    pub fn new(alpha: f64, grad_floor: f64) -> Result<Self> {
        let cfg = Self { alpha, grad_floor };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and nonnegative, got {}",
                self.alpha
            )));
        }
        if !(self.grad_floor > 0.0) {
            return Err(Error::Config(format!(
                "grad_floor must be positive, got {}",
                self.grad_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTelemetry<T> {
    /// Loss at the unperturbed parameters.
    pub loss: T,
    pub grad_norm: T,
    pub perturbed_grad_norm: T,
    /// Whether a nonzero perturbation was applied.
    pub applied: bool,
}

/// `alpha * grad / ||grad||`, or `None` when the gradient is below the floor or alpha is zero.
pub fn perturbation<T: Scalar>(grad: &[T], cfg: &PerturbConfig) -> Result<Option<Vec<T>>> {
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i}")));
    }
    let norm = slice_norm2(grad);
    if cfg.alpha == 0.0 || norm < T::lit(cfg.grad_floor) {
        return Ok(None);
    }
    let scale = T::lit(cfg.alpha) / norm;
    Ok(Some(grad.iter().map(|&g| g * scale).collect()))
}

/// Dense form of [`perturbation`]: the zero vector stands in for `None`.
pub fn perturbation_vector<T: Scalar>(grad: &[T], cfg: &PerturbConfig) -> Result<Vec<T>> {
    Ok(perturbation(grad, cfg)?.unwrap_or_else(|| vec![T::zero(); grad.len()]))
}

/// Plain gradient descent step.
pub fn sgd_step<T: Scalar, O: Objective<T>>(
    params: &[T],
    objective: &O,
    eta_l: T,
) -> Result<(Vec<T>, StepTelemetry<T>)> {
    let (loss, grad) = objective.value_and_grad(params)?;
    let norm = slice_norm2(&grad);
    let next = descend(params, &grad, eta_l);
    Ok((
        next,
        StepTelemetry {
            loss,
            grad_norm: norm,
            perturbed_grad_norm: norm,
            applied: false,
        },
    ))
}

/// Two-pass perturbed step on a single batch.
///
/// With a zero perturbation the second pass is skipped and the result is the
/// plain SGD step bit for bit.
pub fn harmofl_step<T: Scalar, O: Objective<T>>(
    params: &[T],
    objective: &O,
    eta_l: T,
    cfg: &PerturbConfig,
) -> Result<(Vec<T>, StepTelemetry<T>)> {
    let (loss, grad) = objective.value_and_grad(params)?;
    let grad_norm = slice_norm2(&grad);
    let Some(delta) = perturbation(&grad, cfg)? else {
        let next = descend(params, &grad, eta_l);
        return Ok((
            next,
            StepTelemetry {
                loss,
                grad_norm,
                perturbed_grad_norm: grad_norm,
                applied: false,
            },
        ));
    };
    let shifted: Vec<T> = params.iter().zip(&delta).map(|(&p, &d)| p + d).collect();
    let (_, grad_delta) = objective.value_and_grad(&shifted)?;
    let perturbed_grad_norm = slice_norm2(&grad_delta);
    let next = descend(params, &grad_delta, eta_l);
    Ok((
        next,
        StepTelemetry {
            loss,
            grad_norm,
            perturbed_grad_norm,
            applied: true,
        },
    ))
}

fn descend<T: Scalar>(params: &[T], grad: &[T], eta: T) -> Vec<T> {
    params
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p - eta * g)
        .collect()
}
