//! Client drift: the empirical drift term, its theoretical upper bound, and
//! estimation of the constants the bound depends on.
//!
//! `Γ = (1/(K·N)) Σ_k Σ_i ||θ_{i,k} - θ^t||²`, with `Γ_i` the per-client
//! average over the `K` local steps.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{FedConfig, FederationOutcome, GradientRecord, RoundRecord};
use crate::model::{self, slice_dist2, Batch, MlpArch, ParamVector};
use crate::scalar::Scalar;

/// Overall drift and per-client drift from a table of squared distances.
pub fn empirical_gamma<T: Scalar>(snapshots: &[Vec<T>], k: usize) -> Result<(T, Vec<T>)> {
    if snapshots.is_empty() || k == 0 {
        return Err(Error::MissingRecord("no drift snapshots".into()));
    }
    let kf = T::from_usize_lossy(k);
    let mut gamma_i = Vec::with_capacity(snapshots.len());
    for (i, row) in snapshots.iter().enumerate() {
        if row.len() != k {
            return Err(Error::MissingRecord(format!(
                "client {i} has {} snapshots, expected {k}",
                row.len()
            )));
        }
        gamma_i.push(row.iter().copied().sum::<T>() / kf);
    }
    let gamma = gamma_i.iter().copied().sum::<T>() / T::from_usize_lossy(gamma_i.len());
    Ok((gamma, gamma_i))
}

/// [`empirical_gamma`] over a round record.
pub fn record_gamma(record: &RoundRecord) -> Result<(f64, Vec<f64>)> {
    let k = record.snapshots.first().map_or(0, Vec::len);
    empirical_gamma(&record.snapshots, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants<T> {
    pub beta: T,
    #[serde(rename = "G")]
    pub g: T,
    #[serde(rename = "B")]
    pub b: T,
    pub sigma: T,
    pub epsilon: T,
    pub f_gap: T,
    pub grad_norm: T,
}

impl<T: Scalar> DriftConstants<T> {
    pub fn zero() -> Self {
        Self {
            beta: T::zero(),
            g: T::zero(),
            b: T::one(),
            sigma: T::zero(),
            epsilon: T::zero(),
            f_gap: T::zero(),
            grad_norm: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= T::one()) {
            return Err(Error::Input(format!(
                "B must be at least 1, got {}",
                self.b
            )));
        }
        let named = [
            ("beta", self.beta),
            ("G", self.g),
            ("sigma", self.sigma),
            ("epsilon", self.epsilon),
            ("f_gap", self.f_gap),
            ("grad_norm", self.grad_norm),
        ];
        for (name, v) in named {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(Error::Input(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInput<T> {
    /// Effective step size `K · η_g · η_l`.
    pub eta_tilde: T,
    pub eta_g: T,
    pub k: usize,
    pub n: usize,
    pub convex: bool,
}

impl<T: Scalar> BoundInput<T> {
    pub fn new(eta_l: T, eta_g: T, k: usize, n: usize, convex: bool) -> Self {
        Self {
            eta_tilde: T::from_usize_lossy(k) * eta_g * eta_l,
            eta_g,
            k,
            n,
            convex,
        }
    }
}

/// Upper bound on `Γ` for the convex or non-convex case.
pub fn theoretical_bound<T: Scalar>(c: &DriftConstants<T>, b: &BoundInput<T>) -> Result<T> {
    c.validate()?;
    if !(b.eta_tilde > T::zero() && b.eta_g > T::zero()) || b.k == 0 || b.n == 0 {
        return Err(Error::Input(format!("invalid bound input {b:?}")));
    }
    let four = T::lit(4.0);
    let eta2 = b.eta_tilde * b.eta_tilde;
    let g2 = b.eta_g * b.eta_g;
    let n = T::from_usize_lossy(b.n);
    let nm1 = n - T::one();
    let k = T::from_usize_lossy(b.k);
    let dissimilarity = four * eta2 * c.epsilon * c.epsilon * nm1 * nm1 / (g2 * n * n);
    let variance = T::lit(2.0) * eta2 * c.sigma * c.sigma / (k * g2);
    let head = if b.convex {
        four * eta2 * c.g * c.g / g2 + T::lit(8.0) * c.beta * eta2 * c.b * c.b * c.f_gap / g2
    } else {
        four * eta2 * (c.g * c.g + c.b * c.b * c.grad_norm * c.grad_norm) / g2
    };
    Ok(head + dissimilarity + variance)
}

/// Pooled training objective `F = Σ p_i F_i` on fixed harmonized features.
#[derive(Debug, Clone)]
pub struct PooledObjective {
    pub arch: Arc<MlpArch>,
    pub batches: Vec<Batch<f64>>,
    pub weights: Vec<f64>,
}

impl PooledObjective {
    pub fn value_and_grad(&self, params: &ParamVector<f64>) -> Result<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (b, &p) in self.batches.iter().zip(&self.weights) {
            let (l, g) = model::backward(params, b)?;
            value += p * l;
            for (acc, gi) in grad.iter_mut().zip(g.values()) {
                *acc += p * gi;
            }
        }
        Ok((value, grad))
    }

    pub fn value(&self, params: &ParamVector<f64>) -> Result<f64> {
        let mut value = 0.0;
        for (b, &p) in self.batches.iter().zip(&self.weights) {
            value += p * model::forward_loss(params, b)?;
        }
        Ok(value)
    }
}

/// Result of the long-horizon reference optimization for `F*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMinimum {
    pub f_star: f64,
    pub steps: usize,
    /// Gradient norm at the returned point; the documented tolerance of `f_star`.
    pub final_grad_norm: f64,
}

/// Approximates `F* = min F` by accelerated full-batch gradient descent with
/// backtracking, stopping after `max_steps` or when the gradient norm drops
/// below `grad_tol`.
pub fn reference_minimum(
    objective: &PooledObjective,
    start: &ParamVector<f64>,
    max_steps: usize,
    grad_tol: f64,
) -> Result<ReferenceMinimum> {
    let mut x = start.clone();
    let mut y = start.clone();
    let mut t = 1.0f64;
    let mut lr = 1.0f64;
    let (mut fx, _) = objective.value_and_grad(&x)?;
    let mut best = fx;
    let mut final_grad_norm = f64::INFINITY;
    let mut steps = 0;
    while steps < max_steps {
        let (fy, gy) = objective.value_and_grad(&y)?;
        let gnorm2: f64 = gy.iter().map(|g| g * g).sum();
        final_grad_norm = gnorm2.sqrt();
        if final_grad_norm < grad_tol {
            best = best.min(fy);
            break;
        }
        // backtracking on the sufficient-decrease condition
        let mut candidate;
        let mut fc;
        loop {
            candidate = y.with_values(
                y.values()
                    .iter()
                    .zip(&gy)
                    .map(|(v, g)| v - lr * g)
                    .collect(),
            )?;
            fc = objective.value(&candidate)?;
            if fc <= fy - 0.5 * lr * gnorm2 || lr < 1e-12 {
                break;
            }
            lr *= 0.5;
        }
        // restart momentum when the objective goes up
        let t_next = if fc > fx {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let mom = if fc > fx { 0.0 } else { (t - 1.0) / t_next };
        y = candidate.with_values(
            candidate
                .values()
                .iter()
                .zip(x.values())
                .map(|(c, xo)| c + mom * (c - xo))
                .collect(),
        )?;
        x = candidate;
        fx = fc;
        t = t_next;
        best = best.min(fc);
        lr *= 1.25;
        steps += 1;
    }
    Ok(ReferenceMinimum {
        f_star: best,
        steps,
        final_grad_norm,
    })
}

/// Constants shared by every round plus the per-round `(f_gap, grad_norm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub beta: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub f_star: Option<f64>,
    pub per_round: Vec<RoundConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConstants {
    pub round: usize,
    /// `F(θ^t)` on the round's reference features.
    pub f_value: f64,
    pub f_gap: f64,
    pub grad_norm: f64,
    /// `mean_i ||∇F_i||²`
    pub mean_client_grad_sq: f64,
}

impl ConstantEstimate {
    pub fn for_round(&self, index: usize) -> DriftConstants<f64> {
        let r = &self.per_round[index];
        DriftConstants {
            beta: self.beta,
            g: self.g,
            b: self.b,
            sigma: self.sigma,
            epsilon: self.epsilon,
            f_gap: r.f_gap,
            grad_norm: r.grad_norm,
        }
    }

    /// Re-checks the gradient-dissimilarity assumption at every recorded round.
    pub fn satisfies_dissimilarity(&self) -> bool {
        self.per_round.iter().all(|r| {
            let rhs = self.g * self.g + self.b * self.b * r.grad_norm * r.grad_norm;
            r.mean_client_grad_sq <= rhs * (1.0 + 1e-12) + 1e-15
        })
    }
}

fn weighted_mean_grad(rec: &GradientRecord, weights: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; rec.clients[0].grad.len()];
    for (c, &p) in rec.clients.iter().zip(weights) {
        for (acc, v) in g.iter_mut().zip(&c.grad) {
            *acc += p * v;
        }
    }
    g
}

/// Estimates the drift-bound constants from gradient-recording rounds.
///
/// `f_star` is the reference minimum of the pooled objective (convex mode);
/// it is lowered to the smallest observed `F(θ^t)` if that is smaller, so
/// every `f_gap` is nonnegative.
pub fn estimate_constants(
    history: &[RoundRecord],
    weights: &[f64],
    f_star: Option<f64>,
) -> Result<ConstantEstimate> {
    let mut rounds: Vec<(&RoundRecord, &GradientRecord, &ParamVector<f64>)> = Vec::new();
    for r in history {
        let g = r.gradients.as_ref().ok_or_else(|| {
            Error::MissingRecord(format!("round {} has no gradient record", r.round))
        })?;
        let p = r.global_before.as_ref().ok_or_else(|| {
            Error::MissingRecord(format!("round {} has no global parameters", r.round))
        })?;
        if g.clients.len() != weights.len() || g.clients.is_empty() {
            return Err(Error::MissingRecord(format!(
                "round {} gradient record is incomplete",
                r.round
            )));
        }
        rounds.push((r, g, p));
    }
    if rounds.is_empty() {
        return Err(Error::MissingRecord(
            "no rounds to estimate constants from".into(),
        ));
    }

    let mut epsilon = 0.0f64;
    let mut sigma2 = 0.0f64;
    let mut g2 = 0.0f64;
    let mut full_grads = Vec::with_capacity(rounds.len());
    let mut per_round = Vec::with_capacity(rounds.len());
    for (r, rec, _) in &rounds {
        let n = rec.clients.len();
        for i in 0..n {
            for j in i + 1..n {
                epsilon =
                    epsilon.max(slice_dist2(&rec.clients[i].grad, &rec.clients[j].grad).sqrt());
            }
            sigma2 = sigma2.max(rec.clients[i].minibatch_variance);
        }
        let full = weighted_mean_grad(rec, weights);
        let full_sq: f64 = full.iter().map(|v| v * v).sum();
        let mean_sq = rec
            .clients
            .iter()
            .map(|c| c.grad.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        g2 = g2.max(mean_sq - full_sq);
        let f_value: f64 = rec
            .clients
            .iter()
            .zip(weights)
            .map(|(c, p)| p * c.loss)
            .sum();
        per_round.push(RoundConstants {
            round: r.round,
            f_value,
            f_gap: 0.0,
            grad_norm: full_sq.sqrt(),
            mean_client_grad_sq: mean_sq,
        });
        full_grads.push(full);
    }

    // Smoothness: largest observed gradient Lipschitz ratio over all pairs of
    // recorded models, for the pooled objective and for each client.
    let mut beta = 0.0f64;
    for a in 0..rounds.len() {
        for b in a + 1..rounds.len() {
            let dtheta = slice_dist2(rounds[a].2.values(), rounds[b].2.values()).sqrt();
            if dtheta <= 0.0 {
                continue;
            }
            beta = beta.max(slice_dist2(&full_grads[a], &full_grads[b]).sqrt() / dtheta);
            for (ca, cb) in rounds[a].1.clients.iter().zip(&rounds[b].1.clients) {
                beta = beta.max(slice_dist2(&ca.grad, &cb.grad).sqrt() / dtheta);
            }
        }
    }

    let f_star = f_star.map(|fs| per_round.iter().map(|r| r.f_value).fold(fs, f64::min));
    if let Some(fs) = f_star {
        for r in &mut per_round {
            r.f_gap = (r.f_value - fs).max(0.0);
        }
    }

    Ok(ConstantEstimate {
        beta,
        g: g2.max(0.0).sqrt(),
        b: 1.0,
        sigma: sigma2.sqrt(),
        epsilon,
        f_star,
        per_round,
    })
}

/// Empirical drift against the bound for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundBound {
    pub round: usize,
    pub gamma: f64,
    pub gamma_i: Vec<f64>,
    pub bound: f64,
    pub holds: bool,
}

/// Drift verification of one federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub convex: bool,
    pub eta_tilde: f64,
    pub constants: ConstantEstimate,
    /// Reference optimization behind `F*`; convex models only.
    pub reference: Option<ReferenceMinimum>,
    pub rounds: Vec<RoundBound>,
    pub all_hold: bool,
}

/// Estimates the constants from a gradient-recording run and checks
/// `Γ <= bound` at every round.
///
/// For convex models `F*` comes from [`reference_minimum`] started at the
/// final global model, on every client's training split as seen through the
/// final global amplitude.
pub fn drift_report(
    cfg: &FedConfig,
    outcome: &FederationOutcome,
    reference_steps: usize,
    reference_grad_tol: f64,
) -> Result<DriftReport> {
    let arch = Arc::clone(outcome.final_params.arch());
    let convex = arch.is_convex();
    let reference = if convex {
        let batches = outcome
            .clients
            .iter()
            .map(|c| {
                c.features_for(
                    &c.dataset.train,
                    cfg.algorithm,
                    outcome.global_amplitude.as_ref(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let objective = PooledObjective {
            arch: Arc::clone(&arch),
            batches,
            weights: outcome.weights.clone(),
        };
        Some(reference_minimum(
            &objective,
            &outcome.final_params,
            reference_steps,
            reference_grad_tol,
        )?)
    } else {
        None
    };
    let constants = estimate_constants(
        &outcome.records,
        &outcome.weights,
        reference.map(|r| r.f_star),
    )?;
    let input = BoundInput::new(
        cfg.eta_l,
        cfg.eta_g,
        cfg.steps_per_round(),
        outcome.weights.len(),
        convex,
    );
    let mut rounds = Vec::with_capacity(outcome.records.len());
    for (i, r) in outcome.records.iter().enumerate() {
        let bound = theoretical_bound(&constants.for_round(i), &input)?;
        rounds.push(RoundBound {
            round: r.round,
            gamma: r.gamma,
            gamma_i: r.gamma_i.clone(),
            bound,
            holds: r.gamma <= bound,
        });
    }
    let all_hold = rounds.iter().all(|r| r.holds);
    Ok(DriftReport {
        convex,
        eta_tilde: input.eta_tilde,
        constants,
        reference,
        rounds,
        all_hold,
    })
}

/// `||a + b||² <= (1 + γ)||a||² + (1 + 1/γ)||b||²`.
pub fn lemma_triangle_check<T: Scalar>(a: &[T], b: &[T], gamma: T) -> bool {
    let sq = |v: &[T]| v.iter().map(|&x| x * x).sum::<T>();
    let sum: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x + y).collect();
    let lhs = sq(&sum);
    let rhs = (T::one() + gamma) * sq(a) + (T::one() + T::one() / gamma) * sq(b);
    lhs <= rhs * (T::one() + T::lit(64.0) * T::epsilon())
}

/// `||Σ a_i||² <= n Σ ||a_i||²`.
pub fn lemma_sum_check<T: Scalar>(vectors: &[Vec<T>]) -> bool {
    let Some(first) = vectors.first() else {
        return true;
    };
    let mut total = vec![T::zero(); first.len()];
    for v in vectors {
        for (t, &x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    let lhs: T = total.iter().map(|&x| x * x).sum();
    let rhs = T::from_usize_lossy(vectors.len())
        * vectors
            .iter()
            .map(|v| v.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>();
    lhs <= rhs * (T::one() + T::lit(64.0) * T::epsilon())
}

/// Monte-Carlo check of `E||Σ Ξ_i||² <= ||Σ ξ_i||² + n²σ²`.
///
/// `draws[s][i]` is the `s`-th joint draw of the `i`-th random vector. The
/// means `ξ_i` are the empirical means. The left side is allowed three
/// standard errors of slack.
pub fn lemma_mean_variance_check<T: Scalar>(draws: &[Vec<Vec<T>>], sigma: T) -> bool {
    let s = draws.len();
    if s == 0 || draws[0].is_empty() {
        return true;
    }
    let n = draws[0].len();
    let d = draws[0][0].len();
    let sf = T::from_usize_lossy(s);
    let mut means = vec![vec![T::zero(); d]; n];
    for draw in draws {
        for (m, v) in means.iter_mut().zip(draw) {
            for (a, &x) in m.iter_mut().zip(v) {
                *a += x / sf;
            }
        }
    }
    let mut mean_sum = vec![T::zero(); d];
    for m in &means {
        for (a, &x) in mean_sum.iter_mut().zip(m) {
            *a += x;
        }
    }
    let mean_sum_sq: T = mean_sum.iter().map(|&x| x * x).sum();
    let values: Vec<T> = draws
        .iter()
        .map(|draw| {
            let mut tot = vec![T::zero(); d];
            for v in draw {
                for (a, &x) in tot.iter_mut().zip(v) {
                    *a += x;
                }
            }
            tot.iter().map(|&x| x * x).sum()
        })
        .collect();
    let lhs = values.iter().copied().sum::<T>() / sf;
    let se = if s > 1 {
        let var =
            values.iter().map(|&v| (v - lhs) * (v - lhs)).sum::<T>() / T::from_usize_lossy(s - 1);
        (var / sf).sqrt()
    } else {
        T::zero()
    };
    let nf = T::from_usize_lossy(n);
    let rhs = mean_sum_sq + nf * nf * sigma * sigma;
    let tol = T::lit(1e-12) * (T::one() + rhs.abs());
    lhs <= rhs + T::lit(3.0) * se + tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_zero_when_no_movement() {
        let (g, gi) = empirical_gamma(&[vec![0.0], vec![0.0], vec![0.0]], 1).unwrap();
        assert_eq!(g, 0.0);
        assert_eq!(gi, vec![0.0; 3]);
    }

    #[test]
    fn gamma_mean_of_two_snapshots() {
        let (g, gi) = empirical_gamma(&[vec![1.0, 3.0]], 2).unwrap();
        assert_eq!(g, 2.0);
        assert_eq!(gi, vec![2.0]);
    }

    #[test]
    fn gamma_rejects_incomplete() {
        assert!(matches!(
            empirical_gamma(&[vec![1.0], vec![1.0, 2.0]], 2),
            Err(Error::MissingRecord(_))
        ));
        assert!(empirical_gamma::<f64>(&[], 2).is_err());
    }

    #[test]
    fn gamma_matches_double_loop() {
        let table: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..5)
                    .map(|k| ((i * 7 + k * 3) % 11) as f64 * 0.37)
                    .collect()
            })
            .collect();
        let (g, gi) = empirical_gamma(&table, 5).unwrap();
        let mut total = 0.0;
        for k in 0..5 {
            for row in &table {
                total += row[k];
            }
        }
        assert!((g - total / 20.0).abs() < 1e-14);
        for (i, row) in table.iter().enumerate() {
            assert!((gi[i] - row.iter().sum::<f64>() / 5.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bound_zero_constants() {
        let c = DriftConstants::<f64>::zero();
        let b = BoundInput::new(0.1, 1.0, 5, 4, true);
        assert_eq!(theoretical_bound(&c, &b).unwrap(), 0.0);
    }

    #[test]
    fn bound_single_client_has_no_dissimilarity_term() {
        let c = DriftConstants {
            epsilon: 10.0,
            ..DriftConstants::<f64>::zero()
        };
        let b = BoundInput {
            eta_tilde: 0.5,
            eta_g: 1.0,
            k: 3,
            n: 1,
            convex: false,
        };
        assert_eq!(theoretical_bound(&c, &b).unwrap(), 0.0);
    }

    #[test]
    fn bound_hand_arithmetic_nonconvex() {
        let c: DriftConstants<f64> = DriftConstants {
            beta: 0.0,
            g: 1.0,
            b: 1.0,
            sigma: 0.5,
            epsilon: 0.2,
            f_gap: 0.0,
            grad_norm: 1.0,
        };
        let b = BoundInput {
            eta_tilde: 0.1,
            eta_g: 1.0,
            k: 5,
            n: 4,
            convex: false,
        };
        // 0.08 + 0.0009 + 0.001
        assert!((theoretical_bound(&c, &b).unwrap() - 0.0819).abs() < 1e-15);
    }

    #[test]
    fn bound_hand_arithmetic_convex() {
        let c: DriftConstants<f64> = DriftConstants {
            beta: 2.0,
            g: 1.0,
            b: 1.5,
            sigma: 0.0,
            epsilon: 0.0,
            f_gap: 0.25,
            grad_norm: 0.0,
        };
        let b = BoundInput {
            eta_tilde: 0.2,
            eta_g: 0.5,
            k: 2,
            n: 3,
            convex: true,
        };
        // 4*0.04*1/0.25 + 8*2*0.04*2.25*0.25/0.25 = 0.64 + 1.44
        assert!((theoretical_bound(&c, &b).unwrap() - 2.08).abs() < 1e-12);
    }

    #[test]
    fn bound_rejects_invalid_constants() {
        let c = DriftConstants {
            b: 0.5,
            ..DriftConstants::<f64>::zero()
        };
        assert!(theoretical_bound(&c, &BoundInput::new(0.1, 1.0, 1, 1, false)).is_err());
    }

    #[test]
    fn effective_step_size() {
        let b: BoundInput<f64> = BoundInput::new(0.01, 0.5, 5, 4, false);
        assert!((b.eta_tilde - 0.025).abs() < 1e-12);
    }

    #[test]
    fn triangle_tight_and_cancelling_cases() {
        let a = vec![1.0, -2.0, 0.5];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!(lemma_triangle_check(&a, &neg, 0.3));
        assert!(lemma_triangle_check(&a, &a, 1.0));
        assert!(lemma_sum_check(&[a.clone(), a.clone(), a]));
    }

    #[test]
    fn mean_variance_deterministic_equality() {
        let draw = vec![vec![1.0, 2.0], vec![-0.5, 3.0]];
        let draws = vec![draw.clone(); 10];
        assert!(lemma_mean_variance_check(&draws, 0.0));
    }
}
