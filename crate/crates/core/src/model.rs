//! Multilayer perceptron classifier over flat parameter vectors.
//!
//! Parameters are laid out layer by layer: the `fan_out x fan_in` weight
//! matrix in row-major order, then the `fan_out` biases. With no hidden
//! layers the model is multinomial logistic regression (convex).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Offsets of one dense layer inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weights..self.weights + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.biases..self.biases + self.fan_out
    }
}

impl MlpArch {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Tanh,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dimensions must be positive: {self:?}"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn is_convex(&self) -> bool {
        self.hidden_dims.is_empty()
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weights: offset,
                    biases: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.fan_in * l.fan_out + l.fan_out)
            .sum()
    }
}

/// Flat model parameters tagged with the architecture that gives them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    arch: Arc<MlpArch>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(arch: Arc<MlpArch>, values: Vec<T>) -> Result<Self> {
        let expected = arch.num_params();
        if values.len() != expected {
            return Err(Error::ArchMismatch(format!(
                "{} values for an architecture with {expected} parameters",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        Ok(Self { values, arch })
    }

    pub fn zeros(arch: Arc<MlpArch>) -> Self {
        let n = arch.num_params();
        Self {
            values: vec![T::zero(); n],
            arch,
        }
    }

    pub fn arch(&self) -> &Arc<MlpArch> {
        &self.arch
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values. Length is checked, finiteness is not.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ArchMismatch(format!(
                "{} vs {} values",
                values.len(),
                self.values.len()
            )));
        }
        Ok(Self {
            values,
            arch: Arc::clone(&self.arch),
        })
    }

    fn check_same_arch(&self, other: &Self) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::ArchMismatch(format!(
                "{:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }
}

/// `a·x + y`.
pub fn axpy<T: Scalar>(a: T, x: &ParamVector<T>, y: &ParamVector<T>) -> Result<ParamVector<T>> {
    x.check_same_arch(y)?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(&xi, &yi)| a * xi + yi)
        .collect();
    Ok(ParamVector {
        values,
        arch: Arc::clone(&x.arch),
    })
}

pub fn norm2<T: Scalar>(x: &ParamVector<T>) -> T {
    slice_norm2(&x.values)
}

/// Squared Euclidean distance.
pub fn dist2<T: Scalar>(x: &ParamVector<T>, y: &ParamVector<T>) -> Result<T> {
    x.check_same_arch(y)?;
    Ok(slice_dist2(&x.values, &y.values))
}

pub fn slice_norm2<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

pub fn slice_dist2<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// Glorot-uniform weights and zero biases, drawn from a ChaCha stream keyed by `seed`.
pub fn init_params<T: Scalar>(arch: &Arc<MlpArch>, seed: u64) -> ParamVector<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![T::zero(); arch.num_params()];
    for layer in arch.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weight_range()] {
            *w = T::lit(rng.random_range(-limit..limit));
        }
    }
    ParamVector {
        values,
        arch: Arc::clone(arch),
    }
}

/// Flattened samples with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    dim: usize,
}

impl<T: Scalar> Batch<T> {
    pub fn new(dim: usize, features: Vec<T>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }
}

fn check_inputs<T: Scalar>(params: &ParamVector<T>, batch: &Batch<T>) -> Result<()> {
    let arch = &params.arch;
    if batch.dim != arch.input_dim {
        return Err(Error::Dimension(format!(
            "feature width {} vs model input {}",
            batch.dim, arch.input_dim
        )));
    }
    if let Some(i) = batch.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "non-finite feature at flat index {i}"
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= arch.num_classes) {
        return Err(Error::Input(format!(
            "label {y} out of range for {} classes",
            arch.num_classes
        )));
    }
    Ok(())
}

/// Activations of every layer for one sample; the last entry holds logits.
fn forward_sample<T: Scalar>(values: &[T], layers: &[LayerSlot], x: &[T]) -> Vec<Vec<T>> {
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (li, layer) in layers.iter().enumerate() {
        let input = &acts[li];
        let w = &values[layer.weight_range()];
        let b = &values[layer.bias_range()];
        let last = li + 1 == layers.len();
        let out: Vec<T> = (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z = row
                    .iter()
                    .zip(input)
                    .fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                if last {
                    z
                } else {
                    z.tanh_portable()
                }
            })
            .collect();
        acts.push(out);
    }
    acts
}

/// `log Σ exp(z) - z[label]`, and optionally the softmax.
fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp_portable()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln_portable() + max - logits[label];
    let probs = exps.into_iter().map(|e| e / sum).collect();
    (loss, probs)
}

/// Mean softmax cross-entropy of the batch.
pub fn forward_loss<T: Scalar>(params: &ParamVector<T>, batch: &Batch<T>) -> Result<T> {
    check_inputs(params, batch)?;
    let layers = params.arch.layers();
    let mut total = T::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let acts = forward_sample(&params.values, &layers, batch.row(i));
        total += cross_entropy(acts.last().expect("output layer"), y).0;
    }
    Ok(total / T::from_usize_lossy(batch.len()))
}

/// Loss and its exact gradient.
pub fn backward<T: Scalar>(
    params: &ParamVector<T>,
    batch: &Batch<T>,
) -> Result<(T, ParamVector<T>)> {
    check_inputs(params, batch)?;
    let layers = params.arch.layers();
    let inv_m = T::one() / T::from_usize_lossy(batch.len());
    let mut grad = vec![T::zero(); params.values.len()];
    let mut total = T::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let acts = forward_sample(&params.values, &layers, batch.row(i));
        let (loss, probs) = cross_entropy(acts.last().expect("output layer"), y);
        total += loss;
        // dL/dz for the output layer, already scaled by 1/M
        let mut delta: Vec<T> = probs.into_iter().map(|p| p * inv_m).collect();
        delta[y] -= inv_m;
        for li in (0..layers.len()).rev() {
            let layer = layers[li];
            let input = &acts[li];
            let (gw, rest) = grad[layer.weights..].split_at_mut(layer.fan_in * layer.fan_out);
            let gb = &mut rest[..layer.fan_out];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if li == 0 {
                break;
            }
            let w = &params.values[layer.weight_range()];
            let mut prev = vec![T::zero(); layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, &wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            // input here is the tanh output of the previous layer
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= T::one() - a * a;
            }
            delta = prev;
        }
    }
    let grad = ParamVector {
        values: grad,
        arch: Arc::clone(&params.arch),
    };
    Ok((total * inv_m, grad))
}

/// Predicted class per row (ties go to the lowest index).
pub fn predict<T: Scalar>(params: &ParamVector<T>, batch: &Batch<T>) -> Result<Vec<usize>> {
    check_inputs(params, batch)?;
    let layers = params.arch.layers();
    Ok((0..batch.len())
        .map(|i| {
            let acts = forward_sample(&params.values, &layers, batch.row(i));
            let logits = acts.last().expect("output layer");
            let mut best = 0;
            for (k, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Fraction of correctly classified rows.
pub fn accuracy<T: Scalar>(params: &ParamVector<T>, batch: &Batch<T>) -> Result<f64> {
    let pred = predict(params, batch)?;
    let correct = pred
        .iter()
        .zip(batch.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

/// A differentiable objective over flat parameter slices.
pub trait Objective<T> {
    fn value_and_grad(&self, params: &[T]) -> Result<(T, Vec<T>)>;
}

/// Cross-entropy of a fixed batch under a fixed architecture.
pub struct BatchObjective<'a, T> {
    pub arch: &'a Arc<MlpArch>,
    pub batch: &'a Batch<T>,
}

impl<T: Scalar> Objective<T> for BatchObjective<'_, T> {
    fn value_and_grad(&self, params: &[T]) -> Result<(T, Vec<T>)> {
        let p = ParamVector {
            values: params.to_vec(),
            arch: Arc::clone(self.arch),
        };
        let (loss, grad) = backward(&p, self.batch)?;
        Ok((loss, grad.values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(input: usize, hidden: &[usize], classes: usize) -> Arc<MlpArch> {
        Arc::new(MlpArch::new(input, hidden.to_vec(), classes).unwrap())
    }

    #[test]
    fn parameter_count_and_layout() {
        let a = arch(5, &[3, 4], 2);
        assert_eq!(a.num_params(), 5 * 3 + 3 + 3 * 4 + 4 + 4 * 2 + 2);
        let l = a.layers();
        assert_eq!(l[1].weights, 18);
        assert_eq!(l[2].biases, a.num_params() - 2);
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(MlpArch::new(0, vec![], 2).is_err());
        assert!(MlpArch::new(3, vec![0], 2).is_err());
        assert!(MlpArch::new(3, vec![], 1).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = arch(8, &[6], 3);
        let p: ParamVector<f64> = init_params(&a, 42);
        let q: ParamVector<f64> = init_params(&a, 42);
        assert_eq!(
            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for l in a.layers() {
            assert!(p.values()[l.bias_range()].iter().all(|b| *b == 0.0));
        }
        let r: ParamVector<f64> = init_params(&a, 43);
        assert_ne!(p, r);
    }

    #[test]
    fn init_variance_matches_glorot() {
        // 64 x 64 = 4096 weights; Var U(-l, l) = l^2 / 3 = 2 / (fan_in + fan_out)
        let a = arch(64, &[], 64);
        let p: ParamVector<f64> = init_params(&a, 7);
        let w = &p.values()[a.layers()[0].weight_range()];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 2.0 / 128.0;
        assert!((var - expected).abs() / expected < 0.2, "var {var}");
    }

    #[test]
    fn zero_network_gives_log_classes() {
        let a = arch(4, &[3], 2);
        let p = ParamVector::<f64>::zeros(Arc::clone(&a));
        let b = Batch::new(
            4,
            vec![1.0, -2.0, 3.0, 0.5, 9.0, 8.0, -7.0, 0.0],
            vec![0, 1],
        )
        .unwrap();
        assert!((forward_loss(&p, &b).unwrap() - 2f64.ln()).abs() < 1e-15);
        let a3 = arch(2, &[], 5);
        let p3 = ParamVector::<f64>::zeros(a3);
        let b3 = Batch::new(2, vec![1.0, 1.0], vec![4]).unwrap();
        assert!((forward_loss(&p3, &b3).unwrap() - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_drive_loss_to_zero() {
        let a = arch(1, &[], 2);
        // class 1 logit = 100 * x
        let p = ParamVector::new(Arc::clone(&a), vec![0.0, 100.0, 0.0, 0.0]).unwrap();
        let b = Batch::new(1, vec![1.0], vec![1]).unwrap();
        assert!(forward_loss(&p, &b).unwrap() < 1e-40);
    }

    #[test]
    fn hand_computed_tiny_network() {
        // input 1, hidden 1, 2 classes
        // W1 = 0.5, b1 = 0.1; W2 = [1.0, -1.0], b2 = [0.0, 0.2]
        let a = arch(1, &[1], 2);
        let p = ParamVector::new(Arc::clone(&a), vec![0.5, 0.1, 1.0, -1.0, 0.0, 0.2]).unwrap();
        let b = Batch::new(1, vec![2.0, -1.0], vec![0, 1]).unwrap();
        // sample 1: h = tanh(1.1) = 0.800499; logits (0.800499, -0.600499); loss 0.220220
        // sample 2: h = tanh(-0.4) = -0.379949; logits (-0.379949, 0.579949); loss 0.324206
        let h1 = 1.1f64.tanh();
        let h2 = (-0.4f64).tanh();
        let l1 = (h1.exp() + (0.2 - h1).exp()).ln() - h1;
        let l2 = (h2.exp() + (0.2 - h2).exp()).ln() - (0.2 - h2);
        let expected = 0.5 * (l1 + l2);
        assert!((h1 - 0.800499021760630).abs() < 1e-14);
        assert!((expected - 0.27221296128).abs() < 1e-10, "{expected}");
        assert!((forward_loss(&p, &b).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let a = arch(3, &[4], 3);
        let p: ParamVector<f64> = init_params(&a, 1);
        let f = vec![0.1, 0.2, -0.3, 0.9, -0.5, 0.4];
        let single = Batch::new(3, f.clone(), vec![2, 0]).unwrap();
        let doubled = Batch::new(3, [f.clone(), f].concat(), vec![2, 0, 2, 0]).unwrap();
        let (l1, g1) = backward(&p, &single).unwrap();
        let (l2, g2) = backward(&p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (x, y) in g1.values().iter().zip(g2.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn stationary_point_of_separable_toy() {
        // Logistic regression with one zero feature and balanced labels:
        // zero params is the minimum (gradient of loss w.r.t. biases vanishes at uniform softmax).
        let a = arch(1, &[], 2);
        let p = ParamVector::<f64>::zeros(Arc::clone(&a));
        let b = Batch::new(1, vec![0.0, 0.0], vec![0, 1]).unwrap();
        let (_, g) = backward(&p, &b).unwrap();
        assert!(norm2(&g) < 1e-12);
    }

    #[test]
    fn bias_shift_invariance() {
        let a = arch(3, &[2], 3);
        let p: ParamVector<f64> = init_params(&a, 9);
        let b = Batch::new(3, vec![0.3, -0.2, 0.7, 1.0, 0.0, -1.0], vec![1, 2]).unwrap();
        let mut shifted = p.clone();
        let last = a.layers()[1];
        for v in &mut shifted.values_mut()[last.bias_range()] {
            *v += 17.5;
        }
        let l0 = forward_loss(&p, &b).unwrap();
        let l1 = forward_loss(&shifted, &b).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
    }

    #[test]
    fn vector_helpers() {
        let a = arch(1, &[], 2);
        let x = ParamVector::new(Arc::clone(&a), vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let y = ParamVector::new(Arc::clone(&a), vec![4.0, 6.0, 0.0, 0.0]).unwrap();
        assert_eq!(dist2(&x, &y).unwrap(), 25.0);
        assert_eq!(dist2(&x, &x).unwrap(), 0.0);
        let e = ParamVector::new(Arc::clone(&a), vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(norm2(&e), 1.0);
        assert_eq!(axpy(2.0, &x, &y).unwrap().values(), &[6.0, 10.0, 0.0, 0.0]);
        let other = ParamVector::<f64>::zeros(Arc::new(MlpArch::new(2, vec![], 2).unwrap()));
        assert!(matches!(dist2(&x, &other), Err(Error::ArchMismatch(_))));
    }

    #[test]
    fn input_errors() {
        let a = arch(2, &[], 2);
        let p = ParamVector::<f64>::zeros(a);
        let wrong = Batch::new(3, vec![0.0; 3], vec![0]).unwrap();
        assert!(matches!(forward_loss(&p, &wrong), Err(Error::Dimension(_))));
        let nan = Batch::new(2, vec![f64::NAN, 0.0], vec![0]).unwrap();
        assert!(matches!(backward(&p, &nan), Err(Error::Input(_))));
        assert!(Batch::<f64>::new(2, vec![], vec![]).is_err());
        assert!(Batch::<f64>::new(2, vec![0.0; 3], vec![0]).is_err());
    }
}
