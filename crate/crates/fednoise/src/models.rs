//! Desk-scale trainable models with hand-derived gradients.
//!
//! Parameter layout is layer-major, weights before biases. Within a layer the
//! weight matrix is stored row-major with shape (out, in), followed by the
//! `out` biases. The softmax regressor is a single such layer; the MLP is
//! in -> 200 -> 200 -> classes with ReLU on both hidden layers.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{sample_gaussian, ModelVector, RngStream};

const MLP_HIDDEN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SoftmaxRegression,
    Mlp2x200,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Parameter(format!(
                "model needs input_dim >= 1 and num_classes >= 2, got {input_dim}/{num_classes}"
            )));
        }
        Ok(ModelSpec {
            kind,
            input_dim,
            num_classes,
        })
    }

    /// Layer shapes as (out, in) pairs, in layout order.
    fn layers(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::SoftmaxRegression => vec![(self.num_classes, self.input_dim)],
            ModelKind::Mlp2x200 => vec![
                (MLP_HIDDEN, self.input_dim),
                (MLP_HIDDEN, MLP_HIDDEN),
                (self.num_classes, MLP_HIDDEN),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Small random initialization (scaled by 1/sqrt(fan_in)); biases zero.
    pub fn init_params(&self, rng: &mut RngStream) -> Result<ModelVector> {
        let mut params = vec![0.0; self.param_count()];
        let mut offset = 0;
        for (out, inp) in self.layers() {
            let w = sample_gaussian(out * inp, 0.0, 1.0 / inp as f64, rng)?;
            params[offset..offset + out * inp].copy_from_slice(w.as_slice());
            offset += out * inp + out;
        }
        Ok(ModelVector::from_vec(params))
    }
}

fn check_params(spec: &ModelSpec, params: &ModelVector) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::Shape {
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

// y = W x + b for one layer slice.
fn affine(weights: &[f64], biases: &[f64], input: &[f64], out: &mut [f64]) {
    let inp = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weights[o * inp..(o + 1) * inp];
        *y = biases[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

struct Forward {
    /// Post-activation outputs per layer (last entry: softmax probabilities).
    activations: Vec<Vec<f64>>,
    loss: f64,
}

fn forward_one(spec: &ModelSpec, params: &[f64], x: &[f64], label: usize) -> Forward {
    let layers = spec.layers();
    let mut activations = Vec::with_capacity(layers.len());
    let mut input = x.to_vec();
    let mut offset = 0;
    for (li, &(out, inp)) in layers.iter().enumerate() {
        let weights = &params[offset..offset + out * inp];
        let biases = &params[offset + out * inp..offset + out * inp + out];
        offset += out * inp + out;
        let mut y = vec![0.0; out];
        affine(weights, biases, &input, &mut y);
        if li + 1 < layers.len() {
            for v in y.iter_mut() {
                *v = v.max(0.0); // ReLU
            }
        } else {
            softmax_in_place(&mut y);
        }
        input = y.clone();
        activations.push(y);
    }
    let p = activations.last().unwrap()[label].max(1e-300);
    Forward {
        activations,
        loss: -p.ln(),
    }
}

/// Mean cross-entropy loss and its exact gradient over a batch, flattened in
/// the documented layout.
pub fn forward_loss_grad(
    spec: &ModelSpec,
    params: &ModelVector,
    ds: &Dataset,
    batch: &[usize],
) -> Result<(f64, ModelVector)> {
    check_params(spec, params)?;
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let layers = spec.layers();
    let p = params.as_slice();
    let mut grad = vec![0.0; params.len()];
    let mut total_loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for &idx in batch {
        let x = &ds.features[idx];
        if x.len() != spec.input_dim {
            return Err(Error::Shape {
                expected: spec.input_dim,
                got: x.len(),
            });
        }
        let label = ds.labels[idx];
        let fwd = forward_one(spec, p, x, label);
        total_loss += fwd.loss * scale;

        // Backprop. delta starts as (softmax - onehot) at the output layer.
        let mut delta: Vec<f64> = fwd.activations.last().unwrap().clone();
        delta[label] -= 1.0;

        let mut layer_offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(out, inp) in &layers {
            layer_offsets.push(offset);
            offset += out * inp + out;
        }

        for li in (0..layers.len()).rev() {
            let (out, inp) = layers[li];
            let offset = layer_offsets[li];
            let input: &[f64] = if li == 0 {
                x
            } else {
                &fwd.activations[li - 1]
            };
            // Weight and bias gradients.
            for o in 0..out {
                let g = delta[o] * scale;
                let row = &mut grad[offset + o * inp..offset + (o + 1) * inp];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += g * xi;
                }
                grad[offset + out * inp + o] += g;
            }
            // Propagate to the previous layer through W and the ReLU mask.
            if li > 0 {
                let weights = &p[offset..offset + out * inp];
                let mut prev = vec![0.0; inp];
                for o in 0..out {
                    let d = delta[o];
                    let row = &weights[o * inp..(o + 1) * inp];
                    for (pv, w) in prev.iter_mut().zip(row) {
                        *pv += d * w;
                    }
                }
                for (pv, a) in prev.iter_mut().zip(&fwd.activations[li - 1]) {
                    if *a <= 0.0 {
                        *pv = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    Ok((total_loss, ModelVector::from_vec(grad)))
}

/// Fraction of argmax-correct predictions on `test`.
pub fn evaluate(spec: &ModelSpec, params: &ModelVector, test: &Dataset) -> Result<f64> {
    check_params(spec, params)?;
    if test.is_empty() {
        return Err(Error::Parameter("empty test set".into()));
    }
    let mut correct = 0usize;
    for (x, &label) in test.features.iter().zip(&test.labels) {
        let fwd = forward_one(spec, params.as_slice(), x, label);
        let probs = fwd.activations.last().unwrap();
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamPurpose;

    fn toy_dataset(n: usize, dim: usize, classes: usize) -> Dataset {
        let mut rng = RngStream::derive(77, StreamPurpose::DataGen, 0, 0);
        let features = (0..n)
            .map(|_| {
                sample_gaussian(dim, 0.0, 1.0, &mut rng)
                    .unwrap()
                    .into_vec()
            })
            .collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(features, labels, classes).unwrap()
    }

    #[test]
    fn mlp_param_count_on_mnist_shape() {
        let spec = ModelSpec::new(ModelKind::Mlp2x200, 784, 10).unwrap();
        assert_eq!(spec.param_count(), 199_210);
    }

    #[test]
    fn zero_params_balanced_batch_gives_ln_k() {
        let classes = 4;
        let ds = toy_dataset(8, 6, classes);
        let spec = ModelSpec::new(ModelKind::SoftmaxRegression, 6, classes).unwrap();
        let params = ModelVector::zeros(spec.param_count());
        let batch: Vec<usize> = (0..8).collect();
        let (loss, _) = forward_loss_grad(&spec, &params, &ds, &batch).unwrap();
        assert!((loss - (classes as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_is_mean_invariant() {
        let ds = toy_dataset(5, 4, 3);
        let spec = ModelSpec::new(ModelKind::SoftmaxRegression, 4, 3).unwrap();
        let mut rng = RngStream::derive(1, StreamPurpose::ModelInit, 0, 0);
        let params = spec.init_params(&mut rng).unwrap();
        let batch = vec![0, 1, 2];
        let doubled = vec![0, 1, 2, 0, 1, 2];
        let (l1, g1) = forward_loss_grad(&spec, &params, &ds, &batch).unwrap();
        let (l2, g2) = forward_loss_grad(&spec, &params, &ds, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // Central finite differences over a few coordinates, the independent
    // oracle for the analytic gradients.
    fn finite_diff_check(spec: &ModelSpec, seed: u64) {
        let ds = toy_dataset(6, spec.input_dim, spec.num_classes);
        let batch: Vec<usize> = (0..6).collect();
        let mut rng = RngStream::derive(seed, StreamPurpose::ModelInit, 0, 0);
        let params = spec.init_params(&mut rng).unwrap();
        let (_, grad) = forward_loss_grad(spec, &params, &ds, &batch).unwrap();
        let mut coord_rng = RngStream::derive(seed, StreamPurpose::DataGen, 1, 0);
        let h = 1e-5;
        for _ in 0..50 {
            let i = coord_rng.index(params.len());
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let (lp, _) = forward_loss_grad(spec, &plus, &ds, &batch).unwrap();
            let (lm, _) = forward_loss_grad(spec, &minus, &ds, &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.as_slice()[i];
            let denom = g.abs().max(fd.abs()).max(1e-3);
            assert!(
                (g - fd).abs() / denom < 1e-5,
                "coord {i}: analytic {g}, fd {fd}"
            );
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let spec = ModelSpec::new(ModelKind::SoftmaxRegression, 8, 5).unwrap();
        finite_diff_check(&spec, 101);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ModelSpec::new(ModelKind::Mlp2x200, 6, 4).unwrap();
        finite_diff_check(&spec, 202);
    }

    #[test]
    fn small_step_never_increases_loss() {
        let spec = ModelSpec::new(ModelKind::SoftmaxRegression, 5, 3).unwrap();
        let ds = toy_dataset(12, 5, 3);
        let batch: Vec<usize> = (0..12).collect();
        for seed in 0..5 {
            let mut rng = RngStream::derive(seed, StreamPurpose::ModelInit, 0, 0);
            let params = spec.init_params(&mut rng).unwrap();
            let (l0, grad) = forward_loss_grad(&spec, &params, &ds, &batch).unwrap();
            let stepped = params.add(&grad.scale(-1e-4)).unwrap();
            let (l1, _) = forward_loss_grad(&spec, &stepped, &ds, &batch).unwrap();
            assert!(l1 <= l0, "loss rose from {l0} to {l1}");
        }
    }

    #[test]
    fn constant_predictor_scores_one_over_k() {
        let classes = 5;
        let ds = toy_dataset(100, 3, classes);
        let spec = ModelSpec::new(ModelKind::SoftmaxRegression, 3, classes).unwrap();
        // Zero weights, one large bias: every prediction is class 0.
        let mut params = vec![0.0; spec.param_count()];
        params[spec.param_count() - classes] = 10.0;
        let acc = evaluate(&spec, &ModelVector::from_vec(params), &ds).unwrap();
        assert!((acc - 1.0 / classes as f64).abs() < 1e-12);
    }
}
