use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, View};
use super::{AdamState, Matrix, NumericError};

/// Weights of a bias-free ReLU network with `num_actions` outputs.
///
/// Layer 0 is `width × input_dim`, hidden layers are `width × width` and the
/// last layer is `num_actions × width`. Outputs are scaled by `√width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Matrix>,
    width: usize,
    num_actions: usize,
}

impl MlpParams {
    /// He-initialized network (`std = √(2 / fan_in)`) of `depth ≥ 2` layers.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        num_actions: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        if input_dim == 0 || width == 0 || num_actions == 0 || depth < 2 {
            return Err(NumericError::Invalid(format!(
                "network shape d={input_dim} g={width} K={num_actions} L={depth}"
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { input_dim } else { width };
            let fan_out = if l + 1 == depth { num_actions } else { width };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            layers.push(Matrix::from_vec(fan_out, fan_in, data)?);
        }
        Ok(Self {
            layers,
            width,
            num_actions,
        })
    }

    /// Network whose outputs are zero (up to rounding) at initialization: the hidden
    /// units come in two identical halves and the last layer reads them with
    /// opposite signs (`W_L = [v, −v]`). Blocks are Gaussian with
    /// `std = √(2 / half)`. Needs an even width.
    pub fn mirrored<R: Rng + ?Sized>(
        input_dim: usize,
        width: usize,
        num_actions: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        if input_dim == 0 || width == 0 || width % 2 != 0 || num_actions == 0 || depth < 2 {
            return Err(NumericError::Invalid(format!(
                "mirrored network needs an even width (d={input_dim} g={width} K={num_actions} L={depth})"
            )));
        }
        let half = width / 2;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { input_dim } else { half };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let layer = if l == 0 {
                let top: Vec<f64> = (0..half * input_dim).map(|_| normal.sample(rng)).collect();
                Matrix::from_vec(width, input_dim, [top.clone(), top].concat())?
            } else if l + 1 < depth {
                let block: Vec<f64> = (0..half * half).map(|_| normal.sample(rng)).collect();
                let mut m = Matrix::zeros(width, width);
                for i in 0..half {
                    for j in 0..half {
                        let w = block[i * half + j];
                        m.set(i, j, w);
                        m.set(half + i, half + j, w);
                    }
                }
                m
            } else {
                let mut m = Matrix::zeros(num_actions, width);
                for a in 0..num_actions {
                    for j in 0..half {
                        let w = normal.sample(rng);
                        m.set(a, j, w);
                        m.set(a, half + j, -w);
                    }
                }
                m
            };
            layers.push(layer);
        }
        Ok(Self {
            layers,
            width,
            num_actions,
        })
    }

    pub fn from_layers(layers: Vec<Matrix>) -> Result<Self, NumericError> {
        if layers.len() < 2 {
            return Err(NumericError::Invalid("network needs at least two layers".into()));
        }
        let width = layers[0].rows();
        if width == 0 {
            return Err(NumericError::Invalid("width must be at least 1".into()));
        }
        for l in 1..layers.len() {
            if layers[l].cols() != layers[l - 1].rows() {
                return Err(NumericError::DimensionMismatch {
                    expected: layers[l - 1].rows(),
                    got: layers[l].cols(),
                });
            }
            if l + 1 < layers.len() && layers[l].rows() != width {
                return Err(NumericError::DimensionMismatch {
                    expected: width,
                    got: layers[l].rows(),
                });
            }
        }
        let num_actions = layers[layers.len() - 1].rows();
        Ok(Self {
            layers,
            width,
            num_actions,
        })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn num_weights(&self) -> usize {
        self.layers.iter().map(|m| m.as_slice().len()).sum()
    }

    fn output_scale(&self) -> f64 {
        (self.width as f64).sqrt()
    }
}

/// A training batch stored as a row-major input matrix.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: Matrix, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Self, NumericError> {
        if actions.len() != inputs.rows() || rewards.len() != inputs.rows() {
            return Err(NumericError::DimensionMismatch {
                expected: inputs.rows(),
                got: actions.len().min(rewards.len()),
            });
        }
        Ok(Self {
            inputs,
            actions,
            rewards,
        })
    }

    pub fn from_triples<'a, I>(dim: usize, triples: I) -> Result<Self, NumericError>
    where
        I: IntoIterator<Item = (&'a [f64], usize, f64)>,
    {
        let mut data = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for (x, a, r) in triples {
            if x.len() != dim {
                return Err(NumericError::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            data.extend_from_slice(x);
            actions.push(a);
            rewards.push(r);
        }
        let n = actions.len();
        Self::new(Matrix::from_vec(n, dim, data)?, actions, rewards)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Single-input forward pass: `(outputs, latent)` where latent is the
/// penultimate ReLU activation.
pub fn mlp_forward(x: &[f64], params: &MlpParams) -> Result<(Vec<f64>, Vec<f64>), NumericError> {
    let mut pre = params.layers[0].matvec(x)?;
    let mut hidden = Vec::new();
    for layer in &params.layers[1..] {
        hidden = pre.iter().map(|v| v.max(0.0)).collect();
        pre = layer.matvec(&hidden)?;
    }
    let scale = params.output_scale();
    pre.iter_mut().for_each(|v| *v *= scale);
    Ok((pre, hidden))
}

struct Activations {
    /// `hidden[l]` is the input to layer `l` (`hidden[0]` = inputs).
    hidden: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

fn forward_batch(params: &MlpParams, inputs: &Matrix) -> Activations {
    let n = inputs.rows();
    let mut hidden: Vec<Vec<f64>> = vec![inputs.as_slice().to_vec()];
    let mut in_cols = inputs.cols();
    let mut outputs = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let out_cols = layer.rows();
        let mut pre = vec![0.0; n * out_cols];
        let h = View::row_major(&hidden[l], n, in_cols);
        gemm(1.0, h, layer.view_t(), 0.0, &mut pre, out_cols);
        if l + 1 == params.layers.len() {
            let scale = params.output_scale();
            pre.iter_mut().for_each(|v| *v *= scale);
            outputs = pre;
        } else {
            pre.iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.push(pre);
        }
        in_cols = out_cols;
    }
    Activations { hidden, outputs }
}

/// Gradient of `Σ_s coeff[s] · f_{action[s]}(x_s)` w.r.t. every weight.
fn backprop(params: &MlpParams, acts: &Activations, actions: &[usize], coeffs: &[f64]) -> Vec<Matrix> {
    let n = actions.len();
    let depth = params.layers.len();
    let k = params.num_actions;
    let scale = params.output_scale();
    let mut delta = vec![0.0; n * k];
    for (s, (&a, &c)) in actions.iter().zip(coeffs).enumerate() {
        delta[s * k + a] = scale * c;
    }
    let mut delta_cols = k;
    let mut grads: Vec<Matrix> = params
        .layers
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    for l in (0..depth).rev() {
        let layer = &params.layers[l];
        let in_cols = layer.cols();
        let d = View::row_major(&delta, n, delta_cols);
        let h = View::row_major(&acts.hidden[l], n, in_cols);
        gemm(1.0, d.t(), h, 0.0, grads[l].as_mut_slice(), in_cols);
        if l > 0 {
            let mut prev = vec![0.0; n * in_cols];
            gemm(1.0, d, layer.view(), 0.0, &mut prev, in_cols);
            for (p, &hv) in prev.iter_mut().zip(&acts.hidden[l]) {
                if hv <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
            delta_cols = in_cols;
        }
    }
    grads
}

fn check_batch(params: &MlpParams, batch: &Batch) -> Result<(), NumericError> {
    if batch.is_empty() {
        return Err(NumericError::Empty);
    }
    if batch.inputs.cols() != params.input_dim() {
        return Err(NumericError::DimensionMismatch {
            expected: params.input_dim(),
            got: batch.inputs.cols(),
        });
    }
    if let Some(&a) = batch.actions.iter().find(|&&a| a >= params.num_actions) {
        return Err(NumericError::Invalid(format!(
            "action {a} out of range for {} outputs",
            params.num_actions
        )));
    }
    Ok(())
}

/// Loss `½ Σ (f_a(x) − r)²` and its gradient, flowing only through the
/// recorded action's output unit.
pub fn mlp_gradient(params: &MlpParams, batch: &Batch) -> Result<(f64, Vec<Matrix>), NumericError> {
    check_batch(params, batch)?;
    let acts = forward_batch(params, &batch.inputs);
    let k = params.num_actions;
    let residuals: Vec<f64> = batch
        .actions
        .iter()
        .zip(&batch.rewards)
        .enumerate()
        .map(|(s, (&a, &r))| acts.outputs[s * k + a] - r)
        .collect();
    let loss = 0.5 * residuals.iter().map(|e| e * e).sum::<f64>();
    let grads = backprop(params, &acts, &batch.actions, &residuals);
    Ok((loss, grads))
}

/// Loss plus the ReLU on/off pattern of every hidden unit over the batch.
pub(crate) fn loss_and_pattern(params: &MlpParams, batch: &Batch) -> (f64, Vec<bool>) {
    let acts = forward_batch(params, &batch.inputs);
    let k = params.num_actions;
    let loss = batch
        .actions
        .iter()
        .zip(&batch.rewards)
        .enumerate()
        .map(|(s, (&a, &r))| 0.5 * (acts.outputs[s * k + a] - r).powi(2))
        .sum();
    let pattern = acts.hidden[1..]
        .iter()
        .flat_map(|h| h.iter().map(|&v| v > 0.0))
        .collect();
    (loss, pattern)
}

/// One Adam step on `batch`; returns the pre-update loss.
pub fn mlp_train_step(
    params: &mut MlpParams,
    adam: &mut AdamState,
    batch: &Batch,
) -> Result<f64, NumericError> {
    let (loss, grads) = mlp_gradient(params, batch)?;
    if !loss.is_finite() {
        return Err(NumericError::Divergence(loss));
    }
    adam.step(&mut params.layers, &grads);
    Ok(loss)
}

/// Gradient of output unit `action` at input `x` w.r.t. every weight.
pub fn output_gradient(params: &MlpParams, x: &[f64], action: usize) -> Result<Vec<Matrix>, NumericError> {
    let inputs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let batch = Batch::new(inputs, vec![action], vec![0.0])?;
    check_batch(params, &batch)?;
    let acts = forward_batch(params, &batch.inputs);
    Ok(backprop(params, &acts, &batch.actions, &[1.0]))
}
