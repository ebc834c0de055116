//! Two-hidden-layer ReLU network used as a velocity-field regressor, with
//! exact backpropagation for the mean squared loss and an Adam optimizer.
//!
//! Layout: `input (d_in) -> relu(p1) -> relu(p2) -> linear(d_out)`. Weights
//! are stored `fan_in x fan_out` so a batch forward pass is `H W + b`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, Matrix};

/// Floor applied to stored standard deviations.
pub const SD_FLOOR: f64 = 1e-8;

/// One affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out`
    pub weight: Matrix,
    /// `1 x fan_out`
    pub bias: Matrix,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: Matrix::zeros(1, self.bias.cols()),
        }
    }
}

/// Gradients (or optimizer moments) with the same shapes as the network's
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// Flattened in the same order as [`VelocityNet::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Column statistics of the `(side, condition)` training inputs. The time
/// coordinate is never normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub side_mean: Vec<f64>,
    pub side_sd: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_sd: Vec<f64>,
}

impl NormStats {
    /// Mean zero, scale one.
    pub fn identity(side_dim: usize, cond_dim: usize) -> Self {
        Self {
            side_mean: vec![0.0; side_dim],
            side_sd: vec![1.0; side_dim],
            cond_mean: vec![0.0; cond_dim],
            cond_sd: vec![1.0; cond_dim],
        }
    }

    /// Statistics of the given training columns. A column whose standard
    /// deviation falls below [`SD_FLOOR`] keeps unit scale.
    pub fn fit(side: &Matrix, cond: &Matrix) -> Self {
        let floor = |sd: Vec<f64>| -> Vec<f64> {
            sd.into_iter()
                .map(|s| if s < SD_FLOOR { 1.0 } else { s })
                .collect()
        };
        let (side_mean, side_sd) = side.column_moments();
        let (cond_mean, cond_sd) = cond.column_moments();
        Self {
            side_mean,
            side_sd: floor(side_sd),
            cond_mean,
            cond_sd: floor(cond_sd),
        }
    }
}

/// Feed-forward ReLU network `[d_in, p1, p2, d_out]` plus the input
/// normalization it was trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityNet {
    layer_dims: [usize; 4],
    layers: Vec<Layer>,
    norm: NormStats,
}

impl VelocityNet {
    /// He-initialized network: weights `N(0, 2 / fan_in)`, zero biases.
    /// Deterministic in `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let dims: [usize; 4] = layer_dims.try_into().map_err(|_| {
            Error::Config(format!(
                "network needs exactly 4 layer sizes, got {}",
                layer_dims.len()
            ))
        })?;
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("positive scale");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Layer {
                    weight: Matrix::from_parts(fan_in, fan_out, data),
                    bias: Matrix::zeros(1, fan_out),
                }
            })
            .collect();
        let d_out = dims[3];
        let cond_dim = dims[0].saturating_sub(1 + d_out);
        Ok(Self {
            layer_dims: dims,
            layers,
            norm: NormStats::identity(d_out, cond_dim),
        })
    }

    pub fn layer_dims(&self) -> [usize; 4] {
        self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[3]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm_stats(&mut self, norm: NormStats) -> Result<()> {
        if norm.side_mean.len() != self.output_dim()
            || 1 + norm.side_mean.len() + norm.cond_mean.len() != self.input_dim()
        {
            return Err(Error::Dimension(format!(
                "normalization for side {} / condition {} does not fit input width {}",
                norm.side_mean.len(),
                norm.cond_mean.len(),
                self.input_dim()
            )));
        }
        if norm
            .side_sd
            .iter()
            .chain(&norm.cond_sd)
            .any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(Error::Data("standard deviations must be positive".into()));
        }
        self.norm = norm;
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("parameters must be finite".into()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for m in [&mut layer.weight, &mut layer.bias] {
                let len = m.data().len();
                m.data_mut().copy_from_slice(&values[offset..offset + len]);
                offset += len;
            }
        }
        Ok(())
    }

    /// Raw forward pass on already-normalized inputs `(rows, d_in)`.
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        Ok(self.forward_cached(inputs).pop().expect("three layers"))
    }

    /// Mean squared error `(1/rows) sum_i |net(x_i) - y_i|^2` and its exact
    /// gradient.
    pub fn loss_grad(&self, inputs: &Matrix, targets: &Matrix) -> Result<(f64, Gradients)> {
        self.check_inputs(inputs)?;
        if inputs.rows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        if targets.rows() != inputs.rows() || targets.cols() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "targets are {}x{}, expected {}x{}",
                targets.rows(),
                targets.cols(),
                inputs.rows(),
                self.output_dim()
            )));
        }
        let acts = self.forward_cached(inputs);
        let out = &acts[2];
        let n = inputs.rows() as f64;

        let mut loss = 0.0;
        let mut delta = Matrix::zeros(out.rows(), out.cols());
        for ((d, &o), &y) in delta.data_mut().iter_mut().zip(out.data()).zip(targets.data()) {
            let r = o - y;
            loss += r * r;
            *d = 2.0 * r / n;
        }
        loss /= n;

        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        for l in (0..3).rev() {
            let input = if l == 0 { inputs } else { &acts[l - 1] };
            grads[l].weight = input.t_matmul(&delta)?;
            let gb = grads[l].bias.data_mut();
            for i in 0..delta.rows() {
                for (g, &d) in gb.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            if l > 0 {
                // Back through W_l, then through the ReLU of layer l-1.
                let mut prev = delta.matmul_t(&self.layers[l].weight)?;
                for (p, &h) in prev.data_mut().iter_mut().zip(acts[l - 1].data()) {
                    if h <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// Evaluates the velocity at time `t` for each row of `state` (original
    /// coordinates) given the matching rows of `cond`, normalizing inputs with
    /// the stored statistics.
    pub fn velocity(&self, t: f64, state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        let inputs = self.assemble_inputs(&vec![t; state.rows()], state, cond)?;
        self.forward(&inputs)
    }

    /// Builds `[t, (x - mean)/sd, (z - mean)/sd]` rows.
    pub fn assemble_inputs(&self, times: &[f64], state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        let ds = self.norm.side_mean.len();
        let dc = self.norm.cond_mean.len();
        if state.cols() != ds || cond.cols() != dc {
            return Err(Error::Dimension(format!(
                "network expects side {ds} / condition {dc}, got {} / {}",
                state.cols(),
                cond.cols()
            )));
        }
        if state.rows() != cond.rows() || times.len() != state.rows() {
            return Err(Error::Dimension(format!(
                "row counts differ: {} times, {} states, {} conditions",
                times.len(),
                state.rows(),
                cond.rows()
            )));
        }
        let width = 1 + ds + dc;
        let mut data = Vec::with_capacity(state.rows() * width);
        for i in 0..state.rows() {
            data.push(times[i]);
            for ((&x, &m), &s) in state.row(i).iter().zip(&self.norm.side_mean).zip(&self.norm.side_sd) {
                data.push((x - m) / s);
            }
            for ((&z, &m), &s) in cond.row(i).iter().zip(&self.norm.cond_mean).zip(&self.norm.cond_sd) {
                data.push((z - m) / s);
            }
        }
        Ok(Matrix::from_parts(state.rows(), width, data))
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network takes {} inputs, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    /// Post-activation outputs of each layer; the last one is linear.
    fn forward_cached(&self, inputs: &Matrix) -> Vec<Matrix> {
        let mut acts = Vec::with_capacity(3);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { inputs } else { &acts[l - 1] };
            let mut out = Matrix::zeros(input.rows(), layer.weight.cols());
            let bias = layer.bias.data();
            for i in 0..out.rows() {
                out.row_mut(i).copy_from_slice(bias);
            }
            gemm_nn(input, &layer.weight, &mut out);
            if l < 2 {
                out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.data());
        out.extend_from_slice(l.bias.data());
    }
    out
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected first/second moment accumulators.
#[derive(Clone, Debug)]
pub struct OptState {
    first: Vec<Layer>,
    second: Vec<Layer>,
    step: u64,
    config: AdamConfig,
}

impl OptState {
    pub fn new(net: &VelocityNet, config: AdamConfig) -> Self {
        let zeros: Vec<Layer> = net.layers.iter().map(Layer::zeros_like).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One Adam update of `net` in place.
    pub fn step(&mut self, net: &mut VelocityNet, grads: &Gradients) -> Result<()> {
        let shapes_match = grads.layers.len() == net.layers.len()
            && grads.layers.iter().zip(&net.layers).all(|(g, p)| {
                g.weight.shape() == p.weight.shape() && g.bias.shape() == p.bias.shape()
            });
        if !shapes_match || self.first.len() != net.layers.len() {
            return Err(Error::Dimension(
                "gradient shapes do not match the network".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        };
        let layers = net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()));
        for ((p, g), (m, v)) in layers {
            update(p.weight.data_mut(), g.weight.data(), m.weight.data_mut(), v.weight.data_mut());
            update(p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut());
        }
        Ok(())
    }
}
