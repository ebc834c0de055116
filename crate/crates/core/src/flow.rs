//! Flow matching and ODE transport.
//!
//! A conditional velocity field `v(t, x, z)` is regressed by least squares on
//! `(t, (1-t) x0 + t x, z) -> x - x0` with Gaussian `x0` and uniform `t`.
//! Integrating the field from `t = 1` down to `t = 0` maps a sample of
//! `X | Z = z` to a standard Gaussian latent; integrating upward inverts it.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTriplet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamConfig, NormStats, OptState, VelocityNet};

/// A conditional velocity field evaluated row-wise at a common time.
pub trait VelocityField: Sync {
    fn side_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    /// `state` and `cond` share row counts; returns `state`-shaped velocities.
    fn eval(&self, t: f64, state: &Matrix, cond: &Matrix) -> Result<Matrix>;
}

impl VelocityField for VelocityNet {
    fn side_dim(&self) -> usize {
        self.output_dim()
    }

    fn cond_dim(&self) -> usize {
        self.norm_stats().cond_mean.len()
    }

    fn eval(&self, t: f64, state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.velocity(t, state, cond)
    }
}

impl<F: VelocityField + ?Sized + Send> VelocityField for Box<F> {
    fn side_dim(&self) -> usize {
        (**self).side_dim()
    }

    fn cond_dim(&self) -> usize {
        (**self).cond_dim()
    }

    fn eval(&self, t: f64, state: &Matrix, cond: &Matrix) -> Result<Matrix> {
        (**self).eval(t, state, cond)
    }
}

/// Training and integration settings for one velocity field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// First hidden width; the second hidden layer has half as many units.
    pub hidden: usize,
    /// Fixed RK4 steps over `[0, 1]`.
    pub steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Redraw `(x0, t)` every epoch; `false` keeps a single draw.
    pub resample_noise_each_epoch: bool,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            steps: 100,
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            resample_noise_each_epoch: true,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden width must be even and at least 2, got {}",
                self.hidden
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("ODE step count must be at least 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// `[1 + d_side + d_cond, p1, p1/2, d_side]`
    pub fn layer_dims(&self, side_dim: usize, cond_dim: usize) -> [usize; 4] {
        [1 + side_dim + cond_dim, self.hidden, self.hidden / 2, side_dim]
    }
}

fn draw_tuples(rows: usize, cols: usize, rng: &mut impl Rng) -> (Matrix, Matrix) {
    let noise: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let times: Vec<f64> = (0..rows).map(|_| rng.random::<f64>()).collect();
    (
        Matrix::from_parts(rows, cols, noise),
        Matrix::from_parts(rows, 1, times),
    )
}

/// Standard Gaussian noise shaped like `side` and one `U[0, 1)` time per row.
pub fn sample_training_tuples(side: &Matrix, cond: &Matrix, seed: u64) -> Result<(Matrix, Matrix)> {
    check_training_data(side, cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_tuples(side.rows(), side.cols(), &mut rng))
}

fn check_training_data(side: &Matrix, cond: &Matrix) -> Result<()> {
    if side.rows() == 0 {
        return Err(Error::Data("no training samples".into()));
    }
    if side.rows() != cond.rows() {
        return Err(Error::Dimension(format!(
            "side has {} rows but condition has {}",
            side.rows(),
            cond.rows()
        )));
    }
    if !side.all_finite() || !cond.all_finite() {
        return Err(Error::Data("training data contains non-finite values".into()));
    }
    Ok(())
}

/// Network inputs `[t, norm(x_t), norm(z)]` and targets `side - noise` for
/// one draw of `(noise, times)`.
pub fn flow_matching_batch(
    net: &VelocityNet,
    side: &Matrix,
    cond: &Matrix,
    noise: &Matrix,
    times: &Matrix,
) -> Result<(Matrix, Matrix)> {
    if noise.shape() != side.shape() || times.rows() != side.rows() || times.cols() != 1 {
        return Err(Error::Dimension("noise/time draws do not match the data".into()));
    }
    let t = times.data();
    let mut interp = Vec::with_capacity(side.data().len());
    let mut target = Vec::with_capacity(side.data().len());
    for i in 0..side.rows() {
        for (&x, &x0) in side.row(i).iter().zip(noise.row(i)) {
            interp.push((1.0 - t[i]) * x0 + t[i] * x);
            target.push(x - x0);
        }
    }
    let interp = Matrix::from_parts(side.rows(), side.cols(), interp);
    let inputs = net.assemble_inputs(t, &interp, cond)?;
    Ok((inputs, Matrix::from_parts(side.rows(), side.cols(), target)))
}

/// Trains a velocity network on `(side, cond)`; see [`fit_velocity_traced`].
pub fn fit_velocity(side: &Matrix, cond: &Matrix, cfg: &FlowConfig) -> Result<VelocityNet> {
    fit_velocity_traced(side, cond, cfg).map(|(net, _)| net)
}

/// Trains a velocity network and returns it with the mean training loss of
/// every epoch.
pub fn fit_velocity_traced(
    side: &Matrix,
    cond: &Matrix,
    cfg: &FlowConfig,
) -> Result<(VelocityNet, Vec<f64>)> {
    cfg.validate()?;
    check_training_data(side, cond)?;
    let n = side.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = VelocityNet::init(&cfg.layer_dims(side.cols(), cond.cols()), rng.next_u64())?;
    net.set_norm_stats(NormStats::fit(side, cond))?;
    let mut opt = OptState::new(
        &net,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );

    let (noise, times) = draw_tuples(n, side.cols(), &mut rng);
    let (mut inputs, mut targets) = flow_matching_batch(&net, side, cond, &noise, &times)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.resample_noise_each_epoch && epoch > 0 {
            let (noise, times) = draw_tuples(n, side.cols(), &mut rng);
            (inputs, targets) = flow_matching_batch(&net, side, cond, &noise, &times)?;
        }
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) =
                net.loss_grad(&inputs.select_rows(batch), &targets.select_rows(batch))?;
            total += loss * batch.len() as f64;
            opt.step(&mut net, &grads)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric { step: epoch });
        }
        history.push(mean);
    }
    Ok((net, history))
}

/// Fixed-step classical RK4 of `dx/dt = v(t, x, z)` from `t_start` to
/// `t_end`, all rows at once.
pub fn integrate_batch<F: VelocityField + ?Sized>(
    field: &F,
    start: &Matrix,
    cond: &Matrix,
    steps: usize,
    t_start: f64,
    t_end: f64,
) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::Argument("ODE step count must be at least 1".into()));
    }
    if start.cols() != field.side_dim() || cond.cols() != field.cond_dim() {
        return Err(Error::Dimension(format!(
            "field maps side {} given condition {}, got {} and {}",
            field.side_dim(),
            field.cond_dim(),
            start.cols(),
            cond.cols()
        )));
    }
    if start.rows() != cond.rows() {
        return Err(Error::Dimension(format!(
            "{} states but {} conditions",
            start.rows(),
            cond.rows()
        )));
    }
    let h = (t_end - t_start) / steps as f64;
    let mut x = start.clone();
    for s in 0..steps {
        let t = t_start + s as f64 * h;
        let k1 = field.eval(t, &x, cond)?;
        let k2 = field.eval(t + 0.5 * h, &x.add_scaled(&k1, 0.5 * h)?, cond)?;
        let k3 = field.eval(t + 0.5 * h, &x.add_scaled(&k2, 0.5 * h)?, cond)?;
        let k4 = field.eval(t + h, &x.add_scaled(&k3, h)?, cond)?;
        let xs = x.data_mut();
        for i in 0..xs.len() {
            xs[i] += h / 6.0 * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
        }
        if !x.all_finite() {
            return Err(Error::Numeric { step: s + 1 });
        }
    }
    Ok(x)
}

fn single_row(v: &[f64]) -> Matrix {
    Matrix::from_parts(1, v.len(), v.to_vec())
}

/// Data point at `t = 1` to its latent at `t = 0`.
pub fn integrate_reverse<F: VelocityField + ?Sized>(
    field: &F,
    side_point: &[f64],
    cond_point: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    integrate_batch(field, &single_row(side_point), &single_row(cond_point), steps, 1.0, 0.0)
        .map(Matrix::into_data)
}

/// Latent at `t = 0` to a data point at `t = 1`.
pub fn integrate_forward<F: VelocityField + ?Sized>(
    field: &F,
    noise_point: &[f64],
    cond_point: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    integrate_batch(field, &single_row(noise_point), &single_row(cond_point), steps, 0.0, 1.0)
        .map(Matrix::into_data)
}

/// Estimated latents of a test fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportOutput {
    pub xi_hat: Matrix,
    pub eta_hat: Matrix,
}

const TRANSPORT_CHUNK: usize = 256;

/// Reverse transport of every row in blocks; rows are independent so the
/// result does not depend on how blocks are scheduled.
pub fn transport_rows<F: VelocityField + ?Sized>(
    field: &F,
    side: &Matrix,
    cond: &Matrix,
    steps: usize,
) -> Result<Matrix> {
    if side.rows() == 0 {
        if steps == 0 {
            return Err(Error::Argument("ODE step count must be at least 1".into()));
        }
        return Ok(Matrix::zeros(0, side.cols()));
    }
    let idx: Vec<usize> = (0..side.rows()).collect();
    let blocks: Vec<Matrix> = idx
        .par_chunks(TRANSPORT_CHUNK)
        .map(|rows| {
            integrate_batch(field, &side.select_rows(rows), &cond.select_rows(rows), steps, 1.0, 0.0)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(side.data().len());
    for b in blocks {
        data.extend(b.into_data());
    }
    Ok(Matrix::from_parts(side.rows(), side.cols(), data))
}

/// `xi_hat` from the X-field and `eta_hat` from the Y-field for each fold row.
pub fn transport_dataset<Fx, Fy>(
    field_x: &Fx,
    field_y: &Fy,
    fold: &DataTriplet,
    steps: usize,
) -> Result<TransportOutput>
where
    Fx: VelocityField + ?Sized,
    Fy: VelocityField + ?Sized,
{
    Ok(TransportOutput {
        xi_hat: transport_rows(field_x, fold.x(), fold.z(), steps)?,
        eta_hat: transport_rows(field_y, fold.y(), fold.z(), steps)?,
    })
}
