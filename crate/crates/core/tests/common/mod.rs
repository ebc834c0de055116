#![allow(dead_code)]

use flowci::{Matrix, VelocityNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Largest componentwise relative gap between the analytic gradient and
/// central differences of the loss, for a random net and batch drawn from
/// `seed`. Components below 1e-6 in magnitude are compared absolutely.
pub fn gradient_gap(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(1..=3);
    let cond = rng.random_range(1..=3);
    let p1 = 2 * rng.random_range(2..=5);
    let dims = [1 + side + cond, p1, p1 / 2, side];
    let mut net = VelocityNet::init(&dims, rng.random()).unwrap();
    // non-zero biases so every parameter is exercised
    let params: Vec<f64> = net
        .parameters()
        .iter()
        .map(|w| {
            let e: f64 = StandardNormal.sample(&mut rng);
            w + 0.1 * e
        })
        .collect();
    net.set_parameters(&params).unwrap();
    let rows = rng.random_range(2..=16);
    let inputs = gaussian_matrix(&mut rng, rows, dims[0]);
    let targets = gaussian_matrix(&mut rng, rows, side);
    let (_, grads) = net.loss_grad(&inputs, &targets).unwrap();
    let analytic = grads.flatten();
    let h = 1e-5;
    let mut probe = net.clone();
    let numeric: Vec<f64> = (0..params.len())
        .map(|k| {
            let mut p = params.clone();
            p[k] += h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss_grad(&inputs, &targets).unwrap().0;
            p[k] -= 2.0 * h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss_grad(&inputs, &targets).unwrap().0;
            (up - down) / (2.0 * h)
        })
        .collect();
    let gap = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max);
    (gap, params.len())
}
