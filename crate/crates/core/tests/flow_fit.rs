mod common;

use flowci::citest::permutation_pvalue;
use flowci::flow::{fit_velocity_traced, sample_training_tuples, transport_rows, FlowConfig};
use flowci::oracle::LinearGaussianField;
use flowci::simlab::gen_convergence;
use flowci::{Dims, Matrix, MeasureKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// z ~ N(0, 1), x = z + N(0, 1).
fn example_gaussian(n: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = common::gaussian_matrix(&mut rng, n, 1);
    let e = common::gaussian_matrix(&mut rng, n, 1);
    (z.add_scaled(&e, 1.0).unwrap(), z)
}

#[test]
fn training_beats_zero_predictor() {
    let gen = gen_convergence(Dims::new(1, 1, 1), 2000, 12).unwrap();
    let (x, z) = (gen.data.x(), gen.data.z());
    let (noise, _) = sample_training_tuples(x, z, 5).unwrap();
    let baseline = x
        .data()
        .iter()
        .zip(noise.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / x.rows() as f64;
    let (_, history) = fit_velocity_traced(x, z, &FlowConfig::default()).unwrap();
    let last = *history.last().unwrap();
    assert!(last < baseline, "final loss {last} vs baseline {baseline}");
}

#[test]
fn velocity_at_one_approximates_state() {
    // the exact field at t = 1 is the identity in x
    let (x, z) = example_gaussian(2000, 3);
    let (net, _) = fit_velocity_traced(&x, &z, &FlowConfig::default()).unwrap();
    // grid over the bulk of the joint law: z in [-2, 2], x - z within one sd
    let zs: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let es = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut total = 0.0;
    for &zv in &zs {
        for &e in &es {
            let xv = zv + e;
            let v = net
                .velocity(1.0, &Matrix::new(1, 1, vec![xv]).unwrap(), &Matrix::new(1, 1, vec![zv]).unwrap())
                .unwrap();
            total += (v.get(0, 0) - xv).abs();
        }
    }
    let mae = total / (zs.len() * es.len()) as f64;
    assert!(mae <= 0.2, "mae {mae}");
}

#[test]
fn constant_side_still_trains() {
    let n = 300;
    let x = Matrix::new(n, 1, vec![2.5; n]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = common::gaussian_matrix(&mut rng, n, 1);
    let (net, history) = fit_velocity_traced(&x, &z, &FlowConfig::default()).unwrap();
    assert!(history.iter().all(|l| l.is_finite()));
    // E[side - noise] = 2.5 at any (t, z) when the state carries no information
    let v = net.velocity(0.0, &Matrix::zeros(5, 1), &z.select_rows(&[0, 1, 2, 3, 4])).unwrap();
    for i in 0..5 {
        assert!((v.get(i, 0) - 2.5).abs() < 0.5, "{}", v.get(i, 0));
    }
}

#[test]
fn oracle_latents_are_standard_and_free_of_z() {
    let gen = gen_convergence(Dims::new(1, 1, 1), 5000, 21).unwrap();
    let field = LinearGaussianField::new(gen.b1.clone());
    let xi = transport_rows(&field, gen.data.x(), gen.data.z(), 100).unwrap();
    let (mean, var) = xi.column_moments();
    assert!(mean[0].abs() <= 0.05, "mean {}", mean[0]);
    assert!((var[0] - 1.0).abs() <= 0.08, "var {}", var[0]);
    // 95% threshold: the permutation p-value must exceed 0.05
    let (_, p) = permutation_pvalue(&xi, gen.data.z(), 100, MeasureKind::DistanceCorrelation, 2).unwrap();
    assert!(p > 0.05, "p {p}");
}
