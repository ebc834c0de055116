//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line on stderr
//! (outside the test harness capture) and the test fails if any criterion
//! does.
//!
//! Full scale by default. `FLOWCI_ACCEPTANCE=smoke` shrinks the Monte Carlo
//! criteria to a quick tier with the wider calibration band.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use flowci::citest::{Direction, TestConfig};
use flowci::depmeasure::{dcov2, ipcov2, MeasureKind};
use flowci::flow::{fit_velocity, integrate_reverse, transport_rows, FlowConfig};
use flowci::oracle::{brute_dcov2, brute_ipcov2, gaussian_transport, LinearGaussianField};
use flowci::simlab::{
    evaluate_transports, gen_convergence, ks_statistic, rejection_rate, replicate_transports, run_experiment,
    SimModel, SimSpec, VelocityMode,
};
use flowci::Dims;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{gaussian_matrix, gradient_gap};

const ALPHA: f64 = 0.05;

fn smoke() -> bool {
    std::env::var("FLOWCI_ACCEPTANCE").is_ok_and(|v| v == "smoke")
}

fn emit(id: u32, pass: bool, elapsed: Duration, detail: String) -> bool {
    let line = format!(
        "[acceptance] criterion {id}: {} ({:.1}s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    // direct write so the line survives output capture
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn fmt_rates(rates: &[f64]) -> String {
    rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
}

fn oracle_transport_exactness() -> bool {
    let start = Instant::now();
    let field = LinearGaussianField::identity();
    let grid: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let mut worst = 0.0f64;
    for &x in &grid {
        for &z in &grid {
            let got = integrate_reverse(&field, &[x], &[z], 100).unwrap()[0];
            worst = worst.max((got - gaussian_transport(x, z)).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(1);
    emit(1, pass, elapsed, format!("max |reverse - (x - z)| = {worst:.2e} on 9x9 grid (tol 1e-4)"))
}

fn learned_flow_accuracy() -> bool {
    let start = Instant::now();
    let (n1, n2) = (2000, 500);
    let gen = gen_convergence(Dims::new(1, 1, 1), n1 + n2, 20261015).unwrap();
    let train: Vec<usize> = (0..n1).collect();
    let test: Vec<usize> = (n1..n1 + n2).collect();
    let (tr, te) = (gen.data.select_rows(&train), gen.data.select_rows(&test));
    let net = fit_velocity(tr.x(), tr.z(), &FlowConfig::default()).unwrap();
    let xi = transport_rows(&net, te.x(), te.z(), 100).unwrap();
    let exact = LinearGaussianField::new(gen.b1.clone()).transport(te.x(), te.z()).unwrap();
    let mse = xi
        .data()
        .iter()
        .zip(exact.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n2 as f64;
    let rmse = mse.sqrt();
    let elapsed = start.elapsed();
    let pass = rmse <= 0.2 && elapsed < Duration::from_secs(120);
    emit(
        2,
        pass,
        elapsed,
        format!("held-out RMSE(xi_hat, X - Z B1) = {rmse:.4} (tol 0.2), n1 = {n1}"),
    )
}

fn dcov_oracle_equivalence() -> bool {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_dc, mut worst_ipc) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        let (p, q) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let u = gaussian_matrix(&mut rng, n, p);
        let v = gaussian_matrix(&mut rng, n, q);
        worst_dc = worst_dc.max((dcov2(&u, &v).unwrap() - brute_dcov2(&u, &v).unwrap()).abs());
        worst_ipc = worst_ipc.max((ipcov2(&u, &v).unwrap() - brute_ipcov2(&u, &v).unwrap()).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst_dc <= 1e-12 && worst_ipc <= 1e-12 && elapsed < Duration::from_secs(10);
    emit(
        3,
        pass,
        elapsed,
        format!("100 datasets: max gap dcov {worst_dc:.1e}, ipcov {worst_ipc:.1e} (tol 1e-12)"),
    )
}

fn gradient_correctness() -> bool {
    let start = Instant::now();
    let gaps: Vec<f64> = (0..20).map(|s| gradient_gap(1000 + s).0).collect();
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(5);
    emit(
        4,
        pass,
        elapsed,
        format!("20 nets: max componentwise relative gap to central differences {worst:.2e} (tol 1e-4)"),
    )
}

fn base_config(splits: usize, width: usize) -> TestConfig {
    TestConfig {
        permutations: 100,
        splits,
        flow: FlowConfig {
            hidden: width,
            ..FlowConfig::default()
        },
        ..TestConfig::default()
    }
}

fn type_one_calibration() -> bool {
    let start = Instant::now();
    let reps = if smoke() { 50 } else { 200 };
    let spec = SimSpec {
        dims: Dims::new(1, 1, 1),
        n: 500,
        ..SimSpec::new(SimModel::Convergence, None, 0.0, reps, 11)
    };
    let res = run_experiment(&spec, &base_config(1, 32), ALPHA, VelocityMode::Learned).unwrap();
    let ks = ks_statistic(&res.p_values).unwrap();
    let (lo, hi) = if smoke() { (0.0, 0.14) } else { (0.02, 0.10) };
    // asymptotic KS critical value at level 0.01
    let crit = 1.628 / (reps as f64).sqrt();
    let elapsed = start.elapsed();
    let in_band = (lo..=hi).contains(&res.rejection_rate);
    let pass = if smoke() {
        in_band && elapsed < Duration::from_secs(600)
    } else {
        in_band && ks < crit
    };
    emit(
        5,
        pass,
        elapsed,
        format!(
            "{reps} reps: rejection rate {:.3} (band [{lo}, {hi}]), KS {ks:.3} (crit {crit:.3})",
            res.rejection_rate
        ),
    )
}

fn monotone(rates: &[f64], slack: f64) -> bool {
    rates.windows(2).all(|w| w[1] >= w[0] - slack)
}

fn power_reproduction() -> bool {
    let start = Instant::now();
    let reps = if smoke() { 30 } else { 100 };
    let psis = [0.0, 0.05, 0.1, 0.15, 0.2];
    let rates: Vec<f64> = psis
        .iter()
        .enumerate()
        .map(|(i, &psi)| {
            let spec = SimSpec::new(SimModel::LowLow, Some(1), psi, reps, 100 + i as u64);
            run_experiment(&spec, &base_config(5, 32), ALPHA, VelocityMode::Learned)
                .unwrap()
                .rejection_rate
        })
        .collect();
    let pass = rates[4] >= 0.85 && (0.5..=0.9).contains(&rates[2]) && monotone(&rates, 0.07);
    emit(
        6,
        pass,
        start.elapsed(),
        format!(
            "{reps} reps, psi {psis:?}: rates {} (need psi=0.2 >= 0.85, psi=0.1 in [0.5, 0.9], monotone +-0.07)",
            fmt_rates(&rates)
        ),
    )
}

/// Criteria 7 and 8 share the learned transports of each replication, so the
/// measure and direction comparisons are paired.
fn univariate_robustness() -> (bool, bool) {
    let start = Instant::now();
    let reps = if smoke() { 30 } else { 100 };
    let psis = [0.0, 0.2, 0.4];
    let cfg = base_config(5, 32);
    let mut dc1 = Vec::new();
    let mut ipc = Vec::new();
    let mut dc2 = Vec::new();
    for (i, &psi) in psis.iter().enumerate() {
        let spec = SimSpec::new(SimModel::Univariate, Some(1), psi, reps, 200 + i as u64);
        let reps = replicate_transports(&spec, &cfg, VelocityMode::Learned).unwrap();
        let rate = |measure, direction| {
            rejection_rate(&evaluate_transports(&reps, 100, measure, direction).unwrap(), ALPHA)
        };
        dc1.push(rate(MeasureKind::DistanceCorrelation, Direction::Dc1));
        ipc.push(rate(MeasureKind::ImprovedProjectionCorrelation, Direction::Dc1));
        dc2.push(rate(MeasureKind::DistanceCorrelation, Direction::Dc2));
    }
    let elapsed = start.elapsed();
    let increasing = |r: &[f64]| monotone(r, 0.07) && r[2] > r[0];
    let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    let pass7 = close(&dc1, &ipc, 0.20) && increasing(&dc1) && increasing(&ipc);
    let pass8 = close(&dc1, &dc2, 0.10);
    (
        emit(
            7,
            pass7,
            elapsed,
            format!(
                "{reps} reps, psi {psis:?}: DC {} vs IPC {} (|diff| <= 0.20, both increasing)",
                fmt_rates(&dc1),
                fmt_rates(&ipc)
            ),
        ),
        emit(
            8,
            pass8,
            elapsed,
            format!(
                "{reps} reps, psi {psis:?}: DC-1 {} vs DC-2 {} (|diff| <= 0.10)",
                fmt_rates(&dc1),
                fmt_rates(&dc2)
            ),
        ),
    )
}

#[test]
fn acceptance() {
    let tier = if smoke() { "smoke" } else { "full" };
    let _ = std::io::stderr().write_all(format!("[acceptance] tier: {tier}\n").as_bytes());
    let mut results = vec![
        oracle_transport_exactness(),
        learned_flow_accuracy(),
        dcov_oracle_equivalence(),
        gradient_correctness(),
        type_one_calibration(),
        power_reproduction(),
    ];
    let (r7, r8) = univariate_robustness();
    results.extend([r7, r8]);
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    let _ = std::io::stderr().write_all(
        format!("[acceptance] {}/{} criteria passed\n", results.len() - failed.len(), results.len()).as_bytes(),
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
