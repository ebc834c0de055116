//! Long-running benchmark: rejection-rate tables for the low-high and
//! high-high models (n = 1000, d_z = 50) at their default widths.
//!
//! ```text
//! cargo run --release --example model_tables -- low-high [reps] [seed]
//! cargo run --release --example model_tables -- high-high 200 1
//! ```
//!
//! Each cell trains 2 flows per split per replication. With 200 replications
//! expect hours per setting on a laptop; use fewer reps for a rough look.

use std::time::Instant;

use flowci::citest::TestConfig;
use flowci::flow::FlowConfig;
use flowci::simlab::{run_experiment, SimModel, SimSpec, VelocityMode};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model: SimModel = args
        .first()
        .map(|s| s.parse().expect("model name"))
        .unwrap_or(SimModel::LowHigh);
    let reps: usize = args.get(1).map(|s| s.parse().expect("reps")).unwrap_or(200);
    let seed: u64 = args.get(2).map(|s| s.parse().expect("seed")).unwrap_or(1);
    let psis: &[f64] = match model {
        SimModel::LowHigh => &[0.0, 0.1, 0.2, 0.3, 0.4],
        SimModel::HighHigh => &[0.0, 0.2, 0.4, 0.6, 0.8],
        other => panic!("{} is covered by the acceptance suite", other.as_str()),
    };
    let cfg = TestConfig {
        splits: model.default_splits(),
        flow: FlowConfig {
            hidden: model.default_width(),
            ..FlowConfig::default()
        },
        ..TestConfig::default()
    };

    println!("model,setting,psi,reps,rejection_rate,seconds");
    for setting in 1..=4u8 {
        for (i, &psi) in psis.iter().enumerate() {
            let start = Instant::now();
            let spec = SimSpec::new(model, Some(setting), psi, reps, seed + 10 * setting as u64 + i as u64);
            let res = run_experiment(&spec, &cfg, 0.05, VelocityMode::Learned).expect("experiment");
            println!(
                "{},{setting},{psi},{reps},{:.3},{:.0}",
                model.as_str(),
                res.rejection_rate,
                start.elapsed().as_secs_f64()
            );
        }
    }
}
