//! Mean ε-convergence time in boxes of growing dimension against the bound.
//!
//! cargo run --release --example box_dimensions

use pairwise_consensus::experiments::{run_experiment, ExperimentConfig, ModelName, StoppingMode};

fn main() -> pairwise_consensus::Result<()> {
    println!("D,N,epsilon,t_hat,stderr,bound");
    for d in [1usize, 2, 3, 4] {
        let model = if d == 1 { ModelName::Scalar } else { ModelName::Box };
        let mut cfg = ExperimentConfig::new(model, vec![10, 50], vec![0.05], 300);
        cfg.dim = d;
        cfg.master_seed = Some(3);
        cfg.stopping = StoppingMode::ExactRange;
        let table = run_experiment(&cfg)?;
        for row in &table.aggregates {
            println!(
                "{d},{},{},{:.1},{:.2},{:.1}",
                row.n,
                row.epsilon,
                row.t_hat_mean.unwrap_or(f64::NAN),
                row.t_hat_stderr.unwrap_or(f64::NAN),
                row.bound_simplified.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
