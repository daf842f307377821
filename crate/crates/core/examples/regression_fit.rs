//! Fits T ≈ -3 g ln ε + e per N, then e ≈ a N ln N + b N + f across N.
//!
//! cargo run --release --example regression_fit

use pairwise_consensus::analysis::fit_scaling;
use pairwise_consensus::experiments::{run_experiment, ExperimentConfig, ModelName, StoppingMode};

fn main() -> pairwise_consensus::Result<()> {
    let mut cfg = ExperimentConfig::new(
        ModelName::Scalar,
        vec![5, 10, 25, 50, 100],
        vec![1e-3, 1e-2, 1e-1],
        200,
    );
    cfg.master_seed = Some(1);
    cfg.stopping = StoppingMode::ExactRange;
    let table = run_experiment(&cfg)?;
    let fits = fit_scaling(&table.aggregates)?;

    println!("N,c_N,e,r_squared");
    for f in &fits.per_n {
        println!("{},{:.3},{:.1},{:.5}", f.n, f.c, f.e, f.fit.r_squared);
    }
    if let Some(off) = fits.offset {
        let report = off.report();
        println!("offset fit {}: {:?}", report.model, report.coefficients);
        println!("residual sign changes: {}", off.residual_sign_changes());
    }
    Ok(())
}
