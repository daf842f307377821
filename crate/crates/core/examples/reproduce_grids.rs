//! Runs the small built-in grids and compares each cell with its bound.
//!
//! cargo run --release --example reproduce_grids

use pairwise_consensus::analysis::compare_bounds;
use pairwise_consensus::experiments::{reproduce_grids, run_experiment, Scale};

fn main() -> pairwise_consensus::Result<()> {
    for (name, cfg) in reproduce_grids(Scale::Desk) {
        let table = run_experiment(&cfg)?;
        let cmp = compare_bounds(&table.aggregates)?;
        let exceeded = cmp.iter().filter(|c| c.exceeded).count();
        let tightest = cmp.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
        println!(
            "{name}: {} cells, {exceeded} above the bound, smallest bound/T ratio {tightest:.2}",
            cmp.len()
        );
    }
    Ok(())
}
