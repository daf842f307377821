//! Runs a JSON config, writes the tables and reads them back.
//!
//! cargo run --example simulate_config

use pairwise_consensus::experiments::{
    persist, read_rows, run_experiment, AggregateRow, ExperimentConfig, Format,
};

const CONFIG: &str = r#"{
  "model": "circle",
  "N_grid": [5, 20],
  "eps_grid": [0.5, 0.1],
  "trials": 50,
  "master_seed": 2024,
  "observables": {"every": 50, "select": ["gamma_max", "vector_sum"]}
}"#;

fn main() -> pairwise_consensus::Result<()> {
    let cfg = ExperimentConfig::from_json(CONFIG)?;
    let table = run_experiment(&cfg)?;
    let dir = std::env::temp_dir().join("pcl-simulate-config");
    for path in persist(&table, &dir, Format::Csv)? {
        println!("wrote {}", path.display());
    }

    let rows: Vec<AggregateRow> = read_rows(&dir.join("aggregate.csv"))?;
    for r in rows {
        println!(
            "N={} eps={} T_hat={:.1} T_HD={:.1}",
            r.n,
            r.epsilon,
            r.t_hat_mean.unwrap_or(f64::NAN),
            r.thd_hat_mean.unwrap_or(f64::NAN)
        );
    }
    println!("{} trace rows", table.traces.len());
    Ok(())
}
