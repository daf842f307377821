//! Closed-form bounds on expected convergence times, exact and simplified.
//!
//! cargo run --example bounds_table

use pairwise_consensus::bounds::{
    contraction_factor, gossip_time_bound, t_eps_bound_circle_default, t_eps_bound_interval,
    t_eps_bound_uniform_init, t_eps_bound_vector, t_hd_bound, VectorBoundInput, DEFAULT_DELTA,
};

fn main() -> pairwise_consensus::Result<()> {
    let eps = 0.01;
    println!("N,contraction,uniform,interval,box_d3,gossip");
    for n in [5usize, 10, 100, 1000] {
        let u = t_eps_bound_uniform_init(n, eps, 0.0, 1.0)?;
        let w = t_eps_bound_interval(n, eps, 0.0, 1.0)?;
        let b = t_eps_bound_vector(n, 3, eps, VectorBoundInput::UniformCube { a: 0.0, b: 1.0 })?;
        let g = gossip_time_bound(n, eps, 0.0, 1.0)?;
        println!(
            "{n},{:.6},{:.1}/{:.1},{:.1}/{:.1},{:.1}/{:.1},{:.1}/{:.1}",
            contraction_factor(n)?,
            u.exact,
            u.simplified,
            w.exact,
            w.simplified,
            b.exact,
            b.simplified,
            g.exact,
            g.simplified
        );
    }

    println!();
    println!("N,log10 half-disk bound,circle eps=0.1");
    for n in [3usize, 4, 10, 50] {
        let hd = t_hd_bound(n, DEFAULT_DELTA)?;
        let c = t_eps_bound_circle_default(n, 0.1)?;
        println!("{n},{:.2},{:e}", hd.log10, c.simplified);
    }
    Ok(())
}
