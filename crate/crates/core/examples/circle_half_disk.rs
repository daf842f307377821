//! Headings on the circle: the largest empty gap opens past π, after which
//! the group never leaves the half-disk.
//!
//! cargo run --release --example circle_half_disk

use std::f64::consts::PI;

use pairwise_consensus::dynamics::{
    init_uniform, run_trajectory, AgentCount, Configuration, Domain, RngStream, TrajectoryOptions,
};
use pairwise_consensus::observables::{half_disk_witness, ObservableFrame};
use pairwise_consensus::stopping::StoppingPolicy;

fn main() -> pairwise_consensus::Result<()> {
    let n = 30;
    let mut rng = RngStream::from_seed(7);
    let init = init_uniform(&mut rng, &Domain::Circle, AgentCount::new(n)?);

    let mut trace = Vec::new();
    let mut observer = |f: &ObservableFrame, _: &Configuration| {
        trace.push((f.step, f.gamma_max.unwrap(), f.vector_sum.unwrap().norm));
    };
    let opts = TrajectoryOptions {
        observe_every: Some(100),
        ..TrajectoryOptions::default()
    };
    let policies = [StoppingPolicy::HalfDisk, StoppingPolicy::CircleArc(0.05)];
    let out = run_trajectory(&mut rng, init, &policies, opts, &mut observer)?;

    println!("{:>6} {:>10} {:>8}", "step", "gamma_max", "|S|");
    for (step, g, s) in trace {
        let mark = if g > PI { " *" } else { "" };
        println!("{step:>6} {g:>10.4} {s:>8.3}{mark}");
    }
    let t_hd = out.stopping.first_hit(0).unwrap();
    let t_arc = out.stopping.first_hit(1).unwrap();
    println!("half-disk at step {t_hd}, all headings within 0.05 rad at step {t_arc}");
    if let Configuration::Angular(x) = &out.final_state {
        println!("final witness direction: {:.4}", half_disk_witness(x.angles()).unwrap());
    }
    Ok(())
}
