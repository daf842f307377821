//! One trajectory on [0, 1]: Lyapunov sum and range as the agents agree.
//!
//! cargo run --example one_dimensional

use pairwise_consensus::bounds::{expected_lyapunov, t_eps_bound_scalar};
use pairwise_consensus::dynamics::{
    init_uniform, run_trajectory, AgentCount, Domain, FrameRecorder, IntervalDomain, RngStream,
    TrajectoryOptions,
};
use pairwise_consensus::observables::lyapunov_scalar;
use pairwise_consensus::stopping::StoppingPolicy;

fn main() -> pairwise_consensus::Result<()> {
    let n = 10;
    let eps = 0.01;
    let mut rng = RngStream::from_seed(42);
    let init = init_uniform(&mut rng, &Domain::Interval(IntervalDomain::unit()), AgentCount::new(n)?);
    let l0 = match &init {
        pairwise_consensus::dynamics::Configuration::Scalar(x) => lyapunov_scalar(x.values()),
        _ => unreachable!(),
    };

    let policies = [
        StoppingPolicy::RangeThreshold(eps),
        StoppingPolicy::LyapunovThreshold(n as f64 * eps * eps),
    ];
    let opts = TrajectoryOptions {
        observe_every: Some(25),
        ..TrajectoryOptions::default()
    };
    let mut rec = FrameRecorder::default();
    let out = run_trajectory(&mut rng, init, &policies, opts, &mut rec)?;

    println!("{:>6} {:>12} {:>12} {:>10}", "step", "L", "E(L)", "range");
    for f in &rec.frames {
        println!(
            "{:>6} {:>12.6} {:>12.6} {:>10.6}",
            f.step,
            f.lyapunov.unwrap(),
            expected_lyapunov(f.step, l0, n)?,
            f.range
        );
    }

    let bound = t_eps_bound_scalar(n, eps, l0)?;
    println!(
        "T_eps = {}, T'_eps = {}, bound on E(T'_eps) = {:.1} (simplified {:.1})",
        out.stopping.first_hit(0).unwrap(),
        out.stopping.first_hit(1).unwrap(),
        bound.exact,
        bound.simplified
    );
    Ok(())
}
