//! Vector-sum identities and the one-step drift on random headings.
//!
//! cargo run --release --example circle_identities

use std::f64::consts::FRAC_PI_2;

use pairwise_consensus::dynamics::{init_uniform, AgentCount, Configuration, Domain, RngStream};
use pairwise_consensus::observables::{
    circle_identity_residuals, one_step_drift_closed_form, one_step_drift_monte_carlo, vector_sum,
};

fn main() -> pairwise_consensus::Result<()> {
    let two = one_step_drift_closed_form(&[0.0, FRAC_PI_2]);
    println!(
        "two agents a quarter turn apart: drift {:.5}, E|S'|^2 {:.5}",
        two.drift_dot_sum, two.expected_norm_sq
    );

    let mut rng = RngStream::from_seed(11);
    for n in [3usize, 10, 50] {
        let Configuration::Angular(x) = init_uniform(&mut rng, &Domain::Circle, AgentCount::new(n)?) else {
            unreachable!()
        };
        let angles = x.angles();
        let res = circle_identity_residuals(angles);
        let exact = one_step_drift_closed_form(angles);
        let mc = one_step_drift_monte_carlo(angles, 50_000, &mut rng)?;
        println!(
            "N={n}: |S|={:.3} residual={:.1e} drift {:.4} vs {:.4} +- {:.4} (z={:.2})",
            vector_sum(angles).norm,
            res.max(),
            exact.drift_dot_sum,
            mc.drift_dot_sum.mean,
            mc.drift_dot_sum.stderr.unwrap(),
            mc.z_score(&exact)
        );
    }
    Ok(())
}
