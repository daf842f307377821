//! Absorption time of the birth-death chain: closed form, direct solve and
//! the large-n asymptote.
//!
//! cargo run --example markov_absorption

use pairwise_consensus::markov::{
    absorption_asymptotic, absorption_closed_form, absorption_solve, ChainParams,
};

fn main() -> pairwise_consensus::Result<()> {
    println!("n,c,closed_form,solve,asymptotic");
    for c in [0.1, 0.3, 0.45] {
        for n in [1usize, 2, 5, 10] {
            println!(
                "{n},{c},{:.6e},{:.6e},{:.6e}",
                absorption_closed_form(n, c)?,
                absorption_solve(n, c)?.e0(),
                absorption_asymptotic(n, c)?
            );
        }
    }

    // the chain behind the half-disk time for a few group sizes
    for agents in [3usize, 4, 6] {
        let p = ChainParams::from_agents(agents)?;
        println!(
            "{agents} agents: n={}, c={:.3e}, E_0={:.4e}",
            p.n,
            p.c,
            absorption_solve(p.n, p.c)?.e0()
        );
    }
    Ok(())
}
