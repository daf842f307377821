use std::io;

use pairwise_consensus::cli::{run, SEED_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let env_seed = std::env::var(SEED_ENV).ok();
    let code = run(
        std::env::args_os(),
        env_seed.as_deref(),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    );
    std::process::exit(code);
}
