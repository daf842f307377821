//! The `pcl` command line.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 usage or config
//! error, 3 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{compare_bounds, fit_scaling, fit_thd, thd_series, FitReport, ScalingFits};
use crate::bounds::{
    contraction_factor, edsm_bounds, expected_lyapunov, expected_range_sq_bounds,
    gossip_time_bound, t_eps_bound_circle, t_eps_bound_circle_default, t_eps_bound_interval,
    t_eps_bound_scalar, t_eps_bound_uniform_init, t_eps_bound_vector, t_hd_bound, BoundValue,
    RangeInput, VectorBoundInput, DEFAULT_DELTA,
};
use crate::dynamics::{init_uniform, AgentCount, Configuration, Domain, RngStream};
use crate::error::Error;
use crate::experiments::{
    generator, persist, read_rows, render_rows, reproduce_grids, run_experiment,
    seed_for_trial, write_atomic, AggregateRow, CapReport, ExperimentConfig, Format, ModelName,
    OutputSpec, ResultTable, Scale, DEFAULT_SEED,
};
use crate::markov::{absorption_asymptotic, absorption_closed_form, absorption_solve, ChainParams};
use crate::observables::{
    circle_identity_residuals, one_step_drift_monte_carlo, one_step_drift_closed_form,
};

pub const SEED_ENV: &str = "PCL_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pcl", version, about = "Pairwise consensus simulations, bounds and fits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a JSON-configured grid of trials.
    Simulate(SimulateArgs),
    /// Evaluate one closed-form bound.
    Bounds(BoundsArgs),
    /// Expected absorption time of the birth-death chain.
    Markov(MarkovArgs),
    /// Fit the scaling laws to aggregate tables.
    Fit(FitArgs),
    /// Check the circle identities and drift formula on random configurations.
    CheckIdentities(CheckArgs),
    /// Run the built-in grids and write comparison tables.
    ReproducePaper(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Formula {
    /// One-step factor `1 - (2N+1)/(3N(N-1))`.
    Contraction,
    /// `E(L_k)` from `--l0` after `--k` steps.
    ExpectedLyapunov,
    /// Expected time to `L ≤ Nε²` from `--l0`.
    TEps,
    /// Worst case on `[a, b]`.
    TEpsInterval,
    /// Iid uniform start on `[a, b]`.
    TEpsUniform,
    /// Box `[a, b]^D`; `--l0` for a given start, `--worst-case` for the worst one.
    TEpsVector,
    /// Lower and upper bounds on `E(r_k²)`.
    RangeSq,
    /// ε-averaging time on `[a, b]`.
    Gossip,
    /// Generic contraction bounds from `--alpha`.
    Edsm,
    /// Half-disk time bound.
    THd,
    /// Circle ε-convergence time bound.
    TEpsCircle,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, value_enum)]
    pub formula: Formula,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long)]
    pub l0: Option<f64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Half-disk bound fed to `t-eps-circle`; defaults to `t-hd`.
    #[arg(long)]
    pub b_hd: Option<f64>,
    #[arg(long)]
    pub worst_case: bool,
}

#[derive(Debug, Args)]
pub struct MarkovArgs {
    #[arg(long, requires = "c", conflicts_with = "from_agents")]
    pub n: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Derive `(n, c)` from an agent count.
    #[arg(long)]
    pub from_agents: Option<usize>,
    /// Print the closed form only; fails outside its regime.
    #[arg(long)]
    pub closed_form_only: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Aggregate tables (CSV or JSON).
    #[arg(long, required = true, num_args = 1..)]
    pub aggregate: Vec<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random configurations per agent count.
    #[arg(long, default_value_t = 1000)]
    pub configs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 10, 50])]
    pub n: Vec<usize>,
    /// Configurations per agent count that also get a Monte Carlo drift check.
    #[arg(long, default_value_t = 2)]
    pub drift_configs: usize,
    #[arg(long, default_value_t = 20_000)]
    pub drift_samples: usize,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, default_value = "desk")]
    pub scale: Scale,
    #[arg(long, default_value = "pcl-reproduce")]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// A failed run: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` and runs; `env_seed` is the value of `PCL_SEED`.
pub fn run<I, T>(args: I, env_seed: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, env_seed, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, env_seed: Option<&str>, out: &mut dyn Write) -> Outcome {
    let env_seed = match env_seed {
        Some(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| usage(format!("{SEED_ENV}={s:?} is not a 64-bit unsigned integer")))?,
        ),
        None => None,
    };
    match cmd {
        Command::Simulate(a) => simulate(a, env_seed, out),
        Command::Bounds(a) => bounds(a, out),
        Command::Markov(a) => markov(a, out),
        Command::Fit(a) => fit(a, out),
        Command::CheckIdentities(a) => check_identities(a, env_seed, out),
        Command::ReproducePaper(a) => reproduce(a, env_seed, out),
    }
}

/// `--seed`, then the config file, then the environment, then the default.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<u64>) -> u64 {
    flag.or(config).or(env).unwrap_or(DEFAULT_SEED)
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    generator: String,
    master_seed: u64,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Summary<'a> {
    generator: String,
    master_seed: u64,
    trials: usize,
    cap_exhausted: &'a [CapReport],
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| usage(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn write_run(
    table: &ResultTable,
    cfg: &ExperimentConfig,
    dir: &Path,
    format: Format,
) -> std::result::Result<Vec<PathBuf>, Failure> {
    let mut written = persist(table, dir, format)?;
    let resolved = dir.join("resolved_config.json");
    write_json(
        &resolved,
        &ResolvedConfig {
            generator: generator(),
            master_seed: table.master_seed,
            config: cfg,
        },
    )?;
    written.push(resolved);
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &Summary {
            generator: generator(),
            master_seed: table.master_seed,
            trials: table.trials.len(),
            cap_exhausted: &table.cap_exhausted,
        },
    )?;
    written.push(summary);
    Ok(written)
}

fn simulate(a: SimulateArgs, env_seed: Option<u64>, out: &mut dyn Write) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    cfg.master_seed = Some(resolve_seed(a.seed, cfg.master_seed, env_seed));
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(w) = a.workers {
        cfg.workers = Some(w);
    }
    let mut output = cfg.output.clone().unwrap_or(OutputSpec {
        dir: PathBuf::from("pcl-out"),
        format: Format::Csv,
    });
    if let Some(dir) = a.output {
        output.dir = dir;
    }
    if let Some(f) = a.format {
        output.format = f.into();
    }
    cfg.output = Some(output.clone());
    cfg.validate()
        .map_err(|e| usage(format!("{}: {e}", a.config.display())))?;
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&cfg).unwrap_or_default()
    );

    let table = run_experiment(&cfg)?;
    for path in write_run(&table, &cfg, &output.dir, output.format)? {
        writeln!(out, "{}", path.display())?;
    }
    if !table.cap_exhausted.is_empty() {
        log::warn!(
            "{} trials hit their step cap; they are excluded from the estimates",
            table.cap_exhausted_total()
        );
    }
    Ok(())
}

fn need<T>(v: Option<T>, flag: &str, formula: Formula) -> std::result::Result<T, Failure> {
    v.ok_or_else(|| usage(format!("--{flag} is required for {formula:?}")))
}

fn bounds(a: BoundsArgs, out: &mut dyn Write) -> Outcome {
    let f = a.formula;
    let id = f.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    let mut inputs: Vec<String> = Vec::new();
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let push_bound = |rows: &mut Vec<_>, b: BoundValue| {
        rows.push((id.clone(), format!("{:?}", b.exact), format!("{:?}", b.simplified)));
    };

    let n = || need(a.n, "n", f);
    let eps = || need(a.eps, "eps", f);
    match f {
        Formula::Contraction => {
            let n = n()?;
            inputs.push(format!("n={n}"));
            let v = contraction_factor(n)?;
            rows.push((id.clone(), format!("{v:?}"), format!("{v:?}")));
        }
        Formula::ExpectedLyapunov => {
            let (n, k, l0) = (n()?, need(a.k, "k", f)?, need(a.l0, "l0", f)?);
            inputs.extend([format!("n={n}"), format!("k={k}"), format!("l0={l0}")]);
            let v = expected_lyapunov(k, l0, n)?;
            rows.push((id.clone(), format!("{v:?}"), format!("{v:?}")));
        }
        Formula::TEps => {
            let (n, e, l0) = (n()?, eps()?, need(a.l0, "l0", f)?);
            inputs.extend([format!("n={n}"), format!("eps={e}"), format!("l0={l0}")]);
            push_bound(&mut rows, t_eps_bound_scalar(n, e, l0)?);
        }
        Formula::TEpsInterval | Formula::TEpsUniform | Formula::Gossip => {
            let (n, e) = (n()?, eps()?);
            inputs.extend([
                format!("n={n}"),
                format!("eps={e}"),
                format!("a={}", a.a),
                format!("b={}", a.b),
            ]);
            let b = match f {
                Formula::TEpsInterval => t_eps_bound_interval(n, e, a.a, a.b)?,
                Formula::TEpsUniform => t_eps_bound_uniform_init(n, e, a.a, a.b)?,
                _ => gossip_time_bound(n, e, a.a, a.b)?,
            };
            push_bound(&mut rows, b);
        }
        Formula::TEpsVector => {
            let (n, e) = (n()?, eps()?);
            inputs.extend([format!("n={n}"), format!("d={}", a.d), format!("eps={e}")]);
            let input = match (a.l0, a.worst_case) {
                (Some(l0), _) => {
                    inputs.push(format!("l0={l0}"));
                    VectorBoundInput::GivenLyapunov(l0)
                }
                (None, true) => {
                    inputs.extend([format!("a={}", a.a), format!("b={}", a.b), "worst_case".into()]);
                    VectorBoundInput::WorstCaseCube { a: a.a, b: a.b }
                }
                (None, false) => {
                    inputs.extend([format!("a={}", a.a), format!("b={}", a.b)]);
                    VectorBoundInput::UniformCube { a: a.a, b: a.b }
                }
            };
            push_bound(&mut rows, t_eps_bound_vector(n, a.d, e, input)?);
        }
        Formula::RangeSq => {
            let (n, k) = (n()?, need(a.k, "k", f)?);
            inputs.extend([format!("n={n}"), format!("d={}", a.d), format!("k={k}")]);
            let input = match a.l0 {
                Some(l0) => {
                    inputs.push(format!("l0={l0}"));
                    RangeInput::GivenLyapunov(l0)
                }
                None => {
                    inputs.extend([format!("a={}", a.a), format!("b={}", a.b)]);
                    RangeInput::Uniform { a: a.a, b: a.b }
                }
            };
            let (lo, hi) = expected_range_sq_bounds(k, n, a.d, input)?;
            rows.push((format!("{id}.lower"), format!("{lo:?}"), format!("{lo:?}")));
            rows.push((format!("{id}.upper"), format!("{hi:?}"), format!("{hi:?}")));
        }
        Formula::Edsm => {
            let (alpha, e) = (need(a.alpha, "alpha", f)?, eps()?);
            inputs.extend([format!("alpha={alpha}"), format!("eps={e}")]);
            let (cv, gossip) = edsm_bounds(alpha, e)?;
            rows.push((format!("{id}.cv"), format!("{cv:?}"), format!("{cv:?}")));
            rows.push((format!("{id}.gossip"), format!("{gossip:?}"), format!("{gossip:?}")));
        }
        Formula::THd => {
            let n = n()?;
            inputs.extend([format!("n={n}"), format!("delta={}", a.delta)]);
            let b = t_hd_bound(n, a.delta)?;
            let exact = match b.exact {
                Some(e) => e.to_string(),
                None => format!("{:?}", b.value),
            };
            rows.push((id.clone(), exact, format!("{:?}", b.value)));
        }
        Formula::TEpsCircle => {
            let (n, e) = (n()?, eps()?);
            inputs.extend([format!("n={n}"), format!("eps={e}")]);
            let b = match a.b_hd {
                Some(bhd) => {
                    inputs.push(format!("b_hd={bhd}"));
                    t_eps_bound_circle(n, e, bhd)?
                }
                None => t_eps_bound_circle_default(n, e)?,
            };
            push_bound(&mut rows, b);
        }
    }
    writeln!(out, "formula,inputs,exact,simplified")?;
    let inputs = inputs.join(";");
    for (id, exact, simplified) in rows {
        writeln!(out, "{id},{inputs},{exact},{simplified}")?;
    }
    Ok(())
}

fn markov(a: MarkovArgs, out: &mut dyn Write) -> Outcome {
    let (n, c) = match (a.n, a.c, a.from_agents) {
        (Some(n), Some(c), None) => (n, c),
        (None, _, Some(agents)) => {
            let p = ChainParams::from_agents(agents)?;
            (p.n, p.c)
        }
        _ => return Err(usage("give either --n and --c, or --from-agents")),
    };
    ChainParams::new(n, c)?;
    if a.closed_form_only {
        let closed = absorption_closed_form(n, c)?;
        writeln!(out, "n,c,closed_form")?;
        writeln!(out, "{n},{c:?},{closed:?}")?;
        return Ok(());
    }
    let solve = absorption_solve(n, c)?.e0();
    let closed = absorption_closed_form(n, c).ok();
    let asym = absorption_asymptotic(n, c).ok();
    let gap = closed.map(|v| (v - solve).abs() / solve.abs());
    let show = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    writeln!(out, "n,c,closed_form,solve,asymptotic,relative_gap")?;
    writeln!(
        out,
        "{n},{c:?},{},{solve:?},{},{}",
        show(closed),
        show(asym),
        show(gap)
    )?;
    Ok(())
}

#[derive(Serialize)]
struct EpsFitRecord {
    #[serde(rename = "N")]
    n: usize,
    c: f64,
    #[serde(flatten)]
    report: FitReport,
}

#[derive(Serialize)]
struct GroupReport {
    model: ModelName,
    #[serde(rename = "D")]
    d: usize,
    eps_fits: Vec<EpsFitRecord>,
    offset: Option<FitReport>,
    thd: Option<FitReport>,
    exceeded_cells: usize,
}

#[derive(Serialize)]
struct FitFile {
    generator: String,
    groups: Vec<GroupReport>,
}

fn group_report(model: ModelName, d: usize, rows: &[AggregateRow]) -> std::result::Result<GroupReport, Failure> {
    let ScalingFits { per_n, offset } = fit_scaling(rows)?;
    let thd = thd_series(rows);
    let thd = if thd.len() >= 3 {
        Some(fit_thd(&thd)?.report())
    } else {
        None
    };
    let comparable: Vec<AggregateRow> = rows
        .iter()
        .filter(|r| r.t_hat_mean.is_some() && r.bound_simplified.is_some())
        .cloned()
        .collect();
    let exceeded = compare_bounds(&comparable)?.iter().filter(|c| c.exceeded).count();
    Ok(GroupReport {
        model,
        d,
        eps_fits: per_n
            .into_iter()
            .map(|f| EpsFitRecord {
                n: f.n,
                c: f.c,
                report: f.fit.report(),
            })
            .collect(),
        offset: offset.map(|o| o.report()),
        thd,
        exceeded_cells: exceeded,
    })
}

/// Fit report over aggregate rows, one group per `(model, D)`.
fn fit_rows(rows: &[AggregateRow]) -> std::result::Result<FitFile, Failure> {
    let mut keys: Vec<(ModelName, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.model, r.d)) {
            keys.push((r.model, r.d));
        }
    }
    let groups = keys
        .into_iter()
        .map(|(m, d)| {
            let sub: Vec<AggregateRow> =
                rows.iter().filter(|r| r.model == m && r.d == d).cloned().collect();
            group_report(m, d, &sub)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(FitFile {
        generator: generator(),
        groups,
    })
}

fn fit(a: FitArgs, out: &mut dyn Write) -> Outcome {
    let mut rows: Vec<AggregateRow> = Vec::new();
    for path in &a.aggregate {
        rows.extend(read_rows::<AggregateRow>(path)?);
    }
    if rows.is_empty() {
        return Err(usage("no aggregate rows to fit"));
    }
    let report = fit_rows(&rows)?;
    match a.output {
        Some(path) => {
            write_json(&path, &report)?;
            writeln!(out, "{}", path.display())?;
        }
        None => {
            serde_json::to_writer_pretty(&mut *out, &report).map_err(|e| usage(e.to_string()))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn check_identities(a: CheckArgs, env_seed: Option<u64>, out: &mut dyn Write) -> Outcome {
    let seed = resolve_seed(a.seed, None, env_seed);
    log::info!(
        "check-identities seed={seed} configs={} n={:?} drift_configs={} drift_samples={}",
        a.configs,
        a.n,
        a.drift_configs,
        a.drift_samples
    );
    writeln!(out, "N,configs,max_residual,tolerance,drift_checked,max_drift_z")?;
    for &n in &a.n {
        let agents = AgentCount::new(n)?;
        let tol = 1e-9 * (n * n) as f64;
        let mut worst = 0.0f64;
        let mut worst_z = 0.0f64;
        let drift_checked = a.drift_configs.min(a.configs);
        for c in 0..a.configs {
            let mut rng = RngStream::from_seed(seed_for_trial(seed, 3, n as u64, 0, c as u64));
            let Configuration::Angular(x) = init_uniform(&mut rng, &Domain::Circle, agents) else {
                unreachable!("circle domain yields angles")
            };
            let angles = x.angles();
            let r = circle_identity_residuals(angles).max();
            worst = worst.max(r);
            if !(r < tol) {
                return Err(Failure {
                    code: EXIT_PROPERTY,
                    message: format!(
                        "identity residual {r:e} exceeds {tol:e} for N={n}, angles={}",
                        serde_json::to_string(angles).unwrap_or_default()
                    ),
                });
            }
            if c < drift_checked {
                let est = one_step_drift_monte_carlo(angles, a.drift_samples, &mut rng)?;
                let z = est.z_score(&one_step_drift_closed_form(angles));
                worst_z = worst_z.max(z);
                if !(z <= 4.0) {
                    return Err(Failure {
                        code: EXIT_PROPERTY,
                        message: format!(
                            "drift Monte Carlo off by {z:.2} standard errors for N={n}, angles={}",
                            serde_json::to_string(angles).unwrap_or_default()
                        ),
                    });
                }
            }
        }
        writeln!(out, "{n},{},{worst:e},{tol:e},{drift_checked},{worst_z:.3}", a.configs)?;
    }
    Ok(())
}

fn reproduce(a: ReproduceArgs, env_seed: Option<u64>, out: &mut dyn Write) -> Outcome {
    let seed = resolve_seed(a.seed, None, env_seed);
    let mut exhausted = 0;
    for (stem, mut cfg) in reproduce_grids(a.scale) {
        cfg.master_seed = Some(seed);
        cfg.workers = a.workers;
        let dir = a.output.join(&stem);
        cfg.output = Some(OutputSpec {
            dir: dir.clone(),
            format: Format::Csv,
        });
        log::info!(
            "{stem}: {}",
            serde_json::to_string(&cfg).unwrap_or_default()
        );
        let table = run_experiment(&cfg)?;
        let mut written = write_run(&table, &cfg, &dir, Format::Csv)?;

        let comparable: Vec<AggregateRow> = table
            .aggregates
            .iter()
            .filter(|r| r.t_hat_mean.is_some() && r.bound_simplified.is_some())
            .cloned()
            .collect();
        let comparison = compare_bounds(&comparable)?;
        let path = dir.join("comparison.csv");
        write_atomic(&path, &render_rows(&comparison, Format::Csv, seed)?)?;
        written.push(path);

        let path = dir.join("fits.json");
        write_json(&path, &fit_rows(&table.aggregates)?)?;
        written.push(path);
        for p in written {
            writeln!(out, "{}", p.display())?;
        }
        exhausted += table.cap_exhausted_total();
    }
    if exhausted > 0 {
        return Err(Failure {
            code: EXIT_PROPERTY,
            message: format!("{exhausted} trials hit their step cap; see summary.json files"),
        });
    }
    Ok(())
}
