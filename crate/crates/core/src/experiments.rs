//! Monte Carlo grids over `(model, N, D, ε)` with seeded independent trials.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    t_eps_bound_circle_default, t_eps_bound_scalar, t_eps_bound_uniform_init, t_eps_bound_vector,
    BoundValue, VectorBoundInput,
};
use crate::dynamics::{
    init_uniform, run_trajectory, AgentCount, AngularConfiguration, BoxDomain, Configuration,
    Domain, FrameRecorder, IntervalDomain, ModelKind, NoopObserver, Observer, RngStream,
    ScalarConfiguration, TrajectoryOptions, VectorConfiguration,
};
use crate::error::{Error, Result};
use crate::observables::{lyapunov_per_dimension, lyapunov_scalar, ObservableFrame};
use crate::stopping::StoppingPolicy;

/// Cap used when no finite bound below [`BOUND_CAP_LIMIT`] is available.
pub const FALLBACK_CAP: u64 = 100_000_000;
pub const BOUND_CAP_LIMIT: f64 = 1e9;
/// Cap is this multiple of the expected-time bound.
pub const CAP_MULTIPLIER: f64 = 10.0;

pub const DEFAULT_SEED: u64 = 0;

pub fn generator() -> String {
    format!("pcl {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Scalar,
    Box,
    Circle,
}

impl ModelName {
    pub fn kind(self) -> ModelKind {
        match self {
            ModelName::Scalar => ModelKind::Scalar,
            ModelName::Box => ModelKind::Box,
            ModelName::Circle => ModelKind::Circle,
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().name())
    }
}

/// How the `t_eps` column is measured.
///
/// `Lyapunov` stops on `L ≤ 2ε²` (every per-dimension sum for boxes), which
/// implies range ≤ ε. `ExactRange` stops on the range itself. On the circle
/// both mean `γ_max ≥ 2π - ε`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    #[default]
    Lyapunov,
    ExactRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Lyapunov,
    Range,
    Mean,
    GammaMax,
    VectorSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesSpec {
    pub every: u64,
    #[serde(default = "ObservablesSpec::all")]
    pub select: Vec<Observable>,
}

impl ObservablesSpec {
    fn all() -> Vec<Observable> {
        vec![
            Observable::Lyapunov,
            Observable::Range,
            Observable::Mean,
            Observable::GammaMax,
            Observable::VectorSum,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Format::Csv),
            Some("json") => Ok(Format::Json),
            _ => Err(Error::Parse {
                path: path.to_owned(),
                message: "expected a .csv or .json file".into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelName,
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    #[serde(rename = "D", default = "one")]
    pub dim: usize,
    #[serde(default = "unit_domain")]
    pub domain: [f64; 2],
    pub trials: usize,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub stopping: StoppingMode,
    /// Fixed initial state, row-major (angles on the circle). Overrides iid draws.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub observables: Option<ObservablesSpec>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

fn one() -> usize {
    1
}

fn unit_domain() -> [f64; 2] {
    [0.0, 1.0]
}

impl ExperimentConfig {
    pub fn new(model: ModelName, n_grid: Vec<usize>, eps_grid: Vec<f64>, trials: usize) -> Self {
        ExperimentConfig {
            model,
            n_grid,
            eps_grid,
            dim: 1,
            domain: unit_domain(),
            trials,
            master_seed: None,
            stopping: StoppingMode::default(),
            initial: None,
            max_steps: None,
            observables: None,
            workers: None,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("`trials` must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("`N_grid` must not be empty".into());
        }
        if self.eps_grid.is_empty() {
            return bad("`eps_grid` must not be empty".into());
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return bad(format!("`N_grid` entries must be at least 2, got {n}"));
        }
        if let Some(&e) = self.eps_grid.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return bad(format!("`eps_grid` entries must be positive, got {e}"));
        }
        match self.model {
            ModelName::Box if self.dim == 0 => return bad("`D` must be at least 1".into()),
            ModelName::Scalar | ModelName::Circle if self.dim != 1 => {
                return bad(format!("`D` applies to the box model only, got {}", self.dim))
            }
            _ => {}
        }
        let [a, b] = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("`domain` needs finite a < b, got [{a}, {b}]"));
        }
        if self.workers == Some(0) {
            return bad("`workers` must be at least 1".into());
        }
        if self.max_steps == Some(0) {
            return bad("`max_steps` must be at least 1".into());
        }
        if let Some(obs) = &self.observables {
            if obs.every == 0 {
                return bad("`observables.every` must be at least 1".into());
            }
        }
        if let Some(init) = &self.initial {
            let n = init.len() / self.dim;
            if init.len() % self.dim != 0 || self.n_grid != [n] {
                return bad(format!(
                    "`initial` holds {} values; with D={} it needs `N_grid` = [{}]",
                    init.len(),
                    self.dim,
                    n
                ));
            }
            self.initial_state()?;
        }
        for &eps in &self.eps_grid {
            for p in self.policies(2, eps) {
                p.validate_for(self.model.kind())
                    .map_err(|e| Error::Config(format!("`eps_grid`: {e}")))?;
            }
        }
        Ok(())
    }

    fn initial_state(&self) -> Result<Option<Configuration>> {
        let Some(values) = &self.initial else {
            return Ok(None);
        };
        let state = match self.model {
            ModelName::Scalar => Configuration::Scalar(ScalarConfiguration::new(values.clone())?),
            ModelName::Box => {
                Configuration::Vector(VectorConfiguration::new(values.clone(), self.dim)?)
            }
            ModelName::Circle => {
                Configuration::Angular(AngularConfiguration::from_unnormalized(values.clone())?)
            }
        };
        Ok(Some(state))
    }

    fn domain(&self) -> Result<Domain> {
        let [a, b] = self.domain;
        Ok(match self.model {
            ModelName::Scalar => Domain::Interval(IntervalDomain::new(a, b)?),
            ModelName::Box => Domain::Box(BoxDomain::new(a, b, self.dim)?),
            ModelName::Circle => Domain::Circle,
        })
    }

    /// Policies in column order: `t_eps`, then `t_eps_prime` or `t_hd`.
    fn policies(&self, n: usize, eps: f64) -> Vec<StoppingPolicy> {
        let nf = n as f64;
        let prime = StoppingPolicy::LyapunovThreshold(nf * eps * eps);
        match (self.model, self.stopping) {
            (ModelName::Circle, _) => {
                vec![StoppingPolicy::CircleArc(eps), StoppingPolicy::HalfDisk]
            }
            (_, StoppingMode::ExactRange) => vec![StoppingPolicy::RangeThreshold(eps), prime],
            (ModelName::Scalar, StoppingMode::Lyapunov) => {
                vec![StoppingPolicy::LyapunovThreshold(2.0 * eps * eps), prime]
            }
            (ModelName::Box, StoppingMode::Lyapunov) => {
                vec![StoppingPolicy::VectorLyapunovThreshold(2.0 * eps * eps), prime]
            }
        }
    }

    /// Initial Lyapunov sum of the fixed initial state, if any.
    fn fixed_lyapunov(&self) -> Option<f64> {
        let values = self.initial.as_ref()?;
        Some(match self.model {
            ModelName::Scalar => lyapunov_scalar(values),
            ModelName::Box => {
                let x = VectorConfiguration::new(values.clone(), self.dim).ok()?;
                lyapunov_per_dimension(&x).1
            }
            ModelName::Circle => return None,
        })
    }

    /// Bound on `E(T_ε)` reported next to the estimates.
    pub fn cell_bound(&self, n: usize, eps: f64) -> Option<BoundValue> {
        let [a, b] = self.domain;
        let fixed = self.fixed_lyapunov();
        match self.model {
            ModelName::Scalar => match fixed {
                Some(l0) => t_eps_bound_scalar(n, eps, l0).ok(),
                None => t_eps_bound_uniform_init(n, eps, a, b).ok(),
            },
            ModelName::Box => {
                let input = match fixed {
                    Some(l0) => VectorBoundInput::GivenLyapunov(l0),
                    None => VectorBoundInput::UniformCube { a, b },
                };
                t_eps_bound_vector(n, self.dim, eps, input).ok()
            }
            ModelName::Circle => {
                if self.initial.is_some() {
                    None
                } else {
                    t_eps_bound_circle_default(n, eps).ok()
                }
            }
        }
    }

    /// Step cap for a cell: explicit `max_steps`, else ten times the bound on
    /// the slowest policy when that is finite and below 1e9, else 1e8.
    pub fn cell_cap(&self, n: usize, eps: f64) -> u64 {
        if let Some(cap) = self.max_steps {
            return cap;
        }
        // the slowest event is L ≤ min(2, N)ε², i.e. L ≤ Nε'² with ε' below
        let slow_eps = match (self.model, self.stopping) {
            (ModelName::Circle, _) | (_, StoppingMode::ExactRange) => eps,
            _ => eps * (2.0 / n as f64).sqrt().min(1.0),
        };
        let bound = self.cell_bound(n, slow_eps);
        match bound.map(|b| b.exact.max(b.simplified)) {
            Some(t) if t.is_finite() && CAP_MULTIPLIER * t < BOUND_CAP_LIMIT => {
                (CAP_MULTIPLIER * t).ceil().max(1.0) as u64
            }
            _ => FALLBACK_CAP,
        }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial: SplitMix64 absorbed over the fields in order.
pub fn seed_for_trial(master_seed: u64, model_id: u64, n: u64, eps_index: u64, trial: u64) -> u64 {
    [model_id, n, eps_index, trial]
        .into_iter()
        .fold(splitmix64(master_seed), |h, field| splitmix64(h ^ field))
}

/// Model tag for [`seed_for_trial`]; boxes fold in their dimension.
pub fn model_id(model: ModelKind, dim: usize) -> u64 {
    match model {
        ModelKind::Box => model.id() | ((dim as u64) << 8),
        _ => model.id(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased; `None` below two samples.
    pub std: Option<f64>,
    pub stderr: Option<f64>,
}

/// Sample mean, unbiased standard deviation and standard error.
pub fn aggregate(samples: &[f64]) -> AggregateStats {
    let count = samples.len();
    let mean = if count == 0 {
        f64::NAN
    } else {
        samples.iter().sum::<f64>() / count as f64
    };
    let std = (count >= 2).then(|| {
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (count - 1) as f64).sqrt()
    });
    AggregateStats {
        count,
        mean,
        std,
        stderr: std.map(|s| s / (count as f64).sqrt()),
    }
}

mod float_list {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        if v.is_empty() {
            return s.serialize_none();
        }
        let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        s.serialize_str(&parts.join(";"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(Vec::new());
        };
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(';')
            .map(|p| p.parse::<f64>().map_err(D::Error::custom))
            .collect()
    }
}

/// Optional floats that may be infinite; JSON gets `"inf"` strings.
mod opt_float {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            Some(x) => s.serialize_str(&format!("{x}")),
        }
    }

    struct V;

    impl<'de> Visitor<'de> for V {
        type Value = Option<f64>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number, \"inf\", or nothing")
        }
        fn visit_none<E>(self) -> Result<Self::Value, E> {
            Ok(None)
        }
        fn visit_unit<E>(self) -> Result<Self::Value, E> {
            Ok(None)
        }
        fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
            d.deserialize_any(V)
        }
        fn visit_f64<E>(self, v: f64) -> Result<Self::Value, E> {
            Ok(Some(v))
        }
        fn visit_u64<E>(self, v: u64) -> Result<Self::Value, E> {
            Ok(Some(v as f64))
        }
        fn visit_i64<E>(self, v: i64) -> Result<Self::Value, E> {
            Ok(Some(v as f64))
        }
        fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
            if v.is_empty() {
                return Ok(None);
            }
            v.parse().map(Some).map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        d.deserialize_option(V)
    }
}

/// One trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub model: ModelName,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub epsilon: f64,
    pub trial: usize,
    pub seed: u64,
    pub t_eps: Option<u64>,
    pub t_eps_prime: Option<u64>,
    pub t_hd: Option<u64>,
    pub steps_cap_hit: bool,
    pub final_range: f64,
    pub final_lyapunov: Option<f64>,
    #[serde(with = "float_list")]
    pub final_mean: Vec<f64>,
}

pub const TRIAL_HEADER: &str = "model,N,D,epsilon,trial,seed,t_eps,t_eps_prime,t_hd,steps_cap_hit,final_range,final_lyapunov,final_mean";
pub const AGGREGATE_HEADER: &str = "model,N,D,epsilon,trials,t_hat_mean,t_hat_std,t_hat_stderr,thd_hat_mean,thd_hat_std,bound_exact,bound_simplified";

/// One `(N, ε)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: ModelName,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub t_hat_mean: Option<f64>,
    pub t_hat_std: Option<f64>,
    pub t_hat_stderr: Option<f64>,
    pub thd_hat_mean: Option<f64>,
    pub thd_hat_std: Option<f64>,
    #[serde(with = "opt_float")]
    pub bound_exact: Option<f64>,
    #[serde(with = "opt_float")]
    pub bound_simplified: Option<f64>,
}

/// Observable snapshot of one trial; unselected columns are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub model: ModelName,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub epsilon: f64,
    pub trial: usize,
    pub step: u64,
    pub lyapunov: Option<f64>,
    pub range: Option<f64>,
    #[serde(with = "float_list")]
    pub mean: Vec<f64>,
    pub gamma_max: Option<f64>,
    pub vector_sum_norm: Option<f64>,
}

/// Cells where some trials hit the step cap before every event fired.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub epsilon: f64,
    pub cap: u64,
    pub exhausted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub master_seed: u64,
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
    pub traces: Vec<TraceRow>,
    pub cap_exhausted: Vec<CapReport>,
}

impl ResultTable {
    pub fn cap_exhausted_total(&self) -> usize {
        self.cap_exhausted.iter().map(|c| c.exhausted).sum()
    }

    pub fn aggregate_for(&self, n: usize, eps: f64) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|r| r.n == n && r.epsilon == eps)
    }
}

struct Cell {
    n: usize,
    eps: f64,
    eps_index: usize,
    cap: u64,
    policies: Vec<StoppingPolicy>,
}

struct Outcome {
    row: TrialRow,
    traces: Vec<TraceRow>,
}

fn trace_row(cfg: &ExperimentConfig, cell: &Cell, trial: usize, f: &ObservableFrame) -> TraceRow {
    let sel = &cfg.observables.as_ref().expect("traces requested").select;
    let has = |o| sel.contains(&o);
    TraceRow {
        model: cfg.model,
        n: cell.n,
        d: cfg.dim,
        epsilon: cell.eps,
        trial,
        step: f.step,
        lyapunov: f.lyapunov.filter(|_| has(Observable::Lyapunov)),
        range: has(Observable::Range).then_some(f.range),
        mean: if has(Observable::Mean) {
            f.mean.clone()
        } else {
            Vec::new()
        },
        gamma_max: f.gamma_max.filter(|_| has(Observable::GammaMax)),
        vector_sum_norm: f
            .vector_sum
            .as_ref()
            .map(|v| v.norm)
            .filter(|_| has(Observable::VectorSum)),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    domain: &Domain,
    fixed: Option<&Configuration>,
    cell: &Cell,
    trial: usize,
) -> Result<Outcome> {
    let seed = seed_for_trial(
        cfg.seed(),
        model_id(cfg.model.kind(), cfg.dim),
        cell.n as u64,
        cell.eps_index as u64,
        trial as u64,
    );
    let mut rng = RngStream::from_seed(seed);
    let init = match fixed {
        Some(state) => state.clone(),
        None => init_uniform(&mut rng, domain, AgentCount::new(cell.n)?),
    };
    let options = TrajectoryOptions {
        max_steps: cell.cap,
        observe_every: cfg.observables.as_ref().map(|o| o.every),
    };
    let mut recorder = FrameRecorder::default();
    let observer: &mut dyn Observer = if options.observe_every.is_some() {
        &mut recorder
    } else {
        &mut NoopObserver
    };
    let rec = run_trajectory(&mut rng, init, &cell.policies, options, observer)?;

    let last = ObservableFrame::capture(rec.steps, &rec.final_state);
    let circle = cfg.model == ModelName::Circle;
    let row = TrialRow {
        model: cfg.model,
        n: cell.n,
        d: cfg.dim,
        epsilon: cell.eps,
        trial,
        seed,
        t_eps: rec.stopping.first_hit(0),
        t_eps_prime: if circle { None } else { rec.stopping.first_hit(1) },
        t_hd: if circle { rec.stopping.first_hit(1) } else { None },
        steps_cap_hit: rec.stopping.cap_exhausted,
        final_range: last.range,
        final_lyapunov: last.lyapunov,
        final_mean: last.mean,
    };
    let traces = recorder
        .frames
        .iter()
        .map(|f| trace_row(cfg, cell, trial, f))
        .collect();
    Ok(Outcome { row, traces })
}

fn optional_mean(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None);
    }
    let s = aggregate(values);
    (Some(s.mean), s.std, s.stderr)
}

/// Runs every cell of the grid. Results are identical for any worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let domain = cfg.domain()?;
    let fixed = cfg.initial_state()?;
    let cells: Vec<Cell> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| {
            cfg.eps_grid.iter().enumerate().map(move |(eps_index, &eps)| Cell {
                n,
                eps,
                eps_index,
                cap: cfg.cell_cap(n, eps),
                policies: cfg.policies(n, eps),
            })
        })
        .collect();
    for c in &cells {
        log::debug!("cell N={} eps={} cap={}", c.n, c.eps, c.cap);
    }

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let work = || -> Vec<Result<Outcome>> {
        tasks
            .par_iter()
            .map(|&(c, t)| run_trial(cfg, &domain, fixed.as_ref(), &cells[c], t))
            .collect()
    };
    let outcomes = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut table = ResultTable {
        master_seed: cfg.seed(),
        trials: Vec::with_capacity(tasks.len()),
        aggregates: Vec::with_capacity(cells.len()),
        traces: Vec::new(),
        cap_exhausted: Vec::new(),
    };
    for o in outcomes {
        let o = o?;
        table.trials.push(o.row);
        table.traces.extend(o.traces);
    }

    for (cell, rows) in cells.iter().zip(table.trials.chunks(cfg.trials)) {
        let exhausted = rows.iter().filter(|r| r.steps_cap_hit).count();
        if exhausted > 0 {
            log::warn!(
                "N={} eps={}: {exhausted} of {} trials hit the cap of {} steps",
                cell.n,
                cell.eps,
                rows.len(),
                cell.cap
            );
            table.cap_exhausted.push(CapReport {
                n: cell.n,
                epsilon: cell.eps,
                cap: cell.cap,
                exhausted,
            });
        }
        // trials whose event never fired are left out of the estimates
        let t: Vec<f64> = rows.iter().filter_map(|r| r.t_eps).map(|v| v as f64).collect();
        let thd: Vec<f64> = rows.iter().filter_map(|r| r.t_hd).map(|v| v as f64).collect();
        let (t_mean, t_std, t_err) = optional_mean(&t);
        let (thd_mean, thd_std, _) = optional_mean(&thd);
        let bound = cfg.cell_bound(cell.n, cell.eps);
        table.aggregates.push(AggregateRow {
            model: cfg.model,
            n: cell.n,
            d: cfg.dim,
            epsilon: cell.eps,
            trials: rows.len(),
            t_hat_mean: t_mean,
            t_hat_std: t_std,
            t_hat_stderr: t_err,
            thd_hat_mean: thd_mean,
            thd_hat_std: thd_std,
            bound_exact: bound.map(|b| b.exact),
            bound_simplified: bound.map(|b| b.simplified),
        });
    }
    Ok(table)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::param("path", format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn header_comment(master_seed: u64) -> String {
    format!("# {} master_seed={master_seed}\n", generator())
}

#[derive(Serialize, Deserialize)]
struct JsonRows<R> {
    generator: String,
    master_seed: u64,
    rows: R,
}

/// Renders rows as CSV (with a leading comment line) or JSON.
pub fn render_rows<T: Serialize>(rows: &[T], format: Format, master_seed: u64) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut out = header_comment(master_seed).into_bytes();
            {
                let mut w = csv::Writer::from_writer(&mut out);
                for r in rows {
                    w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
                }
                w.flush().map_err(|e| Error::io("<buffer>", e))?;
            }
            Ok(out)
        }
        Format::Json => {
            let doc = JsonRows {
                generator: generator(),
                master_seed,
                rows,
            };
            let mut out =
                serde_json::to_vec_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Reads rows written by [`render_rows`]; the format follows the extension.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&text, Format::from_path(path)?, path)
}

pub fn parse_rows<T: for<'de> Deserialize<'de>>(
    text: &str,
    format: Format,
    path: &Path,
) -> Result<Vec<T>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_owned(),
        message,
    };
    match format {
        Format::Csv => csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map_err(|e| parse_err(e.to_string())))
            .collect(),
        Format::Json => {
            let doc: JsonRows<Vec<T>> =
                serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
            Ok(doc.rows)
        }
    }
}

/// Writes `trials`, `aggregate` and, when present, `traces` into `dir`.
pub fn persist(table: &ResultTable, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let ext = format.extension();
    let seed = table.master_seed;
    let mut written = Vec::new();
    let mut put = |stem: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(format!("{stem}.{ext}"));
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put("trials", render_rows(&table.trials, format, seed)?)?;
    put("aggregate", render_rows(&table.aggregates, format, seed)?)?;
    if !table.traces.is_empty() {
        put("traces", render_rows(&table.traces, format, seed)?)?;
    }
    Ok(written)
}

/// Preset sizes for the built-in grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Seconds on a laptop.
    Desk,
    /// Minutes; enough for the scaling-law fits.
    Reduced,
    /// The full published grids.
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "reduced" => Ok(Scale::Reduced),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!(
                "unknown scale `{s}` (expected desk, reduced or full)"
            ))),
        }
    }
}

pub const LINE_N_GRID: [usize; 7] = [5, 10, 100, 250, 500, 750, 1000];
pub const LINE_EPS_GRID: [f64; 7] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];
pub const BOX_N_GRID: [usize; 5] = [5, 10, 50, 100, 250];
pub const BOX_EPS_GRID: [f64; 6] = [5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1];
pub const BOX_DIMS: [usize; 3] = [2, 3, 4];

/// The named configurations run by `reproduce-paper`, keyed by a file stem.
///
/// The line grid runs twice: stopping on `L ≤ 2ε²` and on the range itself.
pub fn reproduce_grids(scale: Scale) -> Vec<(String, ExperimentConfig)> {
    let (line_n, line_eps, box_n, box_eps, dims, trials): (
        Vec<usize>,
        Vec<f64>,
        Vec<usize>,
        Vec<f64>,
        Vec<usize>,
        usize,
    ) = match scale {
        Scale::Desk => (
            vec![5, 10, 25, 50],
            vec![1e-3, 1e-2, 1e-1],
            vec![5, 10, 25],
            vec![1e-2, 5e-2, 1e-1],
            vec![2],
            40,
        ),
        Scale::Reduced => (
            vec![5, 10, 100, 250, 500],
            vec![1e-3, 5e-3, 1e-2, 5e-2, 1e-1],
            vec![5, 10, 50],
            vec![1e-2, 5e-2, 1e-1],
            vec![2, 3],
            1000,
        ),
        Scale::Full => (
            LINE_N_GRID.to_vec(),
            LINE_EPS_GRID.to_vec(),
            BOX_N_GRID.to_vec(),
            BOX_EPS_GRID.to_vec(),
            BOX_DIMS.to_vec(),
            1000,
        ),
    };
    let mut range = ExperimentConfig::new(ModelName::Scalar, line_n.clone(), line_eps.clone(), trials);
    range.stopping = StoppingMode::ExactRange;
    let mut out = vec![
        (
            "scalar".to_string(),
            ExperimentConfig::new(ModelName::Scalar, line_n.clone(), line_eps.clone(), trials),
        ),
        ("scalar_range".to_string(), range),
        (
            "circle".to_string(),
            ExperimentConfig::new(ModelName::Circle, line_n, line_eps, trials),
        ),
    ];
    for d in dims {
        let mut cfg = ExperimentConfig::new(ModelName::Box, box_n.clone(), box_eps.clone(), trials);
        cfg.dim = d;
        out.push((format!("box_d{d}"), cfg));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    #[test]
    fn seeds_are_pure_and_distinct() {
        assert_eq!(seed_for_trial(7, 1, 10, 2, 3), seed_for_trial(7, 1, 10, 2, 3));
        assert_ne!(seed_for_trial(7, 1, 10, 2, 3), seed_for_trial(7, 1, 10, 2, 4));
        let mut seen = HashSet::new();
        for n in [5u64, 10, 100, 250, 500, 750, 1000, 50, 2, 3] {
            for model in [1u64, 3, model_id(ModelKind::Box, 2), model_id(ModelKind::Box, 3)] {
                for e in 0..7 {
                    for t in 0..3600 {
                        seen.insert(seed_for_trial(42, model, n, e, t));
                    }
                }
            }
        }
        assert_eq!(seen.len(), 10 * 4 * 7 * 3600);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[1.0, 1.0, 1.0]);
        assert_eq!((s.count, s.mean, s.std), (3, 1.0, Some(0.0)));
        let s = aggregate(&[0.0, 2.0]);
        assert_eq!(s.mean, 1.0);
        assert_relative_eq!(s.std.unwrap(), 2f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s.stderr.unwrap(), 1.0, max_relative = 1e-15);
        let s = aggregate(&[5.0]);
        assert_eq!((s.mean, s.std, s.stderr), (5.0, None, None));
        let a = aggregate(&[3.0, 1.0, 4.0, 1.0, 5.0]);
        let b = aggregate(&[5.0, 4.0, 3.0, 1.0, 1.0]);
        assert_relative_eq!(a.mean, b.mean, max_relative = 1e-15);
        assert_relative_eq!(a.std.unwrap(), b.std.unwrap(), max_relative = 1e-15);
    }

    #[test]
    fn forced_two_agents_needs_a_step() {
        let mut cfg = ExperimentConfig::new(ModelName::Scalar, vec![2], vec![0.5], 50);
        cfg.stopping = StoppingMode::ExactRange;
        cfg.initial = Some(vec![0.0, 1.0]);
        cfg.master_seed = Some(3);
        let table = run_experiment(&cfg).unwrap();
        assert!(table.trials.iter().all(|r| r.t_eps.unwrap() >= 1));
        let t = table.aggregates[0].t_hat_mean.unwrap();
        assert!(t.is_finite() && t >= 1.0);
        assert!(table.cap_exhausted.is_empty());
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"N_grid":[5],"eps_grid":[0.1],"trials":3}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`model`"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"model":"circle","N_grid":[5],"eps_grid":[3.0],"trials":3}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("eps"), "{err}");
        let err = ExperimentConfig::from_json(
            r#"{"model":"scalar","N_grid":[5],"eps_grid":[0.1],"trials":0}"#,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("trials"), "{err}");
    }

    #[test]
    fn caps_follow_the_bound() {
        let cfg = ExperimentConfig::new(ModelName::Scalar, vec![10], vec![0.01], 1);
        let slow = t_eps_bound_uniform_init(10, 0.01 * (0.2f64).sqrt(), 0.0, 1.0).unwrap();
        assert_eq!(cfg.cell_cap(10, 0.01), (10.0 * slow.simplified).ceil() as u64);
        let circle = ExperimentConfig::new(ModelName::Circle, vec![50], vec![0.01], 1);
        assert_eq!(circle.cell_cap(50, 0.01), FALLBACK_CAP);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = ExperimentConfig::new(ModelName::Circle, vec![5, 8], vec![0.1, 0.5], 12);
        cfg.master_seed = Some(11);
        cfg.workers = Some(1);
        let a = run_experiment(&cfg).unwrap();
        cfg.workers = Some(4);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.trials.iter().all(|r| r.t_hd.unwrap() <= r.t_eps.unwrap()));
    }

    #[test]
    fn csv_round_trip() {
        let mut cfg = ExperimentConfig::new(ModelName::Box, vec![4], vec![0.1], 3);
        cfg.dim = 2;
        cfg.observables = Some(ObservablesSpec {
            every: 5,
            select: vec![Observable::Range, Observable::Mean],
        });
        let table = run_experiment(&cfg).unwrap();
        for format in [Format::Csv, Format::Json] {
            let bytes = render_rows(&table.trials, format, 0).unwrap();
            let text = String::from_utf8(bytes).unwrap();
            let back: Vec<TrialRow> = parse_rows(&text, format, Path::new("x")).unwrap();
            assert_eq!(back, table.trials);
            let bytes = render_rows(&table.traces, format, 0).unwrap();
            let text = String::from_utf8(bytes).unwrap();
            let back: Vec<TraceRow> = parse_rows(&text, format, Path::new("x")).unwrap();
            assert_eq!(back, table.traces);
        }
        let csv = String::from_utf8(render_rows(&table.aggregates, Format::Csv, 9).unwrap()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), format!("# pcl {} master_seed=9", env!("CARGO_PKG_VERSION")));
        assert_eq!(lines.next().unwrap(), AGGREGATE_HEADER);
    }

    #[test]
    fn infinite_bounds_survive_json() {
        let row = AggregateRow {
            model: ModelName::Circle,
            n: 100,
            d: 1,
            epsilon: 0.1,
            trials: 1,
            t_hat_mean: Some(1.0),
            t_hat_std: None,
            t_hat_stderr: None,
            thd_hat_mean: None,
            thd_hat_std: None,
            bound_exact: Some(f64::INFINITY),
            bound_simplified: None,
        };
        for format in [Format::Csv, Format::Json] {
            let text = String::from_utf8(render_rows(std::slice::from_ref(&row), format, 0).unwrap()).unwrap();
            let back: Vec<AggregateRow> = parse_rows(&text, format, Path::new("x")).unwrap();
            assert_eq!(back, vec![row.clone()]);
        }
    }
}
