//! The three pairwise update rules (interval, box, circle) and seeded
//! trajectories.
//!
//! At every step an unordered pair of distinct agents is drawn uniformly.
//! Both members then independently resample their state uniformly on the
//! set spanned by the pair: the interval between two scalars, the segment
//! between two points, or the shorter arc between two angles.

mod trajectory;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use trajectory::{
    run_trajectory, FrameRecorder, NoopObserver, Observer, TrajectoryOptions, TrialRecord,
};

/// Number of agents, at least two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentCount(usize);

impl AgentCount {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidAgentCount(n, 2));
        }
        Ok(AgentCount(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Number of unordered pairs, N(N-1)/2.
    pub fn pairs(self) -> u64 {
        let n = self.0 as u64;
        n * (n - 1) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalDomain {
    a: f64,
    b: f64,
}

impl IntervalDomain {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidDomain(format!(
                "interval requires finite a < b, got [{a}, {b}]"
            )));
        }
        Ok(IntervalDomain { a, b })
    }

    pub fn unit() -> Self {
        IntervalDomain { a: 0.0, b: 1.0 }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }
}

/// The cube `[a, b]^D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain {
    side: IntervalDomain,
    dim: usize,
}

impl BoxDomain {
    pub fn new(a: f64, b: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDomain("box dimension must be at least 1".into()));
        }
        Ok(BoxDomain {
            side: IntervalDomain::new(a, b)?,
            dim,
        })
    }

    pub fn side(&self) -> IntervalDomain {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Interval(IntervalDomain),
    Box(BoxDomain),
    Circle,
}

/// Which update rule a configuration evolves under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Scalar,
    Box,
    Circle,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Scalar => "scalar",
            ModelKind::Box => "box",
            ModelKind::Circle => "circle",
        }
    }

    /// Stable numeric tag used when deriving per-trial seeds.
    pub fn id(self) -> u64 {
        match self {
            ModelKind::Scalar => 1,
            ModelKind::Box => 2,
            ModelKind::Circle => 3,
        }
    }
}

/// N scalar opinions.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarConfiguration {
    values: Vec<f64>,
}

impl ScalarConfiguration {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        AgentCount::new(values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "non-finite opinion {bad}"
            )));
        }
        Ok(ScalarConfiguration { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn agents(&self) -> AgentCount {
        AgentCount(self.values.len())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// N points in R^D, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorConfiguration {
    values: Vec<f64>,
    dim: usize,
}

impl VectorConfiguration {
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::InvalidConfiguration(format!(
                "{} entries cannot be split into rows of dimension {dim}",
                values.len()
            )));
        }
        AgentCount::new(values.len() / dim)?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfiguration(format!("non-finite entry {bad}")));
        }
        Ok(VectorConfiguration { values, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidConfiguration("ragged rows".into()));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn agents(&self) -> AgentCount {
        AgentCount(self.len())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Column `d` as an owned vector.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.rows().map(|r| r[d]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// N angles in `[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularConfiguration {
    angles: Vec<f64>,
}

impl AngularConfiguration {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        AgentCount::new(angles.len())?;
        if let Some(bad) = angles.iter().find(|t| !(0.0..TAU).contains(*t)) {
            return Err(Error::InvalidConfiguration(format!(
                "angle {bad} outside [0, 2π)"
            )));
        }
        Ok(AngularConfiguration { angles })
    }

    /// Reduces every angle into `[0, 2π)` first.
    pub fn from_unnormalized(angles: Vec<f64>) -> Result<Self> {
        Self::new(angles.into_iter().map(normalize_angle).collect())
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn agents(&self) -> AgentCount {
        AgentCount(self.angles.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Configuration {
    Scalar(ScalarConfiguration),
    Vector(VectorConfiguration),
    Angular(AngularConfiguration),
}

impl Configuration {
    pub fn model(&self) -> ModelKind {
        match self {
            Configuration::Scalar(_) => ModelKind::Scalar,
            Configuration::Vector(_) => ModelKind::Box,
            Configuration::Angular(_) => ModelKind::Circle,
        }
    }

    pub fn agents(&self) -> AgentCount {
        match self {
            Configuration::Scalar(x) => x.agents(),
            Configuration::Vector(x) => x.agents(),
            Configuration::Angular(x) => x.agents(),
        }
    }

    /// State dimension: 1 for scalars and angles, D for boxes.
    pub fn dim(&self) -> usize {
        match self {
            Configuration::Vector(x) => x.dim(),
            _ => 1,
        }
    }

    /// Advances one interaction in place and returns the selected pair.
    pub fn step(&mut self, rng: &mut RngStream) -> (usize, usize) {
        match self {
            Configuration::Scalar(x) => step_scalar(rng, x),
            Configuration::Vector(x) => step_vector(rng, x),
            Configuration::Angular(x) => step_circle(rng, x),
        }
    }
}

/// Shorter arc between two angles, traversed counter-clockwise from `start`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeodesicArc {
    start: f64,
    length: f64,
}

impl GeodesicArc {
    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Angle at fraction `u` of the arc, reduced into `[0, 2π)`.
    pub fn point_at(&self, u: f64) -> f64 {
        normalize_angle(self.start + u * self.length)
    }

    pub fn midpoint(&self) -> f64 {
        self.point_at(0.5)
    }

    /// Containment with an absolute slack for rounding in the caller's angle.
    pub fn contains(&self, theta: f64, slack: f64) -> bool {
        let offset = (theta - self.start).rem_euclid(TAU);
        offset <= self.length + slack || TAU - offset <= slack
    }
}

/// Per-trial random stream.
///
/// The same seed always yields the same sequence of draws. Experiments derive
/// the seed from the master seed and the trial coordinates, see
/// [`crate::experiments::seed_for_trial`].
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        RngStream {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on `0..n`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.inner.random_range(0..n)
    }
}

/// Reduces an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid can round up to TAU for tiny negative inputs; -0.0 maps to 0.0
    if r >= TAU || r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Maps an index in `0..N(N-1)/2` to the pair `(i, j)` with `i < j`.
///
/// Pairs are enumerated column by column: `r = j(j-1)/2 + i`.
pub fn pair_from_index(r: u64) -> (usize, usize) {
    let mut j = ((1.0 + (1.0 + 8.0 * r as f64).sqrt()) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > r {
        j -= 1;
    }
    while (j + 1) * j / 2 <= r {
        j += 1;
    }
    let i = r - j * (j - 1) / 2;
    (i as usize, j as usize)
}

/// Uniform unordered pair of distinct agents, returned with `i < j`.
pub fn select_pair(rng: &mut RngStream, n: AgentCount) -> (usize, usize) {
    pair_from_index(rng.below(n.pairs()))
}

/// `a + u (b - a)`, kept inside the closed segment between `a` and `b`.
#[inline]
fn lerp_clamped(a: f64, b: f64, u: f64) -> f64 {
    let v = a + u * (b - a);
    if a <= b {
        v.clamp(a, b)
    } else {
        v.clamp(b, a)
    }
}

/// One interaction of the interval model. Returns the updated pair.
pub fn step_scalar(rng: &mut RngStream, x: &mut ScalarConfiguration) -> (usize, usize) {
    let (i, j, _, _) = step_scalar_traced(rng, x);
    (i, j)
}

/// Like [`step_scalar`], also returning the pair's previous values.
pub(crate) fn step_scalar_traced(
    rng: &mut RngStream,
    x: &mut ScalarConfiguration,
) -> (usize, usize, f64, f64) {
    let (i, j) = select_pair(rng, x.agents());
    let (xi, xj) = (x.values[i], x.values[j]);
    let (lo, hi) = if xi <= xj { (xi, xj) } else { (xj, xi) };
    let u1 = rng.uniform();
    let u2 = rng.uniform();
    x.values[i] = lerp_clamped(lo, hi, u1);
    x.values[j] = lerp_clamped(lo, hi, u2);
    (i, j, xi, xj)
}

/// One interaction of the box model: both rows move to independent uniform
/// points of the segment joining them.
pub fn step_vector(rng: &mut RngStream, x: &mut VectorConfiguration) -> (usize, usize) {
    step_vector_traced(rng, x, &mut Vec::new())
}

/// Like [`step_vector`]; `old` receives row i followed by row j as they were
/// before the step.
pub(crate) fn step_vector_traced(
    rng: &mut RngStream,
    x: &mut VectorConfiguration,
    old: &mut Vec<f64>,
) -> (usize, usize) {
    let (i, j) = select_pair(rng, x.agents());
    let lambda1 = rng.uniform();
    let lambda2 = rng.uniform();
    let dim = x.dim;
    old.clear();
    old.extend_from_slice(&x.values[i * dim..(i + 1) * dim]);
    old.extend_from_slice(&x.values[j * dim..(j + 1) * dim]);
    for d in 0..dim {
        let a = old[d];
        let b = old[dim + d];
        x.values[i * dim + d] = lerp_clamped(a, b, lambda1);
        x.values[j * dim + d] = lerp_clamped(a, b, lambda2);
    }
    (i, j)
}

/// Shorter arc between two angles in `[0, 2π)`.
///
/// Returns `Ok(None)` when the angles coincide (zero-length arc). A gap of
/// exactly π takes the `[min, max]` branch.
pub fn geodesic_arc(theta1: f64, theta2: f64) -> Result<Option<GeodesicArc>> {
    for t in [theta1, theta2] {
        if !(0.0..TAU).contains(&t) {
            return Err(Error::param("theta", format!("{t} outside [0, 2π)")));
        }
    }
    Ok(geodesic_arc_unchecked(theta1, theta2))
}

pub(crate) fn geodesic_arc_unchecked(theta1: f64, theta2: f64) -> Option<GeodesicArc> {
    if theta1 == theta2 {
        return None;
    }
    let (lo, hi) = if theta1 < theta2 {
        (theta1, theta2)
    } else {
        (theta2, theta1)
    };
    let delta = hi - lo;
    Some(if delta <= PI {
        GeodesicArc {
            start: lo,
            length: delta,
        }
    } else {
        GeodesicArc {
            start: hi,
            length: TAU - delta,
        }
    })
}

/// One interaction of the circle model.
pub fn step_circle(rng: &mut RngStream, x: &mut AngularConfiguration) -> (usize, usize) {
    let (i, j, _, _) = step_circle_traced(rng, x);
    (i, j)
}

pub(crate) fn step_circle_traced(
    rng: &mut RngStream,
    x: &mut AngularConfiguration,
) -> (usize, usize, f64, f64) {
    let (i, j) = select_pair(rng, x.agents());
    let u1 = rng.uniform();
    let u2 = rng.uniform();
    let (ti, tj) = (x.angles[i], x.angles[j]);
    if let Some(arc) = geodesic_arc_unchecked(ti, tj) {
        x.angles[i] = arc.point_at(u1);
        x.angles[j] = arc.point_at(u2);
    }
    (i, j, ti, tj)
}

/// N iid uniform draws on the domain.
pub fn init_uniform(rng: &mut RngStream, domain: &Domain, n: AgentCount) -> Configuration {
    let n = n.get();
    match domain {
        Domain::Interval(iv) => {
            let values = (0..n)
                .map(|_| lerp_clamped(iv.a, iv.b, rng.uniform()))
                .collect();
            Configuration::Scalar(ScalarConfiguration { values })
        }
        Domain::Box(bx) => {
            let side = bx.side;
            let values = (0..n * bx.dim)
                .map(|_| lerp_clamped(side.a, side.b, rng.uniform()))
                .collect();
            Configuration::Vector(VectorConfiguration {
                values,
                dim: bx.dim,
            })
        }
        Domain::Circle => {
            let angles = (0..n).map(|_| normalize_angle(rng.uniform() * TAU)).collect();
            Configuration::Angular(AngularConfiguration { angles })
        }
    }
}
