//! Trajectory driver with incremental observables.
//!
//! Stopping checks run after every step, so the driver keeps running sums
//! instead of recomputing O(N) or O(N²) quantities each time. Whenever a
//! running value lands near a threshold the exact quantity from
//! [`crate::observables`] decides, so first hits agree with a frame-by-frame
//! evaluation.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use ordered_float::OrderedFloat;

use super::{
    step_circle_traced, step_scalar_traced, step_vector_traced, Configuration, RngStream,
};
use crate::error::{Error, Result};
use crate::observables::{
    ccw_gap, lyapunov_per_dimension, lyapunov_scalar, lyapunov_strided, range_vector,
    ObservableFrame,
};
use crate::stopping::{Probe, StoppingPolicy, StoppingRecord};

/// Receives frames at the configured cadence.
pub trait Observer {
    fn observe(&mut self, frame: &ObservableFrame, state: &Configuration);
}

pub struct NoopObserver;

impl Observer for NoopObserver {
    fn observe(&mut self, _: &ObservableFrame, _: &Configuration) {}
}

/// Keeps every frame it sees.
#[derive(Default, Debug)]
pub struct FrameRecorder {
    pub frames: Vec<ObservableFrame>,
}

impl Observer for FrameRecorder {
    fn observe(&mut self, frame: &ObservableFrame, _: &Configuration) {
        self.frames.push(frame.clone());
    }
}

impl<F: FnMut(&ObservableFrame, &Configuration)> Observer for F {
    fn observe(&mut self, frame: &ObservableFrame, state: &Configuration) {
        self(frame, state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryOptions {
    /// Hard cap on the number of steps.
    pub max_steps: u64,
    /// Observer cadence; frames at step 0, every multiple, and the last step.
    pub observe_every: Option<u64>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            max_steps: 100_000_000,
            observe_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub stopping: StoppingRecord,
    /// Steps executed.
    pub steps: u64,
    pub final_state: Configuration,
}

/// Runs `init` forward until every policy has fired or the cap is reached.
pub fn run_trajectory(
    rng: &mut RngStream,
    init: Configuration,
    policies: &[StoppingPolicy],
    options: TrajectoryOptions,
    observer: &mut dyn Observer,
) -> Result<TrialRecord> {
    if policies.is_empty() {
        return Err(Error::param("policies", "at least one stopping policy is required"));
    }
    for p in policies {
        p.validate_for(init.model())?;
    }
    if options.observe_every == Some(0) {
        return Err(Error::param("observe_every", "cadence must be at least 1"));
    }

    let mut state = init;
    let mut tracker = Tracker::new(&state);
    let mut record = StoppingRecord::new(policies.len());
    let mut scratch = Vec::new();
    let mut step = 0u64;
    let mut last_observed = None;

    loop {
        {
            let mut probe = Live {
                tracker: &mut tracker,
                state: &state,
                step,
            };
            for (idx, p) in policies.iter().enumerate() {
                if record.hits[idx].is_none() && p.fired_on(&mut probe) {
                    record.record(idx, step);
                }
            }
        }
        if let Some(every) = options.observe_every {
            if step % every == 0 {
                observer.observe(&ObservableFrame::capture(step, &state), &state);
                last_observed = Some(step);
            }
        }
        if record.all_fired() || step >= options.max_steps {
            break;
        }
        tracker.advance(&mut state, rng, &mut scratch);
        step += 1;
    }

    if options.observe_every.is_some() && last_observed != Some(step) {
        observer.observe(&ObservableFrame::capture(step, &state), &state);
    }
    record.cap_exhausted = !record.all_fired();
    Ok(TrialRecord {
        stopping: record,
        steps: step,
        final_state: state,
    })
}

/// Hull and shifted moments of one coordinate.
#[derive(Clone, Debug)]
struct ColumnTracker {
    offset: usize,
    stride: usize,
    n: usize,
    min: f64,
    max: f64,
    argmin: usize,
    argmax: usize,
    hull_stale: bool,
    shift: f64,
    s1: f64,
    s2: f64,
    /// Exact Lyapunov sum at the last rebuild; scales the error allowance.
    reference: f64,
}

impl ColumnTracker {
    fn new(values: &[f64], offset: usize, stride: usize) -> Self {
        let mut t = ColumnTracker {
            offset,
            stride,
            n: (values.len() - offset).div_ceil(stride),
            min: 0.0,
            max: 0.0,
            argmin: 0,
            argmax: 0,
            hull_stale: true,
            shift: 0.0,
            s1: 0.0,
            s2: 0.0,
            reference: 0.0,
        };
        t.rebuild(values);
        t
    }

    fn column<'a>(&self, values: &'a [f64]) -> impl Iterator<Item = &'a f64> {
        values[self.offset..].iter().step_by(self.stride)
    }

    fn rebuild(&mut self, values: &[f64]) {
        self.refresh_hull(values);
        let n = self.n as f64;
        self.shift = self.column(values).sum::<f64>() / n;
        let shift = self.shift;
        self.s1 = self.column(values).map(|x| x - shift).sum();
        self.s2 = self.column(values).map(|x| (x - shift) * (x - shift)).sum();
        self.reference = lyapunov_strided(values, self.offset, self.stride);
    }

    fn refresh_hull(&mut self, values: &[f64]) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, &v) in self.column(values).enumerate() {
            if v < lo {
                lo = v;
                self.argmin = k;
            }
            if v > hi {
                hi = v;
                self.argmax = k;
            }
        }
        self.min = lo;
        self.max = hi;
        self.hull_stale = false;
    }

    fn moved(&mut self, k: usize, old: f64, new: f64) {
        if old == new {
            return;
        }
        let (a, b) = (old - self.shift, new - self.shift);
        self.s1 += b - a;
        self.s2 += b * b - a * a;
        if k == self.argmin || k == self.argmax {
            self.hull_stale = true;
        }
    }

    fn range(&mut self, values: &[f64]) -> f64 {
        if self.hull_stale {
            self.refresh_hull(values);
        }
        self.max - self.min
    }

    fn lyapunov_estimate(&self) -> f64 {
        (2.0 * (self.n as f64 * self.s2 - self.s1 * self.s1)).max(0.0)
    }

    fn allowance(&self) -> f64 {
        1e-8 * self.reference + f64::MIN_POSITIVE
    }
}

#[derive(Clone, Debug)]
struct GapSets {
    angles: BTreeMap<OrderedFloat<f64>, u32>,
    gaps: BTreeMap<OrderedFloat<f64>, u32>,
}

fn bump(map: &mut BTreeMap<OrderedFloat<f64>, u32>, key: f64) {
    *map.entry(OrderedFloat(key)).or_insert(0) += 1;
}

fn drop_one(map: &mut BTreeMap<OrderedFloat<f64>, u32>, key: f64) {
    let k = OrderedFloat(key);
    match map.get_mut(&k) {
        Some(c) if *c > 1 => *c -= 1,
        Some(_) => {
            map.remove(&k);
        }
        None => unreachable!("gap multiset out of sync at {key}"),
    }
}

impl GapSets {
    fn new(angles: &[f64]) -> Self {
        let mut t = GapSets {
            angles: BTreeMap::new(),
            gaps: BTreeMap::new(),
        };
        for g in crate::observables::circular_gaps(angles).gaps {
            bump(&mut t.gaps, g);
        }
        for &a in angles {
            bump(&mut t.angles, a);
        }
        t
    }

    /// Nearest distinct stored angles before and after `v`, wrapping around.
    fn neighbours(&self, v: f64) -> (f64, f64) {
        let k = OrderedFloat(v);
        let pred = self
            .angles
            .range(..k)
            .next_back()
            .or_else(|| self.angles.iter().next_back())
            .map(|(p, _)| p.0);
        let succ = self
            .angles
            .range((std::ops::Bound::Excluded(k), std::ops::Bound::Unbounded))
            .next()
            .or_else(|| self.angles.iter().next())
            .map(|(s, _)| s.0);
        (pred.unwrap(), succ.unwrap())
    }

    fn remove(&mut self, v: f64) {
        let k = OrderedFloat(v);
        let count = self.angles[&k];
        if count > 1 {
            self.angles.insert(k, count - 1);
            drop_one(&mut self.gaps, 0.0);
            return;
        }
        self.angles.remove(&k);
        let (p, s) = self.neighbours(v);
        drop_one(&mut self.gaps, ccw_gap(p, v, p > v));
        drop_one(&mut self.gaps, ccw_gap(v, s, v > s));
        bump(&mut self.gaps, ccw_gap(p, s, p >= s));
    }

    fn insert(&mut self, v: f64) {
        let k = OrderedFloat(v);
        if let Some(c) = self.angles.get_mut(&k) {
            *c += 1;
            bump(&mut self.gaps, 0.0);
            return;
        }
        let (p, s) = self.neighbours(v);
        drop_one(&mut self.gaps, ccw_gap(p, s, p >= s));
        bump(&mut self.gaps, ccw_gap(p, v, p > v));
        bump(&mut self.gaps, ccw_gap(v, s, v > s));
        self.angles.insert(k, 1);
    }

    fn moved(&mut self, old: f64, new: f64) {
        if old != new {
            self.remove(old);
            self.insert(new);
        }
    }

    fn gamma_max(&self) -> f64 {
        self.gaps.keys().next_back().map_or(TAU, |g| g.0)
    }
}

/// Half-disk phase: the largest gap runs from the last agent to the first
/// one met counter-clockwise from `base`, a point inside that gap.
#[derive(Clone, Debug)]
struct ArcEnds {
    base: f64,
    first: usize,
    last: usize,
    stale: bool,
}

impl ArcEnds {
    fn new(angles: &[f64]) -> Self {
        let g = crate::observables::circular_gaps(angles);
        let base = crate::dynamics::normalize_angle(g.sorted[g.argmax] + 0.5 * g.gamma_max);
        let mut t = ArcEnds {
            base,
            first: 0,
            last: 0,
            stale: true,
        };
        t.rescan(angles);
        t
    }

    /// Circular order starting at `base`, without arithmetic on the angles.
    fn before(&self, a: f64, b: f64) -> bool {
        (a < self.base, a) < (b < self.base, b)
    }

    fn rescan(&mut self, angles: &[f64]) {
        let (mut first, mut last) = (0, 0);
        for (k, &a) in angles.iter().enumerate() {
            if self.before(a, angles[first]) {
                first = k;
            }
            if self.before(angles[last], a) {
                last = k;
            }
        }
        self.first = first;
        self.last = last;
        self.stale = false;
    }

    fn moved(&mut self, pair: [usize; 2], angles: &[f64]) {
        if self.stale {
            return;
        }
        if pair.iter().any(|&k| k == self.first || k == self.last) {
            self.stale = true;
            return;
        }
        // rounding in the arc parametrisation can step a hair outside the hull
        for k in pair {
            if self.before(angles[k], angles[self.first]) {
                self.first = k;
            }
            if self.before(angles[self.last], angles[k]) {
                self.last = k;
            }
        }
    }

    fn gamma_max(&mut self, angles: &[f64]) -> f64 {
        if self.stale {
            self.rescan(angles);
        }
        let (hi, lo) = (angles[self.last], angles[self.first]);
        ccw_gap(hi, lo, hi >= lo)
    }
}

/// Gap multisets until the opinions enter a half-disk, then the two ends.
#[derive(Clone, Debug)]
enum CircleTracker {
    Gaps(GapSets),
    Arc(ArcEnds),
}

/// Margin above π before switching to, or below which to leave, the arc phase.
const ARC_ENTRY: f64 = PI + 1e-9;
const ARC_EXIT: f64 = PI + 1e-10;

impl CircleTracker {
    fn new(angles: &[f64]) -> Self {
        let mut t = CircleTracker::Gaps(GapSets::new(angles));
        t.settle(angles);
        t
    }

    fn settle(&mut self, angles: &[f64]) {
        let leave = match self {
            CircleTracker::Gaps(g) => g.gamma_max() > ARC_ENTRY,
            CircleTracker::Arc(a) => a.gamma_max(angles) < ARC_EXIT,
        };
        if leave {
            *self = match self {
                CircleTracker::Gaps(_) => CircleTracker::Arc(ArcEnds::new(angles)),
                CircleTracker::Arc(_) => CircleTracker::Gaps(GapSets::new(angles)),
            };
        }
    }

    fn moved(&mut self, (i, oi): (usize, f64), (j, oj): (usize, f64), angles: &[f64]) {
        match self {
            CircleTracker::Gaps(g) => {
                g.moved(oi, angles[i]);
                g.moved(oj, angles[j]);
            }
            CircleTracker::Arc(a) => a.moved([i, j], angles),
        }
        self.settle(angles);
    }

    fn gamma_max(&mut self, angles: &[f64]) -> f64 {
        match self {
            CircleTracker::Gaps(g) => g.gamma_max(),
            CircleTracker::Arc(a) => a.gamma_max(angles),
        }
    }
}

#[derive(Clone, Debug)]
enum Tracker {
    Scalar { col: ColumnTracker, since: usize },
    Vector { cols: Vec<ColumnTracker>, since: usize },
    Circle(CircleTracker),
}

impl Tracker {
    fn new(state: &Configuration) -> Self {
        match state {
            Configuration::Scalar(x) => Tracker::Scalar {
                col: ColumnTracker::new(x.values(), 0, 1),
                since: 0,
            },
            Configuration::Vector(x) => Tracker::Vector {
                cols: (0..x.dim())
                    .map(|d| ColumnTracker::new(x.as_slice(), d, x.dim()))
                    .collect(),
                since: 0,
            },
            Configuration::Angular(x) => Tracker::Circle(CircleTracker::new(x.angles())),
        }
    }

    fn advance(&mut self, state: &mut Configuration, rng: &mut RngStream, scratch: &mut Vec<f64>) {
        match (self, state) {
            (Tracker::Scalar { col, since }, Configuration::Scalar(x)) => {
                let (i, j, oi, oj) = step_scalar_traced(rng, x);
                *since += 1;
                if *since >= x.len() {
                    col.rebuild(x.values());
                    *since = 0;
                } else {
                    let v = x.values();
                    col.moved(i, oi, v[i]);
                    col.moved(j, oj, v[j]);
                }
            }
            (Tracker::Vector { cols, since }, Configuration::Vector(x)) => {
                let (i, j) = step_vector_traced(rng, x, scratch);
                *since += 1;
                let dim = x.dim();
                if *since >= x.len() {
                    for c in cols.iter_mut() {
                        c.rebuild(x.as_slice());
                    }
                    *since = 0;
                } else {
                    for (d, c) in cols.iter_mut().enumerate() {
                        c.moved(i, scratch[d], x.row(i)[d]);
                        c.moved(j, scratch[dim + d], x.row(j)[d]);
                    }
                }
            }
            (Tracker::Circle(t), Configuration::Angular(x)) => {
                let (i, j, oi, oj) = step_circle_traced(rng, x);
                t.moved((i, oi), (j, oj), x.angles());
            }
            _ => unreachable!("tracker built for a different model"),
        }
    }
}

struct Live<'a> {
    tracker: &'a mut Tracker,
    state: &'a Configuration,
    step: u64,
}

impl Probe for Live<'_> {
    fn step(&self) -> u64 {
        self.step
    }

    fn range_at_most(&mut self, eps: f64) -> bool {
        match (&mut *self.tracker, self.state) {
            (Tracker::Scalar { col, .. }, Configuration::Scalar(x)) => col.range(x.values()) <= eps,
            (Tracker::Vector { cols, .. }, Configuration::Vector(x)) => {
                let mut lower = 0.0f64;
                let mut upper_sq = 0.0;
                for c in cols.iter_mut() {
                    let r = c.range(x.as_slice());
                    lower = lower.max(r);
                    upper_sq += r * r;
                }
                if lower > eps * (1.0 + 1e-12) {
                    false
                } else if upper_sq.sqrt() < eps * (1.0 - 1e-12) {
                    true
                } else {
                    range_vector(x) <= eps
                }
            }
            _ => false,
        }
    }

    fn lyapunov_at_most(&mut self, tau: f64) -> bool {
        match (&*self.tracker, self.state) {
            (Tracker::Scalar { col, .. }, Configuration::Scalar(x)) => {
                if col.lyapunov_estimate() - col.allowance() > tau {
                    false
                } else {
                    lyapunov_scalar(x.values()) <= tau
                }
            }
            (Tracker::Vector { cols, .. }, Configuration::Vector(x)) => {
                let est: f64 = cols.iter().map(|c| c.lyapunov_estimate() - c.allowance()).sum();
                if est > tau {
                    false
                } else {
                    lyapunov_per_dimension(x).1 <= tau
                }
            }
            _ => false,
        }
    }

    fn per_dim_lyapunov_at_most(&mut self, tau: f64) -> bool {
        match (&*self.tracker, self.state) {
            (Tracker::Vector { cols, .. }, Configuration::Vector(x)) => cols.iter().all(|c| {
                c.lyapunov_estimate() - c.allowance() <= tau
                    && lyapunov_strided(x.as_slice(), c.offset, c.stride) <= tau
            }),
            _ => false,
        }
    }

    fn gamma_max(&mut self) -> f64 {
        match (&mut *self.tracker, self.state) {
            (Tracker::Circle(t), Configuration::Angular(x)) => t.gamma_max(x.angles()),
            _ => f64::NAN,
        }
    }
}
