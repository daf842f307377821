//! Derived quantities of a configuration: Lyapunov sums, ranges, means, and
//! the circle diagnostics (gaps, half-disk witness, vector sum, one-step
//! drift).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    geodesic_arc_unchecked, step_circle, AngularConfiguration, Configuration, RngStream,
    VectorConfiguration,
};
use crate::error::Result;
use crate::experiments::{aggregate, AggregateStats};

/// Two-pass `2N Σ (x - mean)^2` over `values[offset], values[offset + stride], ...`.
pub(crate) fn lyapunov_strided(values: &[f64], offset: usize, stride: usize) -> f64 {
    let column = || values[offset..].iter().step_by(stride);
    let n = column().count() as f64;
    let mean = column().sum::<f64>() / n;
    let ss: f64 = column().map(|x| (x - mean) * (x - mean)).sum();
    2.0 * n * ss
}

/// `Σ_{i≠j} (x_i - x_j)^2` over ordered pairs.
pub fn lyapunov_scalar(values: &[f64]) -> f64 {
    lyapunov_strided(values, 0, 1)
}

/// Per-column Lyapunov sums and their total.
pub fn lyapunov_per_dimension(x: &VectorConfiguration) -> (Vec<f64>, f64) {
    let per: Vec<f64> = (0..x.dim())
        .map(|d| lyapunov_strided(x.as_slice(), d, x.dim()))
        .collect();
    let total = per.iter().sum();
    (per, total)
}

pub fn range_scalar(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// Largest Euclidean distance between two rows.
pub fn range_vector(x: &VectorConfiguration) -> f64 {
    let mut best = 0.0f64;
    for i in 0..x.len() {
        let a = x.row(i);
        for j in i + 1..x.len() {
            let d2: f64 = a.iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

pub fn mean_scalar(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn mean_vector(x: &VectorConfiguration) -> Vec<f64> {
    let n = x.len() as f64;
    let mut acc = vec![0.0; x.dim()];
    for row in x.rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.into_iter().map(|a| a / n).collect()
}

/// Gap going counter-clockwise from `from` to `to`. `wraps` marks the gap that
/// crosses angle zero.
#[inline]
pub(crate) fn ccw_gap(from: f64, to: f64, wraps: bool) -> f64 {
    if wraps {
        to + TAU - from
    } else {
        to - from
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircularGaps {
    /// Sorted angles.
    pub sorted: Vec<f64>,
    /// `gaps[k]` runs from `sorted[k]` to the next angle; the last one wraps.
    pub gaps: Vec<f64>,
    pub gamma_max: f64,
    /// Index into `gaps` of the maximal gap (first one on ties).
    pub argmax: usize,
}

impl CircularGaps {
    pub fn sum(&self) -> f64 {
        self.gaps.iter().sum()
    }
}

pub fn circular_gaps(angles: &[f64]) -> CircularGaps {
    let mut sorted = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut gaps = Vec::with_capacity(n);
    for k in 0..n - 1 {
        gaps.push(ccw_gap(sorted[k], sorted[k + 1], false));
    }
    gaps.push(ccw_gap(sorted[n - 1], sorted[0], true));
    let mut argmax = 0;
    for (k, &g) in gaps.iter().enumerate() {
        if g > gaps[argmax] {
            argmax = k;
        }
    }
    CircularGaps {
        gamma_max: gaps[argmax],
        sorted,
        gaps,
        argmax,
    }
}

pub fn gamma_max(angles: &[f64]) -> f64 {
    circular_gaps(angles).gamma_max
}

/// Direction of an open half-plane holding every opinion, if one exists.
///
/// Exists iff the largest empty gap exceeds π. The witness points away from
/// the middle of that gap.
pub fn half_disk_witness(angles: &[f64]) -> Option<f64> {
    let g = circular_gaps(angles);
    if g.gamma_max <= PI {
        return None;
    }
    let mid = g.sorted[g.argmax] + g.gamma_max / 2.0;
    let witness = crate::dynamics::normalize_angle(mid + PI);
    angles
        .iter()
        .all(|t| (t - witness).cos() > 0.0)
        .then_some(witness)
}

/// Shorter angular distance between two angles.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(TAU - d)
}

/// Largest pairwise circular distance by direct comparison of all pairs.
pub fn circle_pairwise_diameter_brute(angles: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for (i, &a) in angles.iter().enumerate() {
        for &b in &angles[i + 1..] {
            best = best.max(circular_distance(a, b));
        }
    }
    best
}

/// Largest pairwise circular distance. Uses `2π - γ_max` inside a half-disk.
pub fn circle_pairwise_diameter(angles: &[f64]) -> f64 {
    let g = gamma_max(angles);
    if g > PI {
        TAU - g
    } else {
        circle_pairwise_diameter_brute(angles)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorSum {
    pub s: [f64; 2],
    pub norm: f64,
}

impl VectorSum {
    /// Angle of the sum, or `None` when it vanishes.
    pub fn direction(&self) -> Option<f64> {
        (self.norm > 0.0).then(|| self.s[1].atan2(self.s[0]))
    }

    pub fn is_degenerate(&self) -> bool {
        self.norm == 0.0
    }
}

pub fn vector_sum(angles: &[f64]) -> VectorSum {
    let s = angles
        .iter()
        .fold([0.0, 0.0], |[x, y], t| [x + t.cos(), y + t.sin()]);
    VectorSum {
        s,
        norm: s[0].hypot(s[1]),
    }
}

/// `sin(α)/α`, with the series near zero.
pub fn sinc(alpha: f64) -> f64 {
    if alpha.abs() < 1e-4 {
        let a2 = alpha * alpha;
        1.0 - a2 / 6.0 + a2 * a2 / 120.0
    } else {
        alpha.sin() / alpha
    }
}

/// Half-angle and bisector of the geodesic between two opinions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGeometry {
    pub alpha: f64,
    /// Bisector direction relative to the vector sum; `None` when the sum is zero.
    pub beta: Option<f64>,
    pub bisector: [f64; 2],
    /// `<x_bis, S>`, equal to `cos(β) ‖S‖` and defined even when `S = 0`.
    pub projection: f64,
}

pub fn pair_geometry(theta_i: f64, theta_j: f64, sum: &VectorSum) -> PairGeometry {
    let (alpha, mid) = match geodesic_arc_unchecked(theta_i, theta_j) {
        Some(arc) => (arc.length() / 2.0, arc.start() + arc.length() / 2.0),
        None => (0.0, theta_i),
    };
    let bisector = [mid.cos(), mid.sin()];
    PairGeometry {
        alpha,
        beta: sum.direction().map(|d| mid - d),
        bisector,
        projection: bisector[0] * sum.s[0] + bisector[1] * sum.s[1],
    }
}

/// Absolute residuals of the three vector-sum identities.
///
/// `None` marks a residual that needs the direction of a vanishing sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    /// `‖S‖ = Σ cos(θ_i - θ_S)`
    pub norm_projection: Option<f64>,
    /// `Σ_{i<j} cos α cos β = (N-1)/2 ‖S‖`
    pub cos_alpha_cos_beta: Option<f64>,
    /// `Σ_{i<j} cos 2α = (‖S‖² - N)/2`
    pub cos_two_alpha: f64,
    pub degenerate: bool,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        [self.norm_projection, self.cos_alpha_cos_beta, Some(self.cos_two_alpha)]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

pub fn circle_identity_residuals(angles: &[f64]) -> IdentityResiduals {
    let n = angles.len() as f64;
    let sum = vector_sum(angles);
    let dir = sum.direction();

    let mut cab = 0.0;
    let mut c2a = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        for &b in &angles[i + 1..] {
            let g = pair_geometry(a, b, &sum);
            if let Some(beta) = g.beta {
                cab += g.alpha.cos() * beta.cos();
            }
            c2a += (2.0 * g.alpha).cos();
        }
    }

    let norm_projection = dir.map(|d| {
        let proj: f64 = angles.iter().map(|t| (t - d).cos()).sum();
        (sum.norm - proj).abs()
    });
    let cos_alpha_cos_beta = dir.map(|_| (cab - (n - 1.0) / 2.0 * sum.norm).abs());
    IdentityResiduals {
        norm_projection,
        cos_alpha_cos_beta,
        cos_two_alpha: (c2a - (sum.norm * sum.norm - n) / 2.0).abs(),
        degenerate: dir.is_none(),
    }
}

/// Closed-form one-step expectations for the circle model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftClosedForm {
    /// `<E(S^{k+1} - S^k), S^k>`
    pub drift_dot_sum: f64,
    /// `E ‖S^{k+1}‖²`
    pub expected_norm_sq: f64,
}

pub fn one_step_drift_closed_form(angles: &[f64]) -> DriftClosedForm {
    let n = angles.len() as f64;
    let sum = vector_sum(angles);
    let s2 = sum.norm * sum.norm;
    let pair_weight = 4.0 / (n * (n - 1.0));

    let mut sinc_proj = 0.0;
    let mut quad = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        for &b in &angles[i + 1..] {
            let g = pair_geometry(a, b, &sum);
            let s = sinc(g.alpha);
            sinc_proj += s * g.projection;
            quad += s * s + 2.0 * s * g.projection - 4.0 * s * g.alpha.cos();
        }
    }

    DriftClosedForm {
        drift_dot_sum: -2.0 / n * s2 + pair_weight * sinc_proj,
        expected_norm_sq: s2
            + 4.0 * (1.0 - 1.0 / (2.0 * (n - 1.0))) * (1.0 - s2 / n)
            + pair_weight * quad,
    }
}

/// Monte Carlo means of the two drift quantities with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub drift_dot_sum: AggregateStats,
    pub expected_norm_sq: AggregateStats,
}

impl DriftEstimate {
    /// Largest deviation from `exact` in standard errors.
    pub fn z_score(&self, exact: &DriftClosedForm) -> f64 {
        let z = |s: &AggregateStats, v: f64| {
            let d = (s.mean - v).abs();
            match s.stderr {
                Some(e) if e > 0.0 => d / e,
                _ if d == 0.0 => 0.0,
                _ => f64::INFINITY,
            }
        };
        z(&self.drift_dot_sum, exact.drift_dot_sum).max(z(&self.expected_norm_sq, exact.expected_norm_sq))
    }
}

/// Samples `m` independent single steps from `angles`.
pub fn one_step_drift_monte_carlo(angles: &[f64], m: usize, rng: &mut RngStream) -> Result<DriftEstimate> {
    let start = AngularConfiguration::from_unnormalized(angles.to_vec())?;
    let s0 = vector_sum(start.angles()).s;
    let mut dots = Vec::with_capacity(m);
    let mut norms = Vec::with_capacity(m);
    for _ in 0..m {
        let mut x = start.clone();
        step_circle(rng, &mut x);
        let s1 = vector_sum(x.angles()).s;
        dots.push((s1[0] - s0[0]) * s0[0] + (s1[1] - s0[1]) * s0[1]);
        norms.push(s1[0] * s1[0] + s1[1] * s1[1]);
    }
    Ok(DriftEstimate {
        drift_dot_sum: aggregate(&dots),
        expected_norm_sq: aggregate(&norms),
    })
}

/// Snapshot of the observables at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableFrame {
    pub step: u64,
    /// Scalar Lyapunov sum, or the total over dimensions for boxes.
    pub lyapunov: Option<f64>,
    /// Per-dimension sums (boxes only).
    pub lyapunov_per_dim: Vec<f64>,
    /// Range, or pairwise circular diameter on the circle.
    pub range: f64,
    /// Empty on the circle.
    pub mean: Vec<f64>,
    pub vector_sum: Option<VectorSum>,
    pub gamma_max: Option<f64>,
}

impl ObservableFrame {
    pub fn capture(step: u64, state: &Configuration) -> Self {
        match state {
            Configuration::Scalar(x) => ObservableFrame {
                step,
                lyapunov: Some(lyapunov_scalar(x.values())),
                lyapunov_per_dim: Vec::new(),
                range: range_scalar(x.values()),
                mean: vec![mean_scalar(x.values())],
                vector_sum: None,
                gamma_max: None,
            },
            Configuration::Vector(x) => {
                let (per, total) = lyapunov_per_dimension(x);
                ObservableFrame {
                    step,
                    lyapunov: Some(total),
                    lyapunov_per_dim: per,
                    range: range_vector(x),
                    mean: mean_vector(x),
                    vector_sum: None,
                    gamma_max: None,
                }
            }
            Configuration::Angular(x) => ObservableFrame {
                step,
                lyapunov: None,
                lyapunov_per_dim: Vec::new(),
                range: circle_pairwise_diameter(x.angles()),
                mean: Vec::new(),
                vector_sum: Some(vector_sum(x.angles())),
                gamma_max: Some(gamma_max(x.angles())),
            },
        }
    }

    pub fn has_half_disk(&self) -> bool {
        self.gamma_max.is_some_and(|g| g > PI)
    }
}
