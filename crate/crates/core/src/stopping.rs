//! Convergence events and first-hit bookkeeping.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelKind;
use crate::error::{Error, Result};
use crate::observables::ObservableFrame;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StoppingPolicy {
    /// Range at most ε.
    RangeThreshold(f64),
    /// Lyapunov sum (total over dimensions for boxes) at most τ.
    LyapunovThreshold(f64),
    /// Every per-dimension Lyapunov sum at most τ (boxes).
    VectorLyapunovThreshold(f64),
    /// Opinions inside an open half-disk.
    HalfDisk,
    /// Largest empty gap at least 2π - ε.
    CircleArc(f64),
    /// Step index reached.
    MaxSteps(u64),
}

impl fmt::Display for StoppingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingPolicy::RangeThreshold(e) => write!(f, "RangeThreshold({e})"),
            StoppingPolicy::LyapunovThreshold(t) => write!(f, "LyapunovThreshold({t})"),
            StoppingPolicy::VectorLyapunovThreshold(t) => {
                write!(f, "VectorLyapunovThreshold({t})")
            }
            StoppingPolicy::HalfDisk => write!(f, "HalfDisk"),
            StoppingPolicy::CircleArc(e) => write!(f, "CircleArc({e})"),
            StoppingPolicy::MaxSteps(c) => write!(f, "MaxSteps({c})"),
        }
    }
}

impl StoppingPolicy {
    /// Parameter checks independent of the model.
    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            StoppingPolicy::RangeThreshold(e) => positive("epsilon", e),
            StoppingPolicy::LyapunovThreshold(t) | StoppingPolicy::VectorLyapunovThreshold(t) => {
                positive("tau", t)
            }
            StoppingPolicy::CircleArc(e) => {
                positive("epsilon", e)?;
                if e >= TAU / 3.0 {
                    return Err(Error::param(
                        "epsilon",
                        format!("circle arc threshold must be below 2π/3, got {e}"),
                    ));
                }
                Ok(())
            }
            StoppingPolicy::MaxSteps(0) => Err(Error::param("cap", "must be at least 1")),
            StoppingPolicy::HalfDisk | StoppingPolicy::MaxSteps(_) => Ok(()),
        }
    }

    pub fn supports(&self, model: ModelKind) -> bool {
        use StoppingPolicy::*;
        match self {
            MaxSteps(_) => true,
            RangeThreshold(_) | LyapunovThreshold(_) => model != ModelKind::Circle,
            VectorLyapunovThreshold(_) => model == ModelKind::Box,
            HalfDisk | CircleArc(_) => model == ModelKind::Circle,
        }
    }

    pub fn validate_for(&self, model: ModelKind) -> Result<()> {
        self.validate()?;
        if !self.supports(model) {
            return Err(Error::PolicyMismatch {
                policy: self.to_string(),
                model: model.name(),
            });
        }
        Ok(())
    }

    /// Evaluates the policy against any source of observables.
    pub fn fired_on<P: Probe + ?Sized>(&self, probe: &mut P) -> bool {
        match *self {
            StoppingPolicy::RangeThreshold(e) => probe.range_at_most(e),
            StoppingPolicy::LyapunovThreshold(t) => probe.lyapunov_at_most(t),
            StoppingPolicy::VectorLyapunovThreshold(t) => probe.per_dim_lyapunov_at_most(t),
            StoppingPolicy::HalfDisk => probe.gamma_max() > PI,
            StoppingPolicy::CircleArc(e) => probe.gamma_max() >= TAU - e,
            StoppingPolicy::MaxSteps(cap) => probe.step() >= cap,
        }
    }
}

/// Read access to the observables a policy may need.
///
/// Implementations must agree exactly with the functions in
/// [`crate::observables`]; the trajectory engine uses incremental versions.
pub trait Probe {
    fn step(&self) -> u64;
    fn range_at_most(&mut self, eps: f64) -> bool;
    fn lyapunov_at_most(&mut self, tau: f64) -> bool;
    fn per_dim_lyapunov_at_most(&mut self, tau: f64) -> bool;
    fn gamma_max(&mut self) -> f64;
}

impl Probe for &ObservableFrame {
    fn step(&self) -> u64 {
        self.step
    }

    fn range_at_most(&mut self, eps: f64) -> bool {
        self.range <= eps
    }

    fn lyapunov_at_most(&mut self, tau: f64) -> bool {
        self.lyapunov.is_some_and(|l| l <= tau)
    }

    fn per_dim_lyapunov_at_most(&mut self, tau: f64) -> bool {
        self.lyapunov_per_dim.iter().all(|&l| l <= tau)
    }

    fn gamma_max(&mut self) -> f64 {
        self.gamma_max.unwrap_or(f64::NAN)
    }
}

fn frame_model(frame: &ObservableFrame) -> ModelKind {
    if frame.gamma_max.is_some() {
        ModelKind::Circle
    } else if !frame.lyapunov_per_dim.is_empty() {
        ModelKind::Box
    } else {
        ModelKind::Scalar
    }
}

/// Whether `policy` holds on `frame`.
pub fn check(policy: &StoppingPolicy, frame: &ObservableFrame) -> Result<bool> {
    policy.validate_for(frame_model(frame))?;
    Ok(policy.fired_on(&mut &*frame))
}

/// First-hit step of each policy along one trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoppingRecord {
    pub hits: Vec<Option<u64>>,
    /// The step cap was reached while some policy had not fired.
    pub cap_exhausted: bool,
}

impl StoppingRecord {
    pub fn new(policies: usize) -> Self {
        StoppingRecord {
            hits: vec![None; policies],
            cap_exhausted: false,
        }
    }

    /// Records `step` for policy `idx` unless it already fired.
    pub fn record(&mut self, idx: usize, step: u64) {
        self.hits[idx].get_or_insert(step);
    }

    pub fn first_hit(&self, idx: usize) -> Option<u64> {
        self.hits[idx]
    }

    pub fn all_fired(&self) -> bool {
        self.hits.iter().all(Option::is_some)
    }
}
