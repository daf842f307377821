//! Closed-form expectations and upper bounds on convergence times.
//!
//! Bounds that come in two flavours carry both: `exact` keeps the factor
//! `3N(N-1)/(2N+1)` and `simplified` replaces it with `3N/2`. When a log
//! argument falls below 1 the log term is clamped at zero and `clamped` is set.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub exact: f64,
    pub simplified: f64,
    pub clamped: bool,
}

fn check_agents(n: usize, min: usize) -> Result<f64> {
    if n < min {
        return Err(Error::InvalidAgentCount(n, min));
    }
    Ok(n as f64)
}

fn check_open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must lie in (0, 1), got {v}")))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {v}")))
    }
}

fn check_interval(a: f64, b: f64) -> Result<f64> {
    if a.is_finite() && b.is_finite() && a < b {
        Ok(b - a)
    } else {
        Err(Error::InvalidDomain(format!("need finite a < b, got [{a}, {b}]")))
    }
}

/// `ln(x)` clamped at zero, with a flag when the clamp applied.
fn clamped_ln(x: f64) -> (f64, bool) {
    let l = x.ln();
    if l < 0.0 {
        (0.0, true)
    } else {
        (l, false)
    }
}

/// Expected one-step decrease rate `(2N+1)/(3N(N-1))` of the Lyapunov sum.
pub fn contraction_deficit(n: usize) -> Result<f64> {
    let nf = check_agents(n, 2)?;
    Ok((2.0 * nf + 1.0) / (3.0 * nf * (nf - 1.0)))
}

/// `1 - (2N+1)/(3N(N-1))`.
pub fn contraction_factor(n: usize) -> Result<f64> {
    Ok(1.0 - contraction_deficit(n)?)
}

/// `3N(N-1)/(2N+1)`, the reciprocal of the deficit.
fn exact_prefactor(nf: f64) -> f64 {
    3.0 * nf * (nf - 1.0) / (2.0 * nf + 1.0)
}

pub fn expected_lyapunov(k: u64, l0: f64, n: usize) -> Result<f64> {
    if !(l0 >= 0.0) {
        return Err(Error::param("L0", format!("must be nonnegative, got {l0}")));
    }
    Ok(l0 * contraction_factor(n)?.powf(k as f64))
}

/// Mean initial Lyapunov sum for iid uniform opinions on `[a, b]`.
pub fn uniform_initial_lyapunov(n: usize, a: f64, b: f64) -> Result<f64> {
    let nf = check_agents(n, 2)?;
    let w = check_interval(a, b)?;
    Ok(nf * (nf - 1.0) * w * w / 6.0)
}

/// Both forms of `K (ln(arg) + 1)` for the given log arguments.
fn two_forms(nf: f64, exact_arg: f64, simplified_arg: f64) -> BoundValue {
    let (le, ce) = clamped_ln(exact_arg);
    let (ls, cs) = clamped_ln(simplified_arg);
    BoundValue {
        exact: exact_prefactor(nf) * (le + 1.0),
        simplified: 1.5 * nf * (ls + 1.0),
        clamped: ce || cs,
    }
}

/// Expected time to `L ≤ Nε²` from a known initial Lyapunov sum.
pub fn t_eps_bound_scalar(n: usize, eps: f64, l0: f64) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_positive("epsilon", eps)?;
    check_positive("L0", l0)?;
    let arg = l0 / (nf * eps * eps);
    Ok(two_forms(nf, arg, arg))
}

/// Worst case over initial opinions in `[a, b]`.
pub fn t_eps_bound_interval(n: usize, eps: f64, a: f64, b: f64) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_positive("epsilon", eps)?;
    let w = check_interval(a, b)?;
    let arg = nf * w * w / (2.0 * eps * eps);
    Ok(two_forms(nf, arg, arg))
}

/// Iid uniform initial opinions on `[a, b]`.
///
/// The exact form uses the mean initial Lyapunov sum `N(N-1)(b-a)²/6`; the
/// simplified one rounds `N-1` up to `N`. For N=10, ε=0.01 on `[0, 1]` the
/// simplified value is about 160.82.
pub fn t_eps_bound_uniform_init(n: usize, eps: f64, a: f64, b: f64) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_positive("epsilon", eps)?;
    let w = check_interval(a, b)?;
    let e2 = eps * eps;
    Ok(two_forms(
        nf,
        (nf - 1.0) * w * w / (6.0 * e2),
        nf * w * w / (6.0 * e2),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VectorBoundInput {
    /// Sum over dimensions of the initial per-dimension Lyapunov sums.
    GivenLyapunov(f64),
    /// Any initial configuration in the cube `[a, b]^D`.
    WorstCaseCube { a: f64, b: f64 },
    /// Iid uniform initial points in the cube.
    UniformCube { a: f64, b: f64 },
}

/// Expected time to `Σ_d L_d ≤ Nε²` in dimension `d`.
pub fn t_eps_bound_vector(
    n: usize,
    d: usize,
    eps: f64,
    input: VectorBoundInput,
) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_positive("epsilon", eps)?;
    if d == 0 {
        return Err(Error::param("D", "dimension must be at least 1"));
    }
    let df = d as f64;
    let e2 = eps * eps;
    Ok(match input {
        VectorBoundInput::GivenLyapunov(total) => {
            check_positive("L0", total)?;
            let arg = total / (nf * e2);
            two_forms(nf, arg, arg)
        }
        VectorBoundInput::WorstCaseCube { a, b } => {
            let w = check_interval(a, b)?;
            let arg = df * nf * w * w / (2.0 * e2);
            two_forms(nf, arg, arg)
        }
        VectorBoundInput::UniformCube { a, b } => {
            let w = check_interval(a, b)?;
            two_forms(
                nf,
                df * (nf - 1.0) * w * w / (6.0 * e2),
                df * nf * w * w / (6.0 * e2),
            )
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RangeInput {
    /// Known initial Lyapunov sum (total over dimensions when `D > 1`).
    GivenLyapunov(f64),
    /// Iid uniform initial states on `[a, b]` or `[a, b]^D`.
    Uniform { a: f64, b: f64 },
}

/// Lower and upper bounds on the expected squared range after `k` steps.
pub fn expected_range_sq_bounds(
    k: u64,
    n: usize,
    d: usize,
    input: RangeInput,
) -> Result<(f64, f64)> {
    let nf = check_agents(n, 2)?;
    if d == 0 {
        return Err(Error::param("D", "dimension must be at least 1"));
    }
    let l0 = match input {
        RangeInput::GivenLyapunov(l) => {
            if !(l >= 0.0) {
                return Err(Error::param("L0", format!("must be nonnegative, got {l}")));
            }
            l
        }
        RangeInput::Uniform { a, b } => d as f64 * uniform_initial_lyapunov(n, a, b)?,
    };
    let lk = expected_lyapunov(k, l0, n)?;
    // N r² ≤ L ≤ (N²/2) r² on the line; the upper constant is N³/2 for D > 1
    let lower_den = if d == 1 { nf * nf } else { nf * nf * nf };
    Ok((2.0 * lk / lower_den, lk / nf))
}

/// `E(X_k | X_0)` for scalar opinions.
pub fn expected_state(k: u64, x0: &[f64]) -> Result<Vec<f64>> {
    let nf = check_agents(x0.len(), 2)?;
    let mean = x0.iter().sum::<f64>() / nf;
    let rate = (1.0 - 1.0 / (nf - 1.0)).powf(k as f64);
    Ok(x0.iter().map(|x| mean + rate * (x - mean)).collect())
}

/// Column-wise [`expected_state`] for row-major `N x D` data.
pub fn expected_state_vector(k: u64, x0: &[f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || x0.len() % dim != 0 {
        return Err(Error::param("D", "data does not split into rows"));
    }
    let mut out = vec![0.0; x0.len()];
    for d in 0..dim {
        let col: Vec<f64> = x0.iter().skip(d).step_by(dim).copied().collect();
        for (r, v) in expected_state(k, &col)?.into_iter().enumerate() {
            out[r * dim + d] = v;
        }
    }
    Ok(out)
}

/// `q_{a,b}`: zero when the interval straddles the origin.
pub fn q_ab(a: f64, b: f64) -> f64 {
    let mut q = 0.0;
    if a >= 0.0 {
        q += a * a / (b * b);
    }
    if b <= 0.0 {
        q += b * b / (a * a);
    }
    q
}

/// Upper bounds on the ε-averaging time.
pub fn gossip_time_bound(n: usize, eps: f64, a: f64, b: f64) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_open_unit("epsilon", eps)?;
    check_interval(a, b)?;
    let one_minus_q = 1.0 - q_ab(a, b);
    if !(one_minus_q > 0.0) {
        return Err(Error::InvalidDomain(format!("degenerate interval [{a}, {b}]")));
    }
    let alpha = contraction_deficit(n)?;
    let exact = (-3.0 * eps.ln() + (2.0 * (nf - 1.0) * one_minus_q).ln()) / -(1.0 - alpha).ln();
    let simplified =
        1.5 * nf * (nf / (eps * eps * eps)).ln() + 1.5 * nf * (2.0 * one_minus_q).ln();
    Ok(BoundValue {
        exact,
        simplified,
        clamped: false,
    })
}

/// Bounds for a positive process with `E(Y_{k+1} | Y_k) = (1-α) Y_k`:
/// expected time to `Y_k/Y_0 ≤ ε`, and the tail-based averaging time.
pub fn edsm_bounds(alpha: f64, eps: f64) -> Result<(f64, f64)> {
    check_open_unit("alpha", alpha)?;
    check_open_unit("epsilon", eps)?;
    let gossip = eps.ln() / (1.0 - alpha).ln();
    Ok((gossip + 1.0 / alpha, gossip))
}

/// Bound on the expected time to reach a half-disk configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfDiskBound {
    /// `+inf` when the value overflows `f64`.
    pub value: f64,
    /// `log10` of the dominant power term.
    pub log10: f64,
    /// Exact integer value at the optimal δ when it fits.
    pub exact: Option<u128>,
}

pub const DEFAULT_DELTA: f64 = 0.866_025_403_784_438_6; // √3/2

/// `(1/η)^n + 2n`, `n = ⌊N/2⌋`, with `η` built from `θ_δ = π/2 - arccos δ`.
///
/// At the default δ = √3/2 this is `(27/4 N²(N-1)²)^n + 2n`.
pub fn t_hd_bound(n_agents: usize, delta: f64) -> Result<HalfDiskBound> {
    let nf = check_agents(n_agents, 3)?;
    check_open_unit("delta", delta)?;
    let n = (n_agents / 2) as i32;
    let pairs = nf * (nf - 1.0);
    let optimal = delta == DEFAULT_DELTA;

    let log10_inv_eta = if optimal {
        (6.75 * pairs * pairs).log10()
    } else {
        let theta = PI / 2.0 - delta.acos();
        let eta = (1.0 - 2.0 * theta / PI) * (theta / PI * 2.0 / pairs).powi(2);
        -eta.log10()
    };
    let log10 = n as f64 * log10_inv_eta;

    let exact = if optimal {
        let m = n_agents as u128;
        let base = 27 * (m * (m - 1)).pow(2) / 4;
        base.checked_pow(n as u32)
            .and_then(|p| p.checked_add(2 * n as u128))
    } else {
        None
    };

    let value = if let Some(e) = exact {
        e as f64
    } else if log10 < f64::MAX_10_EXP as f64 {
        10f64.powf(log10) + 2.0 * n as f64
    } else {
        f64::INFINITY
    };
    Ok(HalfDiskBound {
        value,
        log10,
        exact,
    })
}

/// Expected ε-convergence time on the circle given a half-disk bound `b_hd`.
pub fn t_eps_bound_circle(n: usize, eps: f64, b_hd: f64) -> Result<BoundValue> {
    let nf = check_agents(n, 2)?;
    check_positive("epsilon", eps)?;
    if !(b_hd >= 0.0) {
        return Err(Error::param("B_HD", format!("must be nonnegative, got {b_hd}")));
    }
    let arg = nf * PI * PI / (2.0 * eps * eps);
    let tail = two_forms(nf, arg, arg);
    Ok(BoundValue {
        exact: b_hd + tail.exact,
        simplified: b_hd + tail.simplified,
        clamped: tail.clamped,
    })
}

/// [`t_eps_bound_circle`] with the default half-disk bound.
pub fn t_eps_bound_circle_default(n: usize, eps: f64) -> Result<BoundValue> {
    t_eps_bound_circle(n, eps, t_hd_bound(n, DEFAULT_DELTA)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn contraction_values() {
        assert_relative_eq!(contraction_factor(2).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(contraction_factor(5).unwrap(), 49.0 / 60.0, epsilon = 1e-15);
        assert_relative_eq!(contraction_factor(100).unwrap(), 0.993_232_323_232_323_2, epsilon = 1e-14);
        assert!(contraction_factor(1).is_err());
        let mut prev = 0.0;
        for n in 2..200 {
            let f = contraction_factor(n).unwrap();
            assert!(f > prev && f < 1.0);
            prev = f;
        }
    }

    #[test]
    fn expected_lyapunov_values() {
        assert_eq!(expected_lyapunov(0, 3.5, 4).unwrap(), 3.5);
        assert_relative_eq!(expected_lyapunov(1, 2.0, 2).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        let a = expected_lyapunov(7, 2.0, 6).unwrap();
        let b = expected_lyapunov(3, expected_lyapunov(4, 2.0, 6).unwrap(), 6).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn scalar_bound_values() {
        let v = t_eps_bound_scalar(2, 0.1, 2.0).unwrap();
        assert_abs_diff_eq!(v.exact, 1.2 * 100f64.ln() + 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(v.exact, 6.7262, epsilon = 1e-4);
        let v = t_eps_bound_scalar(7, 0.1, 7.0 * 0.01).unwrap();
        assert_abs_diff_eq!(v.exact, 3.0 * 7.0 * 6.0 / 15.0, epsilon = 1e-12);
        assert!(!v.clamped);
        let v = t_eps_bound_scalar(7, 0.1, 0.01).unwrap();
        assert!(v.clamped);
        assert_abs_diff_eq!(v.simplified, 10.5, epsilon = 1e-12);
    }

    #[test]
    fn scalar_bound_with_mean_initial_lyapunov_matches_uniform_path() {
        let l0 = uniform_initial_lyapunov(10, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(l0, 15.0, epsilon = 1e-12);
        let direct = t_eps_bound_scalar(10, 0.01, l0).unwrap();
        let uniform = t_eps_bound_uniform_init(10, 0.01, 0.0, 1.0).unwrap();
        assert_relative_eq!(direct.exact, uniform.exact, epsilon = 1e-12);
    }

    #[test]
    fn interval_and_uniform_values() {
        let v = t_eps_bound_interval(10, 0.01, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v.simplified, 177.30, epsilon = 5e-3);
        let v = t_eps_bound_interval(10, 0.01, 0.0, 2f64.sqrt()).unwrap();
        assert_abs_diff_eq!(v.simplified, 15.0 * 1e5f64.ln() + 15.0, epsilon = 1e-9);
        let u = t_eps_bound_uniform_init(10, 0.01, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(u.simplified, 160.82, epsilon = 5e-3);
        assert_relative_eq!(uniform_initial_lyapunov(5, 0.0, 1.0).unwrap(), 10.0 / 3.0);
        let slope = t_eps_bound_interval(10, 0.01, 0.0, 1.0).unwrap().simplified
            - t_eps_bound_interval(10, 0.01 / std::f64::consts::E, 0.0, 1.0).unwrap().simplified;
        assert_abs_diff_eq!(slope, -30.0, epsilon = 1e-9);
    }

    #[test]
    fn vector_bound_values() {
        let v = t_eps_bound_vector(10, 2, 0.01, VectorBoundInput::UniformCube { a: 0.0, b: 1.0 })
            .unwrap();
        assert_abs_diff_eq!(v.simplified, 171.21, epsilon = 5e-3);
        let one = t_eps_bound_vector(10, 1, 0.01, VectorBoundInput::UniformCube { a: 0.0, b: 1.0 })
            .unwrap();
        assert_eq!(one, t_eps_bound_uniform_init(10, 0.01, 0.0, 1.0).unwrap());
        let wc = t_eps_bound_vector(10, 1, 0.01, VectorBoundInput::WorstCaseCube { a: 0.0, b: 1.0 })
            .unwrap();
        assert_eq!(wc, t_eps_bound_interval(10, 0.01, 0.0, 1.0).unwrap());
        // log argument equal to one leaves only the additive term
        let g = t_eps_bound_vector(10, 3, 0.1, VectorBoundInput::GivenLyapunov(10.0 * 0.01)).unwrap();
        assert_abs_diff_eq!(g.simplified, 15.0, epsilon = 1e-12);
    }

    #[test]
    fn range_sq_values() {
        let (lo, hi) = expected_range_sq_bounds(0, 2, 1, RangeInput::GivenLyapunov(2.0)).unwrap();
        assert_relative_eq!(lo, 1.0);
        assert_relative_eq!(hi, 1.0);
        let (lo, hi) = expected_range_sq_bounds(0, 2, 1, RangeInput::Uniform { a: 0.0, b: 1.0 }).unwrap();
        assert_relative_eq!(lo, 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(hi, 1.0 / 6.0, epsilon = 1e-15);
        let (lo1, hi1) = expected_range_sq_bounds(1, 2, 1, RangeInput::Uniform { a: 0.0, b: 1.0 }).unwrap();
        assert_relative_eq!(lo1, lo / 6.0, epsilon = 1e-15);
        assert_relative_eq!(hi1, hi / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn expected_state_values() {
        let x0 = [0.0, 1.0];
        assert_eq!(expected_state(0, &x0).unwrap(), x0.to_vec());
        assert_eq!(expected_state(1, &x0).unwrap(), vec![0.5, 0.5]);
        let x0 = [0.1, 0.9, 0.4, 0.7];
        let far = expected_state(5000, &x0).unwrap();
        for v in far {
            assert_relative_eq!(v, 0.525, epsilon = 1e-12);
        }
    }

    #[test]
    fn gossip_values() {
        let v = gossip_time_bound(10, 0.1, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v.simplified, 148.56, epsilon = 1e-2);
        assert!(v.exact <= v.simplified);
        assert_eq!(q_ab(1.0, 2.0), 0.25);
        assert_eq!(q_ab(-2.0, -1.0), 0.25);
        assert_eq!(q_ab(-1.0, 1.0), 0.0);
        let shifted = gossip_time_bound(10, 0.1, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(
            shifted.simplified - (15.0 * 1e4f64.ln()),
            15.0 * 1.5f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn edsm_values() {
        let (cv, g) = edsm_bounds(1.0 / 6.0, 0.01).unwrap();
        assert_abs_diff_eq!(cv, 31.258, epsilon = 1e-3);
        assert_abs_diff_eq!(g, 25.258, epsilon = 1e-3);
        assert_abs_diff_eq!(cv - g, 6.0, epsilon = 1e-12);
        let (cv, g) = edsm_bounds(0.25, 1.0 - 1e-12).unwrap();
        assert_abs_diff_eq!(cv, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g, 0.0, epsilon = 1e-9);
        // α from the contraction deficit gives the leading scalar-bound slope
        let alpha = contraction_deficit(7).unwrap();
        let (_, g) = edsm_bounds(alpha, 1.0 / std::f64::consts::E).unwrap();
        assert_relative_eq!(g, 1.0 / -(1.0 - alpha).ln(), epsilon = 1e-12);
        assert_relative_eq!(1.0 / alpha, exact_prefactor(7.0), epsilon = 1e-12);
    }

    #[test]
    fn half_disk_bound_values() {
        let v = t_hd_bound(4, DEFAULT_DELTA).unwrap();
        assert_eq!(v.exact, Some(944_788));
        assert_eq!(v.value, 944_788.0);
        let v = t_hd_bound(5, DEFAULT_DELTA).unwrap();
        assert_eq!(v.exact, Some(7_290_004));
        // the general-δ path agrees with the optimal closed form
        let g = t_hd_bound(5, 0.866_025_403_784_438_5).unwrap();
        assert_relative_eq!(g.value, 7_290_004.0, max_relative = 1e-9);
        let big = t_hd_bound(1000, DEFAULT_DELTA).unwrap();
        assert!(big.value.is_infinite());
        assert!(big.log10 > 3000.0);
        assert!(t_hd_bound(2, DEFAULT_DELTA).is_err());
        assert!(t_hd_bound(4, 1.0).is_err());
    }

    #[test]
    fn default_delta_minimises_half_disk_bound() {
        let best = t_hd_bound(6, DEFAULT_DELTA).unwrap().log10;
        for k in 1..1000 {
            let d = k as f64 / 1000.0;
            assert!(t_hd_bound(6, d).unwrap().log10 >= best - 1e-9, "delta {d}");
        }
    }

    #[test]
    fn circle_bound_values() {
        let v = t_eps_bound_circle(4, 0.1, 944_788.0).unwrap();
        assert_abs_diff_eq!(v.simplified, 944_839.5, epsilon = 0.05);
        let z = t_eps_bound_circle(4, 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(v.simplified - z.simplified, 944_788.0, epsilon = 1e-6);
        assert_eq!(t_eps_bound_circle_default(4, 0.1).unwrap(), v);
    }
}
