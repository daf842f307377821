//! Absorption time of the birth-death chain on `{0, ..., n}` that moves up
//! with probability `c`, down (or stays at 0) with probability `1 - c`, and
//! stops at `n`.
//!
//! The chain dominates the time to reach a half-disk on the circle with
//! `n = ⌊N/2⌋` and `c = 4/(27 N²(N-1)²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub n: usize,
    pub c: f64,
}

impl ChainParams {
    pub fn new(n: usize, c: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::param("c", format!("must lie in (0, 1), got {c}")));
        }
        Ok(ChainParams { n, c })
    }

    /// Parameters for `N` agents on the circle.
    pub fn from_agents(n_agents: usize) -> Result<Self> {
        Self::new(n_agents / 2, chain_c(n_agents)?)
    }
}

/// Expected absorption times `E_0, ..., E_{n-1}`; `E_n = 0` is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionResult {
    pub e: Vec<f64>,
}

impl AbsorptionResult {
    pub fn e0(&self) -> f64 {
        self.e[0]
    }
}

/// Chebyshev polynomial of the second kind.
pub fn chebyshev_u(i: u32, x: f64) -> f64 {
    if x == 1.0 || x == -1.0 {
        let sign = if x < 0.0 && i % 2 == 1 { -1.0 } else { 1.0 };
        return sign * (i as f64 + 1.0);
    }
    let k = i as f64 + 1.0;
    let ax = x.abs();
    if ax < 1.0 {
        // the sine ratio loses digits next to ±1
        if 1.0 - ax < 1e-3 {
            return chebyshev_u_recurrence(i, x);
        }
        let theta = x.acos();
        (k * theta).sin() / theta.sin()
    } else {
        if ax - 1.0 < 1e-3 {
            return chebyshev_u_recurrence(i, x);
        }
        let theta = ax.acosh();
        let sign = if x < 0.0 && i % 2 == 1 { -1.0 } else { 1.0 };
        sign * (k * theta).sinh() / theta.sinh()
    }
}

/// `U_0 = 1`, `U_1 = 2x`, `U_{i+1} = 2x U_i - U_{i-1}`.
pub fn chebyshev_u_recurrence(i: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if i == 0 {
        return prev;
    }
    for _ in 1..i {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `4 / (27 N² (N-1)²)`.
pub fn chain_c(n_agents: usize) -> Result<f64> {
    if n_agents < 3 {
        return Err(Error::InvalidAgentCount(n_agents, 3));
    }
    let m = n_agents as f64;
    Ok(4.0 / (27.0 * m * m * (m - 1.0) * (m - 1.0)))
}

fn closed_form_regime(n: usize, c: f64) -> Result<ChainParams> {
    if (0.5..1.0).contains(&c) {
        return Err(Error::UnsupportedRegime(c));
    }
    ChainParams::new(n, c)
}

/// Natural log of the closed-form `E_0`; finite for any `n`.
pub fn absorption_closed_form_ln(n: usize, c: f64) -> Result<f64> {
    let p = closed_form_regime(n, c)?;
    let nf = p.n as f64;
    let ln_q = c.ln() - (1.0 - c).ln();
    let q = ln_q.exp();
    // 1 - q^k without cancellation
    let one_minus_qpow = |k: f64| -(k * ln_q).exp_m1();

    // first factor 1 + q^{-n} (1 - q^n)/(1 - q), in log form
    let big = -nf * ln_q;
    let ratio = one_minus_qpow(nf) / (1.0 - q);
    let ln_first = big + ((-big).exp() + ratio).ln();

    let denom = one_minus_qpow(nf + 1.0);
    let second = one_minus_qpow(nf) / ((1.0 - 2.0 * c) * denom)
        - nf / c * ((nf + 1.0) * ln_q).exp() / denom;
    Ok(ln_first + second.ln())
}

/// Closed-form `E_0` for `0 < c < 1/2`; `+inf` if it overflows.
pub fn absorption_closed_form(n: usize, c: f64) -> Result<f64> {
    Ok(absorption_closed_form_ln(n, c)?.exp())
}

/// All `E_i` by direct elimination; valid for every `c` in `(0, 1)`.
///
/// Eliminates from the absorbing end, writing `E_i = a_i + b_i E_{i-1}`.
/// The complements `1 - b_i` are carried separately because `b_i` tends to
/// one and the first row needs `1 - b_1`.
pub fn absorption_solve(n: usize, c: f64) -> Result<AbsorptionResult> {
    let ChainParams { n, c } = ChainParams::new(n, c)?;
    if n == 1 {
        return Ok(AbsorptionResult { e: vec![1.0 / c] });
    }
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut g = vec![0.0; n];
    a[n - 1] = 1.0;
    b[n - 1] = 1.0 - c;
    g[n - 1] = c;
    for i in (1..n - 1).rev() {
        let m = 1.0 - c + c * g[i + 1];
        a[i] = (1.0 + c * a[i + 1]) / m;
        b[i] = (1.0 - c) / m;
        g[i] = c * g[i + 1] / m;
    }
    let mut e = vec![0.0; n];
    e[0] = (1.0 + c * a[1]) / (c * g[1]);
    for i in 1..n {
        e[i] = a[i] + b[i] * e[i - 1];
    }
    Ok(AbsorptionResult { e })
}

/// Dense form of the system `A E = 1`, for cross-checks.
pub fn absorption_matrix(n: usize, c: f64) -> Result<Vec<Vec<f64>>> {
    let ChainParams { n, c } = ChainParams::new(n, c)?;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = if i == 0 { c } else { 1.0 };
        if i > 0 {
            a[i][i - 1] = -(1.0 - c);
        }
        if i + 1 < n {
            a[i][i + 1] = -c;
        }
    }
    Ok(a)
}

/// `((1-c)/c)^n`.
pub fn absorption_asymptotic(n: usize, c: f64) -> Result<f64> {
    Ok(absorption_asymptotic_ln(n, c)?.exp())
}

pub fn absorption_asymptotic_ln(n: usize, c: f64) -> Result<f64> {
    let p = ChainParams::new(n, c)?;
    Ok(p.n as f64 * ((1.0 - c).ln() - c.ln()))
}

/// Entry `(i, j)` (1-based) of the inverse of the n x n tridiagonal Toeplitz
/// matrix with diagonal 1, super-diagonal `-c`, sub-diagonal `-(1-c)`, via
/// Chebyshev polynomials.
pub fn toeplitz_inverse_entry(n: usize, c: f64, i: usize, j: usize) -> f64 {
    let s = (c * (1.0 - c)).sqrt();
    let d = 1.0 / (2.0 * s);
    let un = chebyshev_u(n as u32, d);
    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
    if i <= j {
        let k = (j - i) as i32;
        sign * (-c).powi(k) / s.powi(k + 1)
            * chebyshev_u((i - 1) as u32, d)
            * chebyshev_u((n - j) as u32, d)
            / un
    } else {
        let k = (i - j) as i32;
        sign * (-(1.0 - c)).powi(k) / s.powi(k + 1)
            * chebyshev_u((j - 1) as u32, d)
            * chebyshev_u((n - i) as u32, d)
            / un
    }
}

/// Same entry through the hyperbolic-sine form, `e^θ = √((1-c)/c)`.
pub fn toeplitz_inverse_entry_sinh(n: usize, c: f64, i: usize, j: usize) -> f64 {
    let s = (c * (1.0 - c)).sqrt();
    let theta = (1.0 / (2.0 * s)).acosh();
    let r = (c / (1.0 - c)).sqrt().powi(j as i32 - i as i32);
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    r / s * (lo as f64 * theta).sinh() * ((n - hi + 1) as f64 * theta).sinh()
        / (theta.sinh() * ((n + 1) as f64 * theta).sinh())
}

/// `E_i` as row sums of `A^{-1}`, with `A^{-1}` assembled from the Toeplitz
/// inverse and a rank-one correction on the first row.
pub fn absorption_sherman_morrison(n: usize, c: f64) -> Result<AbsorptionResult> {
    let p = ChainParams::new(n, c)?;
    let n = p.n;
    let binv = |i: usize, j: usize| toeplitz_inverse_entry(n, c, i, j);
    // A = B + u v^T with u = (c - 1) e_1 and v = e_1
    let denom = 1.0 + (c - 1.0) * binv(1, 1);
    let e = (1..=n)
        .map(|i| {
            (1..=n)
                .map(|j| binv(i, j) - (c - 1.0) * binv(i, 1) * binv(1, j) / denom)
                .sum()
        })
        .collect();
    Ok(AbsorptionResult { e })
}
