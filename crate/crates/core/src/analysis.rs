//! Least-squares scaling-law fits and bound-versus-estimate tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{generator, AggregateRow, ModelName};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `T = g·(-3 ln ε) + e` for one N.
    TVsLnEps,
    /// `e_N = a·N ln N + b·N + f`.
    ENVsNLnN,
    /// `T_HD = a·N ln N + f`.
    ThdVsNLnN,
}

impl FitModel {
    pub fn id(self) -> &'static str {
        match self {
            FitModel::TVsLnEps => "T_vs_lneps",
            FitModel::ENVsNLnN => "eN_vs_NlnN",
            FitModel::ThdVsNLnN => "THD_vs_NlnN",
        }
    }

    fn names(self) -> &'static [&'static str] {
        match self {
            FitModel::TVsLnEps => &["g", "e"],
            FitModel::ENVsNLnN => &["a", "b", "f"],
            FitModel::ThdVsNLnN => &["a", "f"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model: FitModel,
    pub coefficients: Vec<f64>,
    /// `None` when there are no residual degrees of freedom.
    pub residual_se: Option<f64>,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Input pairs `(x, y)` in the order given.
    pub points: Vec<(f64, f64)>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let idx = self.model.names().iter().position(|n| *n == name)?;
        self.coefficients.get(idx).copied()
    }

    /// Sign changes along the residuals, ordered by `x`.
    pub fn residual_sign_changes(&self) -> usize {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&i, &j| self.points[i].0.total_cmp(&self.points[j].0));
        let signs: Vec<bool> = order
            .iter()
            .map(|&i| self.residuals[i])
            .filter(|r| *r != 0.0)
            .map(|r| r > 0.0)
            .collect();
        signs.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn report(&self) -> FitReport {
        FitReport {
            generator: generator(),
            model: self.model.id().to_string(),
            coefficients: self
                .model
                .names()
                .iter()
                .zip(&self.coefficients)
                .map(|(n, c)| (n.to_string(), *c))
                .collect(),
            r_squared: self.r_squared,
            residual_se: self.residual_se,
            points: self.points.len(),
            fingerprint: fingerprint(&self.points),
        }
    }
}

/// JSON record of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub generator: String,
    pub model: String,
    pub coefficients: BTreeMap<String, f64>,
    pub r_squared: f64,
    pub residual_se: Option<f64>,
    pub points: usize,
    /// SHA-256 over the input pairs.
    pub fingerprint: String,
}

/// Hex SHA-256 of the little-endian bit patterns of the pairs.
pub fn fingerprint(points: &[(f64, f64)]) -> String {
    let mut h = Sha256::new();
    for (x, y) in points {
        h.update(x.to_bits().to_le_bytes());
        h.update(y.to_bits().to_le_bytes());
    }
    let mut out = String::with_capacity(64);
    for b in h.finalize().iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn residuals(design: &[Vec<f64>], y: &[f64], coef: &[f64]) -> Vec<f64> {
    design
        .iter()
        .zip(y)
        .map(|(row, yi)| yi - row.iter().zip(coef).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Residual sum of squares of `coef` on rows `design`.
pub fn rss(design: &[Vec<f64>], y: &[f64], coef: &[f64]) -> f64 {
    residuals(design, y, coef).iter().map(|r| r * r).sum()
}

/// `rss(coef + delta·e_k) - rss(coef)`, summed termwise to avoid cancellation.
pub fn rss_change(design: &[Vec<f64>], y: &[f64], coef: &[f64], k: usize, delta: f64) -> f64 {
    residuals(design, y, coef)
        .iter()
        .zip(design)
        .map(|(r, row)| {
            let d = delta * row[k];
            d * (d - 2.0 * r)
        })
        .sum()
}

/// Ordinary least squares through an SVD of the column-scaled design.
pub fn ols(design: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let m = design.len();
    let p = design.first().map_or(0, Vec::len);
    if m != y.len() || p == 0 || design.iter().any(|r| r.len() != p) {
        return Err(Error::param("design", "ragged design matrix or length mismatch"));
    }
    if m < p {
        return Err(Error::RankDeficient);
    }
    let mut a = DMatrix::from_fn(m, p, |i, j| design[i][j]);
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= RANK_TOL * smax {
        return Err(Error::RankDeficient);
    }
    let b = DVector::from_column_slice(y);
    let z = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::RankDeficient)?;
    Ok(z.iter().zip(&scale).map(|(c, s)| c / s).collect())
}

fn fit_with(
    model: FitModel,
    points: Vec<(f64, f64)>,
    design: Vec<Vec<f64>>,
    min_distinct: usize,
) -> Result<RegressionFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < min_distinct {
        return Err(Error::param(
            "points",
            format!("need at least {min_distinct} distinct abscissae, got {}", xs.len()),
        ));
    }
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let coefficients = ols(&design, &y)?;
    let residuals = residuals(&design, &y, &coefficients);
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let dof = y.len() - coefficients.len();
    Ok(RegressionFit {
        model,
        residual_se: (dof > 0).then(|| (ss_res / dof as f64).sqrt()),
        coefficients,
        r_squared,
        residuals,
        points,
    })
}

fn check_finite(points: &[(f64, f64)]) -> Result<()> {
    if points.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
        Ok(())
    } else {
        Err(Error::param("points", "non-finite input"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsFit {
    #[serde(rename = "N")]
    pub n: usize,
    pub g: f64,
    pub e: f64,
    /// `g / N`.
    pub c: f64,
    pub fit: RegressionFit,
}

/// Fits `T = -3 g ln ε + e` for one N from `(ε, T)` pairs.
pub fn fit_eps_dependence(n: usize, series: &[(f64, f64)]) -> Result<EpsFit> {
    check_finite(series)?;
    if series.iter().any(|(eps, _)| !(*eps > 0.0)) {
        return Err(Error::param("epsilon", "must be positive"));
    }
    let points: Vec<(f64, f64)> = series.iter().map(|&(e, t)| (-3.0 * e.ln(), t)).collect();
    let design = points.iter().map(|&(x, _)| vec![x, 1.0]).collect();
    let fit = fit_with(FitModel::TVsLnEps, points, design, 3)?;
    let (g, e) = (fit.coefficients[0], fit.coefficients[1]);
    Ok(EpsFit {
        n,
        g,
        e,
        c: g / n as f64,
        fit,
    })
}

fn n_ln_n(n: f64) -> f64 {
    n * n.ln()
}

/// Fits `e_N = a N ln N + b N + f` from `(N, e_N)` pairs.
#[allow(non_snake_case)]
pub fn fit_NlnN_offset(series: &[(f64, f64)]) -> Result<RegressionFit> {
    check_finite(series)?;
    let design = series.iter().map(|&(n, _)| vec![n_ln_n(n), n, 1.0]).collect();
    fit_with(FitModel::ENVsNLnN, series.to_vec(), design, 4)
}

/// Fits `T_HD = a N ln N + f` from `(N, T_HD)` pairs.
pub fn fit_thd(series: &[(f64, f64)]) -> Result<RegressionFit> {
    check_finite(series)?;
    let design = series.iter().map(|&(n, _)| vec![n_ln_n(n), 1.0]).collect();
    fit_with(FitModel::ThdVsNLnN, series.to_vec(), design, 3)
}

/// Per-N `(ε, T̂)` series of an aggregate table, ε ascending.
pub fn eps_series(rows: &[AggregateRow]) -> BTreeMap<usize, Vec<(f64, f64)>> {
    let mut out: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(t) = r.t_hat_mean {
            out.entry(r.n).or_default().push((r.epsilon, t));
        }
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// `(N, T̂_HD)` pairs, averaged over the ε cells of each N.
pub fn thd_series(rows: &[AggregateRow]) -> Vec<(f64, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(t) = r.thd_hat_mean {
            by_n.entry(r.n).or_default().push(t);
        }
    }
    by_n.into_iter()
        .map(|(n, v)| (n as f64, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

/// Per-N ε fits followed by the offset fit over N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFits {
    pub per_n: Vec<EpsFit>,
    pub offset: Option<RegressionFit>,
}

/// N values with fewer than three ε cells are skipped.
pub fn fit_scaling(rows: &[AggregateRow]) -> Result<ScalingFits> {
    let per_n = eps_series(rows)
        .into_iter()
        .filter(|(_, s)| s.len() >= 3)
        .map(|(n, s)| fit_eps_dependence(n, &s))
        .collect::<Result<Vec<_>>>()?;
    let offsets: Vec<(f64, f64)> = per_n.iter().map(|f| (f.n as f64, f.e)).collect();
    let offset = if offsets.len() >= 4 {
        Some(fit_NlnN_offset(&offsets)?)
    } else {
        None
    };
    Ok(ScalingFits { per_n, offset })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundComparison {
    pub model: ModelName,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub epsilon: f64,
    pub t_hat: f64,
    pub bound: f64,
    /// `bound - t_hat`.
    pub slack: f64,
    /// `bound / t_hat`.
    pub ratio: f64,
    pub exceeded: bool,
}

/// Estimate against the simplified bound for every cell.
pub fn compare_bounds(rows: &[AggregateRow]) -> Result<Vec<BoundComparison>> {
    let mut seen = std::collections::HashSet::new();
    rows.iter()
        .map(|r| {
            let cell = format!("{} N={} D={} eps={}", r.model, r.n, r.d, r.epsilon);
            if !seen.insert((r.model as u8, r.n, r.d, r.epsilon.to_bits())) {
                return Err(Error::MismatchedCells(format!("duplicate cell {cell}")));
            }
            let (Some(t_hat), Some(bound)) = (r.t_hat_mean, r.bound_simplified) else {
                return Err(Error::MismatchedCells(format!(
                    "{cell} lacks an estimate or a bound"
                )));
            };
            Ok(BoundComparison {
                model: r.model,
                n: r.n,
                d: r.d,
                epsilon: r.epsilon,
                t_hat,
                bound,
                slack: bound - t_hat,
                ratio: bound / t_hat,
                exceeded: t_hat > bound,
            })
        })
        .collect()
}
