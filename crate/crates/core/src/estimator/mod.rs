//! OLS, 2SLS and ILS fits with cluster-robust inference.

mod covariance;
mod effect;
mod first_stage;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, PivotedQr};
use crate::prepare::{build_design, slice_by_item, DesignMatrix, Frame};
use crate::report::stars;
use crate::specs::{Method, ModelSpec};

pub use covariance::{cluster_cov, cluster_cov_with_bread};
pub use effect::{aggregate_effect, EffectEstimate, ItemEffect, ItemFit};
pub use first_stage::{first_stage, Classification, FirstStageEquation, FirstStageReport};

/// Designs whose (column-equilibrated) condition number reaches this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// First-stage F below which an instrument is flagged as weak.
pub const WEAK_F: f64 = 10.0;

/// One fitted regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Spec name, or empty for ad-hoc designs.
    #[serde(default)]
    pub spec: String,
    pub method: Method,
    pub outcome: String,
    /// Endogenous first, then controls, intercept last.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(deserialize_with = "nan::matrix")]
    pub covariance: Vec<Vec<f64>>,
    #[serde(deserialize_with = "nan::vec")]
    pub std_errors: Vec<f64>,
    #[serde(deserialize_with = "nan::vec")]
    pub t_stats: Vec<f64>,
    #[serde(deserialize_with = "nan::vec")]
    pub p_values: Vec<f64>,
    pub stars: Vec<String>,
    pub n_obs: usize,
    pub n_clusters: usize,
    #[serde(deserialize_with = "nan::scalar")]
    pub r_squared: f64,
    #[serde(deserialize_with = "nan::scalar")]
    pub residual_std_error: f64,
    pub residual_df: usize,
    #[serde(default)]
    pub dropped_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage: Option<FirstStageReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Result<f64> {
        self.index_of(name)
            .map(|i| self.coefficients[i])
            .ok_or_else(|| Error::MissingCoefficient(name.to_owned()))
    }

    pub fn std_error(&self, name: &str) -> Result<f64> {
        self.index_of(name)
            .map(|i| self.std_errors[i])
            .ok_or_else(|| Error::MissingCoefficient(name.to_owned()))
    }

    pub fn is_weak(&self) -> bool {
        self.first_stage.as_ref().is_some_and(FirstStageReport::is_weak)
    }
}

/// JSON has no NaN; serde_json writes non-finite floats as `null`, read back here as NaN.
mod nan {
    use serde::{Deserialize, Deserializer};

    fn f(v: Option<f64>) -> f64 {
        v.unwrap_or(f64::NAN)
    }

    pub fn scalar<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Option::<f64>::deserialize(d).map(f)
    }

    pub fn vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Option<f64>>::deserialize(d).map(|v| v.into_iter().map(f).collect())
    }

    pub fn matrix<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<Option<f64>>>::deserialize(d)
            .map(|m| m.into_iter().map(|r| r.into_iter().map(f).collect()).collect())
    }
}

/// Least squares on a column-equilibrated copy of `a`, so the rank guard
/// does not depend on the units of each column.
pub(crate) struct LeastSquares {
    qr: PivotedQr,
    scale: Vec<f64>,
}

impl LeastSquares {
    pub(crate) fn new(a: &Matrix, names: &[String]) -> Result<Self> {
        let (n, k) = (a.nrows(), a.ncols());
        if n < k {
            return Err(Error::Underdetermined { rows: n, columns: k });
        }
        let mut scaled = a.clone();
        let mut scale = Vec::with_capacity(k);
        for j in 0..k {
            let col = scaled.col_mut(j);
            let norm = dot(col, col).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
                return Err(Error::ConstantColumn(name));
            }
            col.iter_mut().for_each(|v| *v /= norm);
            scale.push(norm);
        }
        let qr = PivotedQr::new(scaled);
        let condition = qr.condition_number();
        if !(condition < MAX_CONDITION) {
            return Err(Error::Collinear { condition });
        }
        Ok(Self { qr, scale })
    }

    pub(crate) fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let mut b = self.qr.solve(y);
        b.iter_mut().zip(&self.scale).for_each(|(b, s)| *b /= s);
        b
    }

    pub(crate) fn project(&self, y: &[f64]) -> Vec<f64> {
        self.qr.project(y)
    }

    /// `(A'A)^{-1}` of the unscaled matrix.
    pub(crate) fn gram_inverse(&self) -> Matrix {
        let mut g = self.qr.gram_inverse();
        let k = self.scale.len();
        for j in 0..k {
            for i in 0..k {
                g[(i, j)] /= self.scale[i] * self.scale[j];
            }
        }
        g
    }
}

/// `y - A b`.
fn residuals(a: &Matrix, b: &[f64], y: &[f64]) -> Vec<f64> {
    let fitted = a.matvec(b);
    y.iter().zip(fitted).map(|(y, f)| y - f).collect()
}

/// Two-sided p-value of a t statistic.
pub(crate) fn t_p_value(t: f64, df: usize) -> f64 {
    if t.is_nan() || df == 0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// `t_{1 - alpha/2, df}`.
pub(crate) fn t_critical(alpha: f64, df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df > 0")
        .inverse_cdf(1.0 - alpha / 2.0)
}

fn t_stat(coef: f64, se: f64) -> f64 {
    if se == 0.0 && coef == 0.0 {
        f64::NAN
    } else {
        coef / se
    }
}

/// Everything after the point estimates: covariance, tests and fit statistics.
fn finish(
    d: &DesignMatrix,
    method: Method,
    coefficients: Vec<f64>,
    score_design: &Matrix,
    bread: &Matrix,
    structural: &Matrix,
) -> Result<FitResult> {
    let n = d.n_obs();
    let k = coefficients.len();
    let u = residuals(structural, &coefficients, &d.y);
    let (cov, g) = cluster_cov_with_bread(score_design, bread, &u, &d.clusters)?;
    let std_errors: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| t_stat(b, se))
        .collect();
    let p_values: Vec<f64> = t_stats.iter().map(|&t| t_p_value(t, g - 1)).collect();
    let ssr = dot(&u, &u);
    let mean = d.y.iter().sum::<f64>() / n as f64;
    let tss: f64 = d.y.iter().map(|y| (y - mean).powi(2)).sum();
    let residual_df = n.saturating_sub(k);
    Ok(FitResult {
        spec: String::new(),
        method,
        outcome: d.outcome_name.clone(),
        names: d.coefficient_names(),
        stars: p_values.iter().map(|&p| stars(p).to_owned()).collect(),
        coefficients,
        covariance: cov.to_rows(),
        std_errors,
        t_stats,
        p_values,
        n_obs: n,
        n_clusters: g,
        r_squared: if tss > 0.0 { 1.0 - ssr / tss } else { f64::NAN },
        residual_std_error: if residual_df > 0 {
            (ssr / residual_df as f64).sqrt()
        } else {
            f64::NAN
        },
        residual_df,
        dropped_rows: d.dropped_rows,
        first_stage: None,
        warnings: Vec::new(),
    })
}

/// Ordinary least squares of the outcome on every regressor, endogenous ones included.
pub fn fit_ols(d: &DesignMatrix) -> Result<FitResult> {
    let x = Matrix::hstack(&[&d.endogenous, &d.controls]);
    let ls = LeastSquares::new(&x, &d.coefficient_names())?;
    let b = ls.coefficients(&d.y);
    finish(d, Method::Ols, b, &x, &ls.gram_inverse(), &x)
}

/// The second-stage regressor matrix `[W_hat, X]` and its least-squares solver.
fn second_stage(d: &DesignMatrix) -> Result<(Matrix, LeastSquares)> {
    if d.instruments.ncols() < d.endogenous.ncols() {
        return Err(Error::Underidentified {
            instruments: d.instruments.ncols(),
            endogenous: d.endogenous.ncols(),
        });
    }
    let zx = Matrix::hstack(&[&d.instruments, &d.controls]);
    let zx_names: Vec<String> = d
        .instrument_names
        .iter()
        .chain(&d.control_names)
        .cloned()
        .collect();
    let first = LeastSquares::new(&zx, &zx_names)?;
    let w_hat: Vec<Vec<f64>> = d.endogenous.columns().map(|w| first.project(w)).collect();
    let w_hat = if w_hat.is_empty() {
        Matrix::zeros(d.n_obs(), 0)
    } else {
        Matrix::from_columns(&w_hat)
    };
    let m = Matrix::hstack(&[&w_hat, &d.controls]);
    let ls = LeastSquares::new(&m, &d.coefficient_names())?;
    Ok((m, ls))
}

fn with_diagnostics(d: &DesignMatrix, mut fit: FitResult) -> Result<FitResult> {
    let report = first_stage(d)?;
    for eq in &report.equations {
        if eq.f_stat < WEAK_F || eq.f_stat.is_nan() {
            fit.warnings.push(format!(
                "weak instrument: first-stage F for `{}` is {:.3} (< {WEAK_F})",
                eq.endogenous, eq.f_stat
            ));
        }
    }
    fit.first_stage = Some(report);
    Ok(fit)
}

/// Two-stage least squares.
///
/// Standard errors, R² and the residual standard error use the structural
/// residuals `Y - [W, X] b`, so R² can be negative.
pub fn fit_2sls(d: &DesignMatrix) -> Result<FitResult> {
    let (m, ls) = second_stage(d)?;
    let b = ls.coefficients(&d.y);
    let structural = Matrix::hstack(&[&d.endogenous, &d.controls]);
    let fit = finish(d, Method::Tsls, b, &m, &ls.gram_inverse(), &structural)?;
    with_diagnostics(d, fit)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Indirect least squares: reduced-form over first-stage instrument coefficient.
pub fn fit_ils(d: &DesignMatrix) -> Result<FitResult> {
    let (kw, kz) = (d.endogenous.ncols(), d.instruments.ncols());
    if kw != 1 || kz != 1 {
        return Err(Error::NotJustIdentified {
            endogenous: kw,
            instruments: kz,
        });
    }
    let zx = Matrix::hstack(&[&d.instruments, &d.controls]);
    let zx_names: Vec<String> = d
        .instrument_names
        .iter()
        .chain(&d.control_names)
        .cloned()
        .collect();
    let ls = LeastSquares::new(&zx, &zx_names)?;
    let w = d.endogenous.col(0);
    let pi = ls.coefficients(w);
    let gamma = ls.coefficients(&d.y);
    let z_sd = std_dev(d.instruments.col(0));
    if pi[0] == 0.0 || (pi[0] * z_sd).abs() <= 1e-10 * std_dev(w) {
        return Err(Error::ZeroFirstStage);
    }
    let beta_w = gamma[0] / pi[0];
    let mut b = vec![beta_w];
    b.extend(gamma[1..].iter().zip(&pi[1..]).map(|(g, p)| g - beta_w * p));

    let (m, second) = second_stage(d)?;
    let structural = Matrix::hstack(&[&d.endogenous, &d.controls]);
    let fit = finish(d, Method::Ils, b, &m, &second.gram_inverse(), &structural)?;
    with_diagnostics(d, fit)
}

pub fn fit(d: &DesignMatrix, method: Method) -> Result<FitResult> {
    match method {
        Method::Ols => fit_ols(d),
        Method::Tsls => fit_2sls(d),
        Method::Ils => fit_ils(d),
    }
}

/// Builds the design of `spec` on `frame` and fits it.
pub fn estimate<F: Frame + ?Sized>(frame: &F, spec: &ModelSpec) -> Result<FitResult> {
    let d = build_design(frame, spec)?;
    let mut f = fit(&d, spec.method)?;
    f.spec = spec.name.clone();
    Ok(f)
}

/// Fits `spec` separately on each item's slice, in parallel, ordered by item id.
pub fn fit_items(ds: &Dataset, items: &[u64], spec: &ModelSpec) -> Vec<(u64, Result<FitResult>)> {
    let mut items = items.to_vec();
    items.sort_unstable();
    items.dedup();
    items
        .par_iter()
        .map(|&item| {
            let fit = slice_by_item(ds, item).and_then(|slice| estimate(&slice, spec));
            (item, fit)
        })
        .collect()
}
