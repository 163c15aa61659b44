use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, PivotedQr};
use crate::prepare::DesignMatrix;

use super::{cluster_cov_with_bread, nan, t_critical, LeastSquares, MAX_CONDITION, WEAK_F};

/// Sign of a first-stage coefficient judged by its 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    /// Treatment moves the item to a smaller (better) position.
    Negative,
    Null,
    Positive,
}

impl Classification {
    pub fn from_interval(low: f64, high: f64) -> Self {
        if high < 0.0 {
            Classification::Negative
        } else if low > 0.0 {
            Classification::Positive
        } else {
            Classification::Null
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Negative => "negative",
            Classification::Null => "null",
            Classification::Positive => "positive",
        }
    }
}

/// Regression of one endogenous column on the instruments and controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageEquation {
    pub endogenous: String,
    pub instruments: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(deserialize_with = "nan::vec")]
    pub std_errors: Vec<f64>,
    /// Cluster-robust Wald statistic on the excluded instruments, divided by their count.
    #[serde(deserialize_with = "nan::scalar")]
    pub f_stat: f64,
    pub f_df: (usize, usize),
    #[serde(deserialize_with = "nan::scalar")]
    pub f_p_value: f64,
    /// 95% interval of the first instrument's coefficient.
    #[serde(deserialize_with = "nan::scalar")]
    pub ci_low: f64,
    #[serde(deserialize_with = "nan::scalar")]
    pub ci_high: f64,
    /// Only for a single excluded instrument.
    pub classification: Option<Classification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageReport {
    pub equations: Vec<FirstStageEquation>,
    pub n_obs: usize,
    pub n_clusters: usize,
}

impl FirstStageReport {
    pub fn is_weak(&self) -> bool {
        self.equations.iter().any(|e| !(e.f_stat >= WEAK_F))
    }

    pub fn equation(&self, endogenous: &str) -> Option<&FirstStageEquation> {
        self.equations.iter().find(|e| e.endogenous == endogenous)
    }
}

/// `pi' V^{-1} pi / q`.
fn wald_f(pi: &[f64], v: &Matrix) -> f64 {
    if pi.len() == 1 {
        return pi[0] * pi[0] / v[(0, 0)];
    }
    let qr = PivotedQr::new(v.clone());
    if !(qr.condition_number() < MAX_CONDITION) {
        return f64::NAN;
    }
    dot(pi, &qr.solve(pi)) / pi.len() as f64
}

/// Per-endogenous first-stage fits with cluster-robust inference.
pub fn first_stage(d: &DesignMatrix) -> Result<FirstStageReport> {
    let kz = d.instruments.ncols();
    if kz == 0 || kz < d.endogenous.ncols() {
        return Err(Error::Underidentified {
            instruments: kz,
            endogenous: d.endogenous.ncols(),
        });
    }
    let zx = Matrix::hstack(&[&d.instruments, &d.controls]);
    let names: Vec<String> = d
        .instrument_names
        .iter()
        .chain(&d.control_names)
        .cloned()
        .collect();
    let ls = LeastSquares::new(&zx, &names)?;
    let bread = ls.gram_inverse();
    let mut equations = Vec::with_capacity(d.endogenous.ncols());
    let mut n_clusters = 0;
    for (name, w) in d.endogenous_names.iter().zip(d.endogenous.columns()) {
        let b = ls.coefficients(w);
        let fitted = zx.matvec(&b);
        let u: Vec<f64> = w.iter().zip(&fitted).map(|(w, f)| w - f).collect();
        let (v, g) = cluster_cov_with_bread(&zx, &bread, &u, &d.clusters)?;
        n_clusters = g;
        let pi = b[..kz].to_vec();
        let std_errors: Vec<f64> = (0..kz).map(|j| v[(j, j)].max(0.0).sqrt()).collect();
        let mut v_pi = Matrix::zeros(kz, kz);
        for a in 0..kz {
            for c in 0..kz {
                v_pi[(a, c)] = v[(a, c)];
            }
        }
        let f_stat = wald_f(&pi, &v_pi);
        let df = (kz, g - 1);
        let f_p_value = if f_stat.is_finite() {
            FisherSnedecor::new(df.0 as f64, df.1 as f64)
                .map(|f| f.sf(f_stat))
                .unwrap_or(f64::NAN)
        } else if f_stat == f64::INFINITY {
            0.0
        } else {
            f64::NAN
        };
        let half = t_critical(0.05, g - 1) * std_errors[0];
        let (ci_low, ci_high) = (pi[0] - half, pi[0] + half);
        equations.push(FirstStageEquation {
            endogenous: name.clone(),
            instruments: d.instrument_names.clone(),
            coefficients: pi,
            std_errors,
            f_stat,
            f_df: df,
            f_p_value,
            ci_low,
            ci_high,
            classification: (kz == 1).then(|| Classification::from_interval(ci_low, ci_high)),
        });
    }
    Ok(FirstStageReport {
        equations,
        n_obs: d.n_obs(),
        n_clusters,
    })
}
