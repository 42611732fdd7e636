//! Numerical statistics: Pearson correlation, t-based confidence intervals,
//! variance inflation factors and a random-intercept linear mixed model.

mod lmm;
mod vif;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub use lmm::{
    fit_at_theta, fit_random_intercept_lmm, format_fit_table, LmmConfig, LmmDesign, LmmFit, Normalization,
};
pub use vif::{compute_vif, residual_sum_of_squares, VifEntry};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with denominator `n - ddof`.
pub fn std_dev(values: &[f64], ddof: usize) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - ddof) as f64).sqrt()
}

/// Product-moment correlation. `None` when either input is constant.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "pearson_r: length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson_r needs at least 2 pairs"));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
    pub level: f64,
}

impl fmt::Display for MeanCi {
    /// `mean (half-width)`, e.g. `0.92 (0.034)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.3})", self.mean, self.half_width)
    }
}

/// Mean with a Student-t confidence half-width `t(n-1, 1-α/2) · s / √n`.
pub fn mean_ci(values: &[f64], level: f64) -> Result<MeanCi> {
    if values.len() < 2 {
        return Err(Error::invalid("mean_ci needs at least 2 values"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} not in (0, 1)")));
    }
    let n = values.len();
    let m = mean(values);
    let s = std_dev(values, 1);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    Ok(MeanCi {
        mean: m,
        half_width: t * s / (n as f64).sqrt(),
        n,
        level,
    })
}

/// Ordinary least squares via QR. `x` is n × p, full column rank.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::invalid("ols: row count mismatch"));
    }
    if x.nrows() < x.ncols() {
        return Err(Error::invalid("ols: fewer rows than columns"));
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("ols: singular design".into()))?;
    Ok(beta.iter().copied().collect())
}

/// Two-sided p-value for a t statistic under the standard normal.
pub fn normal_p_value(t: f64) -> f64 {
    use statrs::distribution::Normal;
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - z.cdf(t.abs()))
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}
