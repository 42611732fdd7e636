//! Random-intercept linear mixed model fitted by REML.
//!
//! `y = Xβ + Zb + e`, `b ~ N(0, σ_b²)` per group, `e ~ N(0, σ_e²)`.
//! With `θ = σ_b²/σ_e²` the marginal covariance is `σ_e² H`, where `H` is
//! block diagonal with blocks `I + θ 11'`, so `H_k⁻¹ = I - c_k 11'` with
//! `c_k = θ / (1 + n_k θ)` and `log|H| = Σ log(1 + n_k θ)`.
//!
//! For fixed θ the GLS estimate and residual variance are closed form; the
//! profiled REML criterion
//!
//! ```text
//! ℓ(θ) = -½ [ (n-p)(1 + log(2π σ̂²(θ))) + log|H| + log|X'H⁻¹X| ]
//! ```
//!
//! is maximised over `log θ` with a coarse grid followed by golden-section
//! refinement. θ = 0 is checked explicitly so boundary (singular) fits are
//! reported as `σ_b² = 0`.

use std::collections::BTreeMap;
use std::fmt::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::vif::{residual_sum_of_squares, VifEntry};
use super::{normal_p_value, significance_stars};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LmmDesign {
    pub response: Vec<f64>,
    /// Column names, parallel to `columns`. An `intercept` column is not
    /// added automatically.
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Grouping label (participant) per row.
    pub groups: Vec<String>,
}

/// Affine maps applied by [`LmmDesign::normalized`], so estimates and
/// residuals can be mapped back to original units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub response_mean: f64,
    pub response_scale: f64,
    /// (centre, scale) per column; intercept is (0, 1).
    pub columns: Vec<(f64, f64)>,
}

fn is_intercept(name: &str, col: &[f64]) -> bool {
    name == "intercept" || col.iter().all(|&v| v == 1.0)
}

fn center_scale(col: &[f64], scale: bool) -> (f64, f64) {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    if !scale || col.len() < 2 {
        return (m, 1.0);
    }
    let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, if sd > 0.0 { sd } else { 1.0 })
}

impl LmmDesign {
    pub fn new(response: Vec<f64>, names: Vec<String>, columns: Vec<Vec<f64>>, groups: Vec<String>) -> Result<Self> {
        let n = response.len();
        if names.len() != columns.len() {
            return Err(Error::invalid("LMM design: one name per column required"));
        }
        if groups.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("LMM design: response, columns and groups must have equal length"));
        }
        if response.iter().chain(columns.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("LMM design: non-finite value"));
        }
        Ok(LmmDesign {
            response,
            names,
            columns,
            groups,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    /// Standardise the response and continuous predictors (mean 0, sample
    /// SD 1); centre binary 0/1 predictors; leave the intercept alone.
    pub fn normalized(&self) -> (LmmDesign, Normalization) {
        let (rm, rs) = center_scale(&self.response, true);
        let response = self.response.iter().map(|v| (v - rm) / rs).collect();
        let mut maps = Vec::with_capacity(self.columns.len());
        let columns = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                if is_intercept(name, col) {
                    maps.push((0.0, 1.0));
                    return col.clone();
                }
                let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
                let (c, s) = center_scale(col, !binary);
                maps.push((c, s));
                col.iter().map(|v| (v - c) / s).collect()
            })
            .collect();
        (
            LmmDesign {
                response,
                names: self.names.clone(),
                columns,
                groups: self.groups.clone(),
            },
            Normalization {
                response_mean: rm,
                response_scale: rs,
                columns: maps,
            },
        )
    }

    /// Names of columns that are linear combinations of earlier columns.
    pub fn collinear_columns(&self) -> Vec<String> {
        let mut accepted: Vec<Vec<f64>> = Vec::new();
        let mut bad = Vec::new();
        for (name, col) in self.names.iter().zip(&self.columns) {
            let norm2: f64 = col.iter().map(|v| v * v).sum();
            let rss = residual_sum_of_squares(col, &accepted);
            if norm2 == 0.0 || rss <= 1e-10 * norm2 {
                bad.push(name.clone());
            } else {
                accepted.push(col.clone());
            }
        }
        bad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmmConfig {
    pub log_theta_min: f64,
    pub log_theta_max: f64,
    pub grid_points: usize,
    /// Golden-section stopping width on log θ.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LmmConfig {
    fn default() -> Self {
        LmmConfig {
            log_theta_min: -12.0,
            log_theta_max: 12.0,
            grid_points: 25,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmmFit {
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Two-sided p-values from the normal approximation to t (no df correction).
    pub p_values: Vec<f64>,
    pub sigma_e2: f64,
    pub sigma_b2: f64,
    pub theta: f64,
    pub converged: bool,
    /// θ at the lower boundary: σ_b² = 0 (singular fit).
    pub boundary: bool,
    pub log_reml: f64,
    pub iterations: usize,
    /// Predicted random intercept per group.
    pub group_effects: BTreeMap<String, f64>,
    /// Best REML criterion after each optimiser evaluation.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl LmmFit {
    pub fn fixed_prediction(&self, design: &LmmDesign) -> Vec<f64> {
        (0..design.n_rows())
            .map(|i| design.columns.iter().zip(&self.beta).map(|(c, b)| c[i] * b).sum())
            .collect()
    }

    /// `y - Xβ̂ - b̂_group` per row.
    pub fn conditional_residuals(&self, design: &LmmDesign) -> Vec<f64> {
        self.fixed_prediction(design)
            .into_iter()
            .zip(&design.response)
            .zip(&design.groups)
            .map(|((fit, y), g)| y - fit - self.group_effects.get(g).copied().unwrap_or(0.0))
            .collect()
    }
}

struct Prepared<'a> {
    design: &'a LmmDesign,
    n: usize,
    p: usize,
    row_group: Vec<usize>,
    group_names: Vec<String>,
    group_sizes: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// X_k' 1 per group
    group_x_sums: Vec<DVector<f64>>,
    group_y_sums: Vec<f64>,
}

struct Evaluation {
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    rss: f64,
    log_reml: f64,
    residual_group_means: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(design: &'a LmmDesign) -> Result<Self> {
        let n = design.n_rows();
        let p = design.columns.len();
        if p == 0 {
            return Err(Error::invalid("LMM design has no fixed-effect columns"));
        }
        if n <= p {
            return Err(Error::invalid(format!("LMM needs more rows ({n}) than fixed effects ({p})")));
        }
        let collinear = design.collinear_columns();
        if !collinear.is_empty() {
            return Err(Error::RankDeficient { columns: collinear });
        }

        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for g in &design.groups {
            let next = index.len();
            index.entry(g.as_str()).or_insert(next);
        }
        // group ids in first-appearance order, names sorted for reporting
        let mut group_names = vec![String::new(); index.len()];
        for (name, &k) in &index {
            group_names[k] = name.to_string();
        }
        let row_group: Vec<usize> = design.groups.iter().map(|g| index[g.as_str()]).collect();

        let x = DMatrix::from_fn(n, p, |i, j| design.columns[j][i]);
        let y = DVector::from_column_slice(&design.response);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let g = group_names.len();
        let mut group_sizes = vec![0.0; g];
        let mut group_x_sums = vec![DVector::zeros(p); g];
        let mut group_y_sums = vec![0.0; g];
        for i in 0..n {
            let k = row_group[i];
            group_sizes[k] += 1.0;
            group_y_sums[k] += design.response[i];
            for j in 0..p {
                group_x_sums[k][j] += design.columns[j][i];
            }
        }
        Ok(Prepared {
            design,
            n,
            p,
            row_group,
            group_names,
            group_sizes,
            xtx,
            xty,
            group_x_sums,
            group_y_sums,
        })
    }

    fn shrink(&self, theta: f64, k: usize) -> f64 {
        theta / (1.0 + self.group_sizes[k] * theta)
    }

    fn evaluate(&self, theta: f64) -> Option<Evaluation> {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        for k in 0..self.group_names.len() {
            let c = self.shrink(theta, k);
            if c == 0.0 {
                continue;
            }
            let s = &self.group_x_sums[k];
            a -= c * s * s.transpose();
            b -= c * self.group_y_sums[k] * s;
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();

        let mut rr = 0.0;
        let mut group_r = vec![0.0; self.group_names.len()];
        for i in 0..self.n {
            let fit: f64 = (0..self.p).map(|j| self.design.columns[j][i] * beta[j]).sum();
            let r = self.design.response[i] - fit;
            rr += r * r;
            group_r[self.row_group[i]] += r;
        }
        let mut rss = rr;
        for (k, gr) in group_r.iter().enumerate() {
            rss -= self.shrink(theta, k) * gr * gr;
        }
        let rss = rss.max(f64::MIN_POSITIVE);
        let log_det_h: f64 = self.group_sizes.iter().map(|&nk| (1.0 + nk * theta).ln()).sum();
        let dof = (self.n - self.p) as f64;
        let sigma2 = rss / dof;
        let log_reml =
            -0.5 * (dof * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln()) + log_det_h + log_det_a);
        if !log_reml.is_finite() {
            return None;
        }
        let residual_group_means = group_r
            .iter()
            .zip(&self.group_sizes)
            .map(|(s, nk)| s / nk)
            .collect();
        Some(Evaluation {
            a_inv: chol.inverse(),
            beta,
            rss,
            log_reml,
            residual_group_means,
        })
    }

    fn finish(&self, theta: f64, eval: Evaluation, converged: bool, boundary: bool, iterations: usize, trace: Vec<f64>) -> LmmFit {
        let sigma_e2 = eval.rss / (self.n - self.p) as f64;
        let se: Vec<f64> = (0..self.p).map(|j| (sigma_e2 * eval.a_inv[(j, j)]).sqrt()).collect();
        let beta: Vec<f64> = eval.beta.iter().copied().collect();
        let t_values: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
        let p_values = t_values.iter().map(|&t| normal_p_value(t)).collect();
        let group_effects = self
            .group_names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let nk = self.group_sizes[k];
                let blup = if theta == 0.0 {
                    0.0
                } else {
                    nk * theta / (1.0 + nk * theta) * eval.residual_group_means[k]
                };
                (name.clone(), blup)
            })
            .collect();
        LmmFit {
            terms: self.design.names.clone(),
            beta,
            se,
            t_values,
            p_values,
            sigma_e2,
            sigma_b2: theta * sigma_e2,
            theta,
            converged,
            boundary,
            log_reml: eval.log_reml,
            iterations,
            group_effects,
            trace,
        }
    }
}

/// GLS fit with the variance ratio held at `theta` (θ = 0 is OLS).
pub fn fit_at_theta(design: &LmmDesign, theta: f64) -> Result<LmmFit> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("variance ratio {theta} must be finite and >= 0")));
    }
    let prep = Prepared::new(design)?;
    let eval = prep
        .evaluate(theta)
        .ok_or_else(|| Error::Numeric(format!("GLS system singular at θ = {theta}")))?;
    let log_reml = eval.log_reml;
    Ok(prep.finish(theta, eval, true, theta == 0.0, 0, vec![log_reml]))
}

pub fn fit_random_intercept_lmm(design: &LmmDesign, config: &LmmConfig) -> Result<LmmFit> {
    let prep = Prepared::new(design)?;
    if prep.group_names.len() < 2 {
        log::warn!("single group: random-intercept variance not identifiable, fitting with σ_b² = 0");
        let eval = prep
            .evaluate(0.0)
            .ok_or_else(|| Error::Numeric("OLS system singular".into()))?;
        let ll = eval.log_reml;
        return Ok(prep.finish(0.0, eval, true, true, 0, vec![ll]));
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut best = (f64::NEG_INFINITY, f64::NAN); // (ℓ, log θ)
    let mut objective = |t: f64| -> f64 {
        let ll = prep.evaluate(t.exp()).map_or(f64::NEG_INFINITY, |e| e.log_reml);
        if ll > best.0 {
            best = (ll, t);
        }
        trace.push(best.0);
        ll
    };

    let g = config.grid_points.max(3);
    let step = (config.log_theta_max - config.log_theta_min) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|i| config.log_theta_min + i as f64 * step).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let i_best = values
        .iter()
        .enumerate()
        .fold(0, |bi, (i, v)| if *v > values[bi] { i } else { bi });

    let mut lo = grid[i_best.saturating_sub(1)];
    let mut hi = grid[(i_best + 1).min(g - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = objective(c);
    let mut fd = objective(d);
    let mut iterations = 0;
    while hi - lo > config.tol && iterations < config.max_iter {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = objective(d);
        }
        iterations += 1;
    }
    let converged = hi - lo <= config.tol;
    if !converged {
        log::warn!("REML optimiser stopped after {iterations} iterations (bracket width {})", hi - lo);
    }

    let (best_ll, best_t) = best;
    if !best_ll.is_finite() {
        return Err(Error::Numeric("REML criterion not finite anywhere on the search interval".into()));
    }
    let at_zero = prep.evaluate(0.0);
    if let Some(zero) = at_zero {
        if zero.log_reml >= best_ll {
            trace.push(zero.log_reml);
            return Ok(prep.finish(0.0, zero, true, true, iterations, trace));
        }
    }
    let theta = best_t.exp();
    let eval = prep
        .evaluate(theta)
        .ok_or_else(|| Error::Numeric(format!("GLS system singular at θ = {theta}")))?;
    Ok(prep.finish(theta, eval, converged, false, iterations, trace))
}

/// Tab-separated `term, estimate, se, t, p, sig, VIF` table.
pub fn format_fit_table(fit: &LmmFit, vif: Option<&[VifEntry]>) -> String {
    let mut out = String::from("term\testimate\tse\tt\tp_normal\tsig\tVIF\n");
    for (j, term) in fit.terms.iter().enumerate() {
        let v = vif
            .and_then(|v| v.iter().find(|e| &e.name == term))
            .map(|e| format!("{:.2}", e.vif))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{term}\t{:.6}\t{:.6}\t{:.3}\t{:.4}\t{}\t{v}",
            fit.beta[j],
            fit.se[j],
            fit.t_values[j],
            fit.p_values[j],
            significance_stars(fit.p_values[j])
        );
    }
    let _ = writeln!(
        out,
        "# sigma_e2={:.6} sigma_b2={:.6} log_reml={:.6} converged={} boundary={}",
        fit.sigma_e2, fit.sigma_b2, fit.log_reml, fit.converged, fit.boundary
    );
    out
}
