// Variance inflation factors.
//
// VIF_j = 1 / (1 - R²_j) = TSS_j / RSS_j, with R²_j from regressing centred
// column j on the other centred columns. Projection uses an unnormalised
// Gram-Schmidt basis so exactly orthogonal inputs give exactly 1.0.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifEntry {
    pub name: String,
    /// `f64::INFINITY` for a column that is a linear combination of the others.
    pub vif: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centred(col: &[f64]) -> Vec<f64> {
    let m = col.iter().sum::<f64>() / col.len() as f64;
    col.iter().map(|v| v - m).collect()
}

/// Residual sum of squares of `target` after projecting out `others`
/// (all assumed already centred). Near-dependent regressors are skipped.
pub fn residual_sum_of_squares(target: &[f64], others: &[Vec<f64>]) -> f64 {
    let mut basis: Vec<(Vec<f64>, f64)> = Vec::new();
    for o in others {
        let scale = dot(o, o);
        let mut v = o.clone();
        for _ in 0..2 {
            for (q, qq) in &basis {
                let c = dot(q, &v) / qq;
                if c != 0.0 {
                    v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
                }
            }
        }
        let norm2 = dot(&v, &v);
        if scale > 0.0 && norm2 > 1e-20 * scale {
            basis.push((v, norm2));
        }
    }
    let mut r = target.to_vec();
    for _ in 0..2 {
        for (q, qq) in &basis {
            let c = dot(q, &r) / qq;
            if c != 0.0 {
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
            }
        }
    }
    dot(&r, &r)
}

/// VIF for each non-intercept predictor column.
pub fn compute_vif(columns: &[Vec<f64>], names: &[String]) -> Result<Vec<VifEntry>> {
    if columns.len() < 2 {
        return Err(Error::invalid("VIF needs at least 2 non-intercept columns"));
    }
    if names.len() != columns.len() {
        return Err(Error::invalid("VIF: one name per column required"));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("VIF: columns differ in length"));
    }
    let centred: Vec<Vec<f64>> = columns.iter().map(|c| centred(c)).collect();

    Ok(centred
        .iter()
        .enumerate()
        .map(|(j, target)| {
            let others: Vec<Vec<f64>> = centred
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, c)| c.clone())
                .collect();
            let tss = dot(target, target);
            let rss = residual_sum_of_squares(target, &others);
            let vif = if tss == 0.0 || rss <= 1e-12 * tss {
                f64::INFINITY
            } else {
                tss / rss
            };
            VifEntry {
                name: names[j].clone(),
                vif,
            }
        })
        .collect())
}
