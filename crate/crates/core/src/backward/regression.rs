//! Least-squares conditional expectations on path features.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::PathBatch;
use crate::error::{Error, Result};
use crate::pathspace::norm;

/// Base features observed at each grid time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    /// `X(s)`, every coordinate.
    Terminal,
    /// `∫_0^s X dr` (trapezoid), every coordinate.
    Integral,
    /// `max_{r <= s} |X(r)|`.
    RunningMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionParams {
    pub features: Vec<Feature>,
    /// 1 (affine) or 2 (with all degree-2 monomials).
    pub degree: usize,
    /// Eigenvalues below `eig_rtol · λ_max` of the Gram matrix are dropped.
    pub eig_rtol: f64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            features: vec![Feature::Terminal, Feature::Integral, Feature::RunningMax],
            degree: 2,
            eig_rtol: 1e-10,
        }
    }
}

/// Per-path base features at every continuation step: `[path][k][feature]`.
pub(crate) struct FeatureTable {
    pub width: usize,
    pub steps: usize,
    pub data: Vec<f64>,
}

impl FeatureTable {
    pub fn build(batch: &PathBatch, features: &[Feature]) -> Self {
        let n = batch.dim();
        let width: usize = features
            .iter()
            .map(|f| match f {
                Feature::Terminal | Feature::Integral => n,
                Feature::RunningMax => 1,
            })
            .sum();
        let start = batch.start;
        let steps = batch.steps() + 1;
        let mut data = vec![0.0; batch.len() * steps * width];
        let mut integral = vec![0.0; n];
        for (i, p) in batch.paths.iter().enumerate() {
            let t = p.times();
            integral.iter_mut().for_each(|v| *v = 0.0);
            let mut run_max = 0.0f64;
            for k in 0..p.len() {
                let x = p.point_at(k);
                if k > 0 {
                    let xp = p.sample(k - 1);
                    for j in 0..n {
                        integral[j] += 0.5 * (xp[j] + p.sample(k)[j]) * (t[k] - t[k - 1]);
                    }
                }
                run_max = run_max.max(norm(x));
                if k < start {
                    continue;
                }
                let row = &mut data[((i * steps) + k - start) * width..][..width];
                let mut c = 0;
                for f in features {
                    match f {
                        Feature::Terminal => {
                            row[c..c + n].copy_from_slice(x);
                            c += n;
                        }
                        Feature::Integral => {
                            row[c..c + n].copy_from_slice(&integral);
                            c += n;
                        }
                        Feature::RunningMax => {
                            row[c] = run_max;
                            c += 1;
                        }
                    }
                }
            }
        }
        Self { width, steps, data }
    }

    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        &self.data[(i * self.steps + k) * self.width..][..self.width]
    }
}

/// Diagnostics of one regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitInfo {
    pub columns: usize,
    pub rank: usize,
    pub condition: f64,
}

/// Expands base features into the design row (without the intercept).
fn expand(base: &[f64], degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(base);
    if degree >= 2 {
        for a in 0..base.len() {
            for b in a..base.len() {
                out.push(base[a] * base[b]);
            }
        }
    }
}

/// Regresses every target column on the features of `rows` and writes the
/// fitted values. `targets` is `[row][target]`, `fitted` has the same shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit(
    table: &FeatureTable,
    rows: &[usize],
    k: usize,
    params: &RegressionParams,
    targets: &[f64],
    n_targets: usize,
    fitted: &mut [f64],
    step: usize,
) -> Result<FitInfo> {
    let m = rows.len();
    let mut buf = Vec::new();
    expand(table.row(rows[0], k), params.degree, &mut buf);
    let raw_cols = buf.len();
    let mut design = vec![0.0; m * raw_cols];
    for (r, &i) in rows.iter().enumerate() {
        expand(table.row(i, k), params.degree, &mut buf);
        design[r * raw_cols..(r + 1) * raw_cols].copy_from_slice(&buf);
    }
    // standardise, dropping columns without spread
    let mut keep = Vec::new();
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    for c in 0..raw_cols {
        let mu = (0..m).map(|r| design[r * raw_cols + c]).sum::<f64>() / m as f64;
        let var = (0..m).map(|r| (design[r * raw_cols + c] - mu).powi(2)).sum::<f64>() / m as f64;
        let s = var.sqrt();
        if s > 1e-12 * (1.0 + mu.abs()) {
            keep.push(c);
            mean.push(mu);
            sd.push(s);
        }
    }
    let p = keep.len() + 1;
    if m < p {
        return Err(Error::RankDeficient { step, rank: m, samples: m });
    }
    let mut x = DMatrix::<f64>::zeros(m, p);
    for r in 0..m {
        x[(r, 0)] = 1.0;
        for (j, &c) in keep.iter().enumerate() {
            x[(r, j + 1)] = (design[r * raw_cols + c] - mean[j]) / sd[j];
        }
    }
    let y = DMatrix::from_row_slice(m, n_targets, targets);
    let gram = x.transpose() * &x / m as f64;
    let xty = x.transpose() * &y / m as f64;
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = params.eig_rtol * lmax;
    let mut rank = 0;
    let mut lmin = f64::INFINITY;
    let mut inv = DMatrix::<f64>::zeros(p, p);
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cut && l > 0.0 {
            rank += 1;
            lmin = lmin.min(l);
            let v = eig.eigenvectors.column(j);
            inv += v * v.transpose() / l;
        }
    }
    if rank == 0 {
        return Err(Error::RankDeficient { step, rank, samples: m });
    }
    let beta = inv * xty;
    let pred = x * beta;
    for r in 0..m {
        for j in 0..n_targets {
            fitted[r * n_targets + j] = pred[(r, j)];
        }
    }
    Ok(FitInfo { columns: p, rank, condition: lmax / lmin })
}
