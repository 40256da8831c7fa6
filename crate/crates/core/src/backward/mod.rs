//! Backward SDEs for fixed controls: regression and lattice solvers, the
//! backward semigroup, the cost functional, comparison checks and the
//! one-step dynamic programming residual.

mod regression;
mod tree;

pub use regression::{Feature, FitInfo, RegressionParams};
pub use tree::{tree_solve, TreeParams, TreeSolution};

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_sde, simulate_sde_on, CoefficientSet, PathBatch, Policy, SimConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pathspace::Path;
use regression::FeatureTable;
use tree::implicit_step;

/// How `E[· | F_s]` is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CondExpEngine {
    Regression(RegressionParams),
    /// Exact lattice expectations; one-dimensional Markovian data and a
    /// constant control only.
    Tree(TreeParams),
}

impl Default for CondExpEngine {
    fn default() -> Self {
        CondExpEngine::Regression(RegressionParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub active: usize,
    pub columns: usize,
    pub rank: usize,
    pub condition: f64,
    /// Largest contraction ratio of the implicit sweep.
    pub fixed_point_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    /// Continuation grid, starting at the initial horizon.
    pub grid: Vec<f64>,
    pub n_paths: usize,
    pub noise_dim: usize,
    /// `[path][k]`, `k = 0..=steps`.
    pub y: Vec<f64>,
    /// `[path][k][noise]`, `k = 0..steps`.
    pub z: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Cross-sectional mean of `Y` at the start.
    pub y0: f64,
    /// Standard error of the pathwise estimator `ξ + Σ f Δt`.
    pub se: f64,
    /// `C_f`: largest `|f|` met along the solution.
    pub driver_scale: f64,
    /// `3 SE + C_f Δt_max`.
    pub eps_num: f64,
}

impl BsdeSolution {
    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn y_at(&self, i: usize, k: usize) -> f64 {
        self.y[i * (self.steps() + 1) + k]
    }

    pub fn z_at(&self, i: usize, k: usize) -> &[f64] {
        let d = self.noise_dim;
        &self.z[(i * self.steps() + k) * d..][..d]
    }

    /// `Y` at the start, per path.
    pub fn y_start(&self) -> Vec<f64> {
        (0..self.n_paths).map(|i| self.y_at(i, 0)).collect()
    }

    /// `(mean, standard error)` of `Y` across paths at step `k`.
    pub fn y_stats(&self, k: usize) -> (f64, f64) {
        mean_se((0..self.n_paths).map(|i| self.y_at(i, k)))
    }

    pub fn mean_abs_z(&self, k: usize) -> f64 {
        if k >= self.steps() {
            return 0.0;
        }
        (0..self.n_paths)
            .map(|i| self.z_at(i, k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.n_paths as f64
    }

    /// `time,mean_y,se,mean_abs_z` per grid point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,mean_y,se,mean_abs_z")?;
        for k in 0..=self.steps() {
            let (m, se) = self.y_stats(k);
            writeln!(w, "{:?},{:?},{:?},{:?}", self.grid[k], m, se, self.mean_abs_z(k))?;
        }
        Ok(())
    }
}

pub(crate) fn mean_se<I: IntoIterator<Item = f64>>(xs: I) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Solves `Y(s) = ξ + ∫_s^T f(X, Y, Z, u) dr - ∫_s^T Z dW` backward along the
/// batch, with the controls it recorded.
pub fn solve_bsde(
    coef: &CoefficientSet,
    batch: &PathBatch,
    engine: &CondExpEngine,
    terminal: &[f64],
) -> Result<BsdeSolution> {
    let stop = vec![batch.steps(); batch.len()];
    solve_stopped(coef, batch, engine, &stop, terminal)
}

/// Like [`solve_bsde`] with path `i` stopped at continuation step `stop[i]`
/// and terminal value `eta[i]` there; `Y` stays `eta[i]` afterwards.
pub fn solve_stopped(
    coef: &CoefficientSet,
    batch: &PathBatch,
    engine: &CondExpEngine,
    stop: &[usize],
    eta: &[f64],
) -> Result<BsdeSolution> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    crate::error::check_dim(n, stop.len())?;
    crate::error::check_dim(n, eta.len())?;
    if let Some(i) = eta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: format!("terminal value of path {i}") });
    }
    let steps = batch.steps();
    if stop.iter().any(|&s| s > steps) {
        return Err(Error::invalid("stop", "stop index beyond the batch horizon"));
    }
    if batch.noise_dim != coef.noise_dim() || batch.dw.len() != n * steps * batch.noise_dim {
        return Err(Error::Precondition("batch increments do not match the coefficients".into()));
    }
    match engine {
        CondExpEngine::Regression(p) => solve_regression(coef, batch, p, stop, eta),
        CondExpEngine::Tree(p) => solve_tree(coef, batch, p, stop, eta),
    }
}

fn solve_regression(
    coef: &CoefficientSet,
    batch: &PathBatch,
    params: &RegressionParams,
    stop: &[usize],
    eta: &[f64],
) -> Result<BsdeSolution> {
    let n = batch.len();
    let d = batch.noise_dim;
    let steps = batch.steps();
    let start = batch.start;
    let grid = batch.grid()[start..].to_vec();
    let table = FeatureTable::build(batch, &params.features);
    let mut y = vec![0.0; n * (steps + 1)];
    let mut z = vec![0.0; n * steps * d];
    for i in 0..n {
        for k in stop[i]..=steps {
            y[i * (steps + 1) + k] = eta[i];
        }
    }
    let mut pathwise = eta.to_vec();
    let mut driver_scale = 0.0f64;
    let mut diagnostics = Vec::with_capacity(steps);
    let nt = 1 + d;
    for k in (0..steps).rev() {
        let rows: Vec<usize> = (0..n).filter(|&i| stop[i] > k).collect();
        if rows.is_empty() {
            continue;
        }
        let dt = grid[k + 1] - grid[k];
        let mut targets = vec![0.0; rows.len() * nt];
        for (r, &i) in rows.iter().enumerate() {
            let yn = y[i * (steps + 1) + k + 1];
            targets[r * nt] = yn;
            for (j, w) in batch.dw_at(i, k).iter().enumerate() {
                targets[r * nt + 1 + j] = yn * w;
            }
        }
        let mut fitted = vec![0.0; targets.len()];
        let info = regression::fit(&table, &rows, k, params, &targets, nt, &mut fitted, k)?;
        let t_k = grid[k];
        let results = par::map_range(rows.len(), |r| {
            let i = rows[r];
            let e = fitted[r * nt];
            let zz: Vec<f64> = fitted[r * nt + 1..(r + 1) * nt].iter().map(|v| v / dt).collect();
            let prefix = batch.paths[i].restrict(t_k)?;
            let u = batch.control_at(i, k);
            let (val, fy, ratio) = implicit_step(e, dt, |yv| coef.generator(&prefix, yv, &zz, u), k)?;
            Ok::<_, Error>((val, fy, ratio, zz))
        });
        let mut max_ratio = 0.0f64;
        for (r, res) in results.into_iter().enumerate() {
            let (val, fy, ratio, zz) = res?;
            let i = rows[r];
            y[i * (steps + 1) + k] = val;
            z[(i * steps + k) * d..][..d].copy_from_slice(&zz);
            pathwise[i] += fy * dt;
            driver_scale = driver_scale.max(fy.abs());
            max_ratio = max_ratio.max(ratio);
        }
        diagnostics.push(StepDiagnostics {
            step: k,
            time: t_k,
            active: rows.len(),
            columns: info.columns,
            rank: info.rank,
            condition: info.condition,
            fixed_point_ratio: max_ratio,
        });
    }
    diagnostics.reverse();
    let (y0, _) = mean_se((0..n).map(|i| y[i * (steps + 1)]));
    let (_, se) = mean_se(pathwise.iter().copied());
    let dt_max = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(BsdeSolution {
        grid,
        n_paths: n,
        noise_dim: d,
        y,
        z,
        diagnostics,
        y0,
        se,
        driver_scale,
        eps_num: 3.0 * se + driver_scale * dt_max,
    })
}

fn solve_tree(
    coef: &CoefficientSet,
    batch: &PathBatch,
    params: &TreeParams,
    stop: &[usize],
    eta: &[f64],
) -> Result<BsdeSolution> {
    let n = batch.len();
    let steps = batch.steps();
    if stop.iter().any(|&s| s != steps) {
        return Err(Error::Precondition("tree engine does not support stopped paths".into()));
    }
    let start = batch.start;
    let grid = batch.grid()[start..].to_vec();
    let dt = (grid[steps] - grid[0]) / steps as f64;
    if grid.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
        return Err(Error::Precondition("tree engine needs a uniform continuation grid".into()));
    }
    let u = batch.control_at(0, 0).to_vec();
    for i in 0..n {
        for k in 0..steps {
            if batch.control_at(i, k) != u.as_slice() {
                return Err(Error::Precondition("tree engine needs a constant control".into()));
            }
        }
    }
    let x0 = batch.paths[0].point_at(start)[0];
    let sol = tree_solve(coef, x0, grid[0], grid[steps], steps, &u, params)?;
    let mut y = vec![0.0; n * (steps + 1)];
    let mut z = vec![0.0; n * steps];
    for i in 0..n {
        let p = &batch.paths[i];
        for k in 0..steps {
            let x = p.point_at(start + k)[0];
            y[i * (steps + 1) + k] = sol.value_at(k, x);
            z[i * steps + k] = sol.z_at(k, x);
        }
        y[i * (steps + 1) + steps] = eta[i];
    }
    Ok(BsdeSolution {
        grid,
        n_paths: n,
        noise_dim: 1,
        y,
        z,
        diagnostics: Vec::new(),
        y0: sol.y0(),
        se: 0.0,
        driver_scale: sol.driver_scale,
        eps_num: sol.driver_scale * dt,
    })
}

/// Index of `t` in `grid` (within a relative tolerance).
fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    let tol = 1e-9 * grid[grid.len() - 1].abs().max(1.0);
    grid.iter().position(|&s| (s - t).abs() <= tol)
}

/// `𝔾_{t, τ}[η]` per path: the BSDE on `[t, τ]` with terminal `η` at `τ`.
/// Stop times must lie on the batch grid, no earlier than its start.
pub fn backward_semigroup(
    coef: &CoefficientSet,
    batch: &PathBatch,
    stop_times: &[f64],
    eta: &[f64],
    engine: &CondExpEngine,
) -> Result<Vec<f64>> {
    let grid = &batch.grid()[batch.start..];
    let stop = stop_times
        .iter()
        .map(|&t| {
            if t < grid[0] - 1e-12 {
                return Err(Error::TimeOutOfRange { requested: t, lo: grid[0], hi: grid[grid.len() - 1] });
            }
            grid_index(grid, t).ok_or_else(|| Error::invalid("stop_times", format!("{t} is not a grid time")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(solve_stopped(coef, batch, engine, &stop, eta)?.y_start())
}

/// `J(γ_t, u) = Y(t)` with an estimate of its error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub value: f64,
    pub se: f64,
    pub eps_num: f64,
}

/// Terminal payoffs `g(X_T)` of a batch.
pub fn terminal_values(coef: &CoefficientSet, batch: &PathBatch) -> Vec<f64> {
    par::map_range(batch.len(), |i| coef.terminal(&batch.paths[i]))
}

/// Simulates forward under `policy`, solves backward and returns `Y(t)`.
pub fn cost_functional(
    coef: &CoefficientSet,
    initial: &Path,
    policy: &Policy,
    cfg: &SimConfig,
    engine: &CondExpEngine,
) -> Result<CostEstimate> {
    let batch = simulate_sde(coef, initial, policy, cfg)?;
    let xi = terminal_values(coef, &batch);
    let sol = solve_bsde(coef, &batch, engine, &xi)?;
    Ok(CostEstimate { value: sol.y0, se: sol.se, eps_num: sol.eps_num })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub holds: bool,
    /// `Y¹(t) - Y²(t)`
    pub margin: f64,
    pub eps_num: f64,
    pub y1: f64,
    pub y2: f64,
}

/// Checks `Y¹(t) >= Y²(t) - ε_num` for two data sets sharing the forward
/// batch. Refuses when `ξ¹ >= ξ²` or `f¹ >= f²` fails on sampled arguments.
pub fn comparison_check(
    first: &CoefficientSet,
    second: &CoefficientSet,
    batch: &PathBatch,
    engine: &CondExpEngine,
) -> Result<Comparison> {
    let xi1 = terminal_values(first, batch);
    let xi2 = terminal_values(second, batch);
    if let Some(i) = (0..batch.len()).find(|&i| xi1[i] < xi2[i] - 1e-12 * (1.0 + xi2[i].abs())) {
        return Err(Error::Precondition(format!("terminal values not ordered on path {i}")));
    }
    let d = batch.noise_dim;
    let scale = 1.0 + xi1.iter().chain(&xi2).fold(0.0f64, |a, v| a.max(v.abs()));
    let mut zs = vec![vec![0.0; d]];
    for j in 0..d {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; d];
            e[j] = s * scale;
            zs.push(e);
        }
    }
    let grid = batch.grid();
    let probe_paths = batch.len().min(20);
    for i in 0..probe_paths {
        for k in 0..batch.steps() {
            let prefix = batch.paths[i].restrict(grid[batch.start + k])?;
            let u = batch.control_at(i, k);
            for y in [-scale, -1.0, 0.0, 1.0, scale] {
                for z in &zs {
                    let (a, b) = (first.generator(&prefix, y, z, u), second.generator(&prefix, y, z, u));
                    if a < b - 1e-12 * (1.0 + b.abs()) {
                        return Err(Error::Precondition(format!(
                            "drivers not ordered at path {i}, step {k}"
                        )));
                    }
                }
            }
        }
    }
    let s1 = solve_bsde(first, batch, engine, &xi1)?;
    let s2 = solve_bsde(second, batch, engine, &xi2)?;
    let margin = s1.y0 - s2.y0;
    let eps_num = s1.eps_num.max(s2.eps_num);
    Ok(Comparison { holds: margin >= -eps_num, margin, eps_num, y1: s1.y0, y2: s2.y0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppEntry {
    pub control: Vec<f64>,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    /// `v(γ_t)`
    pub value: f64,
    pub entries: Vec<DppEntry>,
    /// `max_u 𝔾_{t,t+δ}[v(X_{t+δ})]`
    pub continuation: f64,
    pub discrepancy: f64,
    /// `discrepancy / |v(γ_t)|` (`0` when both vanish).
    pub relative: f64,
    pub eps_num: f64,
}

/// One-step DPP residual `|v(γ_t) - max_u 𝔾_{t,t+δ}[v(X_{t+δ})]|` over constant
/// controls. `t + δ` must be a point of the simulation grid.
#[allow(clippy::too_many_arguments)]
pub fn dpp_check(
    value: &(dyn Fn(&Path) -> f64 + Sync),
    coef: &CoefficientSet,
    initial: &Path,
    delta: f64,
    controls: &[Vec<f64>],
    cfg: &SimConfig,
    engine: &CondExpEngine,
) -> Result<DppReport> {
    cfg.validate()?;
    if controls.is_empty() {
        return Err(Error::Empty("control grid"));
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid("delta", "must be non-negative"));
    }
    let v0 = value(initial);
    let rel = |d: f64| if v0 != 0.0 { d / v0.abs() } else { d };
    if delta == 0.0 {
        let entries = controls.iter().map(|u| DppEntry { control: u.clone(), value: v0, se: 0.0 }).collect();
        return Ok(DppReport { value: v0, entries, continuation: v0, discrepancy: 0.0, relative: 0.0, eps_num: 0.0 });
    }
    let t = initial.horizon();
    let full = cfg.continuation_grid(t);
    let tol = 1e-9 * cfg.horizon;
    let end = full
        .iter()
        .position(|&s| (s - (t + delta)).abs() <= tol)
        .ok_or_else(|| Error::invalid("delta", format!("t + delta = {} is not a grid time", t + delta)))?;
    let grid = &full[..=end];
    let mut entries = Vec::with_capacity(controls.len());
    let mut eps_num = 0.0f64;
    for u in controls {
        let policy: Policy = {
            crate::error::check_dim(coef.control_dim(), u.len())?;
            let u = u.clone();
            Arc::new(move |_: &Path| u.clone())
        };
        let batch = simulate_sde_on(coef, initial, &policy, grid, cfg.n_paths, cfg.seed)?;
        let eta = par::map_range(batch.len(), |i| value(&batch.paths[i]));
        let sol = solve_bsde(coef, &batch, engine, &eta)?;
        eps_num = eps_num.max(sol.eps_num);
        entries.push(DppEntry { control: u.clone(), value: sol.y0, se: sol.se });
    }
    let continuation = entries.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
    let discrepancy = (v0 - continuation).abs();
    Ok(DppReport { value: v0, entries, continuation, discrepancy, relative: rel(discrepancy), eps_num })
}

#[cfg(test)]
mod tests;
