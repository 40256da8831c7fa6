//! Value functional, convergence in `m` and the auxiliary function `ṽ₀`.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{increments, lift_coefficients, solve_cascade, CascadeSolution, Evaluation, GridSpec};
use crate::dynamics::{path_rng, CoefficientSet, SimConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pathspace::Path;

/// `v^m(a) = V^{m,k}(t, x⃗_k)` for the increments of `a`.
pub fn eval_vm(sol: &CascadeSolution, a: &Path) -> Result<Evaluation> {
    let (k, x) = increments(a, sol.m, sol.horizon, &sol.origin)?;
    sol.value(k, a.horizon(), &x)
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeValue {
    pub m: usize,
    pub value: f64,
    pub extrapolated: bool,
    pub half_width: f64,
    pub nodes: usize,
    pub node_updates: u64,
    pub seconds: f64,
}

/// Builds and solves the cascade for `a` and evaluates `v^m(a)`. The box
/// half-width defaults to `5 (1 + ‖a‖₀) √T`.
pub fn value_functional(
    coef: &CoefficientSet,
    horizon: f64,
    a: &Path,
    m: usize,
    grid: &GridSpec,
) -> Result<CascadeValue> {
    let clock = Instant::now();
    let lifted = lift_coefficients(coef, m, horizon, a.initial())?;
    let mut grid = grid.clone();
    if grid.half_width.is_none() {
        grid.half_width = Some(GridSpec::default_half_width(a, horizon));
    }
    let sol = solve_cascade(&lifted, &grid)?;
    let e = eval_vm(&sol, a)?;
    Ok(CascadeValue {
        m,
        value: e.value,
        extrapolated: e.extrapolated,
        half_width: sol.half_width,
        nodes: sol.nodes,
        node_updates: sol.node_updates,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub value: f64,
    pub extrapolated: bool,
    /// `|v^m - v^{m'}|` for the previous row.
    pub diff: Option<f64>,
    /// `Osc(a, T/m) + m^{-1/2}`.
    pub envelope: f64,
    pub error: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Successive differences are non-increasing up to 10 % slack.
    pub monotone: bool,
    /// `max_m error_m / envelope_m` when a reference value is given.
    pub fitted_c: Option<f64>,
    /// First `m` refused by the dimension cap.
    pub capped_at: Option<usize>,
    pub warnings: Vec<String>,
}

/// Solves for each `m` in `ms` (ascending), stopping at the dimension cap.
pub fn convergence_study(
    coef: &CoefficientSet,
    horizon: f64,
    a: &Path,
    ms: &[usize],
    grid_for: &dyn Fn(usize) -> GridSpec,
    reference: Option<f64>,
) -> Result<ConvergenceTable> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut warnings = Vec::new();
    let mut capped_at = None;
    for &m in ms {
        let v = match value_functional(coef, horizon, a, m, &grid_for(m)) {
            Ok(v) => v,
            Err(Error::DimensionCap { segment, dims, cap }) => {
                warnings.push(format!("m = {m} stopped: segment {segment} needs {dims} dimensions (cap {cap})"));
                capped_at = Some(m);
                break;
            }
            Err(e) => return Err(e),
        };
        if v.extrapolated {
            warnings.push(format!("m = {m}: evaluation point outside the box"));
        }
        let diff = rows.last().map(|r| (v.value - r.value).abs());
        rows.push(ConvergenceRow {
            m,
            value: v.value,
            extrapolated: v.extrapolated,
            diff,
            envelope: a.oscillation(horizon / m as f64) + (m as f64).powf(-0.5),
            error: reference.map(|r| (v.value - r).abs()),
            seconds: v.seconds,
        });
    }
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.diff).collect();
    let scale = 1e-9 * (1.0 + rows.iter().map(|r| r.value.abs()).fold(0.0, f64::max));
    let monotone = diffs.windows(2).all(|w| w[1] <= 1.1 * w[0] + scale);
    if !monotone {
        warnings.push("successive differences are not decreasing".into());
    }
    let fitted_c = reference.map(|_| {
        rows.iter()
            .filter_map(|r| r.error.map(|e| e / r.envelope))
            .fold(0.0, f64::max)
    });
    Ok(ConvergenceTable { rows, monotone, fitted_c, capped_at, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxEstimate {
    pub value: f64,
    pub se: f64,
    pub n_paths: usize,
    /// Whether per-step extremes were bridge corrected (one dimension).
    pub bridge: bool,
}

/// `ṽ₀(a) = E ‖W^{a}‖₀`: the expected sup-norm of `a` continued by Brownian
/// motion to `T`. In one dimension the supremum over each step is sampled
/// from the Brownian bridge extremes; otherwise it is monitored on the grid.
pub fn auxiliary_v0(a: &Path, cfg: &SimConfig) -> Result<AuxEstimate> {
    cfg.validate()?;
    let t = a.horizon();
    if t > cfg.horizon * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange { requested: t, lo: 0.0, hi: cfg.horizon });
    }
    let base = a.sup_norm();
    let grid = cfg.continuation_grid(t);
    let n = a.dim();
    let bridge = n == 1;
    if grid.is_empty() {
        return Ok(AuxEstimate { value: base, se: 0.0, n_paths: cfg.n_paths, bridge });
    }
    let start = a.baked().terminal().to_vec();
    let sups = par::map_range(cfg.n_paths, |idx| {
        let mut rng = path_rng(cfg.seed, idx);
        let mut x = start.clone();
        let mut sup = base;
        let mut prev_t = t;
        for &s in &grid {
            let dt = s - prev_t;
            prev_t = s;
            let sd = dt.sqrt();
            if bridge {
                let x0 = x[0];
                let z: f64 = rng.sample(StandardNormal);
                let x1 = x0 + sd * z;
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = 1.0 - rng.random::<f64>();
                let d2 = (x1 - x0) * (x1 - x0);
                let hi = 0.5 * (x0 + x1 + (d2 - 2.0 * dt * u1.ln()).sqrt());
                let lo = 0.5 * (x0 + x1 - (d2 - 2.0 * dt * u2.ln()).sqrt());
                sup = sup.max(hi).max(-lo);
                x[0] = x1;
            } else {
                for xc in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *xc += sd * z;
                }
                sup = sup.max(crate::pathspace::norm(&x));
            }
        }
        sup
    });
    let (value, se) = crate::backward::mean_se(sups);
    Ok(AuxEstimate { value, se, n_paths: cfg.n_paths, bridge })
}
