//! Markovian lift of the path-dependent Bellman equation.
//!
//! On the grid `t_i = iT/m`, a path on `(t_{i-1}, t_i]` is summarised by its
//! increments `x⃗_i = (x_1, …, x_i)` with `x_j = γ(t_j) - γ(t_{j-1})` for
//! `j < i` and `x_i = γ(t) - γ(t_{i-1})`. Coefficients are evaluated on the
//! stepped path rebuilt from these increments, and the chained HJB equations
//! are solved segment by segment with an explicit monotone scheme.

mod solve;
mod study;

pub use solve::{solve_cascade, CascadeSolution, Evaluation, SegmentSolution};
pub use study::{
    auxiliary_v0, convergence_study, eval_vm, value_functional, AuxEstimate, CascadeValue, ConvergenceRow,
    ConvergenceTable,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::CoefficientSet;
use crate::error::{check_dim, Error, Result};
use crate::pathspace::{grid_time, Path, PathKind};

/// Largest tensor-grid dimension `i·n` the solver accepts.
pub const DIMENSION_CAP: usize = 3;

/// `B^{m,i}`, `Σ^{m,i}`, `F^{m,i}` and `G^m`: the coefficients evaluated on
/// lifted stepped paths started at `origin`.
#[derive(Debug, Clone)]
pub struct LiftedCoefficients {
    pub coef: CoefficientSet,
    pub m: usize,
    pub horizon: f64,
    pub origin: Vec<f64>,
}

/// Lifts `coef` onto `m` segments of `[0, T]` for paths started at `origin`.
pub fn lift_coefficients(coef: &CoefficientSet, m: usize, horizon: f64, origin: &[f64]) -> Result<LiftedCoefficients> {
    if m == 0 {
        return Err(Error::invalid("m", "must be at least 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    check_dim(coef.state_dim(), origin.len())?;
    Ok(LiftedCoefficients { coef: coef.clone(), m, horizon, origin: origin.to_vec() })
}

impl LiftedCoefficients {
    pub fn state_dim(&self) -> usize {
        self.coef.state_dim()
    }

    pub fn grid_time(&self, i: usize) -> f64 {
        grid_time(i, self.m, self.horizon)
    }

    /// The stepped path with value `origin + x_1 + … + x_j` on
    /// `[t_j, t_{j+1})` for `j < i - 1`, `origin + x_1 + … + x_{i-1}` on
    /// `[t_{i-1}, t)` and `origin + x_1 + … + x_i` at `t`.
    pub fn lift_path(&self, i: usize, t: f64, x: &[f64]) -> Result<Path> {
        let n = self.state_dim();
        if i == 0 || i > self.m {
            return Err(Error::invalid("segment", format!("{i} is outside 1..={}", self.m)));
        }
        check_dim(i * n, x.len())?;
        let lo = self.grid_time(i - 1);
        let tol = 1e-12 * self.horizon;
        if t < lo - tol || t > self.grid_time(i) + tol {
            return Err(Error::TimeOutOfRange { requested: t, lo, hi: self.grid_time(i) });
        }
        let mut times = Vec::with_capacity(i + 1);
        let mut values = Vec::with_capacity((i + 1) * n);
        let mut s = self.origin.clone();
        times.push(0.0);
        values.extend_from_slice(&s);
        for j in 0..i {
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += x[j * n + c];
            }
            let tj = if j + 1 < i { self.grid_time(j + 1) } else { t };
            if tj > times[times.len() - 1] + tol {
                times.push(tj);
                values.extend_from_slice(&s);
            } else {
                // empty interval: the node value is the value at its time
                let k = values.len() - n;
                values[k..].copy_from_slice(&s);
            }
        }
        Path::new(n, times, values, PathKind::Stepped)
    }

    /// `B^{m,i}(t, x⃗_i, u)`
    pub fn drift(&self, i: usize, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.coef.drift(&self.lift_path(i, t, x)?, u))
    }

    /// `Σ^{m,i}(t, x⃗_i, u)`
    pub fn sigma(&self, i: usize, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.coef.sigma(&self.lift_path(i, t, x)?, u))
    }

    /// `F^{m,i}(t, x⃗_i, y, z, u)`
    pub fn generator(&self, i: usize, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64]) -> Result<f64> {
        Ok(self.coef.generator(&self.lift_path(i, t, x)?, y, z, u))
    }

    /// `G^m(x⃗_m)`
    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        Ok(self.coef.terminal(&self.lift_path(self.m, self.horizon, x)?))
    }

    /// Increment coordinates of `a` on its segment; `a` must start at the
    /// lift origin.
    pub fn increments(&self, a: &Path) -> Result<(usize, Vec<f64>)> {
        increments(a, self.m, self.horizon, &self.origin)
    }
}

pub(crate) fn increments(a: &Path, m: usize, horizon: f64, origin: &[f64]) -> Result<(usize, Vec<f64>)> {
    let n = origin.len();
    check_dim(n, a.dim())?;
    let t = a.horizon();
    if t > horizon * (1.0 + 1e-12) {
        return Err(Error::TimeOutOfRange { requested: t, lo: 0.0, hi: horizon });
    }
    let a = a.baked();
    if a.initial().iter().zip(origin).any(|(p, q)| (p - q).abs() > 1e-12 * (1.0 + q.abs())) {
        return Err(Error::Precondition("path does not start at the lift origin".into()));
    }
    let k = crate::pathspace::segment_of(t, m, horizon);
    let mut prev = origin.to_vec();
    let mut x = Vec::with_capacity(k * n);
    for j in 1..=k {
        let s = if j < k { grid_time(j, m, horizon) } else { t };
        let v = a.value_at(s);
        x.extend(v.iter().zip(&prev).map(|(p, q)| p - q));
        prev = v;
    }
    Ok((k, x))
}

/// Spatial box, node count and time stepping of the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis; odd so that `0` is a node.
    pub nodes: usize,
    /// Box half-width `L`; `5 (1 + ‖γ‖₀) √T` when unset.
    pub half_width: Option<f64>,
    /// Time substeps per segment; chosen from the CFL bound when unset.
    pub substeps: Option<usize>,
    /// Fraction of the CFL limit used when choosing substeps.
    pub cfl_safety: f64,
    /// Stored time slices per segment (the segment ends are always kept).
    pub slices: usize,
    /// Control grid; the coefficient set's controls when unset.
    pub controls: Option<Vec<Vec<f64>>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nodes: 101, half_width: None, substeps: None, cfl_safety: 0.9, slices: 32, controls: None }
    }
}

impl GridSpec {
    pub fn with_nodes(nodes: usize) -> Self {
        Self { nodes, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 || self.nodes.is_multiple_of(2) {
            return Err(Error::invalid("nodes", "must be odd and at least 3"));
        }
        if let Some(l) = self.half_width {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid("half_width", "must be positive"));
            }
        }
        if self.substeps == Some(0) {
            return Err(Error::invalid("substeps", "must be positive"));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::invalid("cfl_safety", "must lie in (0, 1]"));
        }
        if self.slices == 0 {
            return Err(Error::invalid("slices", "must be positive"));
        }
        Ok(())
    }

    /// `5 (1 + ‖γ‖₀) √T`.
    pub fn default_half_width(initial: &Path, horizon: f64) -> f64 {
        5.0 * (1.0 + initial.sup_norm()) * horizon.sqrt()
    }
}
