//! Recombining trinomial lattice for one-dimensional Markovian BSDEs.
//!
//! Nodes sit at `x0 + j h` with `h = √3 σ_max √Δt`; branch probabilities match
//! the first two moments of the Euler step.

use serde::{Deserialize, Serialize};

use crate::dynamics::CoefficientSet;
use crate::error::{Error, Result};
use crate::pathspace::Path;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// Bound on `|σ|` over the lattice; probed from the coefficients when unset.
    pub sigma_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSolution {
    pub t0: f64,
    pub dt: f64,
    pub h: f64,
    pub x0: f64,
    /// `y[k][j]` at `x0 + (j - k) h`.
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    /// Largest `|f|` met during the backward sweep.
    pub driver_scale: f64,
}

impl TreeSolution {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    fn interp(&self, level: &[f64], k: usize, x: f64) -> f64 {
        if level.len() == 1 {
            return level[0];
        }
        let pos = ((x - self.x0) / self.h + k as f64).clamp(0.0, (level.len() - 1) as f64);
        let j = (pos.floor() as usize).min(level.len() - 2);
        let w = pos - j as f64;
        level[j] * (1.0 - w) + level[j + 1] * w
    }

    /// `Y` at step `k`, linearly interpolated in `x` (clamped to the lattice).
    pub fn value_at(&self, k: usize, x: f64) -> f64 {
        self.interp(&self.y[k], k, x)
    }

    pub fn z_at(&self, k: usize, x: f64) -> f64 {
        self.interp(&self.z[k], k, x)
    }
}

/// A path that only carries `(t, x)`, for Markovian coefficients.
pub(crate) fn markov_path(t: f64, x: f64) -> Path {
    if t > 0.0 {
        Path::scalar(vec![0.0, t], vec![x, x]).expect("valid times")
    } else {
        Path::scalar(vec![0.0], vec![x]).expect("valid times")
    }
}

pub(crate) const FIXED_POINT_ITERS: usize = 3;

/// One implicit step `y = e + f(y) dt` by fixed-point sweeps started at `e`.
/// Returns the value, the driver at it and the last contraction ratio.
pub(crate) fn implicit_step<F: Fn(f64) -> f64>(e: f64, dt: f64, f: F, step: usize) -> Result<(f64, f64, f64)> {
    let mut y = e;
    let mut prev_change = f64::NAN;
    let mut ratio = 0.0;
    let mut fy = 0.0;
    for _ in 0..FIXED_POINT_ITERS {
        fy = f(y);
        let next = e + fy * dt;
        let change = (next - y).abs();
        if prev_change > 0.0 {
            ratio = change / prev_change;
        }
        prev_change = change;
        y = next;
    }
    if !y.is_finite() || (ratio >= 1.0 && prev_change > 1e-12 * (1.0 + y.abs())) {
        return Err(Error::FixedPoint { step });
    }
    Ok((y, fy, ratio))
}

/// Solves `Y = g(X_T) + ∫ f dr - ∫ Z dW` on the lattice started at `(t0, x0)`
/// under the constant control `u`.
pub fn tree_solve(
    coef: &CoefficientSet,
    x0: f64,
    t0: f64,
    horizon: f64,
    steps: usize,
    u: &[f64],
    params: &TreeParams,
) -> Result<TreeSolution> {
    if !coef.is_markovian() || coef.state_dim() != 1 || coef.noise_dim() != 1 {
        return Err(Error::Precondition(
            "tree engine needs one-dimensional Markovian coefficients".into(),
        ));
    }
    if steps == 0 || !(horizon > t0) {
        return Err(Error::invalid("steps", "need at least one step on a non-empty interval"));
    }
    let dt = (horizon - t0) / steps as f64;
    let time = |k: usize| if k == steps { horizon } else { t0 + k as f64 * dt };
    let sig = |k: usize, x: f64| coef.sigma(&markov_path(time(k), x), u)[0];
    let sigma_max = match params.sigma_max {
        Some(s) => s,
        None => {
            // probe on a lattice sized by the local volatility, then once more
            let mut s = sig(0, x0).abs().max(1e-8);
            for _ in 0..2 {
                let h = 3f64.sqrt() * s * dt.sqrt();
                for k in 0..steps {
                    for j in 0..=2 * k {
                        s = s.max(sig(k, x0 + (j as f64 - k as f64) * h).abs());
                    }
                }
            }
            s
        }
    };
    let h = (3f64.sqrt() * sigma_max * dt.sqrt()).max(1e-300);
    let node = |k: usize, j: usize| x0 + (j as f64 - k as f64) * h;

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    y[steps] = (0..=2 * steps)
        .map(|j| coef.terminal(&markov_path(horizon, node(steps, j))))
        .collect();
    z[steps] = vec![0.0; 2 * steps + 1];
    let mut driver_scale = 0.0f64;
    for k in (0..steps).rev() {
        let mut yk = Vec::with_capacity(2 * k + 1);
        let mut zk = Vec::with_capacity(2 * k + 1);
        for j in 0..=2 * k {
            let x = node(k, j);
            let path = markov_path(time(k), x);
            let b = coef.drift(&path, u)[0];
            let s = coef.sigma(&path, u)[0];
            let var = s * s * dt + b * b * dt * dt;
            let pu = var / (2.0 * h * h) + b * dt / (2.0 * h);
            let pd = var / (2.0 * h * h) - b * dt / (2.0 * h);
            let pm = 1.0 - pu - pd;
            for p in [pu, pd, pm] {
                if p < -1e-14 {
                    return Err(Error::LatticeProbability { step: k, prob: p });
                }
            }
            let next = &y[k + 1];
            let (yu, ym, yd) = (next[j + 2], next[j + 1], next[j]);
            let e = pu * yu + pm * ym + pd * yd;
            let zz = if s != 0.0 {
                let w = |dx: f64| (dx - b * dt) / s;
                (pu * yu * w(h) + pm * ym * w(0.0) + pd * yd * w(-h)) / dt
            } else {
                0.0
            };
            let (val, fy, _) = implicit_step(e, dt, |yv| coef.generator(&path, yv, &[zz], u), k)?;
            driver_scale = driver_scale.max(fy.abs());
            yk.push(val);
            zk.push(zz);
        }
        y[k] = yk;
        z[k] = zk;
    }
    Ok(TreeSolution { t0, dt, h, x0, y, z, driver_scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_second_moment_is_exact() {
        let coef = CoefficientSet::brownian(1)
            .with_terminal("x^2", |p| p.terminal()[0].powi(2))
            .markovian();
        let sol = tree_solve(&coef, 0.0, 0.0, 1.0, 40, &[], &TreeParams::default()).unwrap();
        assert!((sol.y0() - 1.0).abs() < 1e-12);
        // Z = ∂_x (x² + T - t) σ = 2x
        assert!((sol.z_at(20, 0.3) - 0.6).abs() < 0.05);
    }

    #[test]
    fn drift_and_linear_driver() {
        let coef = CoefficientSet::brownian(1)
            .with_drift("1", |_, _| vec![1.0])
            .with_terminal("x", |p| p.terminal()[0])
            .markovian();
        let sol = tree_solve(&coef, 0.2, 0.0, 1.0, 50, &[], &TreeParams::default()).unwrap();
        assert!((sol.y0() - 1.2).abs() < 1e-12);

        let r = 0.5;
        let disc = CoefficientSet::brownian(1)
            .with_generator("-ry", move |_, y, _, _| -r * y)
            .with_terminal("1", |_| 1.0)
            .markovian();
        let sol = tree_solve(&disc, 0.0, 0.0, 1.0, 100, &[], &TreeParams::default()).unwrap();
        assert!((sol.y0() - (-r).exp()).abs() < 1e-3);
    }

    #[test]
    fn rejects_non_markovian_and_bad_probabilities() {
        let coef = CoefficientSet::brownian(1).with_terminal("max", |p| p.sup_norm());
        assert!(tree_solve(&coef, 0.0, 0.0, 1.0, 10, &[], &TreeParams::default()).is_err());
        let strong = CoefficientSet::brownian(1)
            .with_drift("50", |_, _| vec![50.0])
            .markovian();
        let e = tree_solve(&strong, 0.0, 0.0, 1.0, 4, &[], &TreeParams::default()).unwrap_err();
        assert!(matches!(e, Error::LatticeProbability { .. }));
    }

    #[test]
    fn fixed_point_divergence_is_reported() {
        assert!(implicit_step(1.0, 1.0, |y| -3.0 * y, 7).is_err());
        let (y, _, r) = implicit_step(1.0, 0.01, |y| -y, 0).unwrap();
        assert!(r < 0.02 && (y - 1.0 / 1.01).abs() < 1e-5);
    }
}
