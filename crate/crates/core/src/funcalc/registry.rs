//! Named test functionals, addressable by label.

use super::PathFunctional;
use crate::error::{Error, Result};
use crate::pathspace::Path;

const LABELS: &[&str] = &[
    "terminal_value",
    "terminal_square",
    "running_integral",
    "running_max",
    "heat_value",
    "drift_value",
    "asian_value",
    "cylinder:quadratic",
    "cylinder:cubic",
    "cylinder:exp_martingale",
    "cylinder:sin_decay",
];

pub fn labels() -> &'static [&'static str] {
    LABELS
}

fn e1(n: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = c;
    v
}

fn diag(n: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = c;
    }
    v
}

fn e11(n: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    v[0] = c;
    v
}

/// Trapezoid rule for `∫_0^t γ_1(s) ds` on the raw samples (a terminal bump
/// changes the path on a null set only).
pub fn running_integral(p: &Path) -> f64 {
    let t = p.times();
    let d = p.dim();
    let x = p.samples();
    (1..t.len()).map(|k| 0.5 * (x[(k - 1) * d] + x[k * d]) * (t[k] - t[k - 1])).sum()
}

/// Looks up a functional by label; `horizon` is the terminal time `T` used by
/// the value-function entries.
pub fn lookup(label: &str, horizon: f64) -> Result<PathFunctional> {
    let big_t = horizon;
    let f = match label {
        "terminal_value" => PathFunctional::new(label, |p: &Path| p.terminal()[0]).with_derivatives(
            |_| 0.0,
            |p: &Path| e1(p.dim(), 1.0),
            |p: &Path| vec![0.0; p.dim() * p.dim()],
        ),
        "terminal_square" => PathFunctional::new(label, |p: &Path| {
            p.terminal().iter().map(|x| x * x).sum()
        })
        .with_derivatives(
            |_| 0.0,
            |p: &Path| p.terminal().iter().map(|x| 2.0 * x).collect(),
            |p: &Path| diag(p.dim(), 2.0),
        ),
        "running_integral" => PathFunctional::new(label, running_integral).with_derivatives(
            |p: &Path| p.terminal()[0],
            |p: &Path| vec![0.0; p.dim()],
            |p: &Path| vec![0.0; p.dim() * p.dim()],
        ),
        "running_max" => PathFunctional::new(label, |p: &Path| p.sup_norm()),
        // E[|W_T|^2 | γ_t] for Brownian motion
        "heat_value" => PathFunctional::new(label, move |p: &Path| {
            p.terminal().iter().map(|x| x * x).sum::<f64>() + p.dim() as f64 * (big_t - p.horizon())
        })
        .with_derivatives(
            |p: &Path| -(p.dim() as f64),
            |p: &Path| p.terminal().iter().map(|x| 2.0 * x).collect(),
            |p: &Path| diag(p.dim(), 2.0),
        ),
        // optimal E[X_T] with drift control in [-1, 1]
        "drift_value" => PathFunctional::new(label, move |p: &Path| p.terminal()[0] + (big_t - p.horizon()))
            .with_derivatives(
                |_| -1.0,
                |p: &Path| e1(p.dim(), 1.0),
                |p: &Path| vec![0.0; p.dim() * p.dim()],
            ),
        // E[∫_0^T W ds | γ_t]
        "asian_value" => PathFunctional::new(label, move |p: &Path| {
            running_integral(p) + p.terminal()[0] * (big_t - p.horizon())
        })
        .with_derivatives(
            |_| 0.0,
            move |p: &Path| e1(p.dim(), big_t - p.horizon()),
            |p: &Path| vec![0.0; p.dim() * p.dim()],
        ),
        "cylinder:quadratic" => PathFunctional::cylinder(
            label,
            |t, x| x[0] * x[0] - t,
            |_, _| -1.0,
            |_, x| e1(x.len(), 2.0 * x[0]),
            |_, x| e11(x.len(), 2.0),
        ),
        "cylinder:cubic" => PathFunctional::cylinder(
            label,
            |t, x| x[0].powi(3) - 3.0 * t * x[0],
            |_, x| -3.0 * x[0],
            |t, x| e1(x.len(), 3.0 * x[0] * x[0] - 3.0 * t),
            |_, x| e11(x.len(), 6.0 * x[0]),
        ),
        "cylinder:exp_martingale" => PathFunctional::cylinder(
            label,
            |t, x| (x[0] - 0.5 * t).exp(),
            |t, x| -0.5 * (x[0] - 0.5 * t).exp(),
            |t, x| e1(x.len(), (x[0] - 0.5 * t).exp()),
            |t, x| e11(x.len(), (x[0] - 0.5 * t).exp()),
        ),
        "cylinder:sin_decay" => PathFunctional::cylinder(
            label,
            |t, x| x[0].sin() * (-0.5 * t).exp(),
            |t, x| -0.5 * x[0].sin() * (-0.5 * t).exp(),
            |t, x| e1(x.len(), x[0].cos() * (-0.5 * t).exp()),
            |t, x| e11(x.len(), -x[0].sin() * (-0.5 * t).exp()),
        ),
        _ => {
            return Err(Error::invalid("functional", format!("unknown label `{label}`")));
        }
    };
    Ok(f)
}
