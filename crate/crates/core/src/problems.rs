//! Benchmark control problems with known values where available.

use serde::{Deserialize, Serialize};

use crate::dynamics::CoefficientSet;
use crate::error::{Error, Result};
use crate::funcalc::{registry, PathFunctional};
use crate::pathspace::Path;

/// A control problem on `[0, T]`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub coef: CoefficientSet,
    pub horizon: f64,
    /// Closed-form value functional, when known. It carries analytic
    /// derivatives and doubles as the smooth candidate in viscosity checks.
    pub value: Option<PathFunctional>,
}

/// `b = 0`, `σ = 1`, `f = 0`, `g(γ) = γ(T)²`; value `x² + (T - t)`.
pub fn heat(horizon: f64) -> Result<Problem> {
    let coef = CoefficientSet::brownian(1)
        .with_terminal("x(T)^2", |p| p.terminal()[0].powi(2))
        .markovian();
    Ok(Problem { name: "heat".into(), coef, horizon, value: Some(registry::lookup("heat_value", horizon)?) })
}

/// `b = 0`, `σ = 1`, `f = 0`, `g(γ) = ∫_0^T γ ds`; value `∫_0^t γ + γ(t)(T - t)`.
pub fn asian(horizon: f64) -> Result<Problem> {
    let coef = CoefficientSet::brownian(1).with_terminal("int_0^T x ds", registry::running_integral);
    Ok(Problem { name: "asian".into(), coef, horizon, value: Some(registry::lookup("asian_value", horizon)?) })
}

pub const DRIFT_CONTROLS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// `b = u ∈ {-1, -0.5, 0, 0.5, 1}`, `σ = 1`, `f = 0`, `g(γ) = γ(T)`; value
/// `γ(t) + (T - t)`.
pub fn controlled_drift(horizon: f64) -> Result<Problem> {
    let coef = CoefficientSet::brownian(1)
        .with_drift("u", |_, u| vec![u[0]])
        .with_terminal("x(T)", |p| p.terminal()[0])
        .with_controls("{-1,-0.5,0,0.5,1}", DRIFT_CONTROLS.iter().map(|&u| vec![u]).collect())?
        .markovian();
    Ok(Problem {
        name: "controlled_drift".into(),
        coef,
        horizon,
        value: Some(registry::lookup("drift_value", horizon)?),
    })
}

/// Delayed feedback `b = u·γ((t - τ) ∨ 0)` with `u ∈ {-1, 0, 1}`, `σ = 1`,
/// `g(γ) = γ(T)`. No closed form.
pub fn delay_demo(horizon: f64, tau: f64) -> Result<Problem> {
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", "must be non-negative"));
    }
    let coef = CoefficientSet::brownian(1)
        .with_drift("u*x(t-tau)", move |p, u| {
            let s = (p.horizon() - tau).max(0.0);
            vec![u[0] * p.value_at(s)[0]]
        })
        .with_terminal("x(T)", |p| p.terminal()[0])
        .with_controls("{-1,0,1}", vec![vec![-1.0], vec![0.0], vec![1.0]])?;
    Ok(Problem { name: "delay_demo".into(), coef, horizon, value: None })
}

/// Scalar affine data: `b = b0 + b1 x + bu u`, `σ = s0 + s1 x`,
/// `f = f0 + fy y + fz z + fu u`, `g` from the functional registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineSpec {
    pub b0: f64,
    pub b1: f64,
    pub bu: f64,
    pub s0: f64,
    pub s1: f64,
    pub f0: f64,
    pub fy: f64,
    pub fz: f64,
    pub fu: f64,
    pub terminal: String,
    pub controls: Vec<f64>,
}

impl Default for AffineSpec {
    fn default() -> Self {
        Self {
            b0: 0.0,
            b1: 0.0,
            bu: 0.0,
            s0: 1.0,
            s1: 0.0,
            f0: 0.0,
            fy: 0.0,
            fz: 0.0,
            fu: 0.0,
            terminal: "terminal_value".into(),
            controls: vec![0.0],
        }
    }
}

pub fn affine(horizon: f64, spec: &AffineSpec) -> Result<Problem> {
    let g = registry::lookup(&spec.terminal, horizon)?;
    let markov = spec.terminal.starts_with("cylinder:")
        || matches!(spec.terminal.as_str(), "terminal_value" | "terminal_square");
    let AffineSpec { b0, b1, bu, s0, s1, f0, fy, fz, fu, .. } = *spec;
    if spec.controls.is_empty() {
        return Err(Error::Empty("affine control set"));
    }
    let mut coef = CoefficientSet::brownian(1)
        .with_drift("b0+b1*x+bu*u", move |p, u| vec![b0 + b1 * p.terminal()[0] + bu * u[0]])
        .with_sigma("s0+s1*x", move |p, _| vec![s0 + s1 * p.terminal()[0]])
        .with_generator("f0+fy*y+fz*z+fu*u", move |_, y, z, u| f0 + fy * y + fz * z[0] + fu * u[0])
        .with_terminal(&spec.terminal, move |p| g.eval(p))
        .with_controls("affine", spec.controls.iter().map(|&u| vec![u]).collect())?;
    if markov {
        coef = coef.markovian();
    }
    Ok(Problem { name: "affine".into(), coef, horizon, value: None })
}

/// Problem selection as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub horizon: f64,
    pub tau: f64,
    pub affine: AffineSpec,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { name: "heat".into(), horizon: 1.0, tau: 0.1, affine: AffineSpec::default() }
    }
}

pub const NAMES: &[&str] = &["heat", "asian", "controlled_drift", "delay_demo", "affine"];

pub fn build(cfg: &ProblemConfig) -> Result<Problem> {
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be positive and finite"));
    }
    match cfg.name.as_str() {
        "heat" => heat(cfg.horizon),
        "asian" => asian(cfg.horizon),
        "controlled_drift" => controlled_drift(cfg.horizon),
        "delay_demo" => delay_demo(cfg.horizon, cfg.tau),
        "affine" => affine(cfg.horizon, &cfg.affine),
        other => Err(Error::invalid("problem", format!("unknown problem `{other}`; expected one of {NAMES:?}"))),
    }
}

/// The path `s ↦ slope·s` on `[0, t]` with `steps` intervals (the zero path
/// at time 0 when `t = 0`).
pub fn linear_initial(t: f64, slope: f64, steps: usize) -> Result<Path> {
    if t == 0.0 {
        return Ok(Path::origin(1));
    }
    Path::sample_scalar(t, steps.max(1), |s| slope * s)
}
