//! Euler–Maruyama simulation of path-dependent controlled SDEs, Brownian
//! concatenation and Hölder-modulus statistics.
//!
//! Randomness is keyed by `(seed, path index)`: every path draws from its own
//! ChaCha8 stream, so batches are reproducible and independent of the worker
//! count.

mod stats;

pub use stats::*;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::pathspace::Path;

pub type DriftFn = Arc<dyn Fn(&Path, &[f64]) -> Vec<f64> + Send + Sync>;
pub type SigmaFn = Arc<dyn Fn(&Path, &[f64]) -> Vec<f64> + Send + Sync>;
pub type GeneratorFn = Arc<dyn Fn(&Path, f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&Path) -> f64 + Send + Sync>;
pub type Policy = Arc<dyn Fn(&Path) -> Vec<f64> + Send + Sync>;

/// Labels carried into run manifests.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CoefficientLabels {
    pub drift: String,
    pub sigma: String,
    pub generator: String,
    pub terminal: String,
    pub controls: String,
}

/// `(b, σ, f, g, U)`. `σ` returns a row-major `n × d` matrix. The control
/// set is finite; suprema over `U` are taken over its elements.
#[derive(Clone)]
pub struct CoefficientSet {
    state_dim: usize,
    noise_dim: usize,
    control_dim: usize,
    controls: Vec<Vec<f64>>,
    drift: DriftFn,
    sigma: SigmaFn,
    generator: GeneratorFn,
    terminal: TerminalFn,
    markovian: bool,
    pub labels: CoefficientLabels,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("controls", &self.controls)
            .field("markovian", &self.markovian)
            .field("labels", &self.labels)
            .finish()
    }
}

impl CoefficientSet {
    /// Brownian motion in `R^n` with `f = 0`, `g = 0` and no control.
    pub fn brownian(n: usize) -> Self {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        Self {
            state_dim: n,
            noise_dim: n,
            control_dim: 0,
            controls: vec![Vec::new()],
            drift: Arc::new(move |_, _| vec![0.0; n]),
            sigma: Arc::new(move |_, _| id.clone()),
            generator: Arc::new(|_, _, _, _| 0.0),
            terminal: Arc::new(|_| 0.0),
            markovian: true,
            labels: CoefficientLabels {
                drift: "0".into(),
                sigma: "I".into(),
                generator: "0".into(),
                terminal: "0".into(),
                controls: "none".into(),
            },
        }
    }

    /// Zero drift and zero diffusion with `d` noise dimensions.
    pub fn frozen(n: usize, d: usize) -> Self {
        Self::brownian(n)
            .with_noise_dim(d)
            .with_sigma("0", move |_, _| vec![0.0; n * d])
            .markovian()
    }

    pub fn with_noise_dim(mut self, d: usize) -> Self {
        self.noise_dim = d;
        self
    }

    pub fn with_drift<F>(mut self, label: &str, f: F) -> Self
    where
        F: Fn(&Path, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self.labels.drift = label.into();
        self.markovian = false;
        self
    }

    pub fn with_sigma<F>(mut self, label: &str, f: F) -> Self
    where
        F: Fn(&Path, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.sigma = Arc::new(f);
        self.labels.sigma = label.into();
        self.markovian = false;
        self
    }

    pub fn with_generator<F>(mut self, label: &str, f: F) -> Self
    where
        F: Fn(&Path, f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.generator = Arc::new(f);
        self.labels.generator = label.into();
        self.markovian = false;
        self
    }

    pub fn with_terminal<F>(mut self, label: &str, f: F) -> Self
    where
        F: Fn(&Path) -> f64 + Send + Sync + 'static,
    {
        self.terminal = Arc::new(f);
        self.labels.terminal = label.into();
        self.markovian = false;
        self
    }

    /// Replaces the control set; all elements must share one length.
    pub fn with_controls(mut self, label: &str, controls: Vec<Vec<f64>>) -> Result<Self> {
        let first = controls.first().ok_or(Error::Empty("control set"))?;
        let c = first.len();
        for u in &controls {
            check_dim(c, u.len())?;
        }
        self.control_dim = c;
        self.controls = controls;
        self.labels.controls = label.into();
        Ok(self)
    }

    /// Declares that `b`, `σ`, `f` and `g` depend on the path only through
    /// `(t, γ(t))`. Replacing any coefficient clears the flag.
    pub fn markovian(mut self) -> Self {
        self.markovian = true;
        self
    }

    pub fn is_markovian(&self) -> bool {
        self.markovian
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn drift(&self, p: &Path, u: &[f64]) -> Vec<f64> {
        (self.drift)(p, u)
    }

    pub fn sigma(&self, p: &Path, u: &[f64]) -> Vec<f64> {
        (self.sigma)(p, u)
    }

    pub fn generator(&self, p: &Path, y: f64, z: &[f64], u: &[f64]) -> f64 {
        (self.generator)(p, y, z, u)
    }

    pub fn terminal(&self, p: &Path) -> f64 {
        (self.terminal)(p)
    }

    pub fn terminal_fn(&self) -> TerminalFn {
        self.terminal.clone()
    }

    /// A policy that always plays `u`.
    pub fn constant_policy(&self, u: Vec<f64>) -> Result<Policy> {
        check_dim(self.control_dim, u.len())?;
        Ok(Arc::new(move |_: &Path| u.clone()))
    }

    /// The first control of the set, played forever.
    pub fn default_policy(&self) -> Policy {
        let u = self.controls[0].clone();
        Arc::new(move |_: &Path| u.clone())
    }
}

/// Largest finite-difference Lipschitz ratios in `d_p` over sample pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub drift: f64,
    pub sigma: f64,
    pub generator: f64,
    pub terminal: f64,
}

/// Probes Lipschitz constants of `b`, `σ`, `f(·, 0, 0, u)` and `g` over the
/// sample at a fixed control. Logged only; nothing is enforced.
pub fn lipschitz_probe(coef: &CoefficientSet, sample: &[Path], u: &[f64]) -> Result<LipschitzReport> {
    let n = coef.state_dim();
    let d = coef.noise_dim();
    let z = vec![0.0; d];
    let vals: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = sample
        .iter()
        .map(|p| {
            check_dim(n, p.dim())?;
            Ok((coef.drift(p, u), coef.sigma(p, u), coef.generator(p, 0.0, &z, u), coef.terminal(p)))
        })
        .collect::<Result<_>>()?;
    let mut rep = LipschitzReport::default();
    let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            let dp = sample[i].dp_metric(&sample[j])?;
            if dp <= 0.0 {
                continue;
            }
            let (a, b) = (&vals[i], &vals[j]);
            rep.drift = rep.drift.max(l2(&a.0, &b.0) / dp);
            rep.sigma = rep.sigma.max(l2(&a.1, &b.1) / dp);
            rep.generator = rep.generator.max((a.2 - b.2).abs() / dp);
            rep.terminal = rep.terminal.max((a.3 - b.3).abs() / dp);
        }
    }
    Ok(rep)
}

/// Simulation grid and batch size. The continuation grid is `{kT/K}` after
/// the initial horizon, plus `T` itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(horizon: f64, steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        let c = Self { horizon, steps, n_paths, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "must be at least 1"));
        }
        Ok(())
    }

    /// Grid points strictly after `t` (up to a tiny tolerance), ending at `T`.
    pub fn continuation_grid(&self, t: f64) -> Vec<f64> {
        let k = self.steps;
        let tol = 1e-9 * self.horizon / k as f64;
        let mut g: Vec<f64> = (1..k)
            .map(|i| i as f64 * self.horizon / k as f64)
            .filter(|&s| s > t + tol)
            .collect();
        if self.horizon > t + tol {
            g.push(self.horizon);
        }
        g
    }
}

/// Simulated paths on a shared grid with their Brownian increments and the
/// controls that were played.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub paths: Vec<Path>,
    /// Index of the initial horizon `t` in the shared grid.
    pub start: usize,
    pub noise_dim: usize,
    pub control_dim: usize,
    /// `[path][step][noise]`
    pub dw: Vec<f64>,
    /// `[path][step][control]`
    pub controls: Vec<f64>,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        self.paths[0].times()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }

    /// Number of simulated steps after `t`.
    pub fn steps(&self) -> usize {
        self.grid().len() - 1 - self.start
    }

    pub fn initial_horizon(&self) -> f64 {
        self.grid()[self.start]
    }

    /// Increment `W(s_{k+1}) - W(s_k)` of path `i` at continuation step `k`.
    pub fn dw_at(&self, i: usize, k: usize) -> &[f64] {
        let d = self.noise_dim;
        let off = (i * self.steps() + k) * d;
        &self.dw[off..off + d]
    }

    pub fn control_at(&self, i: usize, k: usize) -> &[f64] {
        let c = self.control_dim;
        let off = (i * self.steps() + k) * c;
        &self.controls[off..off + c]
    }

    /// Path-major CSV: `path,time,x1..xn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        writeln!(w, "path,time,{}", cols.join(","))?;
        for (i, p) in self.paths.iter().enumerate() {
            for k in 0..p.len() {
                let xs: Vec<String> = p.point_at(k).iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{i},{:?},{}", p.times()[k], xs.join(","))?;
            }
        }
        Ok(())
    }
}

/// Per-path generator. Stream `idx` of the ChaCha8 generator keyed by `seed`.
pub(crate) fn path_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(idx as u64);
    rng
}

fn check_initial(initial: &Path, horizon: f64, strict: bool) -> Result<()> {
    let t = initial.horizon();
    let bad = if strict { t >= horizon } else { t > horizon * (1.0 + 1e-12) };
    if bad {
        return Err(Error::TimeOutOfRange { requested: t, lo: 0.0, hi: horizon });
    }
    Ok(())
}

struct Simulated {
    path: Path,
    dw: Vec<f64>,
    controls: Vec<f64>,
}

fn simulate_one(
    coef: &CoefficientSet,
    initial: &Path,
    policy: &Policy,
    grid: &[f64],
    seed: u64,
    idx: usize,
) -> Result<Simulated> {
    let n = coef.state_dim();
    let d = coef.noise_dim();
    let mut rng = path_rng(seed, idx);
    let mut path = initial.clone();
    let mut dws = Vec::with_capacity(grid.len() * d);
    let mut ctrls = Vec::with_capacity(grid.len() * coef.control_dim());
    let mut x = initial.terminal().to_vec();
    let mut dw = vec![0.0; d];
    let mut s = initial.horizon();
    for &s_next in grid {
        let dt = s_next - s;
        let sd = dt.sqrt();
        for w in dw.iter_mut() {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        let u = policy(&path);
        check_dim(coef.control_dim(), u.len())?;
        let b = coef.drift(&path, &u);
        let sig = coef.sigma(&path, &u);
        check_dim(n, b.len())?;
        check_dim(n * d, sig.len())?;
        for i in 0..n {
            let row = &sig[i * d..(i + 1) * d];
            x[i] += b[i] * dt + row.iter().zip(&dw).map(|(a, w)| a * w).sum::<f64>();
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: format!("path {idx} at time {s_next}") });
        }
        path.push(s_next, &x)?;
        dws.extend_from_slice(&dw);
        ctrls.extend_from_slice(&u);
        s = s_next;
    }
    Ok(Simulated { path, dw: dws, controls: ctrls })
}

fn assemble(sims: Vec<Simulated>, start: usize, noise_dim: usize, control_dim: usize) -> PathBatch {
    let mut paths = Vec::with_capacity(sims.len());
    let mut dw = Vec::new();
    let mut controls = Vec::new();
    for s in sims {
        dw.extend(s.dw);
        controls.extend(s.controls);
        paths.push(s.path);
    }
    PathBatch { paths, start, noise_dim, control_dim, dw, controls }
}

/// Euler–Maruyama batch agreeing with `initial` on `[0, t]`. Coefficients
/// and the policy see the path simulated so far.
pub fn simulate_sde(coef: &CoefficientSet, initial: &Path, policy: &Policy, cfg: &SimConfig) -> Result<PathBatch> {
    cfg.validate()?;
    check_dim(coef.state_dim(), initial.dim())?;
    check_initial(initial, cfg.horizon, true)?;
    let grid = cfg.continuation_grid(initial.horizon());
    simulate_sde_on(coef, initial, policy, &grid, cfg.n_paths, cfg.seed)
}

/// [`simulate_sde`] on an explicit continuation grid.
pub fn simulate_sde_on(
    coef: &CoefficientSet,
    initial: &Path,
    policy: &Policy,
    grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    check_dim(coef.state_dim(), initial.dim())?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be at least 1"));
    }
    let initial = initial.baked();
    check_grid(&initial, grid)?;
    let sims = par::map_range(n_paths, |i| simulate_one(coef, &initial, policy, grid, seed, i));
    let sims = sims.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble(sims, initial.len() - 1, coef.noise_dim(), coef.control_dim()))
}

fn check_grid(initial: &Path, grid: &[f64]) -> Result<()> {
    let mut prev = initial.horizon();
    for &s in grid {
        if !(s > prev) {
            return Err(Error::invalid("grid", "continuation grid must increase past the initial horizon"));
        }
        prev = s;
    }
    Ok(())
}

/// One Brownian continuation of `initial` along `grid`; `dw` receives the
/// increments. Draws match [`simulate_sde`] with `b = 0`, `σ = I`.
pub(crate) fn brownian_path(initial: &Path, grid: &[f64], seed: u64, idx: usize, dw: &mut Vec<f64>) -> Path {
    let mut rng = path_rng(seed, idx);
    let mut path = initial.clone();
    let mut x = initial.terminal().to_vec();
    dw.clear();
    let mut s = initial.horizon();
    for &s_next in grid {
        let sd = (s_next - s).sqrt();
        for xi in x.iter_mut() {
            let w = sd * rng.sample::<f64, _>(StandardNormal);
            *xi += w;
            dw.push(w);
        }
        path.push(s_next, &x).expect("increasing grid");
        s = s_next;
    }
    path
}

/// `W^γ(s) = γ(s)` on `[0, t]`, `W(s) - W(t) + γ(t)` on `[t, T]`.
pub fn brownian_concat(initial: &Path, cfg: &SimConfig) -> Result<PathBatch> {
    cfg.validate()?;
    check_initial(initial, cfg.horizon, false)?;
    let initial = initial.baked();
    let grid = cfg.continuation_grid(initial.horizon());
    brownian_concat_on(&initial, &grid, cfg.n_paths, cfg.seed)
}

/// [`brownian_concat`] on an explicit continuation grid (strictly after the
/// initial horizon and increasing).
pub fn brownian_concat_on(initial: &Path, grid: &[f64], n_paths: usize, seed: u64) -> Result<PathBatch> {
    let initial = initial.baked();
    check_grid(&initial, grid)?;
    let sims = par::map_range(n_paths, |i| {
        let mut dw = Vec::new();
        let path = brownian_path(&initial, grid, seed, i, &mut dw);
        Simulated { path, dw, controls: Vec::new() }
    });
    Ok(assemble(sims, initial.len() - 1, initial.dim(), 0))
}
