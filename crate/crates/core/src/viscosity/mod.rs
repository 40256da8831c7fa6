//! Hamiltonians, PPDE residuals and semi-jet diagnostics.
//!
//! Jets are never searched: candidates are supplied (typically
//! `v + c(t' - t) + q|x' - a(t)|²` built by [`quadratic_jet`]) and tested on
//! finite samples of `Q_{κ,κ}(a) ∩ C^α_μ`. A sampled verdict can refute
//! membership but only suggests it.

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::backward::{cost_functional, CondExpEngine};
use crate::dynamics::{path_rng, CoefficientSet, Policy, SimConfig};
use crate::error::{check_dim, Error, Result};
use crate::funcalc::{analytic_bundle, functional_holder_norm, DerivativeBundle, PathFunctional};
use crate::par;
use crate::pathspace::{CylinderSpec, HolderParams, Path};

/// The μ values at which the sub/super-solution diagnostics are tabulated.
pub const MU_LADDER: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JetParams {
    pub hp: HolderParams,
    /// Radius and time depth of the cylinder `Q_{κ,κ}`.
    pub kappa: f64,
    /// Sup-norm bound on admissible paths.
    pub m0: f64,
    /// Exponent of the functional Hölder norm.
    pub beta: f64,
}

impl JetParams {
    pub fn new(hp: HolderParams, kappa: f64, m0: f64, beta: f64, horizon: f64) -> Result<Self> {
        if !(hp.alpha > 0.0 && hp.alpha < 0.5) {
            return Err(Error::invalid("alpha", "must lie in (0, 1/2)"));
        }
        if !(kappa > 0.0 && kappa < horizon) {
            return Err(Error::invalid("kappa", "must lie in (0, T)"));
        }
        if !(m0 > 0.0) {
            return Err(Error::invalid("m0", "must be positive"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid("beta", "must lie in (0, 1)"));
        }
        Ok(Self { hp, kappa, m0, beta })
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.hp.mu = mu;
        self
    }

    /// Tolerance for gap signs and residuals: `10⁻⁸ (1 + |v(a)|)`.
    pub fn tolerance(value: f64) -> f64 {
        1e-8 * (1.0 + value.abs())
    }
}

/// A test functional with closed-form derivatives.
#[derive(Debug, Clone)]
pub struct SmoothCandidate {
    psi: PathFunctional,
}

impl SmoothCandidate {
    pub fn new(psi: PathFunctional) -> Result<Self> {
        if !psi.has_analytic() {
            return Err(Error::Precondition(format!("`{}` has no analytic derivatives", psi.label())));
        }
        Ok(Self { psi })
    }

    pub fn functional(&self) -> &PathFunctional {
        &self.psi
    }

    pub fn eval(&self, a: &Path) -> Result<f64> {
        self.psi.try_eval(a)
    }

    pub fn bundle(&self, a: &Path) -> Result<DerivativeBundle> {
        analytic_bundle(&self.psi, a).expect("checked at construction")
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { psi: self.psi.shifted(c) }
    }
}

/// `ψ(γ') = v(γ') + c (t' - t) + q |γ'(t') - a(t)|²`; `v` must carry
/// analytic derivatives.
pub fn quadratic_jet(v: &PathFunctional, a: &Path, c: f64, q: f64) -> Result<SmoothCandidate> {
    let d = v
        .analytic()
        .cloned()
        .ok_or_else(|| Error::Precondition(format!("`{}` has no analytic derivatives", v.label())))?;
    let t0 = a.horizon();
    let x0 = a.baked().terminal().to_vec();
    let n = x0.len();
    let (v1, x1, x2) = (v.clone(), x0.clone(), x0);
    let psi = PathFunctional::new(format!("{}+{c}(t-t0)+{q}|x-x0|^2", v.label()), move |p: &Path| {
        let sq: f64 = p.terminal().iter().zip(&x1).map(|(x, y)| (x - y) * (x - y)).sum();
        v1.eval(p) + c * (p.horizon() - t0) + q * sq
    })
    .with_derivatives(
        {
            let dt = d.dt.clone();
            move |p: &Path| dt(p) + c
        },
        {
            let dx = d.dx.clone();
            move |p: &Path| {
                let mut g = dx(p);
                for (gi, (x, y)) in g.iter_mut().zip(p.terminal().iter().zip(&x2)) {
                    *gi += 2.0 * q * (x - y);
                }
                g
            }
        },
        {
            let dxx = d.dxx.clone();
            move |p: &Path| {
                let mut h = dxx(p);
                for i in 0..n {
                    h[i * n + i] += 2.0 * q;
                }
                h
            }
        },
    );
    SmoothCandidate::new(psi)
}

/// `½ Tr(σσᵀ A) + ⟨b, p⟩ + f(a, r, σᵀp, u)`.
pub fn hamiltonian(coef: &CoefficientSet, a: &Path, r: f64, p: &[f64], hess: &[f64], u: &[f64]) -> Result<f64> {
    let n = coef.state_dim();
    let d = coef.noise_dim();
    check_dim(n, a.dim())?;
    check_dim(n, p.len())?;
    check_dim(n * n, hess.len())?;
    check_dim(coef.control_dim(), u.len())?;
    let b = coef.drift(a, u);
    let s = coef.sigma(a, u);
    check_dim(n, b.len())?;
    check_dim(n * d, s.len())?;
    let mut trace = 0.0;
    for j in 0..n {
        for k in 0..n {
            let cov: f64 = (0..d).map(|l| s[j * d + l] * s[k * d + l]).sum();
            trace += cov * hess[k * n + j];
        }
    }
    let z: Vec<f64> = (0..d).map(|l| (0..n).map(|j| s[j * d + l] * p[j]).sum()).collect();
    let drift: f64 = b.iter().zip(p).map(|(x, y)| x * y).sum();
    Ok(0.5 * trace + drift + coef.generator(a, r, &z, u))
}

pub fn sup_hamiltonian(
    coef: &CoefficientSet,
    a: &Path,
    r: f64,
    p: &[f64],
    hess: &[f64],
    controls: &[Vec<f64>],
) -> Result<f64> {
    if controls.is_empty() {
        return Err(Error::Empty("control grid"));
    }
    let mut best = f64::NEG_INFINITY;
    for u in controls {
        best = best.max(hamiltonian(coef, a, r, p, hess, u)?);
    }
    Ok(best)
}

/// `(ℒψ)(a, u) = D_t ψ + ℋ(a, ψ, D_x ψ, D_xx ψ, u)`.
pub fn l_operator(psi: &SmoothCandidate, a: &Path, u: &[f64], coef: &CoefficientSet) -> Result<f64> {
    let d = psi.bundle(a)?;
    Ok(d.dt + hamiltonian(coef, a, psi.eval(a)?, &d.dx, &d.dxx, u)?)
}

/// `-D_t v - sup_u ℋ(a, v, D_x v, D_xx v, u)`; zero for classical solutions.
pub fn ppde_residual(v: &SmoothCandidate, a: &Path, controls: &[Vec<f64>], coef: &CoefficientSet) -> Result<f64> {
    let d = v.bundle(a)?;
    Ok(-d.dt - sup_hamiltonian(coef, a, v.eval(a)?, &d.dx, &d.dxx, controls)?)
}

/// The feedback `γ ↦ argmax_u ℋ(γ, v, D_x v, D_xx v, u)` over the
/// coefficient set's controls (first maximiser on ties).
pub fn argmax_policy(v: &SmoothCandidate, coef: &CoefficientSet) -> Policy {
    let v = v.clone();
    let coef = coef.clone();
    Arc::new(move |a: &Path| {
        let controls = coef.controls();
        let best = (|| -> Result<usize> {
            let d = v.bundle(a)?;
            let r = v.eval(a)?;
            let mut best = (0, f64::NEG_INFINITY);
            for (k, u) in controls.iter().enumerate() {
                let h = hamiltonian(&coef, a, r, &d.dx, &d.dxx, u)?;
                if h > best.1 + 1e-12 * (1.0 + h.abs()) {
                    best = (k, h);
                }
            }
            Ok(best.0)
        })()
        .unwrap_or(0);
        controls[best].clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JetVerdict {
    Super,
    Sub,
    Both,
    Neither,
}

impl JetVerdict {
    pub fn is_super(self) -> bool {
        matches!(self, Self::Super | Self::Both)
    }

    pub fn is_sub(self) -> bool {
        matches!(self, Self::Sub | Self::Both)
    }
}

/// What the sample showed; indices refer to the caller's sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JetEvidence {
    pub verdict: JetVerdict,
    pub admissible: usize,
    pub rejected: usize,
    /// Constant added to ψ so that `ψ(a) = v(a)`.
    pub shift: f64,
    pub min_gap: f64,
    pub min_at: usize,
    pub max_gap: f64,
    pub max_at: usize,
    pub holder_norm: f64,
    pub holder_bound: f64,
    pub tol: f64,
}

/// Tests `ψ ∈ 𝒥^±_{μ,κ}(a, v)` on the admissible part of `sample`:
/// paths in `Q_{κ,κ}(a) ∩ C^α_μ` with sup-norm at most `M₀`. The verdict is
/// evidence on that finite sample only, and the Hölder norm of `ψ` is a
/// sampled lower bound.
pub fn jet_membership(
    psi: &SmoothCandidate,
    v: &PathFunctional,
    a: &Path,
    jp: &JetParams,
    sample: &[Path],
    horizon: f64,
) -> Result<JetEvidence> {
    let cyl = CylinderSpec::new(a.clone(), jp.kappa, jp.kappa.min(horizon - a.horizon()).max(f64::MIN_POSITIVE), horizon)?;
    let va = v.try_eval(a)?;
    let shift = va - psi.eval(a)?;
    let psi = psi.shifted(shift);
    let mut keep = Vec::new();
    for (i, p) in sample.iter().enumerate() {
        if p.in_cylinder(&cyl)? && p.sup_norm() <= jp.m0 && p.in_holder_ball(&jp.hp) {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::Empty("admissible jet sample"));
    }
    let gaps: Vec<Result<f64>> = par::map_range(keep.len(), |j| {
        let p = &sample[keep[j]];
        Ok(psi.eval(p)? - v.try_eval(p)?)
    });
    let mut min_gap = f64::INFINITY;
    let mut max_gap = f64::NEG_INFINITY;
    let (mut min_at, mut max_at) = (keep[0], keep[0]);
    for (j, g) in gaps.into_iter().enumerate() {
        let g = g?;
        if g < min_gap {
            min_gap = g;
            min_at = keep[j];
        }
        if g > max_gap {
            max_gap = g;
            max_at = keep[j];
        }
    }
    let admissible: Vec<Path> = keep.iter().map(|&i| sample[i].clone()).collect();
    let holder_norm = functional_holder_norm(psi.functional(), &admissible, jp.beta, horizon)?;
    let holder_bound = 1.0 / jp.kappa;
    let tol = JetParams::tolerance(va);
    let bounded = holder_norm <= holder_bound;
    let verdict = match (bounded && min_gap >= -tol, bounded && max_gap <= tol) {
        (true, true) => JetVerdict::Both,
        (true, false) => JetVerdict::Super,
        (false, true) => JetVerdict::Sub,
        (false, false) => JetVerdict::Neither,
    };
    Ok(JetEvidence {
        verdict,
        admissible: keep.len(),
        rejected: sample.len() - keep.len(),
        shift,
        min_gap,
        min_at,
        max_gap,
        max_at,
        holder_norm,
        holder_bound,
        tol,
    })
}

/// Random paths near `Q_{κ,κ}(a)`: `a` continued linearly for a time in
/// `[0, 0.9 κ]` to an endpoint within `κ/2` of `a(t)`. Paths that leave the
/// cylinder or the Hölder ball are filtered by [`jet_membership`].
pub fn cylinder_sample(a: &Path, jp: &JetParams, count: usize, horizon: f64, seed: u64) -> Result<Vec<Path>> {
    let t = a.horizon();
    let room = (horizon - t).min(jp.kappa) * 0.9;
    let end = a.baked().terminal().to_vec();
    let n = a.dim();
    (0..count)
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let s = room * rng.random::<f64>();
            let delta: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() - 0.5) * jp.kappa).collect();
            if s <= 1e-12 {
                return a.vertical_bump(&delta);
            }
            let mut p = a.baked();
            let steps = 8;
            for k in 1..=steps {
                let w = k as f64 / steps as f64;
                let x: Vec<f64> = end.iter().zip(&delta).map(|(x, d)| x + w * d).collect();
                p.push(t + w * s, &x)?;
            }
            Ok(p)
        })
        .collect()
}

/// `sup` over the jets of `-D_t ψ - sup_u ℋ(a, ψ(a), D_x ψ, D_xx ψ, u)`;
/// `-∞` for no jets.
pub fn subsolution_diagnostic(
    jets: &[(Path, SmoothCandidate)],
    controls: &[Vec<f64>],
    coef: &CoefficientSet,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (a, psi) in jets {
        best = best.max(ppde_residual(psi, a, controls, coef)?);
    }
    Ok(best)
}

/// `inf` over the jets of the same expression, `+∞` for no jets.
pub fn supersolution_diagnostic(
    jets: &[(Path, SmoothCandidate)],
    controls: &[Vec<f64>],
    coef: &CoefficientSet,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (a, psi) in jets {
        best = best.min(ppde_residual(psi, a, controls, coef)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub mu: f64,
    /// Jets whose base path lies in `C^α_μ`.
    pub candidates: usize,
    /// Of those, the ones that passed the sampled membership test.
    pub certified: usize,
    pub value: f64,
}

/// The sub-solution diagnostic at each `μ` of `mus`, over the super-jets
/// that pass [`jet_membership`] on a sample drawn by [`cylinder_sample`].
#[allow(clippy::too_many_arguments)]
pub fn subsolution_ladder(
    v: &PathFunctional,
    jets: &[(Path, SmoothCandidate)],
    base: &JetParams,
    mus: &[f64],
    sample_size: usize,
    seed: u64,
    controls: &[Vec<f64>],
    coef: &CoefficientSet,
    horizon: f64,
) -> Result<Vec<LadderRow>> {
    mus.iter()
        .map(|&mu| {
            let jp = base.with_mu(mu);
            let mut candidates = 0;
            let mut certified = Vec::new();
            for (k, (a, psi)) in jets.iter().enumerate() {
                if !a.in_holder_ball(&jp.hp) {
                    continue;
                }
                candidates += 1;
                let sample = cylinder_sample(a, &jp, sample_size, horizon, seed.wrapping_add(k as u64))?;
                let ev = match jet_membership(psi, v, a, &jp, &sample, horizon) {
                    Ok(ev) => ev,
                    Err(Error::Empty(_)) => continue,
                    Err(e) => return Err(e),
                };
                if ev.verdict.is_super() {
                    certified.push((a.clone(), psi.shifted(ev.shift)));
                }
            }
            Ok(LadderRow {
                mu,
                candidates,
                certified: certified.len(),
                value: subsolution_diagnostic(&certified, controls, coef)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationEntry {
    pub control: Vec<f64>,
    pub cost: f64,
    pub se: f64,
    pub eps_num: f64,
    /// `v(a) - J(a, u)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub value: f64,
    pub residual: f64,
    pub entries: Vec<VerificationEntry>,
    pub optimal: VerificationEntry,
    /// Every gap is at least `-ε_num`.
    pub dominates: bool,
    /// The candidate policy attains `v` within `ε_num`.
    pub attained: bool,
}

/// Compares `v(a)` with the cost of each constant control in `controls` and
/// of `policy`.
pub fn verification_demo(
    v: &SmoothCandidate,
    coef: &CoefficientSet,
    initial: &Path,
    policy: &Policy,
    controls: &[Vec<f64>],
    cfg: &SimConfig,
    engine: &CondExpEngine,
) -> Result<VerificationReport> {
    let value = v.eval(initial)?;
    let residual = ppde_residual(v, initial, coef.controls(), coef)?;
    let entry = |control: Vec<f64>, policy: &Policy| -> Result<VerificationEntry> {
        let c = cost_functional(coef, initial, policy, cfg, engine)?;
        Ok(VerificationEntry { control, cost: c.value, se: c.se, eps_num: c.eps_num, gap: value - c.value })
    };
    let mut entries = Vec::with_capacity(controls.len());
    for u in controls {
        entries.push(entry(u.clone(), &coef.constant_policy(u.clone())?)?);
    }
    let optimal = entry(Vec::new(), policy)?;
    let dominates = entries.iter().chain([&optimal]).all(|e| e.gap >= -e.eps_num);
    let attained = optimal.gap.abs() <= optimal.eps_num;
    Ok(VerificationReport { value, residual, entries, optimal, dominates, attained })
}

#[cfg(test)]
mod tests;
