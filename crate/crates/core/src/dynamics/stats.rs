use serde::Serialize;

use super::{brownian_path, PathBatch, SimConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::pathspace::{dist, HolderParams, HolderScratch, Path, PathKind};

/// Moment estimates of a batch against its anchor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentStats {
    pub p: f64,
    pub n_paths: usize,
    /// `E‖X_T‖₀^p`
    pub sup_moment: f64,
    /// `E‖X_T‖₀^p / (1 + ‖γ_t‖₀^p)`
    pub growth_constant: f64,
    /// `(r - t, E‖X_r - γ_{t,r}‖₀^p)` for a dyadic ladder of `r`.
    pub ladder: Vec<(f64, f64)>,
    /// Log-log slope of the ladder; `None` when a moment vanishes.
    pub exponent: Option<f64>,
    /// Fitted `E‖X_r - γ_{t,r}‖₀^p / (r - t)^{p/2}` at the largest `r`.
    pub deviation_constant: f64,
    /// Whether the slope is within `0.2 · p/2` of `p/2`.
    pub scaling_ok: Option<bool>,
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Moment checks of a batch anchored at `reference`: `‖X_r - γ_{t,r}‖₀` is the
/// largest distance to `γ(t)` over `[t, r]`.
pub fn moment_checks(batch: &PathBatch, reference: &Path, p: f64) -> Result<MomentStats> {
    if !(p >= 2.0) {
        return Err(Error::invalid("p", "must be at least 2"));
    }
    if batch.len() < 100 {
        return Err(Error::Precondition(format!(
            "moment fit needs at least 100 paths, got {}",
            batch.len()
        )));
    }
    let start = batch.start;
    let steps = batch.steps();
    if steps == 0 {
        return Err(Error::Precondition("batch has no simulated steps".into()));
    }
    let grid = batch.grid();
    let t = grid[start];
    let anchor = reference.baked();
    let x0 = anchor.terminal();

    let mut idx: Vec<usize> = Vec::new();
    let mut j = 0;
    while idx.len() < 6 {
        let k = ((steps as f64) / 2f64.powi(j)).ceil() as usize;
        if k == 0 || idx.last() == Some(&(start + k)) {
            break;
        }
        idx.push(start + k);
        if k == 1 {
            break;
        }
        j += 1;
    }
    idx.reverse();

    let n = batch.len() as f64;
    let mut ladder_sums = vec![0.0; idx.len()];
    let mut sup_sum = 0.0;
    for path in &batch.paths {
        sup_sum += path.sup_norm().powf(p);
        let mut running = 0.0f64;
        let mut next = 0;
        for k in start..path.len() {
            running = running.max(dist(path.point_at(k), x0));
            while next < idx.len() && idx[next] == k {
                ladder_sums[next] += running.powf(p);
                next += 1;
            }
        }
    }
    let ladder: Vec<(f64, f64)> = idx
        .iter()
        .zip(&ladder_sums)
        .map(|(&k, s)| (grid[k] - t, s / n))
        .collect();
    let exponent = if ladder.len() >= 2 && ladder.iter().all(|&(_, m)| m > 0.0) {
        let lx: Vec<f64> = ladder.iter().map(|(r, _)| r.ln()).collect();
        let ly: Vec<f64> = ladder.iter().map(|(_, m)| m.ln()).collect();
        Some(fit_slope(&lx, &ly))
    } else {
        None
    };
    let (r_max, m_max) = *ladder.last().unwrap();
    let sup_moment = sup_sum / n;
    Ok(MomentStats {
        p,
        n_paths: batch.len(),
        sup_moment,
        growth_constant: sup_moment / (1.0 + anchor.sup_norm().powf(p)),
        deviation_constant: m_max / r_max.powf(p / 2.0),
        scaling_ok: exponent.map(|e| (e - p / 2.0).abs() <= 0.2 * p / 2.0),
        exponent,
        ladder,
    })
}

/// Hölder moduli of every path in a batch.
pub fn holder_moduli(batch: &PathBatch, alpha: f64) -> Vec<f64> {
    par::map_range_init(batch.len(), HolderScratch::new, |s, i| {
        batch.paths[i].holder_modulus_with(alpha, s)
    })
}

/// Hölder moduli of `cfg.n_paths` Brownian paths in `R^dim` started at 0,
/// generated and reduced one at a time (nothing is stored).
pub fn brownian_holder_moduli(cfg: &SimConfig, dim: usize, alpha: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let origin = Path::origin(dim);
    let grid = cfg.continuation_grid(0.0);
    Ok(par::map_range_init(
        cfg.n_paths,
        || (HolderScratch::new(), Vec::new()),
        |(scratch, dw), i| brownian_path(&origin, &grid, cfg.seed, i, dw).holder_modulus_with(alpha, scratch),
    ))
}

/// Empirical `q`-quantile (nearest rank).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("q", "must lie in [0, 1]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let ph = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (ph + z2 / (2.0 * n)) / den;
    let half = z * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt() / den;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Minimum exceedance count for a tail point to enter assertions.
pub const MIN_TAIL_COUNT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPoint {
    pub mu: f64,
    /// Fraction of moduli `>= mu`.
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
    pub n: usize,
    pub zero_count: bool,
    pub usable: bool,
}

/// Survival probabilities `P̂{⟦X⟧_α >= μ}` with 95% Wilson intervals.
pub fn tail_points(moduli: &[f64], mus: &[f64]) -> Vec<TailPoint> {
    let n = moduli.len();
    mus.iter()
        .map(|&mu| {
            let count = moduli.iter().filter(|&&m| m >= mu).count();
            let (lo, hi) = wilson_interval(count, n, 1.96);
            TailPoint {
                mu,
                probability: if n > 0 { count as f64 / n as f64 } else { 0.0 },
                ci_low: lo,
                ci_high: hi,
                count,
                n,
                zero_count: count == 0,
                usable: count >= MIN_TAIL_COUNT,
            }
        })
        .collect()
}

/// Tail of the `α`-Hölder modulus of one-dimensional Brownian motion on
/// `[0, T]`.
pub fn holder_tail_estimate(cfg: &SimConfig, alpha: f64, mus: &[f64]) -> Result<Vec<TailPoint>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid("alpha", "must lie in (0, 1/2)"));
    }
    if mus.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("mus", "must be increasing"));
    }
    let moduli = brownian_holder_moduli(cfg, 1, alpha)?;
    Ok(tail_points(&moduli, mus))
}

/// Closed form of `Σ_q 2·3^p·C_p·T·(2^{-q}T)^{p(1/2-α)-1}·(2^{-α}μ)^{-p}`.
pub fn dyadic_tail_bound(p: f64, alpha: f64, horizon: f64, mu: f64, cp: f64) -> Result<f64> {
    let e = (0.5 - alpha) * p;
    if !(e > 1.0) {
        return Err(Error::invalid("p", format!("series diverges: (1/2 - alpha) p = {e} <= 1")));
    }
    if !(mu > 0.0 && horizon > 0.0) {
        return Err(Error::invalid("mu", "mu and T must be positive"));
    }
    let c = 2.0 * 3f64.powf(p) * cp * 2f64.powf(alpha * p) / (1.0 - 2f64.powf(1.0 - e));
    Ok(c * horizon.powf(e) * mu.powf(-p))
}

/// Per path, the first grid time after the anchor horizon `t` at which
/// `⟦X_s⟧_α > μ`, or `‖X_s - γ_{t,s}‖₀ > κ`, or `s >= t + κ`. The last
/// clause snaps up to the grid (capped at the batch horizon).
pub fn combined_exit_time(batch: &PathBatch, anchor: &Path, hp: &HolderParams, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    let anchor = anchor.baked();
    let start = batch.start;
    if anchor.len() != start + 1 {
        return Err(Error::Precondition("anchor does not match the batch prefix".into()));
    }
    let first = &batch.paths[0];
    for k in 0..=start {
        if anchor.times()[k] != first.times()[k] || anchor.sample(k) != first.point_at(k) {
            return Err(Error::Precondition("anchor does not match the batch prefix".into()));
        }
    }
    let grid = batch.grid();
    let t = grid[start];
    let tol = 1e-9 * (grid[grid.len() - 1] - grid[0]).max(1.0);
    let last = grid.len() - 1;
    let limit = (start + 1..=last).find(|&k| grid[k] >= t + kappa - tol).unwrap_or(last);
    let x0 = anchor.terminal().to_vec();
    let times = par::map_range_init(batch.len(), HolderScratch::new, |scratch, i| {
        let path = &batch.paths[i];
        let sup_exit = (start + 1..=limit).find(|&k| dist(path.point_at(k), &x0) > kappa);
        let stop = sup_exit.unwrap_or(limit);
        let prefix = path.restrict(grid[stop]).expect("grid time");
        let holder_exit = prefix.exit_index_holder_from(hp, start + 1, scratch);
        let k = holder_exit.map_or(stop, |h| h.min(stop));
        grid[k]
    });
    Ok(times)
}

/// Which anchor the escape experiment continues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AnchorKind {
    /// `γ = 0` before `t₁`, `γ(s) = μ(s - t₁)^α` after.
    Boundary,
    /// The zero path (an interior point of the ball).
    Zero,
    /// The boundary anchor pulled inside by [`Path::perturb`].
    Perturbed { eps: f64 },
}

/// Sampling parameters of the escape experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EscapeSpec {
    /// Anchor horizon `t`.
    pub horizon: f64,
    pub anchor_steps: usize,
    /// Continuation steps over the largest `δ`.
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub anchor: AnchorKind,
}

/// The boundary path on `[0, t]`: `0` up to `t₁`, then `μ(s - t₁)^α`. The
/// grid is uniform with `t₁` inserted.
pub fn boundary_anchor(hp: &HolderParams, t1: f64, horizon: f64, steps: usize) -> Result<Path> {
    if !(t1 >= 0.0 && t1 < horizon) {
        return Err(Error::invalid("t1", "must lie in [0, t)"));
    }
    let mut times = Path::uniform_grid(horizon, steps.max(1));
    if !times.iter().any(|&s| (s - t1).abs() <= 1e-12 * horizon) {
        times.push(t1);
        times.sort_by(f64::total_cmp);
    }
    let values = times
        .iter()
        .map(|&s| if s <= t1 { 0.0 } else { hp.mu * (s - t1).powf(hp.alpha) })
        .collect();
    Path::new(1, times, values, PathKind::Continuous)
}

fn escape_anchor(hp: &HolderParams, t1: f64, spec: &EscapeSpec) -> Result<Path> {
    let boundary = boundary_anchor(hp, t1, spec.horizon, spec.anchor_steps)?;
    match spec.anchor {
        AnchorKind::Boundary => Ok(boundary),
        AnchorKind::Zero => Path::new(
            1,
            boundary.times().to_vec(),
            vec![0.0; boundary.len()],
            PathKind::Continuous,
        ),
        AnchorKind::Perturbed { eps } => boundary.perturb(hp, eps),
    }
}

/// Fraction of Brownian continuations `W^γ` with `⟦W^γ_{t+δ}⟧_α <= μ`, for each
/// `δ` (increasing) from one shared batch on `[t, t + max δ]`.
pub fn boundary_escape_curve(hp: &HolderParams, t1: f64, deltas: &[f64], spec: &EscapeSpec) -> Result<Vec<f64>> {
    let &dmax = deltas.last().ok_or(Error::Empty("deltas"))?;
    if deltas.iter().any(|&d| !(d > 0.0)) || deltas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("deltas", "must be positive and increasing"));
    }
    if spec.steps == 0 || spec.n_paths == 0 {
        return Err(Error::invalid("spec", "steps and n_paths must be positive"));
    }
    let anchor = escape_anchor(hp, t1, spec)?;
    let t = anchor.horizon();
    let grid: Vec<f64> = (1..=spec.steps)
        .map(|k| t + dmax * k as f64 / spec.steps as f64)
        .collect();
    let from = anchor.len();
    let tol = 1e-9 * dmax / spec.steps as f64;
    let exits = par::map_range_init(
        spec.n_paths,
        || (HolderScratch::new(), Vec::new()),
        |(scratch, dw), i| {
            let path = brownian_path(&anchor, &grid, spec.seed, i, dw);
            if deltas.len() == 1 {
                // one horizon: a single membership test is enough
                if path.in_holder_ball_with(hp, scratch) {
                    None
                } else {
                    Some(t)
                }
            } else {
                path.exit_index_holder_from(hp, from, scratch).map(|k| path.times()[k])
            }
        },
    );
    let n = spec.n_paths as f64;
    Ok(deltas
        .iter()
        .map(|&d| exits.iter().filter(|e| e.is_none_or(|s| s > t + d + tol)).count() as f64 / n)
        .collect())
}

/// Single-`δ` escape fraction.
pub fn boundary_escape_experiment(hp: &HolderParams, t1: f64, delta: f64, spec: &EscapeSpec) -> Result<f64> {
    Ok(boundary_escape_curve(hp, t1, &[delta], spec)?[0])
}
