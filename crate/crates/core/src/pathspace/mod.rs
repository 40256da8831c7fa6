//! Sampled paths and the path-level operators used throughout the crate:
//! the parabolic metric, flat extension, terminal bumps, concatenation,
//! Hölder moduli, the `P^m` truncation, perturbation toward the terminal
//! value, cylinders and exit times.

mod csv;
pub mod holder;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
pub use holder::{HolderScratch, HOLDER_RTOL};

/// Tolerance used when comparing sample times.
pub const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    /// Linear interpolation between samples.
    Continuous,
    /// Right-continuous piecewise constant, anchored at the left sample.
    Stepped,
}

impl PathKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::Continuous => "continuous",
            PathKind::Stepped => "stepped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TerminalBump {
    offset: Vec<f64>,
    value: Vec<f64>,
}

/// A sampled path on `[0, t]` with values in `R^n`.
///
/// Samples are stored row-major. A path may carry a terminal bump: the value
/// at the horizon is shifted while every earlier sample, and the stored
/// terminal sample itself, stay untouched. Functionals that integrate over
/// the path read the raw samples, so the bump has zero quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    kind: PathKind,
    bump: Option<TerminalBump>,
}

/// Hölder exponent and modulus bound defining the ball `C^α_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderParams {
    pub alpha: f64,
    pub mu: f64,
}

impl HolderParams {
    pub fn new(alpha: f64, mu: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid("alpha", format!("{alpha} not in (0, 1]")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu", format!("{mu} must be positive")));
        }
        Ok(Self { alpha, mu })
    }
}

/// The cylinder `Q_{κ,ι}(γ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSpec {
    pub center: Path,
    pub kappa: f64,
    pub iota: f64,
}

impl CylinderSpec {
    pub fn new(center: Path, kappa: f64, iota: f64, horizon_limit: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::invalid("kappa", "must be positive"));
        }
        if !(iota > 0.0) {
            return Err(Error::invalid("iota", "must be positive"));
        }
        if center.horizon() + iota > horizon_limit + TIME_EPS {
            return Err(Error::TimeOutOfRange {
                requested: center.horizon() + iota,
                lo: 0.0,
                hi: horizon_limit,
            });
        }
        Ok(Self { center, kappa, iota })
    }
}

impl Path {
    pub fn new(dim: usize, times: Vec<f64>, values: Vec<f64>, kind: PathKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if times.is_empty() {
            return Err(Error::Empty("path times"));
        }
        check_dim(times.len() * dim, values.len())?;
        if times[0].abs() > TIME_EPS {
            return Err(Error::invalid("times", "must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        if values.iter().chain(times.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "path samples".into() });
        }
        Ok(Self { dim, times, values, kind, bump: None })
    }

    /// One-dimensional continuous path.
    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(1, times, values, PathKind::Continuous)
    }

    /// Single sample at time 0.
    pub fn point(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            times: vec![0.0],
            values: x.to_vec(),
            kind: PathKind::Continuous,
            bump: None,
        }
    }

    pub fn origin(dim: usize) -> Self {
        Self::point(&vec![0.0; dim])
    }

    /// Uniform grid of `steps + 1` samples on `[0, horizon]`.
    pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
        if steps == 0 {
            return vec![0.0];
        }
        let mut g: Vec<f64> = (0..=steps)
            .map(|k| k as f64 * horizon / steps as f64)
            .collect();
        g[steps] = horizon;
        g
    }

    /// Samples `f` on a uniform grid; `f` writes the value at time `s`.
    pub fn sample_fn<F>(dim: usize, horizon: f64, steps: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(f64, &mut [f64]),
    {
        let times = Self::uniform_grid(horizon, steps);
        let mut values = vec![0.0; times.len() * dim];
        for (k, &s) in times.iter().enumerate() {
            f(s, &mut values[k * dim..(k + 1) * dim]);
        }
        Self::new(dim, times, values, PathKind::Continuous)
    }

    /// One-dimensional version of [`Path::sample_fn`].
    pub fn sample_scalar<F: FnMut(f64) -> f64>(horizon: f64, steps: usize, mut f: F) -> Result<Self> {
        Self::sample_fn(1, horizon, steps, |s, out| out[0] = f(s))
    }

    pub fn constant(x: &[f64], horizon: f64, steps: usize) -> Result<Self> {
        Self::sample_fn(x.len(), horizon, steps, |_, out| out.copy_from_slice(x))
    }

    pub fn zero(dim: usize, horizon: f64, steps: usize) -> Result<Self> {
        Self::constant(&vec![0.0; dim], horizon, steps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty path")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: PathKind) -> Self {
        self.kind = kind;
        self
    }

    /// Raw sample `i`, ignoring any terminal bump.
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// All raw samples, row-major.
    pub fn samples(&self) -> &[f64] {
        &self.values
    }

    /// Point `i` of the path as seen by the metric: the bumped value at the
    /// last index, the raw sample elsewhere.
    pub fn point_at(&self, i: usize) -> &[f64] {
        match &self.bump {
            Some(b) if i + 1 == self.len() => &b.value,
            _ => self.sample(i),
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.point_at(self.len() - 1)
    }

    pub fn initial(&self) -> &[f64] {
        self.sample(0)
    }

    pub fn is_bumped(&self) -> bool {
        self.bump.is_some()
    }

    pub fn bump_offset(&self) -> Option<&[f64]> {
        self.bump.as_ref().map(|b| b.offset.as_slice())
    }

    /// Points (bump applied), row-major.
    pub fn points(&self) -> std::borrow::Cow<'_, [f64]> {
        match &self.bump {
            None => std::borrow::Cow::Borrowed(&self.values),
            Some(b) => {
                let mut v = self.values.clone();
                let n = v.len();
                v[n - self.dim..].copy_from_slice(&b.value);
                std::borrow::Cow::Owned(v)
            }
        }
    }

    /// Same path with the bump folded into the terminal sample.
    pub fn baked(&self) -> Path {
        let mut p = self.clone();
        if let Some(b) = p.bump.take() {
            let n = p.values.len();
            p.values[n - p.dim..].copy_from_slice(&b.value);
        }
        p
    }

    /// Last grid spacing, if the path has more than one sample.
    pub fn last_spacing(&self) -> Option<f64> {
        let n = self.len();
        (n >= 2).then(|| self.times[n - 1] - self.times[n - 2])
    }

    /// True when the path is a member of `Λ`: continuous and zero at time 0.
    pub fn is_lambda(&self) -> bool {
        self.kind == PathKind::Continuous && self.initial().iter().all(|v| *v == 0.0)
    }

    /// Appends a sample after the horizon. Fails on a bumped path.
    pub fn push(&mut self, t: f64, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if self.bump.is_some() {
            return Err(Error::Precondition("cannot extend a bumped path by push".into()));
        }
        if !(t > self.horizon()) {
            return Err(Error::invalid("t", "must exceed the current horizon"));
        }
        self.times.push(t);
        self.values.extend_from_slice(x);
        Ok(())
    }

    /// Index of the last sample with time `<= s`.
    fn locate(&self, s: f64) -> usize {
        match self
            .times
            .binary_search_by(|t| t.partial_cmp(&s).expect("finite times"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Value at time `s` in `[0, horizon]`. Times past the horizon return the
    /// terminal value, which is the flat extension.
    pub fn value_at_into(&self, s: f64, out: &mut [f64]) {
        let n = self.len();
        if s >= self.horizon() - TIME_EPS * self.horizon().max(1.0) && s >= self.horizon() {
            out.copy_from_slice(self.terminal());
            return;
        }
        let i = self.locate(s);
        if i + 1 >= n {
            out.copy_from_slice(self.terminal());
            return;
        }
        let a = self.sample(i);
        match self.kind {
            PathKind::Stepped => out.copy_from_slice(a),
            PathKind::Continuous => {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let w = ((s - t0) / (t1 - t0)).clamp(0.0, 1.0);
                // interpolate toward the raw sample; the bump only acts at the horizon
                let b = self.sample(i + 1);
                for c in 0..self.dim {
                    out[c] = a[c] + w * (b[c] - a[c]);
                }
            }
        }
    }

    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_at_into(s, &mut out);
        out
    }

    /// `‖γ‖₀`: maximum Euclidean norm over the sampled points.
    pub fn sup_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| norm(self.point_at(i)))
            .fold(0.0, f64::max)
    }

    /// Sup over the union grid of `|flat_extend(shorter) - longer|` (no time term).
    pub fn sup_distance(&self, other: &Path) -> Result<f64> {
        check_dim(self.dim, other.dim)?;
        let (short, long) = if self.horizon() <= other.horizon() {
            (self, other)
        } else {
            (other, self)
        };
        let mut a = vec![0.0; self.dim];
        let mut b = vec![0.0; self.dim];
        let mut best = 0.0f64;
        let mut eval = |s: f64| {
            short.value_at_into(s.min(short.horizon()), &mut a);
            long.value_at_into(s, &mut b);
            let d = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            best = best.max(d);
        };
        for &s in short.times.iter().chain(long.times.iter()) {
            eval(s);
        }
        // left limits at the horizons matter when a bump sits there
        if short.is_bumped() && short.len() >= 2 {
            let s = short.horizon();
            let mut raw = short.clone();
            raw.bump = None;
            raw.value_at_into(s, &mut a);
            long.value_at_into(s, &mut b);
            best = best.max(dist(&a, &b));
        }
        Ok(best)
    }

    /// Parabolic metric `d_p`.
    pub fn dp_metric(&self, other: &Path) -> Result<f64> {
        let dt = (self.horizon() - other.horizon()).abs();
        Ok(dt.sqrt() + self.sup_distance(other)?)
    }

    /// Flat extension to `t_new`. A terminal bump is folded into the
    /// extended constant piece.
    pub fn flat_extend(&self, t_new: f64) -> Result<Path> {
        let t = self.horizon();
        if t_new < t - TIME_EPS {
            return Err(Error::TimeOutOfRange { requested: t_new, lo: t, hi: f64::INFINITY });
        }
        if t_new <= t + TIME_EPS {
            return Ok(self.clone());
        }
        let mut p = self.baked();
        let last = p.terminal().to_vec();
        p.times.push(t_new);
        p.values.extend_from_slice(&last);
        Ok(p)
    }

    /// `γ^x_t`: shifts the terminal value by `x`.
    pub fn vertical_bump(&self, x: &[f64]) -> Result<Path> {
        check_dim(self.dim, x.len())?;
        let mut p = self.clone();
        let offset: Vec<f64> = match &self.bump {
            Some(b) => b.offset.iter().zip(x).map(|(o, d)| o + d).collect(),
            None => x.to_vec(),
        };
        if offset.iter().all(|v| *v == 0.0) {
            p.bump = None;
        } else {
            let raw = self.sample(self.len() - 1);
            let value = raw.iter().zip(&offset).map(|(r, o)| r + o).collect();
            p.bump = Some(TerminalBump { offset, value });
        }
        Ok(p)
    }

    /// `prefix` on `[0, t)` followed by the increments of `suffix` re-anchored
    /// at the prefix's terminal value.
    pub fn concat(&self, suffix: &Path) -> Result<Path> {
        check_dim(self.dim, suffix.dim)?;
        let t = self.horizon();
        if suffix.horizon() < t - TIME_EPS {
            return Err(Error::TimeOutOfRange { requested: suffix.horizon(), lo: t, hi: f64::INFINITY });
        }
        let mut out = self.baked();
        let anchor = out.terminal().to_vec();
        let base = suffix.value_at(t);
        for i in 0..suffix.len() {
            let s = suffix.times[i];
            if s <= t + TIME_EPS {
                continue;
            }
            let x = suffix.point_at(i);
            out.times.push(s);
            for c in 0..self.dim {
                out.values.push(x[c] - base[c] + anchor[c]);
            }
        }
        out.kind = if self.kind == PathKind::Stepped && suffix.kind == PathKind::Stepped {
            PathKind::Stepped
        } else {
            PathKind::Continuous
        };
        Ok(out)
    }

    /// Prefix on `[0, t]`, interpolating the terminal sample when `t` is not a node.
    pub fn restrict(&self, t: f64) -> Result<Path> {
        if t > self.horizon() + TIME_EPS || t < 0.0 {
            return Err(Error::TimeOutOfRange { requested: t, lo: 0.0, hi: self.horizon() });
        }
        if t >= self.horizon() - TIME_EPS {
            return Ok(self.clone());
        }
        let i = self.locate(t);
        let mut p = Path {
            dim: self.dim,
            times: self.times[..=i].to_vec(),
            values: self.values[..(i + 1) * self.dim].to_vec(),
            kind: self.kind,
            bump: None,
        };
        if t - self.times[i] > TIME_EPS {
            let x = self.value_at(t);
            p.times.push(t);
            p.values.extend_from_slice(&x);
        }
        Ok(p)
    }

    /// `⟦γ⟧_α`: max over sample pairs of `|γ(s) - γ(r)| / |s - r|^α`.
    pub fn holder_modulus(&self, alpha: f64) -> f64 {
        holder::modulus(&self.times, &self.points(), self.dim, alpha)
    }

    /// Modulus restricted to every `stride`-th sample (plus the last one);
    /// a lower bound of [`Path::holder_modulus`].
    pub fn holder_modulus_strided(&self, alpha: f64, stride: usize) -> f64 {
        let stride = stride.max(1);
        if stride == 1 {
            return self.holder_modulus(alpha);
        }
        let pts = self.points();
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        let times: Vec<f64> = idx.iter().map(|&i| self.times[i]).collect();
        let vals: Vec<f64> = idx
            .iter()
            .flat_map(|&i| pts[i * self.dim..(i + 1) * self.dim].iter().copied())
            .collect();
        holder::modulus(&times, &vals, self.dim, alpha)
    }

    pub fn holder_modulus_with(&self, alpha: f64, scratch: &mut HolderScratch) -> f64 {
        match holder::modulus_search(&self.times, &self.points(), self.dim, alpha, None, scratch) {
            holder::Search::Max(m) => m,
            holder::Search::Exceeds => unreachable!(),
        }
    }

    /// Membership in `C^α_μ` (ties within [`HOLDER_RTOL`] count as inside).
    pub fn in_holder_ball(&self, hp: &HolderParams) -> bool {
        self.in_holder_ball_with(hp, &mut HolderScratch::new())
    }

    pub fn in_holder_ball_with(&self, hp: &HolderParams, scratch: &mut HolderScratch) -> bool {
        matches!(
            holder::modulus_search(&self.times, &self.points(), self.dim, hp.alpha, Some(hp.mu), scratch),
            holder::Search::Max(_)
        )
    }

    /// `P^m γ_t` on the grid `t_i = iT/m`: value `γ(t_i)` on `[t_i, t_{i+1})`
    /// up to `t_{k-1}`, `γ(t_{k-1})` on `[t_{k-1}, t)` and `γ(t)` at `{t}`,
    /// where `t ∈ (t_{k-1}, t_k]`.
    pub fn truncate_pm(&self, m: usize, horizon_total: f64) -> Result<Path> {
        if m == 0 {
            return Err(Error::invalid("m", "must be positive"));
        }
        if self.kind != PathKind::Continuous {
            return Err(Error::Precondition("truncate_pm expects a continuous path".into()));
        }
        let t = self.horizon();
        if t > horizon_total + TIME_EPS {
            return Err(Error::TimeOutOfRange { requested: t, lo: 0.0, hi: horizon_total });
        }
        if t <= TIME_EPS {
            return Ok(Path::point(self.terminal()).with_kind(PathKind::Stepped));
        }
        let k = segment_of(t, m, horizon_total);
        let mut times = Vec::with_capacity(k + 1);
        let mut values = Vec::with_capacity((k + 1) * self.dim);
        for j in 0..k {
            let tj = grid_time(j, m, horizon_total);
            times.push(tj);
            values.extend(self.value_at(tj));
        }
        times.push(t);
        values.extend_from_slice(self.terminal());
        Path::new(self.dim, times, values, PathKind::Stepped)
    }

    /// `Osc(γ, δ)`: max of `|γ(r) - γ(s)|` over sample pairs with `0 < r - s < δ`.
    pub fn oscillation(&self, delta: f64) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for s in 0..n {
            let xs = self.point_at(s);
            for r in s + 1..n {
                if self.times[r] - self.times[s] >= delta {
                    break;
                }
                best = best.max(dist(xs, self.point_at(r)));
            }
        }
        best
    }

    /// Radial perturbation toward the terminal value so that the left
    /// modulus at `t` gains slack `ε`.
    pub fn perturb(&self, hp: &HolderParams, eps: f64) -> Result<Path> {
        if !(eps > 0.0 && eps < hp.mu) {
            return Err(Error::invalid("eps", format!("{eps} not in (0, mu={})", hp.mu)));
        }
        if !self.in_holder_ball(hp) {
            return Err(Error::Precondition("path lies outside C^alpha_mu".into()));
        }
        let t = self.horizon();
        let end = self.terminal().to_vec();
        let radius = hp.mu - eps;
        let mut values = self.points().into_owned();
        let n = self.len();
        for i in 0..n - 1 {
            let lag = (t - self.times[i]).powf(hp.alpha);
            let x = &mut values[i * self.dim..(i + 1) * self.dim];
            let d = dist(x, &end);
            let bound = radius * lag;
            if d > bound {
                let scale = bound / d;
                for c in 0..self.dim {
                    x[c] = end[c] + scale * (x[c] - end[c]);
                }
            }
        }
        Ok(Path {
            dim: self.dim,
            times: self.times.clone(),
            values,
            kind: self.kind,
            bump: None,
        })
    }

    pub fn in_cylinder(&self, c: &CylinderSpec) -> Result<bool> {
        check_dim(c.center.dim, self.dim)?;
        let t0 = c.center.horizon();
        let t = self.horizon();
        if t < t0 - TIME_EPS || t > t0 + c.iota + TIME_EPS {
            return Ok(false);
        }
        Ok(self.sup_distance(&c.center)? < c.kappa)
    }

    /// First sample time at which the modulus of the path restricted to
    /// `[0, t']` exceeds `μ`; `None` when the whole path is in `C^α_μ`.
    pub fn exit_time_holder(&self, hp: &HolderParams) -> Option<f64> {
        self.exit_index_holder(hp, &mut HolderScratch::new())
            .map(|i| self.times[i])
    }

    pub(crate) fn exit_index_holder(&self, hp: &HolderParams, scratch: &mut HolderScratch) -> Option<usize> {
        self.exit_index_holder_from(hp, 1, scratch)
    }

    /// Like [`Path::exit_time_holder`], only considering exit indices `>= from`
    /// (the prefix `0..from` is assumed inside the ball).
    pub(crate) fn exit_index_holder_from(
        &self,
        hp: &HolderParams,
        from: usize,
        scratch: &mut HolderScratch,
    ) -> Option<usize> {
        let pts = self.points();
        let inside = |len: usize, scratch: &mut HolderScratch| {
            matches!(
                holder::modulus_search(
                    &self.times[..len],
                    &pts[..len * self.dim],
                    self.dim,
                    hp.alpha,
                    Some(hp.mu),
                    scratch
                ),
                holder::Search::Max(_)
            )
        };
        let n = self.len();
        if inside(n, scratch) {
            return None;
        }
        // prefix membership is monotone in the length: binary search the first
        // failing length
        let (mut lo, mut hi) = (from.max(1), n);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if inside(mid + 1, scratch) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

/// Grid time `t_i = iT/m`.
pub fn grid_time(i: usize, m: usize, horizon_total: f64) -> f64 {
    if i == m {
        horizon_total
    } else {
        i as f64 * horizon_total / m as f64
    }
}

/// The `k >= 1` with `t ∈ (t_{k-1}, t_k]`; `1` for `t = 0`.
pub fn segment_of(t: f64, m: usize, horizon_total: f64) -> usize {
    let x = t * m as f64 / horizon_total;
    let k = (x - 1e-9).ceil().max(1.0) as usize;
    k.min(m)
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(slope: f64, horizon: f64, steps: usize) -> Path {
        Path::sample_scalar(horizon, steps, |s| slope * s).unwrap()
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(Path::zero(1, 1.0, 4).unwrap().sup_norm(), 0.0);
        let p = Path::scalar(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(p.sup_norm(), 1.0);
        let p = Path::scalar(vec![0.0, 0.5, 1.0], vec![0.0, -2.0, 1.0]).unwrap();
        assert_eq!(p.sup_norm(), 2.0);
    }

    #[test]
    fn dp_metric_examples() {
        let a = line(1.0, 1.0, 10);
        assert_eq!(a.dp_metric(&a).unwrap(), 0.0);
        let z1 = Path::zero(1, 1.0, 4).unwrap();
        let z4 = Path::zero(1, 4.0, 8).unwrap();
        assert!((z1.dp_metric(&z4).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert!((z4.dp_metric(&z1).unwrap() - 3f64.sqrt()).abs() < 1e-15);
        let b = line(2.0, 1.0, 10);
        assert!((a.dp_metric(&b).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            a.dp_metric(&Path::zero(2, 1.0, 2).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_extend_examples() {
        let z = Path::zero(1, 1.0, 4).unwrap().flat_extend(2.0).unwrap();
        assert_eq!(z.horizon(), 2.0);
        assert_eq!(z.sup_norm(), 0.0);
        let a = line(1.0, 1.0, 4);
        let e = a.flat_extend(2.0).unwrap();
        for s in [0.0, 0.3, 0.75, 1.0, 1.5, 2.0] {
            assert!((e.value_at(s)[0] - s.min(1.0)).abs() < 1e-15);
        }
        assert_eq!(a.flat_extend(1.0).unwrap(), a);
        assert!(a.flat_extend(0.5).is_err());
    }

    #[test]
    fn vertical_bump_examples() {
        let a = line(1.0, 1.0, 4);
        assert_eq!(a.vertical_bump(&[0.0]).unwrap(), a);
        let b = a.vertical_bump(&[0.5]).unwrap();
        assert_eq!(b.terminal(), &[1.5]);
        for i in 0..a.len() {
            assert_eq!(b.sample(i), a.sample(i));
        }
        let z = Path::zero(2, 1.0, 3).unwrap().vertical_bump(&[1.0, 0.0]).unwrap();
        assert_eq!(z.terminal(), &[1.0, 0.0]);
    }

    #[test]
    fn concat_examples() {
        let g = line(1.0, 1.0, 4);
        assert_eq!(g.concat(&g.flat_extend(1.0).unwrap()).unwrap(), g);
        let prefix = Path::sample_scalar(1.0, 2, |s| 3.0 * s).unwrap();
        let suffix = Path::sample_scalar(2.0, 4, |s| if s <= 1.0 { 7.0 } else { 7.0 + (s - 1.0) }).unwrap();
        let c = prefix.concat(&suffix).unwrap();
        assert_eq!(c.horizon(), 2.0);
        assert!((c.terminal()[0] - 4.0).abs() < 1e-15);
        let g2 = Path::sample_scalar(1.0, 4, |s| 1.0 + s * s).unwrap();
        let c = Path::origin(1).concat(&g2).unwrap();
        for i in 0..g2.len() {
            assert!((c.sample(i)[0] - (g2.sample(i)[0] - 1.0)).abs() < 1e-15);
        }
        assert!(g.concat(&Path::zero(1, 0.5, 2).unwrap()).is_err());
    }

    #[test]
    fn holder_modulus_examples() {
        assert_eq!(Path::constant(&[3.0], 1.0, 10).unwrap().holder_modulus(0.3), 0.0);
        let a = line(1.0, 1.0, 200);
        assert!((a.holder_modulus(0.25) - 1.0).abs() < 1e-12);
        let p = Path::sample_scalar(1.0, 400, |s| s.powf(0.25)).unwrap();
        assert!((p.holder_modulus(0.25) - 1.0).abs() < 1e-12);
        assert_eq!(Path::origin(1).holder_modulus(0.5), 0.0);
    }

    #[test]
    fn holder_ball_examples() {
        let c = Path::constant(&[1.0], 1.0, 10).unwrap();
        assert!(c.in_holder_ball(&HolderParams::new(0.1, 0.01).unwrap()));
        let a = line(1.0, 1.0, 200);
        assert!(!a.in_holder_ball(&HolderParams::new(0.25, 0.5).unwrap()));
        assert!(a.in_holder_ball(&HolderParams::new(0.25, 1.0).unwrap()));
    }

    #[test]
    fn truncate_pm_examples() {
        let a = line(1.0, 1.0, 100);
        let p = a.truncate_pm(2, 1.0).unwrap();
        assert_eq!(p.kind(), PathKind::Stepped);
        for (s, want) in [(0.0, 0.0), (0.25, 0.0), (0.49, 0.0), (0.5, 0.5), (0.99, 0.5), (1.0, 1.0)] {
            assert!((p.value_at(s)[0] - want).abs() < 1e-12, "s={s}");
        }
        let c = Path::constant(&[2.0], 1.0, 10).unwrap().truncate_pm(3, 1.0).unwrap();
        assert!([0.0, 0.4, 0.9, 1.0].iter().all(|&s| c.value_at(s)[0] == 2.0));
        let half = line(1.0, 0.6, 60);
        let p1 = half.truncate_pm(1, 1.0).unwrap();
        assert_eq!(p1.value_at(0.3)[0], 0.0);
        assert!((p1.terminal()[0] - 0.6).abs() < 1e-15);
        assert!(a.truncate_pm(0, 1.0).is_err());
    }

    #[test]
    fn oscillation_examples() {
        assert_eq!(Path::zero(1, 1.0, 10).unwrap().oscillation(0.1), 0.0);
        let a = line(1.0, 1.0, 1000);
        let o = a.oscillation(0.1);
        assert!((0.1 - 1e-3 - 1e-12..=0.1 + 1e-12).contains(&o), "{o}");
    }

    #[test]
    fn perturb_examples() {
        let hp = HolderParams::new(0.25, 1.0).unwrap();
        let c = Path::constant(&[0.7], 1.0, 10).unwrap();
        assert_eq!(c.perturb(&hp, 0.5).unwrap(), c);
        let a = Path::sample_scalar(1.0, 200, |s| -(1.0 - s).powf(0.25)).unwrap();
        let p = a.perturb(&hp, 0.5).unwrap();
        for i in 0..p.len() {
            let s = p.times()[i];
            let want = -0.5 * (1.0 - s).powf(0.25);
            assert!((p.sample(i)[0] - want).abs() < 1e-14, "s={s}");
        }
        assert!(a.perturb(&hp, 1.0).is_err());
        let steep = line(3.0, 1.0, 20);
        assert!(steep.perturb(&hp, 0.5).is_err());
    }

    #[test]
    fn cylinder_examples() {
        let center = line(1.0, 0.5, 10);
        let cyl = CylinderSpec::new(center.clone(), 0.2, 0.3, 1.0).unwrap();
        assert!(center.flat_extend(0.7).unwrap().in_cylinder(&cyl).unwrap());
        assert!(!center.restrict(0.4).unwrap().in_cylinder(&cyl).unwrap());
        let shifted = Path::sample_scalar(0.7, 14, |s| s.min(0.5) + 0.2).unwrap();
        assert!(!shifted.in_cylinder(&cyl).unwrap());
        assert!(CylinderSpec::new(center, 0.2, 0.6, 1.0).is_err());
    }

    #[test]
    fn exit_time_examples() {
        assert_eq!(
            Path::constant(&[1.0], 1.0, 10).unwrap().exit_time_holder(&HolderParams::new(0.5, 0.1).unwrap()),
            None
        );
        let a = line(1.0, 1.0, 1000);
        let t = a.exit_time_holder(&HolderParams::new(0.5, 0.5).unwrap()).unwrap();
        assert!((t - 0.25).abs() <= 1e-3 + 1e-12, "{t}");
        let steep = line(100.0, 1.0, 10);
        assert_eq!(steep.exit_time_holder(&HolderParams::new(0.5, 1.0).unwrap()), Some(0.1));
    }

    #[test]
    fn restrict_and_value_at() {
        let a = line(2.0, 1.0, 4);
        let r = a.restrict(0.6).unwrap();
        assert!((r.horizon() - 0.6).abs() < 1e-15);
        assert!((r.terminal()[0] - 1.2).abs() < 1e-12);
        let st = a.clone().with_kind(PathKind::Stepped);
        assert_eq!(st.value_at(0.3)[0], 0.5);
    }

    fn arb_path(dim: usize) -> impl Strategy<Value = Path> {
        (1usize..30, 0.1f64..2.0, prop::collection::vec(-1.0f64..1.0, 30 * dim)).prop_map(
            move |(steps, horizon, incs)| {
                let mut acc = vec![0.0; dim];
                Path::sample_fn(dim, horizon, steps, |s, out| {
                    if s > 0.0 {
                        let k = ((s / horizon) * steps as f64).round() as usize;
                        for c in 0..dim {
                            acc[c] += incs[(k - 1) * dim + c] * 0.3;
                        }
                    }
                    out.copy_from_slice(&acc);
                })
                .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn dp_is_a_metric(a in arb_path(2), b in arb_path(2), c in arb_path(2)) {
            let ab = a.dp_metric(&b).unwrap();
            let ba = b.dp_metric(&a).unwrap();
            let bc = b.dp_metric(&c).unwrap();
            let ac = a.dp_metric(&c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(a.dp_metric(&a).unwrap(), 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn bump_roundtrip_is_exact(a in arb_path(1), x in -5.0f64..5.0) {
            let back = a.vertical_bump(&[x]).unwrap().vertical_bump(&[-x]).unwrap();
            prop_assert_eq!(back.terminal(), a.terminal());
            prop_assert_eq!(back, a);
        }

        #[test]
        fn concat_keeps_prefix(a in arb_path(1), b in arb_path(1)) {
            let t = a.horizon();
            let suffix = if b.horizon() >= t { b } else { b.flat_extend(t + 0.5).unwrap() };
            let c = a.concat(&suffix).unwrap();
            prop_assert!((c.horizon() - suffix.horizon()).abs() < 1e-12);
            for i in 0..a.len() - 1 {
                prop_assert_eq!(c.sample(i), a.sample(i));
            }
        }

        #[test]
        fn exit_time_iff_outside(a in arb_path(1), alpha in 0.1f64..0.9, mu in 0.1f64..3.0) {
            let hp = HolderParams::new(alpha, mu).unwrap();
            prop_assert_eq!(a.exit_time_holder(&hp).is_none(), a.in_holder_ball(&hp));
            if let Some(t) = a.exit_time_holder(&hp) {
                let inside = a.restrict(t).unwrap();
                prop_assert!(!inside.in_holder_ball(&hp));
                let idx = a.times().iter().position(|s| *s == t).unwrap();
                if idx > 1 {
                    prop_assert!(a.restrict(a.times()[idx - 1]).unwrap().in_holder_ball(&hp));
                }
            }
        }

        #[test]
        fn truncation_error_bounded_by_oscillation(
            m in 1usize..6,
            per in 1usize..8,
            incs in prop::collection::vec(-1.0f64..1.0, 48),
        ) {
            // grid aligned with t_i = iT/m
            let steps = m * per;
            let a = Path::scalar(
                Path::uniform_grid(1.0, steps),
                std::iter::once(0.0)
                    .chain(incs.iter().take(steps).scan(0.0, |acc, d| { *acc += d; Some(*acc) }))
                    .collect(),
            ).unwrap();
            let total = a.horizon();
            let tr = a.truncate_pm(m, total).unwrap();
            let mut err = 0.0f64;
            for &s in a.times().iter().chain(tr.times()) {
                err = err.max((tr.value_at(s)[0] - a.value_at(s)[0]).abs());
            }
            let osc = a.oscillation(total / m as f64);
            prop_assert!(err <= osc + 1e-12, "err {} osc {}", err, osc);
            let alpha = 0.3;
            let mu = a.holder_modulus(alpha);
            prop_assert!(osc <= mu * (total / m as f64).powf(alpha) + 1e-12);
        }

        #[test]
        fn perturbation_lemma(a in arb_path(2), alpha in 0.1f64..0.5, frac in 0.05f64..0.5) {
            let mu = a.holder_modulus(alpha).max(1e-3) * 1.0;
            let hp = HolderParams::new(alpha, mu).unwrap();
            let eps = frac * mu;
            let p = a.perturb(&hp, eps).unwrap();
            prop_assert!(p.holder_modulus(alpha) <= mu + 1e-12);
            let bound = 2.0 * a.sup_norm() * eps / (mu - eps);
            prop_assert!(p.sup_distance(&a).unwrap() <= bound + 1e-12);
            prop_assert_eq!(p.terminal(), a.terminal());
        }
    }
}
