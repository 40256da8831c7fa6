//! Explicit monotone finite differences on the chained segments.
//!
//! Only the last `n` coordinates of segment `i` move; the frozen increments
//! enter through the coefficients. Drift is upwinded, diffusion centred and
//! off-diagonal covariance uses the Kushner cross stencil, which is monotone
//! for diagonally dominant `ΣΣᵀ`. Out-of-box neighbours are linearly
//! extrapolated.

use std::sync::Mutex;

use serde::Serialize;

use super::{GridSpec, LiftedCoefficients, DIMENSION_CAP};
use crate::error::{Error, Result};
use crate::par;

const CHUNK: usize = 1024;

/// Grid values of one segment at the stored slice times.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentSolution {
    /// Segment number `i` (1-based).
    pub index: usize,
    /// Grid dimension `i·n`.
    pub dims: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub substeps: usize,
    pub dt: f64,
    /// Ascending slice times; the first is `t_start`, the last `t_end`.
    pub times: Vec<f64>,
    #[serde(skip)]
    pub slices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CascadeSolution {
    pub m: usize,
    pub state_dim: usize,
    pub horizon: f64,
    pub origin: Vec<f64>,
    pub half_width: f64,
    pub nodes: usize,
    pub dx: f64,
    pub controls: usize,
    pub segments: Vec<SegmentSolution>,
    /// Total node updates over all segments and substeps.
    pub node_updates: u64,
}

/// An interpolated value; `extrapolated` is set when a coordinate falls
/// outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub extrapolated: bool,
    pub segment: usize,
}

impl CascadeSolution {
    pub fn axis(&self) -> Vec<f64> {
        (0..self.nodes).map(|j| -self.half_width + j as f64 * self.dx).collect()
    }

    pub fn segment(&self, i: usize) -> &SegmentSolution {
        &self.segments[i - 1]
    }

    /// `V^{m,i}(t, x⃗)` by linear interpolation in time and multilinear
    /// interpolation in space.
    pub fn value(&self, i: usize, t: f64, x: &[f64]) -> Result<Evaluation> {
        if i == 0 || i > self.m {
            return Err(Error::invalid("segment", format!("{i} is outside 1..={}", self.m)));
        }
        let seg = self.segment(i);
        crate::error::check_dim(seg.dims, x.len())?;
        let tol = 1e-12 * self.horizon;
        if t < seg.t_start - tol || t > seg.t_end + tol {
            return Err(Error::TimeOutOfRange { requested: t, lo: seg.t_start, hi: seg.t_end });
        }
        let ts = &seg.times;
        let k = if ts.len() == 1 { 0 } else { ts.partition_point(|&s| s < t).saturating_sub(1).min(ts.len() - 2) };
        let (v0, extrapolated) = self.spatial(&seg.slices[k], x);
        if ts.len() == 1 || k + 1 >= ts.len() {
            return Ok(Evaluation { value: v0, extrapolated, segment: i });
        }
        let (v1, _) = self.spatial(&seg.slices[k + 1], x);
        let w = ((t - ts[k]) / (ts[k + 1] - ts[k])).clamp(0.0, 1.0);
        Ok(Evaluation { value: v0 * (1.0 - w) + v1 * w, extrapolated, segment: i })
    }

    fn spatial(&self, v: &[f64], x: &[f64]) -> (f64, bool) {
        let dims = x.len();
        let nodes = self.nodes;
        let mut cell = [0usize; DIMENSION_CAP];
        let mut frac = [0.0f64; DIMENSION_CAP];
        let mut extrapolated = false;
        for (c, &xc) in x.iter().enumerate() {
            if xc.abs() > self.half_width * (1.0 + 1e-12) {
                extrapolated = true;
            }
            let pos = (xc + self.half_width) / self.dx;
            let j = (pos.floor().max(0.0) as usize).min(nodes - 2);
            cell[c] = j;
            frac[c] = pos - j as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut idx = 0;
            for c in 0..dims {
                let up = (corner >> (dims - 1 - c)) & 1;
                w *= if up == 1 { frac[c] } else { 1.0 - frac[c] };
                idx = idx * nodes + cell[c] + up;
            }
            total += w * v[idx];
        }
        (total, extrapolated)
    }

    /// Largest `|V^{m,i}(t_i, x⃗_i) - V^{m,i+1}(t_i, x⃗_i, 0)|` over shared
    /// nodes.
    pub fn chain_defect(&self) -> f64 {
        let n = self.state_dim;
        let center = (self.nodes - 1) / 2;
        let mut worst = 0.0f64;
        for i in 1..self.m {
            let lower = self.segment(i).slices.last().expect("end slice");
            let upper = &self.segment(i + 1).slices[0];
            for (idx, &v) in lower.iter().enumerate() {
                let j = extend_index(idx, n, self.nodes, center);
                worst = worst.max((v - upper[j]).abs());
            }
        }
        worst
    }
}

/// Index of `(x⃗, c, …, c)` in a grid with `n` more axes.
fn extend_index(idx: usize, n: usize, nodes: usize, center: usize) -> usize {
    let mut j = idx;
    for _ in 0..n {
        j = j * nodes + center;
    }
    j
}

/// Solves the chained HJB equations backward from `T`.
pub fn solve_cascade(lifted: &LiftedCoefficients, grid: &GridSpec) -> Result<CascadeSolution> {
    grid.validate()?;
    let n = lifted.state_dim();
    let m = lifted.m;
    if m * n > DIMENSION_CAP {
        let segment = (1..=m).find(|i| i * n > DIMENSION_CAP).unwrap_or(m);
        return Err(Error::DimensionCap { segment, dims: segment * n, cap: DIMENSION_CAP });
    }
    let controls: Vec<Vec<f64>> = grid.controls.clone().unwrap_or_else(|| lifted.coef.controls().to_vec());
    if controls.is_empty() {
        return Err(Error::Empty("control grid"));
    }
    let origin_norm = crate::pathspace::norm(&lifted.origin);
    let half_width = grid.half_width.unwrap_or(5.0 * (1.0 + origin_norm) * lifted.horizon.sqrt());
    let nodes = grid.nodes;
    let dx = 2.0 * half_width / (nodes - 1) as f64;
    let ctx = Ctx { lifted, controls: &controls, nodes, half_width, dx, n, d: lifted.coef.noise_dim() };

    let mut segments: Vec<SegmentSolution> = Vec::with_capacity(m);
    let mut node_updates = 0u64;
    for i in (1..=m).rev() {
        let dims = i * n;
        let size = nodes.pow(dims as u32);
        let terminal = if i == m {
            let vals = par::map_range_init(
                size,
                || vec![0.0; dims],
                |x, idx| {
                    ctx.decode(idx, dims, x);
                    lifted.terminal(x)
                },
            );
            vals.into_iter().collect::<Result<Vec<f64>>>()?
        } else {
            let upper = &segments.last().expect("upper segment").slices[0];
            let center = (nodes - 1) / 2;
            (0..size).map(|idx| upper[extend_index(idx, n, nodes, center)]).collect()
        };
        let seg = ctx.solve_segment(i, terminal, grid)?;
        node_updates += (seg.substeps * size) as u64;
        segments.push(seg);
    }
    segments.reverse();
    Ok(CascadeSolution {
        m,
        state_dim: n,
        horizon: lifted.horizon,
        origin: lifted.origin.clone(),
        half_width,
        nodes,
        dx,
        controls: controls.len(),
        segments,
        node_updates,
    })
}

struct Ctx<'a> {
    lifted: &'a LiftedCoefficients,
    controls: &'a [Vec<f64>],
    nodes: usize,
    half_width: f64,
    dx: f64,
    n: usize,
    d: usize,
}

/// Local coefficients at one node under one control.
struct Local {
    b: Vec<f64>,
    s: Vec<f64>,
    a: [[f64; DIMENSION_CAP]; DIMENSION_CAP],
}

impl Ctx<'_> {
    fn decode(&self, idx: usize, dims: usize, x: &mut [f64]) {
        let mut r = idx;
        for c in (0..dims).rev() {
            x[c] = -self.half_width + (r % self.nodes) as f64 * self.dx;
            r /= self.nodes;
        }
    }

    fn local(&self, path: &crate::pathspace::Path, u: &[f64]) -> Result<Local> {
        let (n, d) = (self.n, self.d);
        let b = self.lifted.coef.drift(path, u);
        let s = self.lifted.coef.sigma(path, u);
        crate::error::check_dim(n, b.len())?;
        crate::error::check_dim(n * d, s.len())?;
        let mut a = [[0.0; DIMENSION_CAP]; DIMENSION_CAP];
        for j in 0..n {
            for k in 0..n {
                a[j][k] = (0..d).map(|l| s[j * d + l] * s[k * d + l]).sum();
            }
        }
        for j in 0..n {
            let off: f64 = (0..n).filter(|&k| k != j).map(|k| a[j][k].abs()).sum();
            if a[j][j] + 1e-12 < off {
                return Err(Error::Precondition(
                    "covariance is not diagonally dominant; the cross stencil is not monotone".into(),
                ));
            }
        }
        Ok(Local { b, s, a })
    }

    /// Diagonal rate of the explicit step; `Δt · rate <= 1` keeps it monotone.
    fn rate(&self, loc: &Local) -> f64 {
        let dx2 = self.dx * self.dx;
        let mut r = 0.0;
        for j in 0..self.n {
            r += loc.a[j][j] / dx2 + loc.b[j].abs() / self.dx;
            for k in j + 1..self.n {
                r -= loc.a[j][k].abs() / dx2;
            }
        }
        r
    }

    fn max_rate(&self, i: usize, t: f64) -> Result<f64> {
        let dims = i * self.n;
        let size = self.nodes.pow(dims as u32);
        let rates = par::map_range_init(
            size,
            || vec![0.0; dims],
            |x, idx| -> Result<f64> {
                self.decode(idx, dims, x);
                let path = self.lifted.lift_path(i, t, x)?;
                let mut r = 0.0f64;
                for u in self.controls {
                    r = r.max(self.rate(&self.local(&path, u)?));
                }
                Ok(r)
            },
        );
        let mut best = 0.0f64;
        for r in rates {
            best = best.max(r?);
        }
        Ok(best)
    }

    fn solve_segment(&self, i: usize, terminal: Vec<f64>, grid: &GridSpec) -> Result<SegmentSolution> {
        let dims = i * self.n;
        let t_start = self.lifted.grid_time(i - 1);
        let t_end = self.lifted.grid_time(i);
        let len = t_end - t_start;
        let substeps = match grid.substeps {
            Some(k) => k,
            None => {
                let mut rate = 0.0f64;
                for t in [t_end, t_start + 0.5 * len, t_start + 0.01 * len] {
                    rate = rate.max(self.max_rate(i, t)?);
                }
                ((len * rate / grid.cfl_safety).ceil() as usize).max(1)
            }
        };
        let dt = len / substeps as f64;
        let every = substeps.div_ceil(grid.slices);
        let mut times = vec![t_end];
        let mut slices = vec![terminal.clone()];
        let mut cur = terminal;
        let mut next = vec![0.0; cur.len()];
        for step in (0..substeps).rev() {
            let t = t_start + (step + 1) as f64 * dt;
            self.step(i, dims, t, dt, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
            if step == 0 || (substeps - step) % every == 0 {
                times.push(if step == 0 { t_start } else { t_start + step as f64 * dt });
                slices.push(cur.clone());
            }
        }
        times.reverse();
        slices.reverse();
        Ok(SegmentSolution { index: i, dims, t_start, t_end, substeps, dt, times, slices })
    }

    /// One explicit step from `t` to `t - dt` with coefficients at `t`.
    fn step(&self, i: usize, dims: usize, t: f64, dt: f64, prev: &[f64], out: &mut [f64]) -> Result<()> {
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        par::for_each_chunk_mut(out, CHUNK, |ci, chunk| {
            let mut x = vec![0.0; dims];
            for (o, slot) in chunk.iter_mut().enumerate() {
                let idx = ci * CHUNK + o;
                match self.update(i, dims, t, dt, prev, idx, &mut x) {
                    Ok(v) => *slot = v,
                    Err(e) => {
                        let mut f = failure.lock().expect("poisoned");
                        if f.is_none() {
                            *f = Some(e);
                        }
                        return;
                    }
                }
            }
        });
        match failure.into_inner().expect("poisoned") {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn update(&self, i: usize, dims: usize, t: f64, dt: f64, v: &[f64], idx: usize, x: &mut [f64]) -> Result<f64> {
        let (n, nodes, dx) = (self.n, self.nodes, self.dx);
        self.decode(idx, dims, x);
        let path = self.lifted.lift_path(i, t, x)?;
        let mut pos = [0usize; DIMENSION_CAP];
        let mut strides = [0usize; DIMENSION_CAP];
        {
            let mut r = idx;
            let mut s = 1;
            for j in (0..n).rev() {
                pos[j] = r % nodes;
                r /= nodes;
                strides[j] = s;
                s *= nodes;
            }
        }
        let (pos, strides) = (&pos[..n], &strides[..n]);
        let v0 = v[idx];
        let mut off = [0i64; DIMENSION_CAP];
        let mut vp = [0.0; DIMENSION_CAP];
        let mut vm = [0.0; DIMENSION_CAP];
        for j in 0..n {
            off[j] = 1;
            vp[j] = at(v, idx, pos, &mut off[..n], strides, nodes);
            off[j] = -1;
            vm[j] = at(v, idx, pos, &mut off[..n], strides, nodes);
            off[j] = 0;
        }
        let dx2 = dx * dx;
        let mut grad = [0.0; DIMENSION_CAP];
        for j in 0..n {
            grad[j] = (vp[j] - vm[j]) / (2.0 * dx);
        }
        let mut cross_cache = [[None::<(f64, f64)>; DIMENSION_CAP]; DIMENSION_CAP];
        let mut z = vec![0.0; self.d];
        let mut best = f64::NEG_INFINITY;
        for u in self.controls {
            let loc = self.local(&path, u)?;
            let rate = self.rate(&loc);
            if dt * rate > 1.0 + 1e-9 {
                return Err(Error::Cfl { dt, limit: 1.0 / rate });
            }
            let mut h = 0.0;
            for j in 0..n {
                let b = loc.b[j];
                h += b.max(0.0) * (vp[j] - v0) / dx - (-b).max(0.0) * (v0 - vm[j]) / dx;
                h += 0.5 * loc.a[j][j] * (vp[j] - 2.0 * v0 + vm[j]) / dx2;
                for k in j + 1..n {
                    let ajk = loc.a[j][k];
                    if ajk == 0.0 {
                        continue;
                    }
                    let (pp, mm) = *cross_cache[j][k].get_or_insert_with(|| {
                        // (+j+k, -j-k) and (+j-k, -j+k)
                        let mut o = [0i64; DIMENSION_CAP];
                        o[j] = 1;
                        o[k] = 1;
                        let a1 = at(v, idx, pos, &mut o[..n], strides, nodes);
                        o[j] = -1;
                        o[k] = -1;
                        let a2 = at(v, idx, pos, &mut o[..n], strides, nodes);
                        o[j] = 1;
                        o[k] = -1;
                        let b1 = at(v, idx, pos, &mut o[..n], strides, nodes);
                        o[j] = -1;
                        o[k] = 1;
                        let b2 = at(v, idx, pos, &mut o[..n], strides, nodes);
                        (a1 + a2, b1 + b2)
                    });
                    let star = vp[j] + vm[j] + vp[k] + vm[k];
                    h += if ajk > 0.0 {
                        ajk * (pp + 2.0 * v0 - star) / (2.0 * dx2)
                    } else {
                        ajk * -(mm + 2.0 * v0 - star) / (2.0 * dx2)
                    };
                }
            }
            for (l, zl) in z.iter_mut().enumerate() {
                *zl = (0..n).map(|j| loc.s[j * self.d + l] * grad[j]).sum();
            }
            h += self.lifted.coef.generator(&path, v0, &z, u);
            best = best.max(h);
        }
        let out = v0 + dt * best;
        if !out.is_finite() {
            return Err(Error::NonFinite { what: "cascade value".into() });
        }
        Ok(out)
    }
}

/// Grid value at `idx + Σ off_j stride_j` over the moving axes, linearly
/// extrapolated past the box.
fn at(v: &[f64], idx: usize, pos: &[usize], off: &mut [i64], strides: &[usize], nodes: usize) -> f64 {
    for a in 0..off.len() {
        let p = pos[a] as i64 + off[a];
        if p < 0 || p >= nodes as i64 {
            let dir = if p < 0 { 1 } else { -1 };
            let o = off[a];
            off[a] = o + dir;
            let v1 = at(v, idx, pos, off, strides, nodes);
            off[a] = o + 2 * dir;
            let v2 = at(v, idx, pos, off, strides, nodes);
            off[a] = o;
            return 2.0 * v1 - v2;
        }
    }
    let mut k = idx as i64;
    for a in 0..off.len() {
        k += off[a] * strides[a] as i64;
    }
    v[k as usize]
}
