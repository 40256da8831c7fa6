//! Exact α-Hölder modulus over all sample pairs.
//!
//! The search is a branch-and-bound over index blocks: for a fixed left
//! sample `s` and a block of right samples `[lo, hi]`, the ratio
//! `|x_r - x_s| / (t_r - t_s)^α` is bounded by the distance from `x_s` to the
//! farthest corner of the block's bounding box divided by `(t_lo - t_s)^α`.
//! Box extremes come from a sparse table, so every bound is O(dim).
//! The result equals the brute-force maximum over all pairs.

/// Relative slack for ball-membership tests.
pub const HOLDER_RTOL: f64 = 1e-12;

const LEAF: usize = 8;

/// Range-extreme table over path points (per coordinate min and max).
#[derive(Debug, Default, Clone)]
pub(crate) struct RangeTable {
    dim: usize,
    len: usize,
    mins: Vec<Vec<f64>>,
    maxs: Vec<Vec<f64>>,
}

impl RangeTable {
    pub(crate) fn rebuild(&mut self, pts: &[f64], dim: usize) {
        let len = pts.len() / dim;
        self.dim = dim;
        self.len = len;
        let levels = usize::BITS as usize - len.max(1).leading_zeros() as usize;
        self.mins.resize_with(levels, Vec::new);
        self.maxs.resize_with(levels, Vec::new);
        self.mins[0].clear();
        self.mins[0].extend_from_slice(pts);
        self.maxs[0].clear();
        self.maxs[0].extend_from_slice(pts);
        for lvl in 1..levels {
            let half = 1usize << (lvl - 1);
            let count = len + 1 - (1usize << lvl);
            let (prev_min, rest_min) = self.mins.split_at_mut(lvl);
            let (prev_max, rest_max) = self.maxs.split_at_mut(lvl);
            let pm = &prev_min[lvl - 1];
            let px = &prev_max[lvl - 1];
            let cm = &mut rest_min[0];
            let cx = &mut rest_max[0];
            cm.clear();
            cx.clear();
            for i in 0..count {
                for c in 0..dim {
                    cm.push(pm[i * dim + c].min(pm[(i + half) * dim + c]));
                    cx.push(px[i * dim + c].max(px[(i + half) * dim + c]));
                }
            }
        }
    }

    /// Squared distance from `x` to the farthest point of the bounding box of
    /// samples `lo..=hi`.
    #[inline]
    fn far_sq(&self, x: &[f64], lo: usize, hi: usize) -> f64 {
        let span = hi - lo + 1;
        let lvl = (usize::BITS - 1 - span.leading_zeros()) as usize;
        let j = hi + 1 - (1usize << lvl);
        let mins = &self.mins[lvl];
        let maxs = &self.maxs[lvl];
        let d = self.dim;
        let mut acc = 0.0;
        for c in 0..d {
            let mn = mins[lo * d + c].min(mins[j * d + c]);
            let mx = maxs[lo * d + c].max(maxs[j * d + c]);
            let e = (mx - x[c]).abs().max((x[c] - mn).abs());
            acc += e * e;
        }
        acc
    }
}

/// Reusable buffers for repeated modulus computations.
#[derive(Debug, Default, Clone)]
pub struct HolderScratch {
    table: RangeTable,
    lag_pow: Vec<f64>,
    stack: Vec<(usize, usize)>,
}

impl HolderScratch {
    pub fn new() -> Self {
        Self::default()
    }
}

#[inline]
fn dist(pts: &[f64], dim: usize, i: usize, j: usize) -> f64 {
    if dim == 1 {
        return (pts[i] - pts[j]).abs();
    }
    let mut acc = 0.0;
    for c in 0..dim {
        let e = pts[i * dim + c] - pts[j * dim + c];
        acc += e * e;
    }
    acc.sqrt()
}

fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 2 {
        return None;
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let ok = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    ok.then_some(h)
}

/// Outcome of a modulus search with an optional early-exit threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Search {
    /// Exact maximum ratio (no threshold given, or threshold never exceeded).
    Max(f64),
    /// Some pair exceeds the threshold.
    Exceeds,
}

/// Max over pairs `s < r` (indices in `0..len`) of `|x_r - x_s| / (t_r - t_s)^α`.
/// With `threshold = Some(μ)` the search stops at the first pair whose ratio
/// exceeds `μ(1 + HOLDER_RTOL)`.
pub(crate) fn modulus_search(
    times: &[f64],
    pts: &[f64],
    dim: usize,
    alpha: f64,
    threshold: Option<f64>,
    scratch: &mut HolderScratch,
) -> Search {
    let n = times.len();
    if n < 2 {
        return Search::Max(0.0);
    }
    let limit = threshold.map(|mu| mu * (1.0 + HOLDER_RTOL));
    scratch.table.rebuild(pts, dim);
    let uniform = uniform_step(times);
    if let Some(h) = uniform {
        scratch.lag_pow.clear();
        scratch
            .lag_pow
            .extend((0..n).map(|l| (l as f64 * h).powf(alpha)));
    }
    let HolderScratch { table, lag_pow, stack } = scratch;
    let denom = |s: usize, r: usize| -> f64 {
        if uniform.is_some() {
            lag_pow[r - s]
        } else {
            (times[r] - times[s]).powf(alpha)
        }
    };

    // Seed the incumbent with a few pairs likely to be near-optimal.
    let mut best: f64 = 0.0;
    {
        let mut cand = vec![(0usize, n - 1)];
        let (mut imin, mut imax) = (0usize, 0usize);
        for i in 0..n {
            if pts[i * dim] < pts[imin * dim] {
                imin = i;
            }
            if pts[i * dim] > pts[imax * dim] {
                imax = i;
            }
        }
        if imin != imax {
            cand.push((imin.min(imax), imin.max(imax)));
        }
        for (s, r) in cand {
            best = best.max(dist(pts, dim, s, r) / denom(s, r));
        }
    }
    if let Some(l) = limit {
        if best > l {
            return Search::Exceeds;
        }
        best = best.max(l);
    }

    for s in 0..n - 1 {
        let xs = &pts[s * dim..(s + 1) * dim];
        stack.clear();
        stack.push((s + 1, n - 1));
        while let Some((lo, hi)) = stack.pop() {
            if hi - lo < LEAF {
                for r in lo..=hi {
                    let q = dist(pts, dim, s, r) / denom(s, r);
                    if q > best {
                        if limit.is_some() {
                            return Search::Exceeds;
                        }
                        best = q;
                    }
                }
                continue;
            }
            let bound = table.far_sq(xs, lo, hi).sqrt() / denom(s, lo);
            if bound <= best {
                continue;
            }
            let mid = lo + (hi - lo) / 2;
            stack.push((mid + 1, hi));
            stack.push((lo, mid));
        }
    }
    Search::Max(if limit.is_some() { 0.0 } else { best })
}

/// Exact maximum ratio; convenience wrapper that allocates its own scratch.
pub(crate) fn modulus(times: &[f64], pts: &[f64], dim: usize, alpha: f64) -> f64 {
    let mut scratch = HolderScratch::new();
    match modulus_search(times, pts, dim, alpha, None, &mut scratch) {
        Search::Max(m) => m,
        Search::Exceeds => unreachable!("no threshold given"),
    }
}
