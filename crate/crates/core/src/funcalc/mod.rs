//! Dupire functional derivatives, the functional Itô residual and sampled
//! Hölder norms of path functionals.
//!
//! Vertical derivatives use central differences on terminal bumps; the
//! horizontal derivative is a forward difference along the flat extension
//! (it is a right derivative).

pub mod registry;

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::pathspace::Path;

pub type ScalarFn = Arc<dyn Fn(&Path) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Path) -> Vec<f64> + Send + Sync>;

/// Closed-form `(D_t v, D_x v, D_xx v)`; the Hessian is row-major `n × n`.
#[derive(Clone)]
pub struct AnalyticDerivatives {
    pub dt: ScalarFn,
    pub dx: VectorFn,
    pub dxx: VectorFn,
}

/// An evaluatable map from paths to reals, optionally with analytic
/// derivatives. Evaluation must be deterministic and re-entrant.
#[derive(Clone)]
pub struct PathFunctional {
    label: String,
    eval: ScalarFn,
    analytic: Option<AnalyticDerivatives>,
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PathFunctional")
            .field("label", &self.label)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

impl PathFunctional {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&Path) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), eval: Arc::new(eval), analytic: None }
    }

    pub fn with_derivatives<T, X, XX>(mut self, dt: T, dx: X, dxx: XX) -> Self
    where
        T: Fn(&Path) -> f64 + Send + Sync + 'static,
        X: Fn(&Path) -> Vec<f64> + Send + Sync + 'static,
        XX: Fn(&Path) -> Vec<f64> + Send + Sync + 'static,
    {
        self.analytic = Some(AnalyticDerivatives {
            dt: Arc::new(dt),
            dx: Arc::new(dx),
            dxx: Arc::new(dxx),
        });
        self
    }

    /// `v(γ) = f(t, γ(t))` with the partial derivatives of `f` supplied.
    /// `fx` returns the gradient, `fxx` the row-major Hessian.
    pub fn cylinder<F, Ft, Fx, Fxx>(label: impl Into<String>, f: F, ft: Ft, fx: Fx, fxx: Fxx) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        Ft: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        Fx: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        Fxx: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(label, move |p: &Path| f(p.horizon(), p.terminal())).with_derivatives(
            move |p: &Path| ft(p.horizon(), p.terminal()),
            move |p: &Path| fx(p.horizon(), p.terminal()),
            move |p: &Path| fxx(p.horizon(), p.terminal()),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, a: &Path) -> f64 {
        (self.eval)(a)
    }

    /// Evaluation with a finiteness check.
    pub fn try_eval(&self, a: &Path) -> Result<f64> {
        let v = self.eval(a);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: format!("functional `{}`", self.label) })
        }
    }

    pub fn analytic(&self) -> Option<&AnalyticDerivatives> {
        self.analytic.as_ref()
    }

    pub fn has_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    /// `ψ + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let eval = self.eval.clone();
        Self {
            label: format!("{}{:+}", self.label, c),
            eval: Arc::new(move |p: &Path| eval(p) + c),
            analytic: self.analytic.clone(),
        }
    }
}

/// Derivatives at one path.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub dt: f64,
    pub dx: Vec<f64>,
    /// Row-major, symmetric.
    pub dxx: Vec<f64>,
    pub bump_h: f64,
    pub time_h: f64,
}

/// Default vertical bump `10⁻⁴ (1 + ‖γ‖₀)`.
pub fn default_bump(a: &Path) -> f64 {
    1e-4 * (1.0 + a.sup_norm())
}

/// Default horizontal step: one grid spacing of the path, capped so the
/// extension stays within `horizon_limit`.
pub fn default_time_step(a: &Path, horizon_limit: f64) -> f64 {
    let room = horizon_limit - a.horizon();
    let h = a.last_spacing().unwrap_or(1e-3 * horizon_limit.max(1.0));
    if room > 0.0 {
        h.min(room)
    } else {
        h
    }
}

fn unit(n: usize, i: usize, h: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = h;
    e
}

/// Central-difference `D_x v`.
pub fn vertical_derivative(v: &PathFunctional, a: &Path, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "bump must be positive"));
    }
    let n = a.dim();
    (0..n)
        .map(|i| {
            let up = v.try_eval(&a.vertical_bump(&unit(n, i, h))?)?;
            let dn = v.try_eval(&a.vertical_bump(&unit(n, i, -h))?)?;
            Ok((up - dn) / (2.0 * h))
        })
        .collect()
}

/// Second-order central differences on double bumps, symmetrised.
pub fn vertical_hessian(v: &PathFunctional, a: &Path, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "bump must be positive"));
    }
    let n = a.dim();
    let at = |x: Vec<f64>| -> Result<f64> { v.try_eval(&a.vertical_bump(&x)?) };
    let v0 = v.try_eval(a)?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let up = at(unit(n, i, h))?;
        let dn = at(unit(n, i, -h))?;
        out[i * n + i] = (up - 2.0 * v0 + dn) / (h * h);
        for j in i + 1..n {
            let mut pp = unit(n, i, h);
            pp[j] = h;
            let mut pm = unit(n, i, h);
            pm[j] = -h;
            let mut mp = unit(n, i, -h);
            mp[j] = h;
            let mut mm = unit(n, i, -h);
            mm[j] = -h;
            let d = (at(pp)? - at(pm)? - at(mp)? + at(mm)?) / (4.0 * h * h);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Ok(out)
}

/// Forward difference along the flat extension: `(v(γ_{t,t+h}) - v(γ_t)) / h`.
pub fn horizontal_derivative(v: &PathFunctional, a: &Path, h: f64, horizon_limit: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid("h", "time step must be positive"));
    }
    let t = a.horizon();
    if t + h > horizon_limit * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::TimeOutOfRange { requested: t + h, lo: t, hi: horizon_limit });
    }
    let ext = a.flat_extend(t + h)?;
    Ok((v.try_eval(&ext)? - v.try_eval(a)?) / h)
}

/// Numeric derivative bundle with default steps.
pub fn numeric_bundle(v: &PathFunctional, a: &Path, horizon_limit: f64) -> Result<DerivativeBundle> {
    let bump_h = default_bump(a);
    let time_h = default_time_step(a, horizon_limit);
    Ok(DerivativeBundle {
        dt: horizontal_derivative(v, a, time_h, horizon_limit)?,
        dx: vertical_derivative(v, a, bump_h)?,
        dxx: vertical_hessian(v, a, bump_h)?,
        bump_h,
        time_h,
    })
}

/// Analytic derivatives, or `None` when the functional carries none.
pub fn analytic_bundle(v: &PathFunctional, a: &Path) -> Option<Result<DerivativeBundle>> {
    let d = v.analytic()?;
    let n = a.dim();
    let bundle = DerivativeBundle {
        dt: (d.dt)(a),
        dx: (d.dx)(a),
        dxx: (d.dxx)(a),
        bump_h: 0.0,
        time_h: 0.0,
    };
    let ok = check_dim(n, bundle.dx.len()).and(check_dim(n * n, bundle.dxx.len()));
    Some(ok.map(|_| bundle))
}

/// Analytic derivatives when available, numeric otherwise.
pub fn derivatives(v: &PathFunctional, a: &Path, horizon_limit: f64) -> Result<DerivativeBundle> {
    match analytic_bundle(v, a) {
        Some(b) => b,
        None => numeric_bundle(v, a, horizon_limit),
    }
}

/// How `d⟨X⟩` enters the Itô residual.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticVariation {
    /// Outer products of the sampled increments.
    Realized,
    /// Known covariance rate `a` (row-major `n × n`): `d⟨X⟩ = a dt`.
    Model(Vec<f64>),
}

impl QuadraticVariation {
    /// Brownian motion in `R^n`: `d⟨X⟩ = I dt`.
    pub fn brownian(n: usize) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        QuadraticVariation::Model(a)
    }
}

/// `v(x_T) - v(x_0) - Σ [D_t v dt + ½ Tr(D_xx v d⟨X⟩) + D_x v · dX]` along the
/// sample grid of `x`, with derivatives taken at the path stopped at each
/// left endpoint.
pub fn ito_residual(v: &PathFunctional, x: &Path, qv: &QuadraticVariation) -> Result<f64> {
    let n = x.dim();
    if let QuadraticVariation::Model(a) = qv {
        check_dim(n * n, a.len())?;
    }
    let x = x.baked();
    let mut prefix = Path::point(x.sample(0)).with_kind(x.kind());
    let start = v.try_eval(&prefix)?;
    let mut sum = 0.0;
    let mut dq = vec![0.0; n * n];
    for k in 0..x.len() - 1 {
        let dt = x.times()[k + 1] - x.times()[k];
        let d = match analytic_bundle(v, &prefix) {
            Some(b) => b?,
            None => numeric_bundle(v, &prefix, x.horizon())?,
        };
        let x0 = x.sample(k);
        let x1 = x.sample(k + 1);
        match qv {
            QuadraticVariation::Realized => {
                for i in 0..n {
                    for j in 0..n {
                        dq[i * n + j] = (x1[i] - x0[i]) * (x1[j] - x0[j]);
                    }
                }
            }
            QuadraticVariation::Model(a) => {
                for (q, r) in dq.iter_mut().zip(a) {
                    *q = r * dt;
                }
            }
        }
        let trace: f64 = d.dxx.iter().zip(&dq).map(|(h, q)| h * q).sum();
        let drift: f64 = (0..n).map(|i| d.dx[i] * (x1[i] - x0[i])).sum();
        sum += d.dt * dt + 0.5 * trace + drift;
        prefix.push(x.times()[k + 1], x1)?;
    }
    Ok(v.try_eval(&x)? - start - sum)
}

/// Root-mean-square of [`ito_residual`] over `paths`.
pub fn ito_rms(v: &PathFunctional, paths: &[Path], qv: &QuadraticVariation) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Empty("paths"));
    }
    let r = crate::par::map_range(paths.len(), |i| ito_residual(v, &paths[i], qv));
    let mut sq = 0.0;
    for x in r {
        sq += x?.powi(2);
    }
    Ok((sq / paths.len() as f64).sqrt())
}

/// Sampled estimate of `|v|_{2,β}` over `sample`: for `v`, `D_t v`, every
/// entry of `D_x v` and `D_xx v`, the sup of the absolute value plus the sup
/// of `β`-Hölder quotients in `d_p` over sample pairs. This is a lower bound
/// of the true norm over any set containing the sample.
pub fn functional_holder_norm(
    v: &PathFunctional,
    sample: &[Path],
    beta: f64,
    horizon_limit: f64,
) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid("beta", "must lie in (0, 1)"));
    }
    if sample.is_empty() {
        return Err(Error::Empty("functional holder norm sample"));
    }
    let comps: Vec<Vec<f64>> = sample
        .iter()
        .map(|p| {
            let d = derivatives(v, p, horizon_limit)?;
            let mut c = vec![v.try_eval(p)?, d.dt];
            c.extend(d.dx);
            c.extend(d.dxx);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let k = comps[0].len();
    let mut sup = vec![0.0f64; k];
    let mut quot = vec![0.0f64; k];
    for (i, ci) in comps.iter().enumerate() {
        for c in 0..k {
            sup[c] = sup[c].max(ci[c].abs());
        }
        for j in i + 1..comps.len() {
            let d = sample[i].dp_metric(&sample[j])?;
            if d <= 0.0 {
                continue;
            }
            let w = d.powf(beta);
            for c in 0..k {
                quot[c] = quot[c].max((ci[c] - comps[j][c]).abs() / w);
            }
        }
    }
    Ok(sup.iter().sum::<f64>() + quot.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcalc::registry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brownian_like(rng: &mut ChaCha8Rng, horizon: f64, steps: usize) -> Path {
        let mut x = 0.0;
        let sd = (horizon / steps as f64).sqrt();
        Path::sample_scalar(horizon, steps, |s| {
            if s > 0.0 {
                x += sd * (rng.random::<f64>() - 0.5) * 3.46;
            }
            x
        })
        .unwrap()
    }

    #[test]
    fn vertical_derivative_examples() {
        let sq = registry::lookup("terminal_square", 1.0).unwrap();
        let a = Path::sample_scalar(0.5, 10, |s| 4.0 * s).unwrap();
        let d = vertical_derivative(&sq, &a, default_bump(&a)).unwrap();
        assert!((d[0] - 4.0).abs() < 1e-9);
        let int = registry::lookup("running_integral", 1.0).unwrap();
        assert_eq!(vertical_derivative(&int, &a, 1e-3).unwrap(), vec![0.0]);
        let cubic = registry::lookup("cylinder:cubic", 1.0).unwrap();
        let d = vertical_derivative(&cubic, &a, default_bump(&a)).unwrap();
        // f = x^3 - 3tx, f_x = 3x^2 - 3t at (0.5, 2)
        assert!((d[0] - (12.0 - 1.5)).abs() < 1e-6);
        assert!(vertical_derivative(&sq, &a, 0.0).is_err());
    }

    #[test]
    fn vertical_hessian_examples() {
        let sq = registry::lookup("terminal_square", 1.0).unwrap();
        let a = Path::sample_scalar(0.5, 10, |s| s).unwrap();
        let h = vertical_hessian(&sq, &a, default_bump(&a)).unwrap();
        assert!((h[0] - 2.0).abs() < 1e-6);
        let lin = registry::lookup("terminal_value", 1.0).unwrap();
        assert!(vertical_hessian(&lin, &a, 1e-3).unwrap()[0].abs() < 1e-9);
        let prod = PathFunctional::new("x1x2", |p: &Path| p.terminal()[0] * p.terminal()[1]);
        let b = Path::constant(&[0.3, -0.7], 0.5, 4).unwrap();
        let h = vertical_hessian(&prod, &b, 1e-3).unwrap();
        assert!(h[0].abs() < 1e-8 && h[3].abs() < 1e-8);
        assert!((h[1] - 1.0).abs() < 1e-8 && (h[2] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn horizontal_derivative_examples() {
        let a = Path::sample_scalar(0.5, 10, |s| 1.0 + s).unwrap();
        let sq = registry::lookup("terminal_square", 1.0).unwrap();
        assert_eq!(horizontal_derivative(&sq, &a, 0.01, 1.0).unwrap(), 0.0);
        let int = registry::lookup("running_integral", 1.0).unwrap();
        let d = horizontal_derivative(&int, &a, 0.01, 1.0).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
        let cubic = registry::lookup("cylinder:cubic", 1.0).unwrap();
        let d = horizontal_derivative(&cubic, &a, 1e-6, 1.0).unwrap();
        assert!((d - (-3.0 * 1.5)).abs() < 1e-5);
        assert!(horizontal_derivative(&sq, &a, 0.6, 1.0).is_err());
    }

    #[test]
    fn numeric_matches_cylinder_partials_on_random_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["cylinder:cubic", "cylinder:exp_martingale", "cylinder:sin_decay", "terminal_square"] {
            let f = registry::lookup(name, 1.0).unwrap();
            for _ in 0..100 {
                let t = rng.random_range(0.05..0.9);
                let a = brownian_like(&mut rng, t, 20);
                let an = analytic_bundle(&f, &a).unwrap().unwrap();
                let nu = numeric_bundle(&f, &a, 1.0).unwrap();
                let scale = 1.0 + f.eval(&a).abs() + an.dx[0].abs() + an.dxx[0].abs();
                let tol_x = 10.0 * (nu.bump_h + nu.bump_h * nu.bump_h * scale);
                assert!((nu.dx[0] - an.dx[0]).abs() <= tol_x, "{name} dx");
                assert!((nu.dxx[0] - an.dxx[0]).abs() <= tol_x.max(1e-6 * scale), "{name} dxx");
                // forward difference in time: first-order error in the step
                let tol_t = 10.0 * (nu.time_h + nu.time_h * nu.time_h * scale) * scale;
                assert!((nu.dt - an.dt).abs() <= tol_t, "{name} dt {} vs {}", nu.dt, an.dt);
            }
        }
    }

    #[test]
    fn analytic_and_numeric_agree_for_bundled_functionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for label in registry::labels() {
            let f = registry::lookup(label, 1.0).unwrap();
            if !f.has_analytic() {
                continue;
            }
            for _ in 0..20 {
                let t = rng.random_range(0.1..0.8);
                let a = brownian_like(&mut rng, t, 40);
                let an = analytic_bundle(&f, &a).unwrap().unwrap();
                let h = default_bump(&a);
                let dx = vertical_derivative(&f, &a, h).unwrap();
                let rel = (dx[0] - an.dx[0]).abs() / (1.0 + an.dx[0].abs());
                assert!(rel <= 1e-4, "{label}: {} vs {}", dx[0], an.dx[0]);
                let dxx = vertical_hessian(&f, &a, h).unwrap();
                let rel = (dxx[0] - an.dxx[0]).abs() / (1.0 + an.dxx[0].abs());
                assert!(rel <= 1e-4, "{label} hessian: {} vs {}", dxx[0], an.dxx[0]);
                let dt = horizontal_derivative(&f, &a, 1e-7, 1.0).unwrap();
                let rel = (dt - an.dt).abs() / (1.0 + an.dt.abs());
                assert!(rel <= 1e-4, "{label} dt: {} vs {}", dt, an.dt);
            }
        }
    }

    #[test]
    fn richardson_consistency_of_vertical_derivative() {
        let f = registry::lookup("cylinder:exp_martingale", 1.0).unwrap();
        let a = Path::sample_scalar(0.4, 8, |s| 0.7 * s).unwrap();
        let exact = analytic_bundle(&f, &a).unwrap().unwrap().dx[0];
        let e1 = (vertical_derivative(&f, &a, 1e-2).unwrap()[0] - exact).abs();
        let e2 = (vertical_derivative(&f, &a, 5e-3).unwrap()[0] - exact).abs();
        // second order: halving h divides the error by ~4
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "{}", e1 / e2);
    }

    #[test]
    fn ito_residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = brownian_like(&mut rng, 1.0, 200);
        let lin = registry::lookup("terminal_value", 1.0).unwrap();
        for qv in [QuadraticVariation::Realized, QuadraticVariation::brownian(1)] {
            assert!(ito_residual(&lin, &x, &qv).unwrap().abs() < 1e-12);
        }
        // realized quadratic variation makes the square telescope exactly
        let sq = PathFunctional::new("sq_minus_t", |p: &Path| p.terminal()[0].powi(2) - p.horizon())
            .with_derivatives(|_| -1.0, |p: &Path| vec![2.0 * p.terminal()[0]], |_| vec![2.0]);
        assert!(ito_residual(&sq, &x, &QuadraticVariation::Realized).unwrap().abs() < 1e-12);
        // smooth path, integral functional: residual is the trapezoid-vs-left-rule gap O(dt)
        let int = registry::lookup("running_integral", 1.0).unwrap();
        let r = |k: usize| {
            let smooth = Path::sample_scalar(1.0, k, |s| (3.0 * s).sin()).unwrap();
            ito_residual(&int, &smooth, &QuadraticVariation::brownian(1)).unwrap().abs()
        };
        let (r1, r2) = (r(100), r(200));
        assert!(r1 < 0.05 && (r1 / r2 - 2.0).abs() < 0.1, "{r1} {r2}");
    }

    #[test]
    fn ito_residual_numeric_derivatives_fallback() {
        let sq = registry::lookup("terminal_square", 2.0).unwrap();
        let numeric = PathFunctional::new("sq_numeric", move |p: &Path| sq.eval(p));
        let x = Path::sample_scalar(1.0, 50, |s| s * s).unwrap();
        let r = ito_residual(&numeric, &x, &QuadraticVariation::Realized).unwrap();
        assert!(r.abs() < 1e-6, "{r}");
    }

    #[test]
    fn holder_norm_examples() {
        let c = PathFunctional::new("const", |_| -2.5);
        let sample: Vec<Path> = (0..4)
            .map(|i| Path::constant(&[i as f64 * 0.1], 0.5, 5).unwrap())
            .collect();
        assert!((functional_holder_norm(&c, &sample, 0.5, 1.0).unwrap() - 2.5).abs() < 1e-12);

        let lin = registry::lookup("terminal_value", 1.0).unwrap();
        let two = vec![
            Path::constant(&[0.0], 0.5, 5).unwrap(),
            Path::constant(&[0.25], 0.5, 5).unwrap(),
        ];
        let beta = 0.5;
        let want = 0.25 + 0.25f64.powf(1.0 - beta) + 1.0;
        assert!((functional_holder_norm(&lin, &two, beta, 1.0).unwrap() - want).abs() < 1e-12);

        let grown: Vec<Path> = two.iter().cloned().chain(sample.iter().cloned()).collect();
        assert!(
            functional_holder_norm(&lin, &grown, beta, 1.0).unwrap()
                >= functional_holder_norm(&lin, &two, beta, 1.0).unwrap()
        );
        assert!(functional_holder_norm(&lin, &[], beta, 1.0).is_err());
    }
}
