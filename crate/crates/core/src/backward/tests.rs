use super::*;
use crate::problems;

fn bm_batch(n: usize, steps: usize, seed: u64) -> (CoefficientSet, PathBatch) {
    let coef = CoefficientSet::brownian(1);
    let cfg = SimConfig::new(1.0, steps, n, seed).unwrap();
    let b = simulate_sde(&coef, &Path::origin(1), &coef.default_policy(), &cfg).unwrap();
    (coef, b)
}

fn reg() -> CondExpEngine {
    CondExpEngine::default()
}

#[test]
fn zero_driver_square_payoff() {
    let (coef, b) = bm_batch(20_000, 10, 1);
    let xi: Vec<f64> = b.paths.iter().map(|p| p.terminal()[0].powi(2)).collect();
    let s = solve_bsde(&coef, &b, &reg(), &xi).unwrap();
    assert!((s.y0 - 1.0).abs() <= 3.0 * s.se, "{} ± {}", s.y0, s.se);
    // f = 0: Y(0) is the plain Monte Carlo mean
    let mc = xi.iter().sum::<f64>() / xi.len() as f64;
    assert!((s.y0 - mc).abs() < 1e-10);
    for i in 0..b.len() {
        assert_eq!(s.y_at(i, s.steps()), xi[i]);
    }
    assert_eq!(s.diagnostics.len(), 10);
    assert!(s.diagnostics.iter().all(|d| d.rank >= 1 && d.condition.is_finite()));
}

#[test]
fn constant_driver_adds_ct() {
    let (coef, b) = bm_batch(5000, 8, 2);
    let coef = coef.with_generator("0.7", |_, _, _, _| 0.7);
    let xi: Vec<f64> = b.paths.iter().map(|p| p.terminal()[0]).collect();
    let mc = xi.iter().sum::<f64>() / xi.len() as f64;
    let s = solve_bsde(&coef, &b, &reg(), &xi).unwrap();
    assert!((s.y0 - (mc + 0.7)).abs() < 1e-9);
}

#[test]
fn linear_discount_driver() {
    let (coef, b) = bm_batch(1000, 50, 3);
    let r = 0.8;
    let coef = coef.with_generator("-ry", move |_, y, _, _| -r * y);
    let s = solve_bsde(&coef, &b, &reg(), &vec![1.0; 1000]).unwrap();
    // implicit Euler: (1 + r dt)^{-K}
    let dt = 1.0 / 50.0;
    assert!((s.y0 - (1.0 + r * dt).powi(-50)).abs() < 1e-4);
    assert!((s.y0 - (-r).exp()).abs() < 2.0 * r * r * dt);
    assert!(s.diagnostics.iter().all(|d| d.fixed_point_ratio < 0.1));
}

#[test]
fn z_recovers_the_gradient() {
    let (coef, b) = bm_batch(20_000, 10, 4);
    let xi: Vec<f64> = b.paths.iter().map(|p| p.terminal()[0].powi(2)).collect();
    let s = solve_bsde(&coef, &b, &reg(), &xi).unwrap();
    // Z = 2 X on the heat problem
    let k = 5;
    let err: f64 = (0..b.len())
        .map(|i| (s.z_at(i, k)[0] - 2.0 * b.paths[i].sample(k)[0]).powi(2))
        .sum::<f64>()
        / b.len() as f64;
    let scale: f64 = (0..b.len()).map(|i| (2.0 * b.paths[i].sample(k)[0]).powi(2)).sum::<f64>() / b.len() as f64;
    assert!(err.sqrt() < 0.2 * scale.sqrt(), "{} vs {}", err.sqrt(), scale.sqrt());
}

#[test]
fn semigroup_definition_and_flow() {
    let p = problems::asian(1.0).unwrap();
    let coef = p.coef;
    let cfg = SimConfig::new(1.0, 12, 4000, 5).unwrap();
    let b = simulate_sde(&coef, &Path::origin(1), &coef.default_policy(), &cfg).unwrap();
    let xi = terminal_values(&coef, &b);
    let full = solve_bsde(&coef, &b, &reg(), &xi).unwrap();
    let g = backward_semigroup(&coef, &b, &vec![1.0; b.len()], &xi, &reg()).unwrap();
    assert!(g.iter().all(|&y| (y - full.y0).abs() < 1e-12));

    let k = 6;
    let tau = b.grid()[k];
    let y_tau: Vec<f64> = (0..b.len()).map(|i| full.y_at(i, k)).collect();
    let g2 = backward_semigroup(&coef, &b, &vec![tau; b.len()], &y_tau, &reg()).unwrap();
    assert!((g2[0] - full.y0).abs() < 1e-10, "{} vs {}", g2[0], full.y0);

    assert!(backward_semigroup(&coef, &b, &vec![0.55; b.len()], &xi, &reg()).is_err());
    let late = Path::scalar(vec![0.0, 0.5], vec![0.0, 0.0]).unwrap();
    let b2 = simulate_sde(&coef, &late, &coef.default_policy(), &cfg).unwrap();
    assert!(backward_semigroup(&coef, &b2, &vec![0.25; b2.len()], &vec![0.0; b2.len()], &reg()).is_err());
}

#[test]
fn random_stop_times_freeze_paths() {
    let (coef, b) = bm_batch(3000, 8, 6);
    let stops: Vec<usize> = (0..b.len()).map(|i| 4 + i % 5).collect();
    let eta: Vec<f64> = (0..b.len()).map(|i| b.paths[i].sample(stops[i])[0]).collect();
    let s = solve_stopped(&coef, &b, &reg(), &stops, &eta).unwrap();
    for i in 0..20 {
        for k in stops[i]..=8 {
            assert_eq!(s.y_at(i, k), eta[i]);
        }
    }
    // optional stopping: E[X_τ] = 0
    assert!(s.y0.abs() <= 3.0 * s.se + 1e-12, "{} {}", s.y0, s.se);
}

#[test]
fn cost_functional_examples() {
    let p = problems::controlled_drift(1.0).unwrap();
    let cfg = SimConfig::new(1.0, 10, 20_000, 7).unwrap();
    let up = cost_functional(&p.coef, &Path::origin(1), &p.coef.constant_policy(vec![1.0]).unwrap(), &cfg, &reg()).unwrap();
    assert!((up.value - 1.0).abs() <= 3.0 * up.se);
    let down =
        cost_functional(&p.coef, &Path::origin(1), &p.coef.constant_policy(vec![-1.0]).unwrap(), &cfg, &reg()).unwrap();
    assert!((down.value + 1.0).abs() <= 3.0 * down.se);
    let a = problems::asian(1.0).unwrap();
    let j = cost_functional(&a.coef, &Path::origin(1), &a.coef.default_policy(), &cfg, &reg()).unwrap();
    assert!(j.value.abs() <= 3.0 * j.se);
}

#[test]
fn comparison_examples() {
    let (_, b) = bm_batch(2000, 8, 8);
    let base = CoefficientSet::brownian(1)
        .with_terminal("sin", |p| p.terminal()[0].sin())
        .with_generator("-0.3y", |_, y, _, _| -0.3 * y);
    let same = comparison_check(&base, &base, &b, &reg()).unwrap();
    assert!(same.holds && same.margin == 0.0);

    let zero = CoefficientSet::brownian(1).with_terminal("sin", |p| p.terminal()[0].sin());
    let plus = CoefficientSet::brownian(1).with_terminal("sin+1", |p| p.terminal()[0].sin() + 1.0);
    let c = comparison_check(&plus, &zero, &b, &reg()).unwrap();
    assert!(c.holds && (c.margin - 1.0).abs() < 1e-10);

    assert!(matches!(comparison_check(&zero, &plus, &b, &reg()), Err(Error::Precondition(_))));
    let lower = zero.clone().with_generator("-1", |_, _, _, _| -1.0);
    assert!(comparison_check(&lower, &zero, &b, &reg()).is_err());
}

#[test]
fn tree_and_regression_agree_on_markovian_benchmarks() {
    let heat = problems::heat(1.0).unwrap();
    let cfg = SimConfig::new(1.0, 20, 20_000, 9).unwrap();
    let b = simulate_sde(&heat.coef, &Path::origin(1), &heat.coef.default_policy(), &cfg).unwrap();
    let xi = terminal_values(&heat.coef, &b);
    let r = solve_bsde(&heat.coef, &b, &reg(), &xi).unwrap();
    let t = solve_bsde(&heat.coef, &b, &CondExpEngine::Tree(TreeParams::default()), &xi).unwrap();
    assert!((t.y0 - 1.0).abs() < 1e-12);
    assert!((r.y0 - t.y0).abs() <= 0.01 * t.y0.abs(), "{} {}", r.y0, t.y0);
    for i in 0..b.len() {
        assert_eq!(t.y_at(i, 20), xi[i]);
    }

    let drift = problems::controlled_drift(1.0).unwrap();
    let pol = drift.coef.constant_policy(vec![1.0]).unwrap();
    let b = simulate_sde(&drift.coef, &Path::origin(1), &pol, &cfg).unwrap();
    let xi = terminal_values(&drift.coef, &b);
    let r = solve_bsde(&drift.coef, &b, &reg(), &xi).unwrap();
    let t = solve_bsde(&drift.coef, &b, &CondExpEngine::Tree(TreeParams::default()), &xi).unwrap();
    assert!((t.y0 - 1.0).abs() < 1e-12);
    assert!((r.y0 - t.y0).abs() <= 0.01, "{} {}", r.y0, t.y0);
}

#[test]
fn tree_engine_refuses_path_dependence_and_feedback() {
    let a = problems::asian(1.0).unwrap();
    let cfg = SimConfig::new(1.0, 4, 10, 0).unwrap();
    let b = simulate_sde(&a.coef, &Path::origin(1), &a.coef.default_policy(), &cfg).unwrap();
    let tree = CondExpEngine::Tree(TreeParams::default());
    assert!(solve_bsde(&a.coef, &b, &tree, &[0.0; 10]).is_err());

    let d = problems::controlled_drift(1.0).unwrap();
    let feedback: Policy = Arc::new(|p: &Path| vec![if p.terminal()[0] > 0.0 { -1.0 } else { 1.0 }]);
    let b = simulate_sde(&d.coef, &Path::origin(1), &feedback, &cfg).unwrap();
    assert!(solve_bsde(&d.coef, &b, &tree, &[0.0; 10]).is_err());
}

#[test]
fn rank_deficiency_is_reported() {
    let (coef, b) = bm_batch(3, 4, 10);
    let e = solve_bsde(&coef, &b, &reg(), &[0.0, 1.0, 2.0]).unwrap_err();
    assert!(matches!(e, Error::RankDeficient { step: 3, .. }), "{e:?}");
    assert!(solve_bsde(&coef, &b, &reg(), &[0.0, f64::NAN, 2.0]).is_err());
}

#[test]
fn dpp_examples() {
    let p = problems::controlled_drift(1.0).unwrap();
    let v = p.value.clone().unwrap();
    let value = move |g: &Path| v.eval(g);
    let init = Path::sample_scalar(0.25, 5, |s| s).unwrap();
    let cfg = SimConfig::new(1.0, 20, 10_000, 11).unwrap();
    let controls = p.coef.controls().to_vec();
    let zero = dpp_check(&value, &p.coef, &init, 0.0, &controls, &cfg, &reg()).unwrap();
    assert_eq!(zero.discrepancy, 0.0);
    let r = dpp_check(&value, &p.coef, &init, 0.25, &controls, &cfg, &reg()).unwrap();
    assert!(r.relative <= 0.03, "{r:?}");
    assert_eq!(r.entries.len(), 5);
    assert!(dpp_check(&value, &p.coef, &init, 0.13, &controls, &cfg, &reg()).is_err());

    let heat = problems::heat(1.0).unwrap();
    let hv = heat.value.clone().unwrap();
    let r = dpp_check(&move |g: &Path| hv.eval(g), &heat.coef, &init, 0.5, &[vec![]], &cfg, &reg()).unwrap();
    assert!(r.discrepancy <= r.eps_num, "{r:?}");
}

#[test]
fn solution_csv_has_one_row_per_time() {
    let (coef, b) = bm_batch(200, 4, 12);
    let xi: Vec<f64> = b.paths.iter().map(|p| p.terminal()[0]).collect();
    let s = solve_bsde(&coef, &b, &reg(), &xi).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.starts_with("time,mean_y,se,mean_abs_z\n0.0,"));
}
