use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::funcalc::registry;
use crate::problems;

fn random_path(rng: &mut ChaCha8Rng, t: f64) -> Path {
    let steps = 20;
    let mut x = 0.0;
    let mut values = vec![0.0];
    for _ in 0..steps {
        x += rng.random_range(-0.2..0.2);
        values.push(x);
    }
    Path::scalar(Path::uniform_grid(t, steps), values).unwrap()
}

fn candidate(label: &str, horizon: f64) -> SmoothCandidate {
    SmoothCandidate::new(registry::lookup(label, horizon).unwrap()).unwrap()
}

#[test]
fn hamiltonian_examples() {
    let a = Path::point(&[0.3]);
    let frozen = CoefficientSet::frozen(1, 1);
    assert_eq!(hamiltonian(&frozen, &a, 1.7, &[2.0], &[5.0], &[]).unwrap(), 0.0);
    let bm = CoefficientSet::brownian(1);
    assert_eq!(hamiltonian(&bm, &a, 0.0, &[0.0], &[2.0], &[]).unwrap(), 1.0);
    let drift = problems::controlled_drift(1.0).unwrap().coef;
    assert_eq!(hamiltonian(&drift, &a, 0.0, &[1.0], &[0.0], &[-0.5]).unwrap(), -0.5);
    assert!(hamiltonian(&bm, &a, 0.0, &[0.0, 1.0], &[2.0], &[]).is_err());

    let grid = vec![vec![-1.0], vec![0.0], vec![1.0]];
    assert_eq!(sup_hamiltonian(&drift, &a, 0.0, &[1.0], &[0.0], &grid).unwrap(), 1.0);
    assert_eq!(sup_hamiltonian(&drift, &a, 0.0, &[1.0], &[0.0], &grid[..1]).unwrap(), -1.0);
    assert!(matches!(sup_hamiltonian(&drift, &a, 0.0, &[1.0], &[0.0], &[]), Err(Error::Empty(_))));
}

#[test]
fn l_operator_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let heat = problems::heat(1.0).unwrap();
    let v = SmoothCandidate::new(heat.value.unwrap()).unwrap();
    let a = random_path(&mut rng, 0.4);
    assert!(l_operator(&v, &a, &[], &heat.coef).unwrap().abs() < 1e-12);

    let drift = problems::controlled_drift(1.0).unwrap().coef;
    let x = candidate("terminal_value", 1.0);
    assert!((l_operator(&x, &a, &[0.5], &drift).unwrap() - 0.5).abs() < 1e-15);

    let c = SmoothCandidate::new(PathFunctional::new("3", |_| 3.0).with_derivatives(|_| 0.0, |_| vec![0.0], |_| vec![0.0]))
        .unwrap();
    assert_eq!(l_operator(&c, &a, &[0.5], &drift).unwrap(), 0.0);
    assert!(SmoothCandidate::new(PathFunctional::new("bare", |_| 0.0)).is_err());
}

#[test]
fn classical_solutions_have_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for p in [problems::heat(1.0).unwrap(), problems::controlled_drift(1.0).unwrap(), problems::asian(1.0).unwrap()] {
        let v = SmoothCandidate::new(p.value.clone().unwrap()).unwrap();
        for _ in 0..100 {
            let t = rng.random_range(0.05..0.95);
            let a = random_path(&mut rng, t);
            let r = ppde_residual(&v, &a, p.coef.controls(), &p.coef).unwrap();
            assert!(r.abs() <= 1e-6, "{}: {r}", p.name);
        }
    }
}

fn jet_setup() -> (PathFunctional, Path, JetParams) {
    let v = registry::lookup("heat_value", 1.0).unwrap();
    let a = Path::sample_scalar(0.5, 50, |s| 0.2 * s).unwrap();
    let jp = JetParams::new(HolderParams::new(0.3, 10.0).unwrap(), 0.1, 5.0, 0.5, 1.0).unwrap();
    (v, a, jp)
}

#[test]
fn jet_membership_verdicts() {
    let (v, a, jp) = jet_setup();
    let sample = cylinder_sample(&a, &jp, 60, 1.0, 5).unwrap();

    let same = SmoothCandidate::new(v.clone()).unwrap();
    let ev = jet_membership(&same, &v, &a, &jp, &sample, 1.0).unwrap();
    assert_eq!(ev.verdict, JetVerdict::Both);
    assert!(ev.admissible > 10);

    let later = quadratic_jet(&v, &a, 1.0, 0.0).unwrap();
    let ev = jet_membership(&later, &v, &a, &jp, &sample, 1.0).unwrap();
    assert_eq!(ev.verdict, JetVerdict::Super);
    let earlier = quadratic_jet(&v, &a, -1.0, 0.0).unwrap();
    assert_eq!(jet_membership(&earlier, &v, &a, &jp, &sample, 1.0).unwrap().verdict, JetVerdict::Sub);

    // opposite signs in time and space: the gap changes sign on the sample
    let mixed = quadratic_jet(&v, &a, 0.01, -2.0).unwrap();
    let ev = jet_membership(&mixed, &v, &a, &jp, &sample, 1.0).unwrap();
    assert_eq!(ev.verdict, JetVerdict::Neither);
    let witness = &sample[ev.min_at];
    let gap = mixed.eval(witness).unwrap() + ev.shift - v.eval(witness);
    assert!(gap < -ev.tol);
    assert!(witness.in_holder_ball(&jp.hp));

    let far: Vec<Path> = vec![Path::sample_scalar(0.5, 50, |s| 3.0 * s).unwrap()];
    assert!(matches!(jet_membership(&same, &v, &a, &jp, &far, 1.0), Err(Error::Empty(_))));
}

#[test]
fn holder_bound_can_refute() {
    let (v, a, jp) = jet_setup();
    let sample = cylinder_sample(&a, &jp, 40, 1.0, 2).unwrap();
    let tight = JetParams { kappa: 0.5, ..jp };
    let ev = jet_membership(&SmoothCandidate::new(v.clone()).unwrap(), &v, &a, &tight, &sample, 1.0).unwrap();
    assert!(ev.holder_norm > ev.holder_bound);
    assert_eq!(ev.verdict, JetVerdict::Neither);
}

#[test]
fn subsolution_diagnostics() {
    let heat = problems::heat(1.0).unwrap();
    let v = heat.value.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jets: Vec<(Path, SmoothCandidate)> = (0..20)
        .map(|_| {
            let t = rng.random_range(0.1..0.8);
            let a = random_path(&mut rng, t);
            (a, SmoothCandidate::new(v.clone()).unwrap())
        })
        .collect();
    let d0 = subsolution_diagnostic(&jets, heat.coef.controls(), &heat.coef).unwrap();
    assert!(d0.abs() <= 1e-6);
    assert_eq!(subsolution_diagnostic(&[], heat.coef.controls(), &heat.coef).unwrap(), f64::NEG_INFINITY);

    let c = 0.7;
    let shifted: Vec<_> = jets.iter().map(|(a, _)| (a.clone(), quadratic_jet(&v, a, c, 0.0).unwrap())).collect();
    let dc = subsolution_diagnostic(&shifted, heat.coef.controls(), &heat.coef).unwrap();
    assert!((dc - (d0 - c)).abs() < 1e-12);
}

#[test]
fn value_functional_super_jets_satisfy_the_subsolution_inequality() {
    let p = problems::controlled_drift(1.0).unwrap();
    let v = p.value.clone().unwrap();
    let jp = JetParams::new(HolderParams::new(0.3, 10.0).unwrap(), 0.1, 5.0, 0.5, 1.0).unwrap();
    let mut jets = Vec::new();
    for (k, t) in [0.2, 0.4, 0.6].into_iter().enumerate() {
        let a = Path::sample_scalar(t, 40, |s| 0.5 * s * (k as f64 + 1.0)).unwrap();
        for (c, q) in [(0.0, 0.0), (0.5, 0.0), (0.2, 1.0)] {
            jets.push((a.clone(), quadratic_jet(&v, &a, c, q).unwrap()));
        }
    }
    let rows = subsolution_ladder(&v, &jets, &jp, &MU_LADDER, 40, 3, p.coef.controls(), &p.coef, 1.0).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!(r.certified > 0);
        assert!(r.value <= 1e-8, "{r:?}");
    }
}

#[test]
fn verification_on_controlled_drift() {
    let p = problems::controlled_drift(1.0).unwrap();
    let v = SmoothCandidate::new(p.value.clone().unwrap()).unwrap();
    let a = problems::linear_initial(0.5, 0.6, 10).unwrap();
    let cfg = SimConfig::new(1.0, 20, 4000, 21).unwrap();
    let best: Policy = Arc::new(|_: &Path| vec![1.0]);
    let controls = vec![vec![0.0], vec![-1.0], vec![0.5]];
    let r = verification_demo(&v, &p.coef, &a, &best, &controls, &cfg, &CondExpEngine::default()).unwrap();
    assert!(r.residual.abs() < 1e-12);
    assert!((r.value - 0.8).abs() < 1e-12);
    assert!(r.dominates && r.attained, "{r:?}");
    assert!((r.entries[0].cost - 0.3).abs() < 3.0 * r.entries[0].se + 1e-9);
    assert!(r.entries[0].gap > 0.4);
}
