use std::fmt::Write as _;
use std::fs;

use super::output::num;
use super::{Command, ExperimentConfig, RunOutput};
use crate::backward::{dpp_check, solve_bsde, terminal_values};
use crate::cascade::{convergence_study, lift_coefficients, solve_cascade, GridSpec};
use crate::dynamics::{
    boundary_escape_curve, brownian_concat, brownian_holder_moduli, quantile, simulate_sde, tail_points, EscapeSpec,
    PathBatch, Policy, SimConfig,
};
use crate::error::{Error, Result};
use crate::funcalc::{ito_rms, registry, PathFunctional, QuadraticVariation};
use crate::pathspace::{HolderParams, Path};
use crate::problems::Problem;
use crate::viscosity::{
    argmax_policy, cylinder_sample, jet_membership, ppde_residual, quadratic_jet, subsolution_ladder,
    verification_demo, SmoothCandidate,
};

pub(super) fn dispatch(command: Command, cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    match command {
        Command::Simulate => simulate(cfg, out),
        Command::HolderTail => holder_tail(cfg, out),
        Command::BoundaryEscape => boundary_escape(cfg, out),
        Command::Bsde => bsde(cfg, out),
        Command::DppCheck => dpp(cfg, out),
        Command::Cascade => cascade(cfg, out),
        Command::PpdeResidual => residual(cfg, out),
        Command::JetCheck => jets(cfg, out),
        Command::Verify => verify(cfg, out),
        Command::ItoCheck => ito(cfg, out),
        Command::Report => report(cfg, out),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn vec_cell(u: &[f64]) -> String {
    u.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

fn closed_form(p: &Problem) -> Result<&PathFunctional> {
    p.value
        .as_ref()
        .ok_or_else(|| Error::Config(format!("problem `{}` has no closed-form value", p.name)))
}

fn forward(cfg: &ExperimentConfig, p: &Problem, n_paths: usize) -> Result<PathBatch> {
    forward_under(cfg, p, n_paths, &p.coef.default_policy())
}

fn forward_under(cfg: &ExperimentConfig, p: &Problem, n_paths: usize, policy: &Policy) -> Result<PathBatch> {
    let sim = SimConfig::new(p.horizon, cfg.sim.steps, n_paths, cfg.seed)?;
    simulate_sde(&p.coef, &cfg.initial_path()?, policy, &sim)
}

/// Path `i` of the batch stopped at an interior continuation time.
fn stopped(batch: &PathBatch, i: usize) -> Result<Path> {
    let steps = batch.steps();
    let k = if steps > 1 { 1 + (i * 7) % (steps - 1) } else { 0 };
    batch.paths[i].restrict(batch.grid()[batch.start + k])
}

fn simulate(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let batch = forward(cfg, &p, cfg.sim.n_paths)?;
    let n = batch.dim();
    let mut columns = vec!["path".to_string(), "time".to_string()];
    columns.extend((0..n).map(|j| format!("x{j}")));
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (i, path) in batch.paths.iter().take(cfg.sim.write_paths).enumerate() {
        for k in 0..path.len() {
            let mut r = vec![i.to_string(), num(path.times()[k])];
            r.extend(path.sample(k).iter().map(|x| num(*x)));
            rows.push(r);
        }
    }
    out.csv("simulate.csv", &columns, &rows)?;

    let mut txt = format!("problem: {}\npaths: {}\nsteps: {}\n", p.name, batch.len(), batch.steps());
    for j in 0..n {
        let xs: Vec<f64> = batch.paths.iter().map(|q| q.terminal()[j]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len().max(2) - 1) as f64;
        writeln!(txt, "terminal x{j}: mean {m} sd {}", var.sqrt()).unwrap();
    }
    out.note("grid", batch.grid());
    out.note("coefficients", &p.coef.labels);
    out.text("simulate.txt", &txt)
}

fn holder_tail(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let h = &cfg.holder;
    let sim = SimConfig::new(cfg.problem.horizon, cfg.sim.steps, cfg.sim.n_paths, cfg.seed)?;
    let moduli = brownian_holder_moduli(&sim, 1, h.alpha)?;
    let mut mus = h.mus.clone();
    if mus.is_empty() {
        for &q in &h.quantiles {
            mus.push(quantile(&moduli, q)?);
        }
    }
    let q90 = quantile(&moduli, 0.9)?;
    let q99 = quantile(&moduli, 0.99)?;
    let points = tail_points(&moduli, &mus);
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|t| {
            vec![
                num(t.mu),
                num(t.probability),
                num(t.ci_low),
                num(t.ci_high),
                t.count.to_string(),
                t.n.to_string(),
                t.usable.to_string(),
            ]
        })
        .collect();
    out.csv("holder_tail.csv", &["mu", "p_hat", "ci_lo", "ci_hi", "count", "n", "usable"], &rows)?;

    mus = vec![q90, q99];
    let pair = tail_points(&moduli, &mus);
    let ratio = pair[1].probability / pair[0].probability;
    let bound = (q99 / q90).powi(-5);
    let txt = format!(
        "alpha: {}\npaths: {}\nsteps: {}\nq90: {q90}\nq99: {q99}\ncounts: {} {}\nratio: {ratio}\npolynomial bound (p=5): {bound}\nwithin bound: {}\n",
        h.alpha,
        moduli.len(),
        cfg.sim.steps,
        pair[0].count,
        pair[1].count,
        ratio <= bound
    );
    out.note("tail_ratio", ratio);
    out.note("tail_bound", bound);
    out.text("holder_tail.txt", &txt)
}

fn boundary_escape(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let e = &cfg.escape;
    let hp = HolderParams::new(e.alpha, e.mu)?;
    let spec = EscapeSpec {
        horizon: e.t,
        anchor_steps: e.anchor_steps,
        steps: e.steps,
        n_paths: e.n_paths,
        seed: cfg.seed,
        anchor: e.anchor_kind()?,
    };
    let curve = boundary_escape_curve(&hp, e.t1, &e.deltas, &spec)?;
    let rows: Vec<Vec<String>> = e.deltas.iter().zip(&curve).map(|(d, f)| vec![num(*d), num(*f)]).collect();
    out.csv("escape.csv", &["delta", "fraction_in_ball"], &rows)?;
    let last = curve.last().copied().unwrap_or(f64::NAN);
    out.note("fraction_in_ball", last);
    out.text(
        "escape.txt",
        &format!("anchor: {}\npaths: {}\nfraction at largest delta: {last}\n", e.anchor, e.n_paths),
    )
}

fn bsde(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    // with a closed form, price its feedback so the two are comparable
    let policy = match &p.value {
        Some(v) => argmax_policy(&SmoothCandidate::new(v.clone())?, &p.coef),
        None => p.coef.default_policy(),
    };
    let batch = forward_under(cfg, &p, cfg.sim.n_paths, &policy)?;
    let xi = terminal_values(&p.coef, &batch);
    let sol = solve_bsde(&p.coef, &batch, &cfg.bsde.engine, &xi)?;
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    out.text("bsde.csv", &String::from_utf8(buf).expect("utf8 csv"))?;

    out.note("y0", sol.y0);
    out.note("se", sol.se);
    out.note("eps_num", sol.eps_num);
    let mut txt = format!("problem: {}\ny0: {}\nse: {}\neps_num: {}\n", p.name, sol.y0, sol.se, sol.eps_num);
    if let Some(v) = &p.value {
        let exact = v.eval(&cfg.initial_path()?);
        let err = (sol.y0 - exact).abs();
        writeln!(txt, "closed form: {exact}\nabs error: {err}\nwithin eps_num: {}", err <= sol.eps_num).unwrap();
    }
    out.text("bsde.txt", &txt)
}

fn dpp(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let v = closed_form(&p)?.clone();
    let value = move |a: &Path| v.eval(a);
    let r = dpp_check(
        &value,
        &p.coef,
        &cfg.initial_path()?,
        cfg.dpp.delta,
        p.coef.controls(),
        &cfg.sim_config()?,
        &cfg.bsde.engine,
    )?;
    let rows: Vec<Vec<String>> =
        r.entries.iter().map(|e| vec![vec_cell(&e.control), num(e.value), num(e.se)]).collect();
    out.csv("dpp.csv", &["control", "value", "se"], &rows)?;
    out.note("relative", r.relative);
    out.note("eps_num", r.eps_num);
    out.text(
        "dpp.txt",
        &format!(
            "value: {}\ncontinuation: {}\ndiscrepancy: {}\nrelative: {}\neps_num: {}\n",
            r.value, r.continuation, r.discrepancy, r.relative, r.eps_num
        ),
    )
}

fn cascade(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let a = cfg.initial_path()?;
    let reference = cfg.cascade.reference.or_else(|| p.value.as_ref().map(|v| v.eval(&a)));
    let grid = cfg.cascade.grid.clone();
    let mut ms = cfg.cascade.m.clone();
    ms.sort_unstable();
    ms.dedup();
    let table = convergence_study(&p.coef, p.horizon, &a, &ms, &|_| grid.clone(), reference)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.m.to_string(),
                num(r.value),
                opt(r.diff),
                num(r.envelope),
                opt(r.error),
                r.extrapolated.to_string(),
            ]
        })
        .collect();
    out.csv("cascade.csv", &["m", "value", "diff", "envelope", "error", "extrapolated"], &rows)?;
    let seconds: serde_json::Map<String, serde_json::Value> =
        table.rows.iter().map(|r| (format!("m{}", r.m), r.seconds.into())).collect();
    out.note("seconds", seconds);
    out.note("fitted_c", table.fitted_c);
    if cfg.cascade.dump {
        for r in &table.rows {
            dump_grid(&p, &a, r.m, &grid, out)?;
        }
    }
    let mut txt = format!(
        "problem: {}\nreference: {}\nmonotone: {}\nfitted_c: {}\ncapped_at: {}\n",
        p.name,
        opt(reference),
        table.monotone,
        opt(table.fitted_c),
        table.capped_at.map(|m| m.to_string()).unwrap_or_default()
    );
    for w in &table.warnings {
        writeln!(txt, "warning: {w}").unwrap();
    }
    out.text("cascade.txt", &txt)
}

/// The first time slice of every segment of `V^{m,·}` as
/// `segment,t,x1..,value` rows.
fn dump_grid(p: &Problem, a: &Path, m: usize, grid: &GridSpec, out: &mut RunOutput) -> Result<()> {
    let lifted = lift_coefficients(&p.coef, m, p.horizon, a.initial())?;
    let grid = GridSpec { half_width: Some(grid.half_width.unwrap_or_else(|| GridSpec::default_half_width(a, p.horizon))), ..grid.clone() };
    let sol = solve_cascade(&lifted, &grid)?;
    let axis = sol.axis();
    let n = sol.state_dim;
    let dims = m * n;
    let mut columns = vec!["segment".to_string(), "t".to_string()];
    columns.extend((1..=dims).map(|j| format!("x{j}")));
    columns.push("value".into());
    let columns: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for i in 1..=m {
        let seg = sol.segment(i);
        let d = i * n;
        for (idx, v) in seg.slices[0].iter().enumerate() {
            let mut coords = vec![0.0; d];
            let mut r = idx;
            for c in (0..d).rev() {
                coords[c] = axis[r % sol.nodes];
                r /= sol.nodes;
            }
            let mut row = vec![i.to_string(), num(seg.t_start)];
            row.extend(coords.iter().map(|x| num(*x)));
            row.extend((d..dims).map(|_| String::new()));
            row.push(num(*v));
            rows.push(row);
        }
    }
    out.csv(&format!("cascade_grid_m{m}.csv"), &columns, &rows)
}

fn residual(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let v = SmoothCandidate::new(closed_form(&p)?.clone())?;
    let batch = forward(cfg, &p, cfg.residual.paths)?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..batch.len() {
        let a = stopped(&batch, i)?;
        let r = ppde_residual(&v, &a, p.coef.controls(), &p.coef)?;
        worst = worst.max(r.abs());
        rows.push(vec![i.to_string(), num(a.horizon()), num(a.terminal()[0]), num(r)]);
    }
    out.csv("ppde_residual.csv", &["path", "t", "x", "residual"], &rows)?;
    out.note("max_abs_residual", worst);
    out.text("ppde_residual.txt", &format!("problem: {}\npaths: {}\nmax abs residual: {worst}\n", p.name, rows.len()))
}

fn jets(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let v = closed_form(&p)?.clone();
    let jp = cfg.jets.params(p.horizon)?;
    let batch = forward(cfg, &p, cfg.jets.paths)?;
    let mut rows = Vec::new();
    let mut jets = Vec::new();
    for i in 0..batch.len() {
        let a = stopped(&batch, i)?;
        let sample = cylinder_sample(&a, &jp, cfg.jets.sample, p.horizon, cfg.seed.wrapping_add(i as u64))?;
        for &[c, q] in &cfg.jets.candidates {
            let psi = quadratic_jet(&v, &a, c, q)?;
            let mut r = vec![i.to_string(), num(a.horizon()), num(c), num(q)];
            match jet_membership(&psi, &v, &a, &jp, &sample, p.horizon) {
                Ok(ev) => r.extend([
                    format!("{:?}", ev.verdict).to_lowercase(),
                    ev.admissible.to_string(),
                    num(ev.min_gap),
                    num(ev.max_gap),
                    num(ev.holder_norm),
                ]),
                Err(Error::Empty(_)) => r.extend(["empty".into(), "0".into(), String::new(), String::new(), String::new()]),
                Err(e) => return Err(e),
            }
            rows.push(r);
            jets.push((a.clone(), psi));
        }
    }
    out.csv("jets.csv", &["path", "t", "c", "q", "verdict", "admissible", "min_gap", "max_gap", "holder_norm"], &rows)?;
    let ladder = subsolution_ladder(
        &v,
        &jets,
        &jp,
        &cfg.jets.ladder,
        cfg.jets.sample,
        cfg.seed,
        p.coef.controls(),
        &p.coef,
        p.horizon,
    )?;
    let rows: Vec<Vec<String>> = ladder
        .iter()
        .map(|r| vec![num(r.mu), r.candidates.to_string(), r.certified.to_string(), num(r.value)])
        .collect();
    out.csv("jet_ladder.csv", &["mu", "candidates", "certified", "diagnostic"], &rows)?;
    let worst = ladder.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    out.note("max_subsolution_diagnostic", worst);
    out.text("jets.txt", &format!("problem: {}\njets: {}\nmax subsolution diagnostic: {worst}\n", p.name, jets.len()))
}

fn verify(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = cfg.problem()?;
    let v = SmoothCandidate::new(closed_form(&p)?.clone())?;
    let policy = argmax_policy(&v, &p.coef);
    let controls = cfg.verify.controls.clone().unwrap_or_else(|| p.coef.controls().to_vec());
    let r = verification_demo(
        &v,
        &p.coef,
        &cfg.initial_path()?,
        &policy,
        &controls,
        &cfg.sim_config()?,
        &cfg.bsde.engine,
    )?;
    let row = |label: String, e: &crate::viscosity::VerificationEntry| {
        vec![label, num(e.cost), num(e.se), num(e.eps_num), num(e.gap)]
    };
    let mut rows: Vec<Vec<String>> = r.entries.iter().map(|e| row(vec_cell(&e.control), e)).collect();
    rows.push(row("argmax".into(), &r.optimal));
    out.csv("verify.csv", &["control", "cost", "se", "eps_num", "gap"], &rows)?;
    out.note("dominates", r.dominates);
    out.note("attained", r.attained);
    out.text(
        "verify.txt",
        &format!(
            "problem: {}\nvalue: {}\nresidual: {}\ndominates: {}\nattained: {}\n",
            p.name, r.value, r.residual, r.dominates, r.attained
        ),
    )
}

fn ito(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let it = &cfg.ito;
    let horizon = cfg.problem.horizon;
    let v = registry::lookup(&it.functional, horizon)?;
    let qv = match it.qv.as_str() {
        "realized" => QuadraticVariation::Realized,
        _ => QuadraticVariation::brownian(1),
    };
    let mut rows = Vec::new();
    let mut prev: Option<f64> = None;
    for &k in &it.steps {
        let sim = SimConfig::new(horizon, k, it.n_paths, cfg.seed)?;
        let batch = brownian_concat(&Path::origin(1), &sim)?;
        let rms = ito_rms(&v, &batch.paths, &qv)?;
        rows.push(vec![k.to_string(), num(rms), opt(prev.map(|p| p / rms))]);
        prev = Some(rms);
    }
    out.csv("ito.csv", &["steps", "rms", "ratio"], &rows)?;
    out.note("final_rms", prev);
    out.text("ito.txt", &format!("functional: {}\nqv: {}\npaths: {}\n", it.functional, it.qv, it.n_paths))
}

/// Collects the manifests already in the output directory.
fn report(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let mut manifests: Vec<_> = fs::read_dir(&cfg.output_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("manifest-") && n.ends_with(".json") && n != "manifest-report.json")
        .collect();
    manifests.sort();
    let mut rows = Vec::new();
    let mut txt = String::new();
    for name in &manifests {
        let raw = fs::read_to_string(cfg.output_dir.join(name))?;
        let m: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        let sub = m["subcommand"].as_str().unwrap_or("?").to_string();
        let status = m["status"].as_str().unwrap_or("?").to_string();
        writeln!(txt, "== {sub} ({status}, input {})", m["input_hash"].as_str().unwrap_or("?")).unwrap();
        for a in m["artifacts"].as_array().into_iter().flatten() {
            let file = a["file"].as_str().unwrap_or("?").to_string();
            rows.push(vec![sub.clone(), status.clone(), file.clone(), a["sha256"].as_str().unwrap_or("").to_string()]);
            if file.ends_with(".txt") {
                if let Ok(body) = fs::read_to_string(cfg.output_dir.join(&file)) {
                    for line in body.lines().filter(|l| !l.starts_with('#')) {
                        writeln!(txt, "{line}").unwrap();
                    }
                }
            }
        }
    }
    if manifests.is_empty() {
        txt.push_str("no runs found\n");
    }
    out.csv("report.csv", &["subcommand", "status", "file", "sha256"], &rows)?;
    out.text("report.txt", &txt)
}
