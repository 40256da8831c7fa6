//! Experiment configuration: a TOML file, `section.key=value` overrides and
//! command-line flags, validated before anything runs.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backward::CondExpEngine;
use crate::cascade::GridSpec;
use crate::dynamics::{AnchorKind, SimConfig};
use crate::error::{Error, Result};
use crate::pathspace::{HolderParams, Path};
use crate::problems::{self, linear_initial, Problem, ProblemConfig};
use crate::viscosity::{JetParams, MU_LADDER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    // output location and thread count do not change results; they are kept
    // out of the artifact headers and recorded in the manifest only
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the library default.
    #[serde(skip_serializing)]
    pub workers: usize,
    pub problem: ProblemConfig,
    pub initial: InitialConfig,
    pub sim: SimSection,
    pub bsde: BsdeSection,
    pub cascade: CascadeSection,
    pub holder: HolderSection,
    pub escape: EscapeSection,
    pub dpp: DppSection,
    pub jets: JetSection,
    pub ito: ItoSection,
    pub verify: VerifySection,
    pub residual: ResidualSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            workers: 0,
            problem: ProblemConfig::default(),
            initial: InitialConfig::default(),
            sim: SimSection::default(),
            bsde: BsdeSection::default(),
            cascade: CascadeSection::default(),
            holder: HolderSection::default(),
            escape: EscapeSection::default(),
            dpp: DppSection::default(),
            jets: JetSection::default(),
            ito: ItoSection::default(),
            verify: VerifySection::default(),
            residual: ResidualSection::default(),
        }
    }
}

/// The initial path `s ↦ slope·s` on `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub t: f64,
    pub slope: f64,
    pub steps: usize,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { t: 0.0, slope: 0.0, steps: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub steps: usize,
    pub n_paths: usize,
    /// Paths written by `simulate`.
    pub write_paths: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { steps: 64, n_paths: 10_000, write_paths: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BsdeSection {
    pub engine: CondExpEngine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    pub m: Vec<usize>,
    /// Also write the value on the first time slice of every segment.
    pub dump: bool,
    /// Reference value for the error column; the closed form when unset.
    pub reference: Option<f64>,
    pub grid: GridSpec,
}

impl Default for CascadeSection {
    fn default() -> Self {
        Self { m: vec![1, 2, 3], dump: false, reference: None, grid: GridSpec { nodes: 61, ..GridSpec::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub alpha: f64,
    /// Thresholds; empty means the empirical quantiles in `quantiles`.
    pub mus: Vec<f64>,
    pub quantiles: Vec<f64>,
}

impl Default for HolderSection {
    fn default() -> Self {
        Self { alpha: 0.25, mus: Vec::new(), quantiles: vec![0.9, 0.95, 0.99, 0.999] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeSection {
    pub alpha: f64,
    pub mu: f64,
    pub t1: f64,
    /// Anchor horizon.
    pub t: f64,
    pub deltas: Vec<f64>,
    /// `boundary`, `zero` or `perturbed`.
    pub anchor: String,
    pub eps: f64,
    pub anchor_steps: usize,
    pub steps: usize,
    pub n_paths: usize,
}

impl Default for EscapeSection {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            mu: 1.0,
            t1: 0.5,
            t: 1.0,
            deltas: vec![0.001, 0.0025, 0.005, 0.01],
            anchor: "boundary".into(),
            eps: 0.25,
            anchor_steps: 512,
            steps: 2048,
            n_paths: 2000,
        }
    }
}

impl EscapeSection {
    pub fn anchor_kind(&self) -> Result<AnchorKind> {
        match self.anchor.as_str() {
            "boundary" => Ok(AnchorKind::Boundary),
            "zero" => Ok(AnchorKind::Zero),
            "perturbed" => Ok(AnchorKind::Perturbed { eps: self.eps }),
            other => Err(Error::Config(format!("escape.anchor `{other}`: expected boundary, zero or perturbed"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppSection {
    pub delta: f64,
}

impl Default for DppSection {
    fn default() -> Self {
        Self { delta: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JetSection {
    pub alpha: f64,
    pub mu: f64,
    pub kappa: f64,
    pub m0: f64,
    pub beta: f64,
    /// Base paths at which jets are built.
    pub paths: usize,
    /// Cylinder sample size per base path.
    pub sample: usize,
    /// `(c, q)` pairs for `ψ = v + c(t' - t) + q|x' - a(t)|²`.
    pub candidates: Vec<[f64; 2]>,
    pub ladder: Vec<f64>,
}

impl Default for JetSection {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            mu: 10.0,
            kappa: 0.1,
            m0: 5.0,
            beta: 0.5,
            paths: 20,
            sample: 40,
            candidates: vec![[0.0, 0.0], [0.5, 0.0], [0.2, 1.0], [-0.5, 0.0]],
            ladder: MU_LADDER.to_vec(),
        }
    }
}

impl JetSection {
    pub fn params(&self, horizon: f64) -> Result<JetParams> {
        JetParams::new(HolderParams::new(self.alpha, self.mu)?, self.kappa, self.m0, self.beta, horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItoSection {
    /// Registry label.
    pub functional: String,
    pub steps: Vec<usize>,
    pub n_paths: usize,
    /// `model` (Brownian `d⟨X⟩ = dt`) or `realized`.
    pub qv: String,
}

impl Default for ItoSection {
    fn default() -> Self {
        Self { functional: "cylinder:quadratic".into(), steps: vec![128, 256, 512], n_paths: 2000, qv: "model".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Constant controls to price; the problem's control set when unset.
    pub controls: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualSection {
    pub paths: usize,
}

impl Default for ResidualSection {
    fn default() -> Self {
        Self { paths: 100 }
    }
}

impl ExperimentConfig {
    /// Reads `file` (if any), applies `key=value` overrides and validates.
    pub fn load(file: Option<&FsPath>, overrides: &[String]) -> Result<Self> {
        let text = match file {
            Some(f) => std::fs::read_to_string(f)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", f.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = text.parse().map_err(|e| Error::Parse(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        self.sim_config()?;
        self.initial_path()?;
        if self.initial.t >= problem.horizon {
            return Err(Error::Config("initial.t must be below problem.horizon".into()));
        }
        if self.cascade.m.is_empty() || self.cascade.m.contains(&0) {
            return Err(Error::Config("cascade.m must list positive integers".into()));
        }
        self.cascade.grid.validate()?;
        if !(self.holder.alpha > 0.0 && self.holder.alpha < 0.5) {
            return Err(Error::Config("holder.alpha must lie in (0, 1/2)".into()));
        }
        if self.holder.mus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("holder.mus must be increasing".into()));
        }
        if self.holder.mus.is_empty()
            && (self.holder.quantiles.is_empty()
                || self.holder.quantiles.iter().any(|q| !(0.0..=1.0).contains(q))
                || self.holder.quantiles.windows(2).any(|w| w[1] < w[0]))
        {
            return Err(Error::Config("holder.quantiles must be increasing levels in [0, 1]".into()));
        }
        self.escape.anchor_kind()?;
        HolderParams::new(self.escape.alpha, self.escape.mu)?;
        self.jets.params(problem.horizon)?;
        if self.ito.steps.is_empty() || self.ito.steps.contains(&0) {
            return Err(Error::Config("ito.steps must list positive integers".into()));
        }
        if !matches!(self.ito.qv.as_str(), "model" | "realized") {
            return Err(Error::Config("ito.qv must be `model` or `realized`".into()));
        }
        crate::funcalc::registry::lookup(&self.ito.functional, problem.horizon)?;
        if !(self.dpp.delta >= 0.0) {
            return Err(Error::Config("dpp.delta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        problems::build(&self.problem)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(self.problem.horizon, self.sim.steps, self.sim.n_paths, self.seed)
    }

    pub fn initial_path(&self) -> Result<Path> {
        linear_initial(self.initial.t, self.initial.slope, self.initial.steps)
    }
}

/// Sets `a.b.c = value` in `table`; the value is read as TOML and falls back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
