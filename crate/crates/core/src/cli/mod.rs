//! Configuration-driven experiment runner.
//!
//! `pathbellman <subcommand> --config FILE [--seed N] [--out DIR]
//! [--workers K] [section.key=value ...]`. Every artifact starts with `#`
//! manifest lines (seed, input hash, config echo); wall time goes only into
//! `manifest-<subcommand>.json` so reruns reproduce the CSVs byte for byte.

mod commands;
mod config;
mod output;

pub use config::{
    apply_override, BsdeSection, CascadeSection, DppSection, EscapeSection, ExperimentConfig, HolderSection,
    InitialConfig, ItoSection, JetSection, ResidualSection, SimSection, VerifySection,
};
pub use output::{content_hash, RunOutput};

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    HolderTail,
    BoundaryEscape,
    Bsde,
    DppCheck,
    Cascade,
    PpdeResidual,
    JetCheck,
    Verify,
    ItoCheck,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::HolderTail => "holder-tail",
            Command::BoundaryEscape => "boundary-escape",
            Command::Bsde => "bsde",
            Command::DppCheck => "dpp-check",
            Command::Cascade => "cascade",
            Command::PpdeResidual => "ppde-residual",
            Command::JetCheck => "jet-check",
            Command::Verify => "verify",
            Command::ItoCheck => "ito-check",
            Command::Report => "report",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pathbellman", version, about = "Path-dependent stochastic control experiments")]
pub struct Args {
    pub command: Command,
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// `section.key=value` overrides applied after the file.
    pub overrides: Vec<String>,
}

impl Args {
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(w) = self.workers {
            overrides.push(format!("workers={w}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("output_dir={}", toml::Value::String(o.display().to_string())));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub artifacts: Vec<PathBuf>,
}

/// Runs one subcommand. Numerical failures are recorded in the artifacts
/// and returned as errors after the manifest is written.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunSummary> {
    let clock = Instant::now();
    let mut out = RunOutput::new(command, cfg)?;
    let result = crate::par::with_workers(cfg.workers, || commands::dispatch(command, cfg, &mut out));
    let wall = clock.elapsed().as_secs_f64();
    match result {
        Ok(()) => {
            let manifest = out.finish(cfg, wall, None)?;
            let artifacts = out.artifacts().iter().map(|a| out.dir.join(&a.file)).collect();
            Ok(RunSummary { manifest, artifacts })
        }
        Err(e) if e.is_numerical() => {
            out.text(&format!("{}.txt", command.name()), &format!("status: numerical failure\nerror: {e}\n"))?;
            out.finish(cfg, wall, Some(e.to_string()))?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Parses `args`, runs, prints a one-line status and returns the exit code.
pub fn main_with(args: Args) -> i32 {
    let cfg = match args.config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run(args.command, &cfg) {
        Ok(s) => {
            for a in &s.artifacts {
                println!("wrote {}", a.display());
            }
            println!("manifest {}", s.manifest.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
