//! Front end of the `diu` tool: argument parsing, configuration, the seven
//! experiment commands and the run manifest.
//!
//! [`run`] executes one parsed invocation in-process; the `diu` binary is a
//! thin wrapper that prints its diagnostics and exits with its code.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Code, Failure, Report};
use config::{ExperimentConfig, Loaded};
use manifest::{RunManifest, Status};

#[derive(Parser, Debug)]
#[command(name = "diu", version, about = "Delay-induced uncertainty experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config, or the manifest.json of an earlier run to repeat it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every forcing stream and perturbation direction.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Kicked trajectory: trajectory.csv, events.csv.
    Simulate,
    /// Maximal Lyapunov exponent, or an ensemble of them for random forcing.
    Lyapunov,
    /// Exponent over a grid of kick amplitudes and periods: sweep.csv.
    Sweep,
    /// Oscillation amplitude of the unforced model over delays: hopf.csv.
    Hopf,
    /// Delay shear flow: heatmap.csv and roots.csv, or one estimate.
    Dde,
    /// Iterates of the time-T map: samples.csv.
    Attractor,
    /// Long-run glucose distribution and its modes: distribution.csv.
    Hist,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Lyapunov => "lyapunov",
            Self::Sweep => "sweep",
            Self::Hopf => "hopf",
            Self::Dde => "dde",
            Self::Attractor => "attractor",
            Self::Hist => "hist",
        }
    }

    fn run(self, cfg: &ExperimentConfig, dir: &Path) -> Result<Report, Failure> {
        match self {
            Self::Simulate => commands::simulate(cfg, dir),
            Self::Lyapunov => commands::lyapunov(cfg, dir),
            Self::Sweep => commands::sweep(cfg, dir),
            Self::Hopf => commands::hopf(cfg, dir),
            Self::Dde => commands::dde(cfg, dir),
            Self::Attractor => commands::attractor(cfg, dir),
            Self::Hist => commands::hist(cfg, dir),
        }
    }
}

/// Result of one invocation.
#[derive(Debug)]
pub struct Outcome {
    /// Process exit code: 0 ok, 1 config error, 2 numerical failure,
    /// 3 partial sweep.
    pub code: u8,
    /// Written unless the configuration was rejected.
    pub manifest: Option<RunManifest>,
    /// Errors and warnings for stderr.
    pub diagnostics: Vec<String>,
}

impl Outcome {
    fn early(code: Code, message: String) -> Self {
        Self {
            code: code as u8,
            manifest: None,
            diagnostics: vec![message],
        }
    }
}

/// The configuration a command line resolves to: file or manifest, then
/// `--seed` and `--out`, validated.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => match config::load(path).map_err(|e| e.to_string())? {
            Loaded::Toml(c) => c,
            Loaded::Manifest(m) => {
                if m.command != cli.command.name() {
                    return Err(format!(
                        "{}: manifest records command `{}`, not `{}`",
                        path.display(),
                        m.command,
                        cli.command.name()
                    ));
                }
                m.config
            }
        },
    };
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Runs one command and writes its outputs and manifest.
pub fn run(cli: &Cli) -> Outcome {
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(e) => return Outcome::early(Code::Config, format!("config error: {e}")),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return Outcome::early(Code::Config, format!("config error: --threads: {e}")),
    };
    let dir = PathBuf::from(&cfg.output.dir);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return Outcome::early(
            Code::Numerical,
            format!("error: cannot create {}: {e}", dir.display()),
        );
    }

    let start = Instant::now();
    let mut diagnostics = Vec::new();
    let (report, code) = match pool.install(|| cli.command.run(&cfg, &dir)) {
        Ok(r) => {
            let code = r.code();
            if let Some(e) = r.error.as_ref().filter(|_| code == Code::Partial) {
                diagnostics.push(format!("warning: partial result: {e}"));
            }
            (r, code)
        }
        Err(f) => {
            diagnostics.push(format!("error: {}", f.message));
            let mut r = f.report.unwrap_or(Report {
                outputs: Vec::new(),
                summary: serde_json::Value::Null,
                status: Status::Failed,
                error: None,
            });
            r.status = Status::Failed;
            r.error = Some(f.message);
            (r, f.code)
        }
    };
    let m = RunManifest {
        command: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg,
        outputs: report.outputs,
        duration_secs: start.elapsed().as_secs_f64(),
        status: report.status,
        error: report.error,
        summary: report.summary,
    };
    if let Err(e) = m.write(&dir) {
        diagnostics.push(format!("error: cannot write manifest: {e}"));
        return Outcome {
            code: Code::Numerical as u8,
            manifest: Some(m),
            diagnostics,
        };
    }
    Outcome {
        code: code as u8,
        manifest: Some(m),
        diagnostics,
    }
}
