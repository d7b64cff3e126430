//! One function per subcommand. Each writes its data files into the output
//! directory and returns what goes into the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use diu_core::analysis::{
    count_modes, glucose_distribution, hopf_scan, sweep_lambda_max, KickKind, SweepSpec,
};
use diu_core::forcing::{
    meal_square_driver, periodic_schedule, poisson_schedule, uniform_amplitude_schedule,
    DriveSignal, KickSchedule, RngStream, MINUTES_PER_DAY,
};
use diu_core::integrate::{
    default_initial_state, run_kick_relaxation, time_t_map_samples, Trajectory,
};
use diu_core::lyapunov::{lyapunov_ensemble, max_lyapunov};
use diu_core::model::{UltradianState, COMPONENT_NAMES};
use diu_core::shearflow::{
    characteristic_root, dde_heatmap, dde_lyapunov, write_root_table, CylinderHistory,
};
use serde_json::json;

use crate::config::{ExperimentConfig, ForcingKind};
use crate::manifest::Status;

/// Exit code of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Ok = 0,
    Config = 1,
    Numerical = 2,
    Partial = 3,
}

/// What a command hands back to `main` for the manifest.
#[derive(Debug)]
pub struct Report {
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    pub status: Status,
    pub error: Option<String>,
}

impl Report {
    fn new() -> Self {
        Self {
            outputs: Vec::new(),
            summary: json!({}),
            status: Status::Ok,
            error: None,
        }
    }

    pub fn code(&self) -> Code {
        match self.status {
            Status::Ok => Code::Ok,
            Status::Partial => Code::Partial,
            Status::Failed => Code::Numerical,
        }
    }
}

/// A command failure before or instead of a report.
#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
    /// Files already written.
    pub report: Option<Report>,
}

type CmdResult = Result<Report, Failure>;

fn config_err(section: &str, msg: impl std::fmt::Display) -> Failure {
    Failure {
        code: Code::Config,
        message: format!("[{section}] {msg}"),
        report: None,
    }
}

impl From<diu_core::Error> for Failure {
    fn from(e: diu_core::Error) -> Self {
        let code = match e {
            diu_core::Error::InvalidParameter { .. } => Code::Config,
            _ => Code::Numerical,
        };
        Failure {
            code,
            message: e.to_string(),
            report: None,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: Code::Numerical,
            message: format!("i/o: {e}"),
            report: None,
        }
    }
}

fn create(dir: &Path, name: &str, report: &mut Report) -> std::io::Result<BufWriter<File>> {
    report.outputs.push(name.to_string());
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(
    dir: &Path,
    name: &str,
    value: &impl serde::Serialize,
    report: &mut Report,
) -> Result<(), Failure> {
    let mut w = create(dir, name, report)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A schedule of `n` kicks for the configured forcing.
fn schedule(cfg: &ExperimentConfig, n: usize, stream: RngStream) -> diu_core::Result<KickSchedule> {
    let f = &cfg.forcing;
    match f.kind {
        ForcingKind::Periodic => periodic_schedule(f.amplitude, f.period, n),
        ForcingKind::Poisson => poisson_schedule(f.amplitude, f.period, n, stream),
        ForcingKind::UniformAmplitude => {
            uniform_amplitude_schedule(f.lo, f.hi, f.period, n, stream)
        }
        ForcingKind::Meals | ForcingKind::None => Ok(KickSchedule::empty()),
    }
}

/// A schedule whose kicks reach past `horizon`, unless `count` is given.
fn schedule_covering(cfg: &ExperimentConfig, horizon: f64) -> diu_core::Result<KickSchedule> {
    let stream = RngStream::new(cfg.forcing.seed, cfg.forcing.stream);
    if let Some(n) = cfg.forcing.count {
        return schedule(cfg, n, stream);
    }
    if matches!(cfg.forcing.kind, ForcingKind::Meals | ForcingKind::None) {
        return Ok(KickSchedule::empty());
    }
    let mut n = (horizon / cfg.forcing.period).ceil() as usize + 1;
    loop {
        let s = schedule(cfg, n, stream)?;
        if s.times().last().is_some_and(|&t| t > horizon) {
            return Ok(s);
        }
        n *= 2;
    }
}

fn drive(cfg: &ExperimentConfig, horizon: f64) -> diu_core::Result<DriveSignal> {
    match cfg.forcing.kind {
        ForcingKind::Meals => {
            let days = (horizon / MINUTES_PER_DAY).ceil() as usize + 1;
            meal_square_driver(cfg.forcing.amplitude, days)
        }
        _ => Ok(DriveSignal::basal(cfg.model.i_0)),
    }
}

fn initial_state(cfg: &ExperimentConfig) -> UltradianState {
    match cfg.simulate.initial_state {
        Some(s) => UltradianState::from_array(s),
        None => default_initial_state(&cfg.model).state,
    }
}

fn write_trajectory(dir: &Path, traj: &Trajectory, report: &mut Report) -> Result<(), Failure> {
    traj.write_csv(create(dir, "trajectory.csv", report)?)?;
    traj.write_events_csv(create(dir, "events.csv", report)?)?;
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let horizon = cfg.simulate.horizon;
    let sched = schedule_covering(cfg, horizon)?;
    let drive = drive(cfg, horizon)?;
    let s0 = initial_state(cfg);
    let mut report = Report::new();
    let run = run_kick_relaxation(
        &cfg.model,
        &sched,
        &drive,
        &s0,
        horizon,
        &cfg.integrator,
        Some(cfg.simulate.sample_dt),
        &mut |_, _, _| {},
    );
    match run {
        Ok(traj) => {
            write_trajectory(dir, &traj, &mut report)?;
            report.summary = json!({
                "rows": traj.times.len(),
                "kicks": traj.events.len(),
                "nonnegative": traj.nonnegative,
                "final_state": traj.final_state.map(|s| s.to_array()),
            });
            Ok(report)
        }
        Err(partial) => {
            write_trajectory(dir, &partial.trajectory, &mut report)?;
            report.status = Status::Failed;
            report.error = Some(partial.to_string());
            report.summary = json!({ "rows": partial.trajectory.times.len(), "partial": true });
            Err(Failure {
                code: Code::Numerical,
                message: partial.to_string(),
                report: Some(report),
            })
        }
    }
}

pub fn lyapunov(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let lcfg = cfg.lyapunov.to_config();
    let p = &cfg.model;
    let needed = lcfg.required_kicks(p);
    let n = match cfg.forcing.count {
        Some(n) if n < needed => {
            return Err(config_err(
                "forcing",
                format!("count {n} is below the {needed} kicks the lyapunov section needs"),
            ))
        }
        Some(n) => n,
        None => needed,
    };
    let mut report = Report::new();
    if cfg.forcing.kind.is_random() {
        let gen = |s: RngStream| schedule(cfg, n, s);
        let ens = lyapunov_ensemble(
            p,
            gen,
            &DriveSignal::basal(p.i_0),
            &lcfg,
            &cfg.integrator,
            cfg.lyapunov.realizations,
            cfg.forcing.seed,
            cfg.lyapunov.histogram_bins,
        )?;
        write_json(dir, "ensemble.json", &ens, &mut report)?;
        ens.write_csv(create(dir, "realizations.csv", &mut report)?)?;
        report.summary = json!({
            "mean": ens.mean,
            "std": ens.std,
            "realizations": ens.exponents.len(),
            "failures": ens.failures.len(),
        });
        if !ens.failures.is_empty() {
            report.status = Status::Partial;
            report.error = Some(format!(
                "{} of {} realizations failed; first: {}",
                ens.failures.len(),
                cfg.lyapunov.realizations,
                ens.failures[0].error
            ));
        }
        return Ok(report);
    }
    let (sched, drive) = match cfg.forcing.kind {
        ForcingKind::Meals => (
            KickSchedule::empty(),
            meal_square_driver(cfg.forcing.amplitude, n + 1)?,
        ),
        ForcingKind::None => {
            return Err(config_err(
                "forcing",
                "kind = \"none\" defines no cycles to measure",
            ))
        }
        _ => (
            schedule(cfg, n, RngStream::new(cfg.forcing.seed, cfg.forcing.stream))?,
            DriveSignal::basal(p.i_0),
        ),
    };
    let est = max_lyapunov(p, &sched, &drive, &lcfg, &cfg.integrator)?;
    let rec = est.record();
    write_json(dir, "estimate.json", &rec, &mut report)?;
    est.write_series_csv(create(dir, "series.csv", &mut report)?)?;
    report.summary = json!({
        "lambda_max": rec.lambda_max,
        "stderr": rec.stderr,
        "per_minute": est.per_minute(),
        "flagged_cycles": rec.flagged_cycles,
    });
    Ok(report)
}

pub fn sweep(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let f = &cfg.forcing;
    let kind = match f.kind {
        ForcingKind::Periodic => KickKind::Periodic,
        ForcingKind::Poisson => KickKind::Poisson,
        ForcingKind::UniformAmplitude => KickKind::UniformAmplitude {
            half_width: 0.5 * (f.hi - f.lo),
        },
        ForcingKind::Meals | ForcingKind::None => {
            return Err(config_err(
                "forcing",
                "sweep needs kind periodic, poisson or uniform_amplitude",
            ))
        }
    };
    let default_a = match f.kind {
        ForcingKind::UniformAmplitude => 0.5 * (f.lo + f.hi),
        _ => f.amplitude,
    };
    let pick = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let spec = SweepSpec {
        kind,
        amplitudes: pick(&cfg.sweep.amplitudes, default_a),
        periods: pick(&cfg.sweep.periods, f.period),
        realizations: cfg.lyapunov.realizations,
        base_seed: f.seed,
    };
    let grid = sweep_lambda_max(
        &cfg.model,
        &spec,
        &cfg.lyapunov.to_config(),
        &cfg.integrator,
    )?;
    let mut report = Report::new();
    grid.write_csv(create(dir, "sweep.csv", &mut report)?)?;
    let failed: Vec<_> = grid.cells.iter().filter(|c| c.error.is_some()).collect();
    report.summary = json!({
        "cells": grid.cells.len(),
        "failed_cells": failed.len(),
        "positive_cells": grid.cells.iter().filter(|c| c.lambda_max > 0.0).count(),
    });
    if let Some(c) = failed.first() {
        report.status = Status::Partial;
        report.error = Some(format!(
            "cell A = {}, T = {}: {}",
            c.x,
            c.y,
            c.error.as_deref().unwrap_or("")
        ));
    }
    Ok(report)
}

pub fn hopf(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let h = &cfg.hopf;
    let scan = hopf_scan(
        &cfg.model,
        &h.td_values,
        h.transient,
        h.window,
        &cfg.integrator,
        h.threshold,
    )?;
    let mut report = Report::new();
    scan.write_csv(create(dir, "hopf.csv", &mut report)?)?;
    report.summary = json!({
        "td": scan.td,
        "amplitudes": scan.amplitudes,
        "threshold": scan.threshold,
        "bracket": scan.bracket,
    });
    Ok(report)
}

pub fn dde(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let d = &cfg.dde;
    let p = d.params();
    let numerics = d.numerics();
    let lcfg = cfg.lyapunov.to_config();
    let mut report = Report::new();
    if d.taus.is_empty() || d.periods.is_empty() {
        let h0 = CylinderHistory::quadratic(p.tau, numerics.steps_per_delay)?;
        let est = dde_lyapunov(&p, &h0, &lcfg, &numerics)?;
        let rec = est.record();
        write_json(dir, "estimate.json", &rec, &mut report)?;
        est.write_series_csv(create(dir, "series.csv", &mut report)?)?;
        let root = characteristic_root(p.lambda, p.tau)?;
        report.summary = json!({
            "lambda_max": rec.lambda_max,
            "stderr": rec.stderr,
            "hyperbolicity": diu_core::shearflow::hyperbolicity_factor(p.amplitude, p.sigma, p.lambda),
            "re_gamma": root.gamma.re,
            "im_gamma": root.gamma.im,
        });
        return Ok(report);
    }

    let cells = dde_heatmap(&p, &d.taus, &d.periods, &lcfg, &numerics);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(dir, "heatmap.csv", &mut report)?);
    w.write_record(["tau", "T", "lambda_max", "sign"])
        .map_err(std::io::Error::other)?;
    for (c, _) in &cells {
        let sign = if c.lambda_max > 0.0 {
            "+"
        } else if c.lambda_max < 0.0 {
            "-"
        } else {
            "0"
        };
        w.write_record([
            c.tau.to_string(),
            c.period.to_string(),
            c.lambda_max.to_string(),
            sign.into(),
        ])
        .map_err(std::io::Error::other)?;
    }
    w.flush()?;
    drop(w);
    let pairs: Vec<(f64, f64)> = d.taus.iter().map(|&t| (p.lambda, t)).collect();
    write_root_table(create(dir, "roots.csv", &mut report)?, &pairs)?;

    let failed: Vec<_> = cells
        .iter()
        .filter_map(|(c, e)| e.as_ref().map(|e| (c, e)))
        .collect();
    report.summary = json!({
        "cells": cells.len(),
        "positive_cells": cells.iter().filter(|(c, _)| c.lambda_max > 0.0).count(),
        "negative_cells": cells.iter().filter(|(c, _)| c.lambda_max < 0.0).count(),
        "failed_cells": failed.len(),
    });
    if let Some((c, e)) = failed.first() {
        report.status = Status::Partial;
        report.error = Some(format!("cell tau = {}, T = {}: {e}", c.tau, c.period));
    }
    Ok(report)
}

pub fn attractor(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let a = &cfg.attractor;
    let mut report = Report::new();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(dir, "samples.csv", &mut report)?);
    let mut header = vec!["n"];
    header.extend(COMPONENT_NAMES);
    w.write_record(&header).map_err(std::io::Error::other)?;
    let samples = if a.keep == 0 {
        Vec::new()
    } else {
        if !matches!(
            cfg.forcing.kind,
            ForcingKind::Periodic | ForcingKind::UniformAmplitude
        ) {
            return Err(config_err(
                "forcing",
                "attractor sampling needs equally spaced kicks",
            ));
        }
        let n = cfg.forcing.count.unwrap_or(a.burn_in + a.keep);
        let sched = schedule(cfg, n, RngStream::new(cfg.forcing.seed, cfg.forcing.stream))?;
        time_t_map_samples(
            &cfg.model,
            &sched,
            &initial_state(cfg),
            a.burn_in,
            a.keep,
            &cfg.integrator,
        )?
    };
    for (i, s) in samples.iter().enumerate() {
        let mut row = vec![(a.burn_in + i).to_string()];
        row.extend(s.to_array().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    report.summary = json!({ "samples": samples.len() });
    Ok(report)
}

pub fn hist(cfg: &ExperimentConfig, dir: &Path) -> CmdResult {
    let hs = &cfg.hist;
    let sched = schedule_covering(cfg, hs.horizon)?;
    let drive = drive(cfg, hs.horizon)?;
    let traj = run_kick_relaxation(
        &cfg.model,
        &sched,
        &drive,
        &initial_state(cfg),
        hs.horizon,
        &cfg.integrator,
        Some(hs.sample_dt),
        &mut |_, _, _| {},
    )
    .map_err(|p| Failure::from(diu_core::Error::from(p)))?;
    let dist = glucose_distribution(&traj, hs.bins, hs.sample_dt, hs.burn_in)?;
    let modes = count_modes(&dist, hs.bandwidth, hs.prominence);
    let modes_half = count_modes(&dist, hs.bandwidth, 0.5 * hs.prominence);
    let mut report = Report::new();
    dist.write_csv(create(dir, "distribution.csv", &mut report)?)?;
    report.summary = json!({
        "modes": modes,
        "modes_half_prominence": modes_half,
        "bandwidth_bins": hs.bandwidth,
        "prominence": hs.prominence,
        "g_min": dist.edges.first(),
        "g_max": dist.edges.last(),
    });
    Ok(report)
}
