//! Kick-relaxation runs: smooth flow between kicks, instantaneous jumps at kicks.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{integrate_ultradian_with, IntegratorConfig};
use crate::forcing::{apply_kick, DriveSignal, KickSchedule, ScheduleDescriptor};
use crate::model::{
    reference_equilibrium, UltradianParams, UltradianState, COMPONENT_NAMES, STATE_DIM,
};
use crate::{Error, Result};

/// Burn-in cycles prescribed when no stable equilibrium is available as a
/// starting point.
pub const UNSTABLE_START_BURN_IN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KickEvent {
    pub t: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<UltradianState>,
    pub events: Vec<KickEvent>,
    pub final_time: f64,
    pub final_state: Option<UltradianState>,
    /// True when every accepted integrator state stayed componentwise >= 0.
    pub nonnegative: bool,
}

impl Trajectory {
    pub fn glucose(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.states.iter().map(|s| s.g))
    }

    /// Writes `t,Ip,Ii,G,h1,h2,h3`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["t"];
        header.extend(COMPONENT_NAMES);
        out.write_record(&header)?;
        let mut row = Vec::with_capacity(STATE_DIM + 1);
        for (t, s) in self.times.iter().zip(&self.states) {
            row.clear();
            row.push(t.to_string());
            row.extend(s.to_array().iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `t,amplitude`.
    pub fn write_events_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["t", "amplitude"])?;
        for e in &self.events {
            out.write_record([e.t.to_string(), e.amplitude.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A run that aborted; carries everything recorded before the failure.
#[derive(Debug)]
pub struct PartialRun {
    pub error: Error,
    pub trajectory: Trajectory,
}

impl fmt::Display for PartialRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted after {} samples: {}",
            self.trajectory.times.len(),
            self.error
        )
    }
}

impl std::error::Error for PartialRun {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Box<PartialRun>> for Error {
    fn from(p: Box<PartialRun>) -> Self {
        p.error
    }
}

/// Starting point for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub state: UltradianState,
    /// Extra cycles to discard before measuring anything.
    pub burn_in_cycles: usize,
    pub from_equilibrium: bool,
}

/// The drive-free equilibrium when it is linearly stable; otherwise the
/// reference state with [`UNSTABLE_START_BURN_IN`] burn-in cycles.
pub fn default_initial_state(p: &UltradianParams) -> InitialCondition {
    match reference_equilibrium(p, p.i_0) {
        Ok((eq, true)) => InitialCondition {
            state: eq,
            burn_in_cycles: 0,
            from_equilibrium: true,
        },
        _ => InitialCondition {
            state: UltradianState::REFERENCE,
            burn_in_cycles: UNSTABLE_START_BURN_IN,
            from_equilibrium: false,
        },
    }
}

/// Runs the kicked system from `s0` at time 0 to `horizon`.
///
/// Between kicks the flow is integrated under `drive`; at each kick time the
/// jump `G ↦ G + A` is applied and `observer` sees the event with the pre-
/// and post-kick states. With `sample_dt`, the state is recorded at
/// `0, dt, 2dt, … ≤ horizon` (right-continuous at kick instants).
#[allow(clippy::too_many_arguments)]
pub fn run_kick_relaxation(
    p: &UltradianParams,
    sched: &KickSchedule,
    drive: &DriveSignal,
    s0: &UltradianState,
    horizon: f64,
    cfg: &IntegratorConfig,
    sample_dt: Option<f64>,
    observer: &mut dyn FnMut(&KickEvent, &UltradianState, &UltradianState),
) -> std::result::Result<Trajectory, Box<PartialRun>> {
    let mut traj = Trajectory {
        nonnegative: s0.is_nonnegative(),
        ..Trajectory::default()
    };
    let fail = |error: Error, mut traj: Trajectory| {
        Box::new(PartialRun {
            error,
            trajectory: {
                traj.final_state = None;
                traj
            },
        })
    };
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(fail(
            Error::invalid("horizon", "must be finite and >= 0"),
            traj,
        ));
    }
    if let Err(e) = s0.check_finite(0.0) {
        return Err(fail(e, traj));
    }
    let sample_times: Vec<f64> = match sample_dt {
        Some(dt) if dt > 0.0 => {
            let n = (horizon / dt + 1e-9).floor() as usize;
            (0..=n).map(|k| k as f64 * dt).collect()
        }
        Some(dt) => {
            return Err(fail(
                Error::invalid("sample_dt", format!("must be > 0, got {dt}")),
                traj,
            ))
        }
        None => Vec::new(),
    };

    let mut next_sample = 0usize;
    let mut state = *s0;
    let mut t = 0.0;
    let mut buf = [0.0; STATE_DIM];

    let kicks = sched
        .kicks()
        .filter(|&(tk, _)| (0.0..=horizon).contains(&tk));
    for (tk, amplitude) in kicks
        .map(|(a, b)| (Some(a), b))
        .chain(std::iter::once((None, 0.0)))
    {
        let target = tk.unwrap_or(horizon);
        let times = &mut traj.times;
        let states = &mut traj.states;
        let nonneg = &mut traj.nonnegative;
        let relaxed = integrate_ultradian_with(p, &state, t, target, cfg, drive, &mut |step| {
            while next_sample < sample_times.len() && sample_times[next_sample] < step.t1 {
                step.interpolate(sample_times[next_sample], &mut buf);
                times.push(sample_times[next_sample]);
                states.push(UltradianState::from_array(buf));
                next_sample += 1;
            }
            if step.y1.iter().any(|&v| v < 0.0) {
                *nonneg = false;
            }
        });
        state = match relaxed {
            Ok(s) => s,
            Err(e) => return Err(fail(e, traj)),
        };
        t = target;
        if let Some(tk) = tk {
            let post = apply_kick(&state, amplitude);
            let event = KickEvent { t: tk, amplitude };
            observer(&event, &state, &post);
            traj.events.push(event);
            state = post;
        }
    }
    while next_sample < sample_times.len() {
        traj.times.push(sample_times[next_sample]);
        traj.states.push(state);
        next_sample += 1;
    }
    traj.final_time = t;
    traj.final_state = Some(state);
    Ok(traj)
}

/// Iterates of the time-T map: the state just before kicks
/// `burn_in, …, burn_in + keep − 1` of a periodic schedule.
pub fn time_t_map_samples(
    p: &UltradianParams,
    sched: &KickSchedule,
    s0: &UltradianState,
    burn_in: usize,
    keep: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<UltradianState>> {
    let periodic = matches!(sched.descriptor(), ScheduleDescriptor::Periodic { .. })
        || sched
            .gaps()
            .windows(2)
            .all(|w| (w[1] - w[0]).abs() <= 1e-9 * w[0].abs());
    if !periodic {
        return Err(Error::invalid(
            "schedule",
            "time-T map sampling needs a periodic schedule",
        ));
    }
    if burn_in + keep > sched.len() {
        return Err(Error::invalid(
            "schedule",
            format!(
                "{} kicks cannot cover burn_in {burn_in} + keep {keep}",
                sched.len()
            ),
        ));
    }
    let drive = DriveSignal::basal(p.i_0);
    let mut out = Vec::with_capacity(keep);
    let mut state = *s0;
    let mut t = 0.0;
    for (n, (tk, a)) in sched.kicks().take(burn_in + keep).enumerate() {
        state = integrate_ultradian_with(p, &state, t, tk, cfg, &drive, &mut |_| {})?;
        t = tk;
        if n >= burn_in {
            out.push(state);
        }
        state = apply_kick(&state, a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::periodic_schedule;
    use crate::integrate::integrate;

    fn noop() -> impl FnMut(&KickEvent, &UltradianState, &UltradianState) {
        |_, _, _| {}
    }

    #[test]
    fn zero_amplitude_matches_plain_flow() {
        let p = UltradianParams::default();
        let cfg = IntegratorConfig::default();
        let drive = DriveSignal::basal(0.0);
        let sched = periodic_schedule(0.0, 50.0, 10).unwrap();
        let traj = run_kick_relaxation(
            &p,
            &sched,
            &drive,
            &UltradianState::REFERENCE,
            500.0,
            &cfg,
            None,
            &mut noop(),
        )
        .unwrap();
        let plain = integrate(&p, &UltradianState::REFERENCE, 0.0, 500.0, &cfg, &drive).unwrap();
        let end = traj.final_state.unwrap();
        assert!(
            end.distance(&plain) < 1e-5 * plain.g,
            "{end:?} vs {plain:?}"
        );
        assert_eq!(traj.events.len(), 10);
    }

    #[test]
    fn single_kick_with_zero_horizon_is_a_jump() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(10.0, 20.0, 1).unwrap();
        let s0 = UltradianState::REFERENCE;
        let traj = run_kick_relaxation(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &s0,
            0.0,
            &IntegratorConfig::default(),
            Some(1.0),
            &mut noop(),
        )
        .unwrap();
        assert_eq!(traj.final_state.unwrap(), apply_kick(&s0, 10.0));
        assert_eq!(traj.states, vec![apply_kick(&s0, 10.0)]);
    }

    #[test]
    fn observer_sees_ordered_pre_and_post_states() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(7.0, 30.0, 20).unwrap();
        let mut seen = Vec::new();
        let traj = run_kick_relaxation(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &UltradianState::REFERENCE,
            400.0,
            &IntegratorConfig::default(),
            Some(1.0),
            &mut |e, pre, post| seen.push((e.t, post.g - pre.g, post.ip == pre.ip)),
        )
        .unwrap();
        // kicks at 0, 30, ..., 390
        assert_eq!(seen.len(), 14);
        assert_eq!(traj.events.len(), 14);
        assert!(seen.windows(2).all(|w| w[1].0 > w[0].0));
        assert!(seen
            .iter()
            .all(|&(_, dg, same)| (dg - 7.0).abs() < 1e-9 && same));
        assert_eq!(traj.times.len(), 401);
        assert!(traj.nonnegative);
    }

    #[test]
    fn unstable_delay_starts_from_reference_with_burn_in() {
        let ic = default_initial_state(&UltradianParams::default().with_delay(12.0));
        assert!(!ic.from_equilibrium);
        assert_eq!(ic.burn_in_cycles, 50);
        let ic = default_initial_state(&UltradianParams::default().with_delay(2.0));
        assert!(ic.from_equilibrium);
        assert_eq!(ic.burn_in_cycles, 0);
    }

    #[test]
    fn time_t_map_collapses_at_stable_equilibrium() {
        let p = UltradianParams::default().with_delay(2.0);
        let ic = default_initial_state(&p);
        let sched = periodic_schedule(0.0, 100.0, 30).unwrap();
        let pts = time_t_map_samples(&p, &sched, &ic.state, 10, 20, &IntegratorConfig::default())
            .unwrap();
        assert_eq!(pts.len(), 20);
        assert!(pts.iter().all(|s| s.distance(&pts[0]) < 1e-4));
    }

    #[test]
    fn time_t_map_rejects_short_schedule() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(1.0, 10.0, 5).unwrap();
        assert!(time_t_map_samples(
            &p,
            &sched,
            &UltradianState::REFERENCE,
            3,
            3,
            &IntegratorConfig::default()
        )
        .is_err());
        let empty = time_t_map_samples(
            &p,
            &sched,
            &UltradianState::REFERENCE,
            5,
            0,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn trajectory_csv_header() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(1.0, 10.0, 2).unwrap();
        let traj = run_kick_relaxation(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &UltradianState::REFERENCE,
            2.0,
            &IntegratorConfig::default(),
            Some(1.0),
            &mut noop(),
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,Ip,Ii,G,h1,h2,h3\n0,"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        traj.write_events_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,amplitude\n0,1\n");
    }

    #[test]
    fn step_failure_returns_partial_run() {
        let p = UltradianParams::default();
        let cfg = IntegratorConfig {
            max_steps: 5,
            ..IntegratorConfig::default()
        };
        let sched = periodic_schedule(1.0, 100.0, 3).unwrap();
        let err = run_kick_relaxation(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &UltradianState::REFERENCE,
            300.0,
            &cfg,
            Some(1.0),
            &mut noop(),
        )
        .unwrap_err();
        assert!(matches!(err.error, Error::StepLimit { .. }));
        assert!(err.trajectory.final_state.is_none());
    }
}
