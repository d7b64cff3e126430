//! Adaptive integration of smooth flows and the hybrid kick-relaxation runner.
//!
//! Two steppers share one driver: an explicit Dormand–Prince 4(5) pair with
//! PI step control (default) and a linearly implicit Rosenbrock 2(3) method
//! for stiff parameter regimes. Both report every accepted step so callers
//! can sample the solution with cubic Hermite interpolation.
//!
//! Discontinuities of the drive signal and kick instants are known in
//! advance; integration is split there so no step straddles a jump.

mod dopri;
mod hybrid;
mod rosenbrock;

pub use hybrid::{
    default_initial_state, run_kick_relaxation, time_t_map_samples, InitialCondition, KickEvent,
    PartialRun, Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::forcing::DriveSignal;
use crate::model::{rhs_into, UltradianParams, UltradianState, STATE_DIM};
use crate::{Error, Result};

/// A system `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DormandPrince45,
    Rosenbrock23,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step after every (re)start (min).
    pub initial_step: f64,
    pub max_step: f64,
    /// Accepted plus rejected steps allowed per call.
    pub max_steps: usize,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            initial_step: 0.1,
            max_step: 10.0,
            max_steps: 5_000_000,
            method: Method::DormandPrince45,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::invalid("tolerances", "rtol and atol must be > 0"));
        }
        if !(self.max_step > 0.0 && self.initial_step > 0.0) {
            return Err(Error::invalid(
                "step sizes",
                "initial_step and max_step must be > 0",
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps", "must be >= 1"));
        }
        Ok(())
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// One accepted step, with the slopes at both ends.
pub struct StepView<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

impl StepView<'_> {
    /// Cubic Hermite interpolant on `[t0, t1]`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            out.copy_from_slice(self.y0);
            return;
        }
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        for i in 0..out.len() {
            out[i] =
                h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// Weighted RMS norm used for step acceptance.
pub(crate) fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = err.len() as f64;
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (sum / n).sqrt()
}

pub(crate) fn check_state(y: &[f64], t: f64) -> Result<()> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        let component = if y.len() == STATE_DIM {
            crate::model::COMPONENT_NAMES[i].to_string()
        } else {
            format!("y[{i}]")
        };
        return Err(Error::NonFinite { component, t });
    }
    Ok(())
}

/// Integrates `sys` from `t0` to `t1` in place, calling `on_step` after every
/// accepted step.
pub fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    on_step: &mut dyn FnMut(&StepView<'_>),
) -> Result<SolveStats> {
    if !(t1 >= t0) {
        return Err(Error::invalid(
            "time interval",
            format!("t1 = {t1} < t0 = {t0}"),
        ));
    }
    check_state(y, t0)?;
    if t1 == t0 {
        return Ok(SolveStats::default());
    }
    match cfg.method {
        Method::DormandPrince45 => dopri::solve(sys, y, t0, t1, cfg, on_step),
        Method::Rosenbrock23 => rosenbrock::solve(sys, y, t0, t1, cfg, on_step),
    }
}

/// The Ultradian vector field with a constant glucose inflow.
pub struct UltradianFlow<'a> {
    pub params: &'a UltradianParams,
    pub drive: f64,
}

impl OdeSystem for UltradianFlow<'_> {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    #[inline]
    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) {
        rhs_into(y, self.params, self.drive, dydt);
    }
}

/// Splits `[t0, t1]` at the drive discontinuities; each piece carries the
/// constant inflow level that holds on it.
pub(crate) fn drive_segments(drive: &DriveSignal, t0: f64, t1: f64) -> Vec<(f64, f64, f64)> {
    let mut edges = vec![t0];
    edges.extend(drive.breakpoints_in(t0, t1));
    edges.push(t1);
    edges
        .windows(2)
        .map(|w| (w[0], w[1], drive.level_at(w[0])))
        .collect()
}

/// Flows the Ultradian system from `t0` to `t1` under `drive`, restarting the
/// stepper at every drive discontinuity. `on_step` sees every accepted step.
pub fn integrate_ultradian_with(
    p: &UltradianParams,
    s0: &UltradianState,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    drive: &DriveSignal,
    on_step: &mut dyn FnMut(&StepView<'_>),
) -> Result<UltradianState> {
    let mut y = s0.to_array();
    for (a, b, level) in drive_segments(drive, t0, t1) {
        let flow = UltradianFlow {
            params: p,
            drive: level,
        };
        solve(&flow, &mut y, a, b, cfg, on_step)?;
    }
    Ok(UltradianState::from_array(y))
}

/// State at `t1` of the Ultradian flow started at `s0` at time `t0`.
pub fn integrate(
    p: &UltradianParams,
    s0: &UltradianState,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    drive: &DriveSignal,
) -> Result<UltradianState> {
    integrate_ultradian_with(p, s0, t0, t1, cfg, drive, &mut |_| {})
}

/// Like [`integrate`] but also returns the state at each of `sample_times`
/// (sorted, inside `[t0, t1]`).
pub fn integrate_sampled(
    p: &UltradianParams,
    s0: &UltradianState,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    drive: &DriveSignal,
    sample_times: &[f64],
) -> Result<(UltradianState, Vec<UltradianState>)> {
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next = 0;
    let mut buf = [0.0; STATE_DIM];
    while next < sample_times.len() && sample_times[next] <= t0 {
        samples.push(*s0);
        next += 1;
    }
    let end = integrate_ultradian_with(p, s0, t0, t1, cfg, drive, &mut |step| {
        while next < sample_times.len() && sample_times[next] <= step.t1 {
            step.interpolate(sample_times[next], &mut buf);
            samples.push(UltradianState::from_array(buf));
            next += 1;
        }
    })?;
    while samples.len() < sample_times.len() {
        samples.push(end);
    }
    Ok((end, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], d: &mut [f64]) {
            d[0] = -self.0 * y[0];
        }
    }

    struct Rotation;
    impl OdeSystem for Rotation {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], d: &mut [f64]) {
            d[0] = -y[1];
            d[1] = y[0];
        }
    }

    fn methods() -> [IntegratorConfig; 2] {
        let base = IntegratorConfig::default();
        [
            base.clone(),
            IntegratorConfig {
                method: Method::Rosenbrock23,
                rtol: 1e-9,
                atol: 1e-12,
                ..base
            },
        ]
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        for cfg in methods() {
            let mut y = [1.0];
            solve(&Decay(0.1), &mut y, 0.0, 10.0, &cfg, &mut |_| {}).unwrap();
            let exact = (-1.0f64).exp();
            // second-order method accumulates more global error per unit rtol
            let factor = match cfg.method {
                Method::DormandPrince45 => 50.0,
                Method::Rosenbrock23 => 500.0,
            };
            assert!(
                (y[0] - exact).abs() < factor * cfg.rtol,
                "{:?}: {}",
                cfg.method,
                y[0]
            );
        }
    }

    #[test]
    fn empty_interval_is_identity() {
        let p = UltradianParams::default();
        let s = UltradianState::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let out = integrate(
            &p,
            &s,
            7.0,
            7.0,
            &IntegratorConfig::default(),
            &DriveSignal::basal(0.0),
        )
        .unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn stable_equilibrium_reached_at_short_delay() {
        let p = UltradianParams::default().with_delay(2.0);
        let cfg = IntegratorConfig::default();
        let end = integrate(
            &p,
            &UltradianState::REFERENCE,
            0.0,
            5000.0,
            &cfg,
            &DriveSignal::basal(0.0),
        )
        .unwrap();
        let d = crate::model::ultradian_rhs(&end, &p, 0.0).unwrap();
        assert!(d.max_abs() < 1e-9 * end.g, "{d:?}");
    }

    #[test]
    fn rosenbrock_agrees_with_dopri_on_ultradian() {
        let p = UltradianParams::default();
        let [dp, ros] = methods();
        let drive = DriveSignal::basal(0.0);
        let a = integrate(&p, &UltradianState::REFERENCE, 0.0, 500.0, &dp, &drive).unwrap();
        let b = integrate(&p, &UltradianState::REFERENCE, 0.0, 500.0, &ros, &drive).unwrap();
        assert!(a.distance(&b) < 1e-3 * a.g.abs(), "{a:?} vs {b:?}");
    }

    #[test]
    fn halving_tolerances_converges() {
        let p = UltradianParams::default();
        let drive = DriveSignal::basal(0.0);
        let coarse = IntegratorConfig::default().with_tolerances(1e-7, 1e-9);
        let fine = IntegratorConfig::default().with_tolerances(5e-8, 5e-10);
        let a = integrate(&p, &UltradianState::REFERENCE, 0.0, 1000.0, &coarse, &drive).unwrap();
        let b = integrate(&p, &UltradianState::REFERENCE, 0.0, 1000.0, &fine, &drive).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array()) {
            assert!(
                (x - y).abs() <= coarse.atol + coarse.rtol * y.abs(),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        struct Reversed<'a>(UltradianFlow<'a>);
        impl OdeSystem for Reversed<'_> {
            fn dim(&self) -> usize {
                STATE_DIM
            }
            fn rhs(&self, t: f64, y: &[f64], d: &mut [f64]) {
                self.0.rhs(t, y, d);
                d.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let p = UltradianParams::default();
        let cfg = IntegratorConfig::default();
        let start = UltradianState::REFERENCE.to_array();
        let mut y = start;
        let fwd = UltradianFlow {
            params: &p,
            drive: 0.0,
        };
        solve(&fwd, &mut y, 0.0, 20.0, &cfg, &mut |_| {}).unwrap();
        solve(
            &Reversed(UltradianFlow {
                params: &p,
                drive: 0.0,
            }),
            &mut y,
            0.0,
            20.0,
            &cfg,
            &mut |_| {},
        )
        .unwrap();
        for (a, b) in y.iter().zip(start) {
            assert!(
                (a - b).abs() <= 100.0 * (cfg.atol + cfg.rtol * b.abs()),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn hermite_sampling_is_accurate() {
        let cfg = IntegratorConfig::default().with_tolerances(1e-10, 1e-12);
        let mut y = [1.0, 0.0];
        let mut worst: f64 = 0.0;
        let mut buf = [0.0; 2];
        solve(&Rotation, &mut y, 0.0, 6.0, &cfg, &mut |s| {
            let tm = 0.5 * (s.t0 + s.t1);
            s.interpolate(tm, &mut buf);
            worst = worst
                .max((buf[0] - tm.cos()).abs())
                .max((buf[1] - tm.sin()).abs());
        })
        .unwrap();
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn step_limit_aborts_with_last_state() {
        let cfg = IntegratorConfig {
            max_steps: 3,
            max_step: 0.01,
            ..IntegratorConfig::default()
        };
        let mut y = [1.0];
        match solve(&Decay(1.0), &mut y, 0.0, 1.0, &cfg, &mut |_| {}) {
            Err(Error::StepLimit { limit, state, t }) => {
                assert_eq!(limit, 3);
                assert_eq!(state.len(), 1);
                assert!(t > 0.0 && t < 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_initial_state_rejected() {
        let mut y = [f64::NAN];
        assert!(matches!(
            solve(
                &Decay(1.0),
                &mut y,
                0.0,
                1.0,
                &IntegratorConfig::default(),
                &mut |_| {}
            ),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn steps_never_straddle_drive_edges() {
        let p = UltradianParams::default();
        let drive = crate::forcing::meal_square_driver(100.0, 1).unwrap();
        let edges = drive.breakpoints();
        let cfg = IntegratorConfig::default();
        let mut y = UltradianState::REFERENCE;
        let mut t = 0.0;
        for (a, b, _) in drive_segments(&drive, 0.0, 1440.0) {
            assert_eq!(a, t);
            y = integrate_ultradian_with(&p, &y, a, b, &cfg, &drive, &mut |s| {
                assert!(!edges.iter().any(|&e| e > s.t0 && e < s.t1));
            })
            .unwrap();
            t = b;
        }
        assert_eq!(t, 1440.0);
    }
}
