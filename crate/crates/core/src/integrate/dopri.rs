//! Dormand–Prince 5(4) with FSAL and Hairer's PI step-size controller.

use super::{check_state, error_norm, IntegratorConfig, OdeSystem, SolveStats, StepView};
use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th-order weights minus embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2; // largest shrink is 1/FAC_MAX_SHRINK
const FAC_MAX_SHRINK: f64 = 10.0;

pub(super) fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    on_step: &mut dyn FnMut(&StepView<'_>),
) -> Result<SolveStats> {
    let n = sys.dim();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut stats = SolveStats::default();

    let mut t = t0;
    let mut h = cfg.initial_step.min(cfg.max_step).min(t1 - t0);
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;

    sys.rhs(t, y, &mut k[0]);
    stats.rhs_evals += 1;

    while t < t1 {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::StepLimit {
                limit: cfg.max_steps,
                t,
                state: y.to_vec(),
            });
        }
        // land exactly on t1
        let mut t_next = t + h;
        if t_next >= t1 || t1 - t_next <= 1e-12 * t1.abs().max(1.0) {
            t_next = t1;
            h = t1 - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow {
                h,
                t,
                state: y.to_vec(),
            });
        }

        let (k1, rest) = k.split_first_mut().unwrap();
        let (k2, rest) = rest.split_first_mut().unwrap();
        let (k3, rest) = rest.split_first_mut().unwrap();
        let (k4, rest) = rest.split_first_mut().unwrap();
        let (k5, rest) = rest.split_first_mut().unwrap();
        let (k6, rest) = rest.split_first_mut().unwrap();
        let k7 = &mut rest[0];

        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, &tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, &tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, &tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, &tmp, k5);
        for i in 0..n {
            tmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(t + h, &tmp, k6);
        for i in 0..n {
            y_new[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t_next, &y_new, k7);
        stats.rhs_evals += 6;

        for i in 0..n {
            err[i] =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let en = error_norm(&err, y, &y_new, cfg);
        if !en.is_finite() {
            // trial step blew up; retreat hard
            stats.rejected += 1;
            h /= FAC_MAX_SHRINK;
            last_rejected = true;
            continue;
        }

        let fac11 = en.powf(EXPO1);
        if en <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(FAC_MIN, FAC_MAX_SHRINK);
            let mut h_new = h / fac;
            fac_old = en.max(1e-4);
            check_state(&y_new, t_next)?;
            on_step(&StepView {
                t0: t,
                t1: t_next,
                y0: y,
                y1: &y_new,
                f0: k1,
                f1: k7,
            });
            y.copy_from_slice(&y_new);
            std::mem::swap(k1, k7);
            t = t_next;
            stats.accepted += 1;
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new.min(cfg.max_step);
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(FAC_MAX_SHRINK);
            last_rejected = true;
        }
    }
    Ok(stats)
}
