//! Linearly implicit Rosenbrock 2(3) pair of Shampine and Reichelt.
//!
//! The Jacobian and the time derivative of the field are formed by forward
//! differences at the start of every step.

use nalgebra::{DMatrix, DVector};

use super::{check_state, error_norm, IntegratorConfig, OdeSystem, SolveStats, StepView};
use crate::{Error, Result};

pub(super) fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    on_step: &mut dyn FnMut(&StepView<'_>),
) -> Result<SolveStats> {
    let n = sys.dim();
    let d = 1.0 / (2.0 + std::f64::consts::SQRT_2);
    let e32 = 6.0 + std::f64::consts::SQRT_2;

    let mut stats = SolveStats::default();
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut ft = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut jac = DMatrix::<f64>::zeros(n, n);

    let mut t = t0;
    let mut h = cfg.initial_step.min(cfg.max_step).min(t1 - t0);
    sys.rhs(t, y, &mut f0);
    stats.rhs_evals += 1;

    while t < t1 {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::StepLimit {
                limit: cfg.max_steps,
                t,
                state: y.to_vec(),
            });
        }

        // Jacobian and df/dt at (t, y)
        for j in 0..n {
            let dj = 1e-7 * y[j].abs().max(1.0);
            tmp.copy_from_slice(y);
            tmp[j] += dj;
            sys.rhs(t, &tmp, &mut ft);
            for i in 0..n {
                jac[(i, j)] = (ft[i] - f0[i]) / dj;
            }
        }
        let dt = 1e-7 * t.abs().max(1.0);
        sys.rhs(t + dt, y, &mut ft);
        for i in 0..n {
            ft[i] = (ft[i] - f0[i]) / dt;
        }
        stats.rhs_evals += n + 1;

        let mut t_next;
        loop {
            t_next = t + h;
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
            let w = DMatrix::<f64>::identity(n, n) - &jac * (h * d);
            let lu = w.lu();
            let solve_w =
                |rhs: DVector<f64>| lu.solve(&rhs).ok_or(Error::Singular("Rosenbrock W matrix"));

            let k1 = solve_w(DVector::from_iterator(
                n,
                (0..n).map(|i| f0[i] + h * d * ft[i]),
            ))?;
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            sys.rhs(t + 0.5 * h, &tmp, &mut f1);
            let k2 = solve_w(DVector::from_iterator(n, (0..n).map(|i| f1[i] - k1[i])))? + &k1;
            for i in 0..n {
                y_new[i] = y[i] + h * k2[i];
            }
            sys.rhs(t_next, &y_new, &mut f2);
            let k3 = solve_w(DVector::from_iterator(
                n,
                (0..n)
                    .map(|i| f2[i] - e32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - f0[i]) + h * d * ft[i]),
            ))?;
            stats.rhs_evals += 2;
            for i in 0..n {
                err[i] = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
            }
            let en = error_norm(&err, y, &y_new, cfg);
            let fac = if en.is_finite() {
                (0.9 * en.max(1e-10).powf(-1.0 / 3.0)).clamp(0.2, 5.0)
            } else {
                0.1
            };
            if en <= 1.0 {
                check_state(&y_new, t_next)?;
                on_step(&StepView {
                    t0: t,
                    t1: t_next,
                    y0: y,
                    y1: &y_new,
                    f0: &f0,
                    f1: &f2,
                });
                y.copy_from_slice(&y_new);
                std::mem::swap(&mut f0, &mut f2);
                t = t_next;
                stats.accepted += 1;
                h = (h * fac).min(cfg.max_step);
                break;
            }
            stats.rejected += 1;
            h *= fac.min(1.0);
            if stats.accepted + stats.rejected >= cfg.max_steps {
                return Err(Error::StepLimit {
                    limit: cfg.max_steps,
                    t,
                    state: y.to_vec(),
                });
            }
        }
    }
    Ok(stats)
}
