//! The Ultradian glucose-insulin model.
//!
//! Six state variables: plasma insulin `I_p`, interstitial insulin `I_i`,
//! glucose `G` and the three stages `h1, h2, h3` of the linear filter that
//! carries the insulin signal to hepatic glucose production. Glucose is
//! stored as a mass (mg) over the glucose space `V_g`; insulin in mU.
//!
//! Forcing is not part of this module: the vector field takes the smooth
//! glucose inflow rate as a plain number, and impulsive kicks are applied
//! by [`crate::forcing::apply_kick`].

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const STATE_DIM: usize = 6;

/// Component names in storage order, as used in CSV headers.
pub const COMPONENT_NAMES: [&str; STATE_DIM] = ["Ip", "Ii", "G", "h1", "h2", "h3"];

/// Sigmoid exponents beyond this magnitude return the asymptote.
const EXP_CLAMP: f64 = 500.0;

pub type Jacobian = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// A point in the 6-D Ultradian phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UltradianState {
    /// Plasma insulin (mU).
    pub ip: f64,
    /// Interstitial insulin (mU).
    pub ii: f64,
    /// Glucose (mg).
    pub g: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

impl UltradianState {
    pub const fn new(ip: f64, ii: f64, g: f64, h1: f64, h2: f64, h3: f64) -> Self {
        Self {
            ip,
            ii,
            g,
            h1,
            h2,
            h3,
        }
    }

    /// Reference starting point used when no stable equilibrium is available.
    pub const REFERENCE: Self = Self::new(100.0, 100.0, 10_000.0, 100.0, 100.0, 100.0);

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.ip, self.ii, self.g, self.h1, self.h2, self.h3]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self::new(y[0], y[1], y[2], y[3], y[4], y[5])
    }

    /// Rejects NaN or infinite components, naming the first offender.
    pub fn check_finite(&self, t: f64) -> Result<()> {
        for (v, name) in self.to_array().iter().zip(COMPONENT_NAMES) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    component: name.to_string(),
                    t,
                });
            }
        }
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_array().iter().all(|&v| v >= 0.0)
    }
}

/// Time derivatives of the six state components, in [`COMPONENT_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative(pub [f64; STATE_DIM]);

impl Derivative {
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Physiological constants of the Ultradian model.
///
/// Field names in serialized form match the conventional parameter names
/// (`V_p`, `t_d`, `C_1`, ...). Missing keys take the nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UltradianParams {
    /// Plasma volume (L).
    #[serde(rename = "V_p")]
    pub v_p: f64,
    /// Interstitial volume (L).
    #[serde(rename = "V_i")]
    pub v_i: f64,
    /// Glucose space (L).
    #[serde(rename = "V_g")]
    pub v_g: f64,
    /// Insulin exchange rate between plasma and remote compartments (L/min).
    #[serde(rename = "E")]
    pub e: f64,
    /// Plasma insulin degradation time constant (min).
    #[serde(rename = "t_p")]
    pub t_p: f64,
    /// Remote insulin degradation time constant (min).
    #[serde(rename = "t_i")]
    pub t_i: f64,
    /// Delay between plasma insulin and glucose production (min).
    #[serde(rename = "t_d")]
    pub t_d: f64,
    #[serde(rename = "R_m")]
    pub r_m: f64,
    #[serde(rename = "a_1")]
    pub a_1: f64,
    #[serde(rename = "C_1")]
    pub c_1: f64,
    #[serde(rename = "C_2")]
    pub c_2: f64,
    #[serde(rename = "C_3")]
    pub c_3: f64,
    #[serde(rename = "C_4")]
    pub c_4: f64,
    #[serde(rename = "C_5")]
    pub c_5: f64,
    #[serde(rename = "U_b")]
    pub u_b: f64,
    #[serde(rename = "U_0")]
    pub u_0: f64,
    #[serde(rename = "U_m")]
    pub u_m: f64,
    #[serde(rename = "R_g")]
    pub r_g: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Basal nutritional input (mg/min).
    #[serde(rename = "I_0")]
    pub i_0: f64,
}

impl Default for UltradianParams {
    fn default() -> Self {
        Self {
            v_p: 3.0,
            v_i: 11.0,
            v_g: 10.0,
            e: 0.2,
            t_p: 6.0,
            t_i: 100.0,
            t_d: 12.0,
            r_m: 209.0,
            a_1: 6.6,
            c_1: 300.0,
            c_2: 144.0,
            c_3: 100.0,
            c_4: 80.0,
            c_5: 26.0,
            u_b: 72.0,
            u_0: 4.0,
            u_m: 94.0,
            r_g: 180.0,
            alpha: 7.5,
            beta: 1.772,
            i_0: 0.0,
        }
    }
}

impl UltradianParams {
    pub fn with_delay(mut self, t_d: f64) -> Self {
        self.t_d = t_d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("V_p", self.v_p),
            ("V_i", self.v_i),
            ("V_g", self.v_g),
            ("E", self.e),
            ("t_p", self.t_p),
            ("t_i", self.t_i),
            ("t_d", self.t_d),
            ("R_m", self.r_m),
            ("C_1", self.c_1),
            ("C_2", self.c_2),
            ("C_3", self.c_3),
            ("C_4", self.c_4),
            ("C_5", self.c_5),
            ("U_b", self.u_b),
            ("U_0", self.u_0),
            ("U_m", self.u_m),
            ("R_g", self.r_g),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("a_1", self.a_1),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if !(self.i_0.is_finite() && self.i_0 >= 0.0) {
            return Err(Error::invalid(
                "I_0",
                format!("must be >= 0, got {}", self.i_0),
            ));
        }
        if !self.kappa().is_finite() {
            return Err(Error::invalid(
                "kappa",
                "1/C_4 (1/V_i - 1/(E t_i)) is not finite",
            ));
        }
        Ok(())
    }

    /// `κ = (1/C_4)(1/V_i − 1/(E t_i))`.
    pub fn kappa(&self) -> f64 {
        (1.0 / self.c_4) * (1.0 / self.v_i - 1.0 / (self.e * self.t_i))
    }
}

/// Insulin production rate, a sigmoid in `G` saturating at `R_m`.
pub fn f1(g: f64, p: &UltradianParams) -> f64 {
    let x = -g / (p.v_g * p.c_1) + p.a_1;
    if x > EXP_CLAMP {
        0.0
    } else if x < -EXP_CLAMP {
        p.r_m
    } else {
        p.r_m / (1.0 + x.exp())
    }
}

/// Insulin-independent glucose utilisation.
pub fn f2(g: f64, p: &UltradianParams) -> f64 {
    p.u_b * (1.0 - (-g / (p.c_2 * p.v_g)).exp())
}

/// Insulin-dependent glucose utilisation per unit glucose (1/min).
///
/// At `I_i <= 0` the `(κ I_i)^(−β)` term diverges and the analytic limit
/// `U_0 / (C_3 V_g)` is returned.
pub fn f3(ii: f64, p: &UltradianParams) -> f64 {
    let scale = 1.0 / (p.c_3 * p.v_g);
    if ii <= 0.0 {
        return scale * p.u_0;
    }
    let r = (p.kappa() * ii).powf(-p.beta);
    if !r.is_finite() {
        return scale * p.u_0;
    }
    scale * (p.u_0 + (p.u_m - p.u_0) / (1.0 + r))
}

/// Hepatic glucose production, decreasing in the delayed insulin signal `h3`.
pub fn f4(h3: f64, p: &UltradianParams) -> f64 {
    let x = p.alpha * (h3 / (p.c_5 * p.v_p) - 1.0);
    if x > EXP_CLAMP {
        0.0
    } else if x < -EXP_CLAMP {
        p.r_g
    } else {
        p.r_g / (1.0 + x.exp())
    }
}

/// Vector field on raw arrays; no finiteness checks. Used by the integrators.
#[inline]
pub fn rhs_into(y: &[f64], p: &UltradianParams, drive: f64, out: &mut [f64]) {
    let (ip, ii, g, h1, h2, h3) = (y[0], y[1], y[2], y[3], y[4], y[5]);
    let exchange = p.e * (ip / p.v_p - ii / p.v_i);
    out[0] = f1(g, p) - exchange - ip / p.t_p;
    out[1] = exchange - ii / p.t_i;
    out[2] = f4(h3, p) + drive - f2(g, p) - f3(ii, p) * g;
    out[3] = (ip - h1) / p.t_d;
    out[4] = (h1 - h2) / p.t_d;
    out[5] = (h2 - h3) / p.t_d;
}

/// Right-hand side of the Ultradian system with glucose inflow `drive` (mg/min).
pub fn ultradian_rhs(s: &UltradianState, p: &UltradianParams, drive: f64) -> Result<Derivative> {
    s.check_finite(f64::NAN)?;
    if !drive.is_finite() {
        return Err(Error::NonFinite {
            component: "drive".into(),
            t: f64::NAN,
        });
    }
    let mut out = [0.0; STATE_DIM];
    rhs_into(&s.to_array(), p, drive, &mut out);
    Ok(Derivative(out))
}

/// Central finite-difference Jacobian of the vector field.
pub fn jacobian(s: &UltradianState, p: &UltradianParams, drive: f64) -> Jacobian {
    let y = s.to_array();
    let mut jac = Jacobian::zeros();
    let mut fp = [0.0; STATE_DIM];
    let mut fm = [0.0; STATE_DIM];
    for j in 0..STATE_DIM {
        let h = 1e-6 * (1.0 + y[j].abs());
        let mut yp = y;
        let mut ym = y;
        yp[j] += h;
        ym[j] -= h;
        rhs_into(&yp, p, drive, &mut fp);
        rhs_into(&ym, p, drive, &mut fm);
        for i in 0..STATE_DIM {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Eigenvalue of the Jacobian with the largest real part.
pub fn leading_eigenvalue(jac: &Jacobian) -> nalgebra::Complex<f64> {
    jac.complex_eigenvalues().iter().copied().fold(
        nalgebra::Complex::new(f64::NEG_INFINITY, 0.0),
        |best, z| {
            if z.re > best.re || (z.re == best.re && z.im > best.im) {
                z
            } else {
                best
            }
        },
    )
}

/// Damped Newton iteration for a zero of the vector field.
///
/// Converges when the max-norm of the right-hand side drops below `1e-10`.
pub fn find_equilibrium(
    p: &UltradianParams,
    drive: f64,
    guess: UltradianState,
) -> Result<UltradianState> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 100;
    let residual = |y: &SVector<f64, STATE_DIM>| {
        let mut out = [0.0; STATE_DIM];
        rhs_into(y.as_slice(), p, drive, &mut out);
        SVector::<f64, STATE_DIM>::from(out)
    };
    let mut y = SVector::<f64, STATE_DIM>::from(guess.to_array());
    let mut r = residual(&y);
    for _ in 0..MAX_ITER {
        if r.amax() < TOL {
            return Ok(UltradianState::from_slice(y.as_slice()));
        }
        let jac = jacobian(&UltradianState::from_slice(y.as_slice()), p, drive);
        let step = jac
            .lu()
            .solve(&(-r))
            .ok_or(Error::Singular("equilibrium Newton step"))?;
        let mut damping = 1.0;
        loop {
            let trial = y + step * damping;
            let rt = residual(&trial);
            if rt.norm() < r.norm() || damping < 1e-6 {
                y = trial;
                r = rt;
                break;
            }
            damping *= 0.5;
        }
    }
    if r.amax() < TOL {
        return Ok(UltradianState::from_slice(y.as_slice()));
    }
    Err(Error::NoConvergence {
        what: "equilibrium Newton iteration",
        iterations: MAX_ITER,
        residual: r.amax(),
    })
}

/// The equilibrium reached by Newton from [`UltradianState::REFERENCE`],
/// together with whether it is linearly stable.
pub fn reference_equilibrium(p: &UltradianParams, drive: f64) -> Result<(UltradianState, bool)> {
    let eq = find_equilibrium(p, drive, UltradianState::REFERENCE)?;
    let stable = leading_eigenvalue(&jacobian(&eq, p, drive)).re < 0.0;
    Ok((eq, stable))
}
