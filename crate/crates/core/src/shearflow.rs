//! Kicked delay linear shear flow on the cylinder `S¹ × ℝ`:
//!
//! ```text
//! ż(t) = −λ z(t − τ),   θ̇ = 1 + σ z,   (θ, z) ↦ (θ, z + AΦ(θ)) at t = nT
//! ```
//!
//! integrated by the method of steps with classical RK4. The circle has
//! period 1. Past states are kept as nodes split into segments at kicks, so
//! a delayed read at a kick instant sees the correct side of the jump.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forcing::ScheduleDescriptor;
use crate::lyapunov::{batch_means_stderr, LyapunovConfig, LyapunovEstimate};
use crate::{Error, Result};

/// Kick profile `Φ` on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KickProfile {
    Constant {
        value: f64,
    },
    /// `sin(2πθ)`.
    Sine,
}

impl KickProfile {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Sine => (TAU * theta).sin(),
        }
    }
}

impl Default for KickProfile {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShearParams {
    pub lambda: f64,
    pub sigma: f64,
    pub tau: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub profile: KickProfile,
}

impl Default for ShearParams {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            sigma: 3.0,
            tau: 0.0,
            amplitude: 0.1,
            period: 10.0,
            profile: KickProfile::default(),
        }
    }
}

impl ShearParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and > 0"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be finite and >= 0"));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid("T", "must be finite and > 0"));
        }
        if !self.sigma.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::invalid("sigma/A", "must be finite"));
        }
        Ok(())
    }
}

/// `Aσ/λ`: kick amplitude times shear over contraction.
pub fn hyperbolicity_factor(amplitude: f64, sigma: f64, lambda: f64) -> f64 {
    amplitude * sigma / lambda
}

/// Discretization of the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdeConfig {
    /// Mesh intervals per delay, `m`.
    pub steps_per_delay: usize,
    /// Upper bound on the RK4 step.
    pub max_step: f64,
    /// Lower bound on the RK4 step; below it the delayed term is
    /// extrapolated instead of interpolated.
    pub min_step: f64,
}

impl Default for DdeConfig {
    fn default() -> Self {
        Self {
            steps_per_delay: 64,
            max_step: 0.05,
            min_step: 1e-3,
        }
    }
}

impl DdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_delay < 3 {
            return Err(Error::invalid("steps_per_delay", "must be >= 3"));
        }
        if !(self.min_step > 0.0 && self.max_step >= self.min_step) {
            return Err(Error::invalid("max_step", "need 0 < min_step <= max_step"));
        }
        Ok(())
    }

    fn step(&self, tau: f64) -> f64 {
        let h = if tau > 0.0 {
            tau / self.steps_per_delay as f64
        } else {
            self.max_step
        };
        h.clamp(self.min_step, self.max_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    t: f64,
    z: f64,
    /// Lift of θ; only its fractional part is meaningful.
    theta: f64,
}

/// State of the delay system: the present point and the past over at least
/// `[t − τ, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderHistory {
    tau: f64,
    m: usize,
    /// Consecutive segments; a new one starts at every kick.
    segments: Vec<Vec<Node>>,
    /// Segment starts with their smoothness order: 0 for a jump in z or the
    /// join of history and solution, k for a jump in the k-th derivative.
    /// The next order appears one delay later.
    jumps: Vec<(f64, u8)>,
    /// Step grid origin (last kick or start).
    anchor: f64,
}

impl CylinderHistory {
    /// Samples `f(t) = (θ, z)` on the uniform `m + 1` node mesh over
    /// `[t0 − τ, t0]`.
    pub fn from_fn(tau: f64, m: usize, t0: f64, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", "must be finite and >= 0"));
        }
        if m < 3 {
            return Err(Error::invalid("steps_per_delay", "must be >= 3"));
        }
        let mut segments = Vec::with_capacity(2);
        if tau > 0.0 {
            segments.push(
                (0..=m)
                    .map(|i| {
                        let t = if i == m {
                            t0
                        } else {
                            t0 - tau + i as f64 * tau / m as f64
                        };
                        let (theta, z) = f(t);
                        Node { t, z, theta }
                    })
                    .collect(),
            );
        }
        let (theta, z) = f(t0);
        segments.push(vec![Node { t: t0, z, theta }]);
        let mut h = Self {
            tau,
            m,
            segments,
            jumps: vec![(t0, 0)],
            anchor: t0,
        };
        h.rebase_theta();
        h.check_finite()?;
        Ok(h)
    }

    /// `h(t) = (0, t²)` on `[−τ, 0]`.
    pub fn quadratic(tau: f64, m: usize) -> Result<Self> {
        Self::from_fn(tau, m, 0.0, |t| (0.0, t * t))
    }

    pub fn constant(tau: f64, m: usize, theta: f64, z: f64) -> Result<Self> {
        Self::from_fn(tau, m, 0.0, |_| (theta, z))
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn time(&self) -> f64 {
        self.last().t
    }

    pub fn z(&self) -> f64 {
        self.last().z
    }

    /// Present circle coordinate in `[0, 1)`.
    pub fn theta(&self) -> f64 {
        self.last().theta.rem_euclid(1.0)
    }

    fn last(&self) -> &Node {
        self.segments
            .last()
            .and_then(|s| s.last())
            .expect("history is never empty")
    }

    fn last_mut(&mut self) -> &mut Node {
        self.segments
            .last_mut()
            .and_then(|s| s.last_mut())
            .expect("history is never empty")
    }

    fn check_finite(&self) -> Result<()> {
        let n = self.last();
        if !n.z.is_finite() {
            return Err(Error::NonFinite {
                component: "z".into(),
                t: n.t,
            });
        }
        if !n.theta.is_finite() {
            return Err(Error::NonFinite {
                component: "theta".into(),
                t: n.t,
            });
        }
        Ok(())
    }

    /// Shifts every stored θ by the same integer so the present lift lies
    /// in `[0, 1)`; keeps lifts small so offsets of size `d0` stay resolved.
    fn rebase_theta(&mut self) {
        let k = self.last().theta.floor();
        if k != 0.0 {
            for n in self.segments.iter_mut().flatten() {
                n.theta -= k;
            }
        }
    }

    /// Latest segment starting at or before `s`.
    fn segment_at(&self, s: f64) -> &[Node] {
        let idx = self
            .segments
            .iter()
            .rposition(|seg| seg[0].t <= s)
            .unwrap_or(0);
        &self.segments[idx]
    }

    /// Cubic Lagrange value of (z, θ-lift) at `s` from the nodes of `seg`;
    /// beyond the last node this extrapolates from the last four.
    fn eval_in(seg: &[Node], s: f64) -> (f64, f64) {
        let n = seg.len();
        if n == 1 {
            return (seg[0].z, seg[0].theta);
        }
        let i = seg.partition_point(|node| node.t <= s);
        if i > 0 && seg[i - 1].t == s {
            return (seg[i - 1].z, seg[i - 1].theta);
        }
        let k = n.min(4);
        let start = i.saturating_sub(2).min(n - k);
        let nodes = &seg[start..start + k];
        let (mut z, mut th) = (0.0, 0.0);
        for (j, a) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (l, b) in nodes.iter().enumerate() {
                if l != j {
                    w *= (s - b.t) / (a.t - b.t);
                }
            }
            z += w * a.z;
            th += w * a.theta;
        }
        (z, th)
    }

    /// z at time `s` (right-continuous at kicks).
    pub fn z_at(&self, s: f64) -> f64 {
        Self::eval_in(self.segment_at(s), s).0
    }

    /// The `m + 1` uniform mesh over `[t − τ, t]` as `(t, θ mod 1, z)`.
    pub fn mesh(&self) -> Vec<(f64, f64, f64)> {
        let mut mesh = self.mesh_lift();
        for node in &mut mesh {
            node.1 = node.1.rem_euclid(1.0);
        }
        mesh
    }

    fn mesh_lift(&self) -> Vec<(f64, f64, f64)> {
        let t = self.time();
        if self.tau == 0.0 {
            return vec![(t, self.last().theta, self.z())];
        }
        (0..=self.m)
            .map(|i| {
                let s = if i == self.m {
                    t
                } else {
                    t - self.tau + i as f64 * self.tau / self.m as f64
                };
                let (z, th) = if i == self.m {
                    (self.z(), self.last().theta)
                } else {
                    Self::eval_in(self.segment_at(s), s)
                };
                (s, th, z)
            })
            .collect()
    }

    /// Drops nodes no delayed read or mesh evaluation can reach.
    fn prune(&mut self) {
        let cutoff = self.time() - self.tau;
        while self.segments.len() > 1 && self.segments[0].last().is_some_and(|n| n.t < cutoff) {
            self.segments.remove(0);
        }
        let first = &mut self.segments[0];
        let keep_from = first.partition_point(|n| n.t < cutoff).saturating_sub(3);
        if keep_from > 0 {
            first.drain(..keep_from);
        }
        self.jumps.retain(|&(j, _)| j + self.tau >= cutoff);
    }

    fn push(&mut self, node: Node) {
        self.segments
            .last_mut()
            .expect("history is never empty")
            .push(node);
    }
}

/// RMS over the uniform mesh of the pointwise distance, circle metric in θ.
pub fn history_distance(a: &CylinderHistory, b: &CylinderHistory) -> f64 {
    let (ma, mb) = (a.mesh(), b.mesh());
    let sum: f64 = ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| {
            let dth = circle_diff(x.1, y.1);
            let dz = x.2 - y.2;
            dth * dth + dz * dz
        })
        .sum();
    (sum / ma.len() as f64).sqrt()
}

/// Signed representative of `a − b` on the unit circle, in `[−½, ½)`.
fn circle_diff(a: f64, b: f64) -> f64 {
    (a - b + 0.5).rem_euclid(1.0) - 0.5
}

/// Flows the unforced system from the present time to `t1`.
pub fn dde_integrate(
    p: &ShearParams,
    h: &mut CylinderHistory,
    t1: f64,
    cfg: &DdeConfig,
) -> Result<()> {
    flow(p, h, t1, cfg, 1.0)
}

/// Method of steps for `z' = −λz(t − τ)`, `θ' = drift + σz`. Drift 0 gives
/// the equation of differences between two solutions.
fn flow(
    p: &ShearParams,
    h: &mut CylinderHistory,
    t1: f64,
    cfg: &DdeConfig,
    drift: f64,
) -> Result<()> {
    /// Highest derivative order whose discontinuity still splits a segment.
    const MAX_ORDER: u8 = 2;
    let t0 = h.time();
    if !(t1 >= t0) {
        return Err(Error::invalid(
            "t1",
            format!("{t1} precedes the present time {t0}"),
        ));
    }
    let step = cfg.step(h.tau);
    let tau = h.tau;
    // with steps longer than the delay the delayed term is extrapolated and
    // mesh alignment is moot
    let aligned = tau >= step;
    while h.time() < t1 {
        let a = h.time();
        let j = ((a - h.anchor) / step + 1e-9).floor() + 1.0;
        let mut b = (h.anchor + j * step).min(t1);
        let mut order = None;
        if aligned {
            for &(jt, _) in &h.jumps {
                let bp = jt + tau;
                if bp > a && bp < b {
                    b = bp;
                }
            }
            order = h
                .jumps
                .iter()
                .filter(|&&(jt, _)| jt + tau == b)
                .map(|&(_, k)| k + 1)
                .max();
        }
        if b - a <= 1e-12 * a.abs().max(1.0) {
            // grid node within rounding of the present
            h.last_mut().t = b;
        } else {
            let dt = b - a;
            let now = *h.last();
            let (z1, th1) = if tau == 0.0 {
                rk4_ode(p, drift, now.z, now.theta, dt)
            } else {
                // steps stop where segments start, so the delayed window lies in one segment
                let seg = h.segment_at(0.5 * (a + b) - tau);
                let d0 = CylinderHistory::eval_in(seg, a - tau).0;
                let dm = CylinderHistory::eval_in(seg, a + 0.5 * dt - tau).0;
                let d1 = CylinderHistory::eval_in(seg, b - tau).0;
                rk4_delay(p, drift, now.z, now.theta, dt, [d0, dm, d1])
            };
            h.push(Node {
                t: b,
                z: z1,
                theta: th1,
            });
            h.check_finite()?;
        }
        if let Some(k) = order.filter(|&k| k <= MAX_ORDER) {
            let node = *h.last();
            h.segments.push(vec![node]);
            h.jumps.push((b, k));
        }
        if h.segments.last().is_some_and(|s| s.len() % 256 == 0) {
            h.prune();
        }
    }
    h.prune();
    Ok(())
}

fn rk4_ode(p: &ShearParams, drift: f64, z: f64, th: f64, dt: f64) -> (f64, f64) {
    let f = |z: f64| (-p.lambda * z, drift + p.sigma * z);
    let k1 = f(z);
    let k2 = f(z + 0.5 * dt * k1.0);
    let k3 = f(z + 0.5 * dt * k2.0);
    let k4 = f(z + dt * k3.0);
    (
        z + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        th + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// RK4 with the delayed term `d = z(· − τ)` known at the step start,
/// midpoint and end.
fn rk4_delay(p: &ShearParams, drift: f64, z: f64, th: f64, dt: f64, d: [f64; 3]) -> (f64, f64) {
    let k1 = -p.lambda * d[0];
    let k2 = -p.lambda * d[1];
    let k4 = -p.lambda * d[2];
    let z2 = z + 0.5 * dt * k1;
    let z3 = z + 0.5 * dt * k2;
    let z4 = z + dt * k2;
    let w = |z: f64| drift + p.sigma * z;
    (
        z + dt / 6.0 * (k1 + 4.0 * k2 + k4),
        th + dt / 6.0 * (w(z) + 2.0 * w(z2) + 2.0 * w(z3) + w(z4)),
    )
}

/// Applies `(θ, z) ↦ (θ, z + AΦ(θ))` to the present point; the recorded
/// past is untouched.
pub fn dde_kick(h: &mut CylinderHistory, amplitude: f64, profile: &KickProfile) {
    let dz = amplitude * profile.eval(h.theta());
    h.rebase_theta();
    jump(h, dz);
}

/// Starts a new segment at the present time with z raised by `dz`.
fn jump(h: &mut CylinderHistory, dz: f64) {
    let now = *h.last();
    let now = Node {
        z: now.z + dz,
        ..now
    };
    h.segments.push(vec![now]);
    h.anchor = now.t;
    h.jumps.push((now.t, 0));
    h.prune();
}

/// Kicks at `nT` (n = 0, 1, …) starting from the present time and relaxes
/// for `cycles` periods; `observer` sees the history just before each kick
/// after the first.
pub fn dde_run(
    p: &ShearParams,
    h: &mut CylinderHistory,
    cycles: usize,
    cfg: &DdeConfig,
    observer: &mut dyn FnMut(usize, &CylinderHistory),
) -> Result<()> {
    p.validate()?;
    cfg.validate()?;
    let t0 = h.time();
    for n in 0..cycles {
        dde_kick(h, p.amplitude, &p.profile);
        dde_integrate(p, h, t0 + (n + 1) as f64 * p.period, cfg)?;
        observer(n, h);
    }
    Ok(())
}

/// RMS norm over the uniform mesh, no circle identification.
fn offset_norm(w: &CylinderHistory) -> f64 {
    let mesh = w.mesh_lift();
    let sum: f64 = mesh.iter().map(|&(_, th, z)| th * th + z * z).sum();
    (sum / mesh.len() as f64).sqrt()
}

fn scale(w: &mut CylinderHistory, factor: f64) {
    for n in w.segments.iter_mut().flatten() {
        n.z *= factor;
        n.theta *= factor;
    }
}

/// Maximal Lyapunov exponent per kick-relaxation cycle over history space.
///
/// The secondary history is `base + d0·w`, the base with every z node raised
/// by `d0` at the start. The offset `w` is flowed as a history of its own by
/// the difference quotient of the vector field, so the separation stays
/// resolved however large the base grows; each cycle is one kick followed by
/// relaxation over `T`.
pub fn dde_lyapunov(
    p: &ShearParams,
    h0: &CylinderHistory,
    cfg: &LyapunovConfig,
    dde: &DdeConfig,
) -> Result<LyapunovEstimate> {
    p.validate()?;
    cfg.validate()?;
    dde.validate()?;
    if (h0.tau - p.tau).abs() > 0.0 {
        return Err(Error::invalid(
            "history",
            "delay of the history differs from tau",
        ));
    }
    let mut base = h0.clone();
    let mut w = h0.clone();
    for n in w.segments.iter_mut().flatten() {
        n.z = 1.0;
        n.theta = 0.0;
    }
    let total = cfg.burn_in + cfg.cycles;
    let mut series = Vec::with_capacity(cfg.cycles);
    let t0 = base.time();
    for n in 0..total {
        let t1 = t0 + (n + 1) as f64 * p.period;
        let th = base.theta();
        let dz = (p
            .profile
            .eval((th + cfg.d0 * w.last().theta).rem_euclid(1.0))
            - p.profile.eval(th))
            / cfg.d0;
        dde_kick(&mut base, p.amplitude, &p.profile);
        jump(&mut w, p.amplitude * dz);
        dde_integrate(p, &mut base, t1, dde)?;
        flow(p, &mut w, t1, dde, 0.0)?;
        let growth = offset_norm(&w);
        if !growth.is_finite() {
            return Err(Error::NonFinite {
                component: "separation".into(),
                t: t1,
            });
        }
        if growth == 0.0 {
            return Err(Error::NoConvergence {
                what: "history separation collapsed to zero",
                iterations: n,
                residual: 0.0,
            });
        }
        if n >= cfg.burn_in {
            series.push(growth.ln());
        }
        scale(&mut w, 1.0 / growth);
    }
    Ok(LyapunovEstimate {
        lambda_max: series.iter().sum::<f64>() / series.len() as f64,
        stderr: batch_means_stderr(&series),
        series,
        flagged: Vec::new(),
        mean_cycle_length: p.period,
        config: cfg.clone(),
        schedule: ScheduleDescriptor::Periodic {
            amplitude: p.amplitude,
            period: p.period,
            count: total,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicRoot {
    pub gamma: Complex<f64>,
    pub residual: f64,
}

const ROOT_MAX_ITER: usize = 200;

fn newton_root(lambda: f64, tau: f64, guess: Complex<f64>) -> Result<CharacteristicRoot> {
    let mut g = guess;
    let f = |g: Complex<f64>| g + lambda * (-g * tau).exp();
    for _ in 0..ROOT_MAX_ITER {
        let e = lambda * (-g * tau).exp();
        let step = (g + e) / (1.0 - tau * e);
        g -= step;
        if step.norm() <= 1e-15 * g.norm().max(1e-300) {
            break;
        }
    }
    let residual = f(g).norm();
    if residual < 1e-12 && g.re.is_finite() {
        let gamma = if g.im < 0.0 { g.conj() } else { g };
        return Ok(CharacteristicRoot { gamma, residual });
    }
    Err(Error::RootNotConverged { last: g, residual })
}

/// Root of `γ + λe^(−γτ) = 0` with the largest real part (`Im γ ≥ 0`).
pub fn characteristic_root(lambda: f64, tau: f64) -> Result<CharacteristicRoot> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", "must be finite and > 0"));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be finite and >= 0"));
    }
    if tau == 0.0 {
        return Ok(CharacteristicRoot {
            gamma: Complex::new(-lambda, 0.0),
            residual: 0.0,
        });
    }
    let lt = lambda * tau;
    let primary = if lt <= (-1.0f64).exp() {
        Complex::new(-lambda, 0.0)
    } else {
        Complex::new(0.0, PI / (2.0 * tau))
    };
    // the rightmost root is the principal Lambert branch: |Im γ·τ| < π
    let principal = |r: &CharacteristicRoot| r.gamma.im * tau < PI;
    let mut last = None;
    for guess in [
        primary,
        Complex::new(-1.0 / tau, 0.5 / tau),
        Complex::new((lt.ln()) / tau, 1.5 / tau),
        Complex::new(-lambda, 0.0),
    ] {
        match newton_root(lambda, tau, guess) {
            Ok(r) if principal(&r) => return Ok(r),
            Ok(r) => {
                last = Some(Err(Error::RootNotConverged {
                    last: r.gamma,
                    residual: r.residual,
                }))
            }
            Err(e) => last = Some(Err(e)),
        }
    }
    last.expect("at least one guess")
}

/// Writes `lambda,tau,re_gamma,im_gamma,residual` for every pair.
pub fn write_root_table<W: Write>(w: W, pairs: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(["lambda", "tau", "re_gamma", "im_gamma", "residual"])?;
    for &(l, t) in pairs {
        let r = characteristic_root(l, t)?;
        out.write_record([l, t, r.gamma.re, r.gamma.im, r.residual].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub tau: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub lambda_max: f64,
}

/// `Λ_max` over the grid `taus × periods` from the quadratic history; cells
/// are computed in parallel and returned τ-major.
pub fn dde_heatmap(
    p: &ShearParams,
    taus: &[f64],
    periods: &[f64],
    cfg: &LyapunovConfig,
    dde: &DdeConfig,
) -> Vec<(HeatmapCell, Option<String>)> {
    let grid: Vec<(f64, f64)> = taus
        .iter()
        .flat_map(|&t| periods.iter().map(move |&period| (t, period)))
        .collect();
    grid.par_iter()
        .map(|&(tau, period)| {
            let q = ShearParams {
                tau,
                period,
                ..p.clone()
            };
            let res = CylinderHistory::quadratic(tau, dde.steps_per_delay)
                .and_then(|h| dde_lyapunov(&q, &h, cfg, dde));
            match res {
                Ok(e) => (
                    HeatmapCell {
                        tau,
                        period,
                        lambda_max: e.lambda_max,
                    },
                    None,
                ),
                Err(e) => (
                    HeatmapCell {
                        tau,
                        period,
                        lambda_max: f64::NAN,
                    },
                    Some(e.to_string()),
                ),
            }
        })
        .collect()
}

/// Writes `tau,T,lambda_max`.
pub fn write_heatmap_csv<W: Write>(w: W, cells: &[HeatmapCell]) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(["tau", "T", "lambda_max"])?;
    for c in cells {
        out.write_record([c.tau, c.period, c.lambda_max].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
