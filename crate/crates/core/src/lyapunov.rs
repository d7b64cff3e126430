//! Maximal Lyapunov exponent of the kicked flow by two-trajectory
//! renormalization, and exponent distributions over random forcing.
//!
//! The secondary orbit is carried as a scaled offset `w` from the base orbit,
//! `secondary = base + d0·w`, and both are integrated as one 12-dimensional
//! system so they share a step sequence. After each cycle `|w| = d1/d0`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forcing::{DriveSignal, KickSchedule, RngStream, ScheduleDescriptor};
use crate::integrate::{default_initial_state, drive_segments, solve, IntegratorConfig, OdeSystem};
use crate::model::{rhs_into, UltradianParams, UltradianState, STATE_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    /// Initial and renormalized separation (Euclidean, raw state units).
    pub d0: f64,
    /// Cycles averaged into the estimate.
    pub cycles: usize,
    /// Cycles discarded before averaging.
    pub burn_in: usize,
    /// Seeds the perturbation direction (independent of the forcing stream).
    pub seed: u64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            d0: 1e-8,
            cycles: 1000,
            burn_in: 100,
            seed: 0,
        }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::invalid("d0", "must be finite and > 0"));
        }
        if self.cycles == 0 {
            return Err(Error::invalid("cycles", "must be >= 1"));
        }
        Ok(())
    }

    /// Kicks a schedule must hold for [`max_lyapunov`] with parameters `p`.
    pub fn required_kicks(&self, p: &UltradianParams) -> usize {
        self.burn_in + self.cycles + default_initial_state(p).burn_in_cycles
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Mean log-growth per kick-relaxation cycle.
    pub lambda_max: f64,
    pub stderr: f64,
    /// `ln(d1/d0)` for each retained cycle.
    pub series: Vec<f64>,
    /// Retained cycles in which the orbits coincided and were re-perturbed.
    pub flagged: Vec<usize>,
    pub mean_cycle_length: f64,
    pub config: LyapunovConfig,
    pub schedule: ScheduleDescriptor,
}

/// The exported summary of a [`LyapunovEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    pub lambda_max: f64,
    pub stderr: f64,
    pub cycles: usize,
    pub burn_in: usize,
    pub d0: f64,
    pub seed: u64,
    pub flagged_cycles: usize,
    pub mean_cycle_length: f64,
    pub schedule: ScheduleDescriptor,
}

impl LyapunovEstimate {
    pub fn record(&self) -> LyapunovRecord {
        LyapunovRecord {
            lambda_max: self.lambda_max,
            stderr: self.stderr,
            cycles: self.config.cycles,
            burn_in: self.config.burn_in,
            d0: self.config.d0,
            seed: self.config.seed,
            flagged_cycles: self.flagged.len(),
            mean_cycle_length: self.mean_cycle_length,
            schedule: self.schedule.clone(),
        }
    }

    /// Exponent per minute rather than per cycle.
    pub fn per_minute(&self) -> f64 {
        self.lambda_max / self.mean_cycle_length
    }

    /// Writes `cycle,log_growth`.
    pub fn write_series_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["cycle", "log_growth"])?;
        for (i, v) in self.series.iter().enumerate() {
            out.write_record([i.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Standard error of the mean by non-overlapping batch means; the per-cycle
/// log-growths are strongly correlated along an orbit.
pub fn batch_means_stderr(series: &[f64]) -> f64 {
    const BATCHES: usize = 20;
    let n = series.len();
    if n < 2 {
        return f64::NAN;
    }
    if n < 2 * BATCHES {
        let (_, var) = mean_var(series);
        return (var / n as f64).sqrt();
    }
    let size = n / BATCHES;
    let means: Vec<f64> = series
        .chunks_exact(size)
        .take(BATCHES)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let (_, var) = mean_var(&means);
    (var / BATCHES as f64).sqrt()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; STATE_DIM] {
    loop {
        let mut u = [0.0; STATE_DIM];
        u.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0));
        let r = norm(&u);
        // rejection from the ball gives an isotropic direction
        if r > 1e-3 && r <= 1.0 {
            u.iter_mut().for_each(|v| *v /= r);
            return u;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `s0 + d0·u` for a uniformly random unit vector `u`.
pub fn initial_perturbation<R: Rng>(s0: &UltradianState, d0: f64, rng: &mut R) -> UltradianState {
    if d0 == 0.0 {
        return *s0;
    }
    let u = random_unit(rng);
    let mut y = s0.to_array();
    y.iter_mut().zip(u).for_each(|(a, b)| *a += d0 * b);
    UltradianState::from_array(y)
}

/// Scales `w` to unit length, returning its former norm.
pub fn renormalize(w: &mut [f64]) -> f64 {
    let r = norm(w);
    if r > 0.0 && r.is_finite() {
        w.iter_mut().for_each(|v| *v /= r);
    }
    r
}

/// Base orbit and scaled offset `w`, with `secondary = base + d0·w`.
struct PairFlow<'a> {
    params: &'a UltradianParams,
    drive: f64,
    d0: f64,
}

impl OdeSystem for PairFlow<'_> {
    fn dim(&self) -> usize {
        2 * STATE_DIM
    }

    fn rhs(&self, _t: f64, y: &[f64], d: &mut [f64]) {
        let (base, w) = y.split_at(STATE_DIM);
        let (fb, fw) = d.split_at_mut(STATE_DIM);
        rhs_into(base, self.params, self.drive, fb);
        let mut sec = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            sec[i] = base[i] + self.d0 * w[i];
        }
        rhs_into(&sec, self.params, self.drive, fw);
        for i in 0..STATE_DIM {
            fw[i] = (fw[i] - fb[i]) / self.d0;
        }
    }
}

/// Cycle boundaries: the kick instants, or the drive period when there are
/// no kicks. Entry `n` is `(end of cycle n, kick applied there)`.
fn cycle_boundaries(
    sched: &KickSchedule,
    drive: &DriveSignal,
    total: usize,
) -> Result<Vec<(f64, f64)>> {
    if sched.is_empty() {
        let period = drive.period().ok_or_else(|| {
            Error::invalid(
                "schedule",
                "empty schedule needs a periodic drive to define cycles",
            )
        })?;
        return Ok((1..=total).map(|k| (k as f64 * period, 0.0)).collect());
    }
    if sched.len() < total {
        return Err(Error::invalid(
            "schedule",
            format!("{} kicks cannot cover {total} cycles", sched.len()),
        ));
    }
    Ok(sched.kicks().take(total).collect())
}

/// [`max_lyapunov_from`] starting at the default initial condition, with its
/// extra burn-in when that is not an equilibrium.
pub fn max_lyapunov(
    p: &UltradianParams,
    sched: &KickSchedule,
    drive: &DriveSignal,
    cfg: &LyapunovConfig,
    integ: &IntegratorConfig,
) -> Result<LyapunovEstimate> {
    let ic = default_initial_state(p);
    let cfg_ic = LyapunovConfig {
        burn_in: cfg.burn_in + ic.burn_in_cycles,
        ..cfg.clone()
    };
    let mut est = max_lyapunov_from(p, sched, drive, &ic.state, &cfg_ic, integ)?;
    est.config = cfg.clone();
    Ok(est)
}

/// Maximal Lyapunov exponent per cycle from the orbit starting at `s0`.
///
/// Cycle `n` flows both orbits from the previous boundary to kick time `T_n`,
/// records `ln(d1/d0)` immediately before the kick, rescales the separation
/// back to `d0` along its current direction and applies the kick.
pub fn max_lyapunov_from(
    p: &UltradianParams,
    sched: &KickSchedule,
    drive: &DriveSignal,
    s0: &UltradianState,
    cfg: &LyapunovConfig,
    integ: &IntegratorConfig,
) -> Result<LyapunovEstimate> {
    cfg.validate()?;
    integ.validate()?;
    p.validate()?;
    s0.check_finite(0.0)?;
    let total = cfg.burn_in + cfg.cycles;
    let bounds = cycle_boundaries(sched, drive, total)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y = [0.0; 2 * STATE_DIM];
    y[..STATE_DIM].copy_from_slice(&s0.to_array());
    y[STATE_DIM..].copy_from_slice(&random_unit(&mut rng));

    let floor = (integ.atol.max(f64::EPSILON) / cfg.d0).ln();
    let mut series = Vec::with_capacity(cfg.cycles);
    let mut flagged = Vec::new();
    let mut t = 0.0;
    let mut t_first = None;
    for (n, &(tn, amplitude)) in bounds.iter().enumerate() {
        for (a, b, level) in drive_segments(drive, t, tn) {
            let flow = PairFlow {
                params: p,
                drive: level,
                d0: cfg.d0,
            };
            solve(&flow, &mut y, a, b, integ, &mut |_| {})?;
        }
        t = tn;
        let growth = renormalize(&mut y[STATE_DIM..]);
        if !growth.is_finite() {
            return Err(Error::NonFinite {
                component: "separation".into(),
                t,
            });
        }
        let log_growth = if growth == 0.0 {
            y[STATE_DIM..].copy_from_slice(&random_unit(&mut rng));
            if n >= cfg.burn_in {
                flagged.push(n - cfg.burn_in);
            }
            floor
        } else {
            growth.ln()
        };
        if n >= cfg.burn_in {
            t_first.get_or_insert(if n == 0 { 0.0 } else { bounds[n - 1].0 });
            series.push(log_growth);
        }
        y[2] += amplitude;
    }

    let lambda_max = series.iter().sum::<f64>() / series.len() as f64;
    let mean_cycle_length = (t - t_first.unwrap_or(0.0)) / series.len() as f64;
    Ok(LyapunovEstimate {
        lambda_max,
        stderr: batch_means_stderr(&series),
        series,
        flagged,
        mean_cycle_length,
        config: cfg.clone(),
        schedule: sched.descriptor().clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + i as f64 * w).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v - lo) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFailure {
    pub realization: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEnsemble {
    /// Stream index of each successful realization, ascending.
    pub realizations: Vec<usize>,
    pub exponents: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over realizations.
    pub std: f64,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: [f64; 5],
    pub histogram: Histogram,
    pub failures: Vec<EnsembleFailure>,
}

pub const ENSEMBLE_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

impl LyapunovEnsemble {
    pub fn from_results(results: Vec<Result<f64>>, bins: usize) -> Self {
        let mut realizations = Vec::new();
        let mut exponents = Vec::new();
        let mut failures = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(v) => {
                    realizations.push(r);
                    exponents.push(v);
                }
                Err(e) => failures.push(EnsembleFailure {
                    realization: r,
                    error: e.to_string(),
                }),
            }
        }
        let n = exponents.len();
        let mean = exponents.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            mean_var(&exponents).1.sqrt()
        } else {
            0.0
        };
        let mut sorted = exponents.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = ENSEMBLE_QUANTILES.map(|q| quantile(&sorted, q));
        Self {
            histogram: Histogram::new(&exponents, bins),
            realizations,
            exponents,
            mean,
            std,
            quantiles,
            failures,
        }
    }

    /// Writes `realization,lambda_max`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["realization", "lambda_max"])?;
        for (r, v) in self.realizations.iter().zip(&self.exponents) {
            out.write_record([r.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Exponents over `realizations` independent forcing realizations;
/// realization `r` gets schedule `generator(RngStream::new(base_seed, r))`.
/// Runs in parallel on the current rayon pool; results are ordered by `r`.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_ensemble<G>(
    p: &UltradianParams,
    generator: G,
    drive: &DriveSignal,
    cfg: &LyapunovConfig,
    integ: &IntegratorConfig,
    realizations: usize,
    base_seed: u64,
    bins: usize,
) -> Result<LyapunovEnsemble>
where
    G: Fn(RngStream) -> Result<KickSchedule> + Sync,
{
    if realizations == 0 {
        return Err(Error::invalid("realizations", "must be >= 1"));
    }
    let results: Vec<Result<f64>> = (0..realizations)
        .into_par_iter()
        .map(|r| {
            let sched = generator(RngStream::new(base_seed, r as u64))?;
            max_lyapunov(p, &sched, drive, cfg, integ).map(|e| e.lambda_max)
        })
        .collect();
    Ok(LyapunovEnsemble::from_results(results, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::{periodic_schedule, uniform_amplitude_schedule};
    use crate::model::{jacobian, leading_eigenvalue, reference_equilibrium};
    use proptest::prelude::*;

    fn short(cycles: usize, burn_in: usize) -> LyapunovConfig {
        LyapunovConfig {
            cycles,
            burn_in,
            ..LyapunovConfig::default()
        }
    }

    #[test]
    fn perturbation_has_length_d0() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = UltradianState::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let q = initial_perturbation(&s, 1e-3, &mut rng);
        assert!((q.distance(&s) - 1e-3).abs() < 1e-15);
        assert_eq!(initial_perturbation(&s, 0.0, &mut rng), s);
    }

    #[test]
    fn perturbation_direction_is_seeded() {
        let s = UltradianState::REFERENCE;
        let a = initial_perturbation(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let b = initial_perturbation(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let c = initial_perturbation(&s, 1.0, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stable_equilibrium_matches_eigenvalue_oracle() {
        let p = UltradianParams::default().with_delay(2.0);
        let (eq, stable) = reference_equilibrium(&p, 0.0).unwrap();
        assert!(stable);
        let gamma = leading_eigenvalue(&jacobian(&eq, &p, 0.0));
        let expected = 100.0 * gamma.re;
        let sched = periodic_schedule(0.0, 100.0, 300).unwrap();
        let est = max_lyapunov(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &short(200, 100),
            &IntegratorConfig::default(),
        )
        .unwrap();
        let rel = (est.lambda_max - expected).abs() / expected.abs();
        assert!(rel < 0.05, "{} vs {expected}", est.lambda_max);
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(10.0, 50.0, 130).unwrap();
        let cfg = short(50, 30);
        let a = max_lyapunov(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &cfg,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let b = max_lyapunov(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &cfg,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(
            a.series.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.series.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.lambda_max.to_bits(), b.lambda_max.to_bits());
    }

    #[test]
    fn lambda_is_mean_of_series() {
        let p = UltradianParams::default();
        let sched = periodic_schedule(10.0, 50.0, 130).unwrap();
        let est = max_lyapunov(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &short(40, 30),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(est.series.len(), 40);
        let mean = est.series.iter().sum::<f64>() / 40.0;
        assert_eq!(est.lambda_max, mean);
        assert_eq!(est.mean_cycle_length, 50.0);
    }

    #[test]
    fn short_schedule_rejected() {
        let p = UltradianParams::default().with_delay(2.0);
        let sched = periodic_schedule(1.0, 50.0, 10).unwrap();
        let err = max_lyapunov(
            &p,
            &sched,
            &DriveSignal::basal(0.0),
            &short(10, 1),
            &IntegratorConfig::default(),
        );
        assert!(matches!(err, Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn empty_schedule_needs_periodic_drive() {
        let p = UltradianParams::default().with_delay(2.0);
        let err = max_lyapunov(
            &p,
            &KickSchedule::empty(),
            &DriveSignal::basal(0.0),
            &short(5, 0),
            &IntegratorConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn degenerate_generator_gives_identical_exponents() {
        let p = UltradianParams::default();
        let cfg = short(20, 10);
        let need = cfg.required_kicks(&p);
        let ens = lyapunov_ensemble(
            &p,
            |_| uniform_amplitude_schedule(50.0, 50.0, 40.0, need, RngStream::new(0, 0)),
            &DriveSignal::basal(0.0),
            &cfg,
            &IntegratorConfig::default(),
            4,
            7,
            10,
        )
        .unwrap();
        assert_eq!(ens.exponents.len(), 4);
        assert!(ens
            .exponents
            .iter()
            .all(|v| v.to_bits() == ens.exponents[0].to_bits()));
        assert_eq!(ens.std, 0.0);
    }

    #[test]
    fn ensemble_records_failures() {
        let p = UltradianParams::default();
        let cfg = short(5, 0);
        let ens = lyapunov_ensemble(
            &p,
            |s| {
                if s.index == 1 {
                    periodic_schedule(1.0, 10.0, 2)
                } else {
                    periodic_schedule(1.0, 10.0, 100)
                }
            },
            &DriveSignal::basal(0.0),
            &cfg,
            &IntegratorConfig::default(),
            3,
            0,
            5,
        )
        .unwrap();
        assert_eq!(ens.realizations, vec![0, 2]);
        assert_eq!(ens.failures.len(), 1);
        assert_eq!(ens.failures[0].realization, 1);
        assert_eq!(ens.mean, (ens.exponents[0] + ens.exponents[1]) / 2.0);
    }

    #[test]
    fn ensemble_csv_and_quantiles() {
        let ens = LyapunovEnsemble::from_results(vec![Ok(1.0), Ok(3.0), Ok(2.0)], 2);
        assert_eq!(ens.quantiles[2], 2.0);
        assert_eq!(ens.histogram.counts.iter().sum::<usize>(), 3);
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "realization,lambda_max\n0,1\n1,3\n2,2\n"
        );
    }

    #[test]
    fn batch_means_of_constant_series_is_zero() {
        assert_eq!(batch_means_stderr(&[0.5; 400]), 0.0);
        assert!(batch_means_stderr(&[1.0]).is_nan());
    }

    proptest! {
        #[test]
        fn renormalization_is_exact(v in proptest::array::uniform6(-1e3f64..1e3)) {
            prop_assume!(norm(&v) > 1e-6);
            let mut w = v;
            renormalize(&mut w);
            let d0 = 1e-8;
            let dist = norm(&w.map(|x| d0 * x));
            prop_assert!((dist - d0).abs() <= 4.0 * f64::EPSILON * d0, "{dist}");
        }
    }
}
