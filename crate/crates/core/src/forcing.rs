//! Pulsatile forcing: kick schedules, piecewise-constant drive signals and
//! reproducible random streams.
//!
//! A [`KickSchedule`] lists instants `T_n` and amplitudes `A_n` of impulsive
//! glucose kicks `G ↦ G + A_n`. A [`DriveSignal`] is the smooth part of the
//! glucose inflow: a basal rate plus square pulses (meals).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::UltradianState;
use crate::{Error, Result};

/// One independent random stream of a Monte Carlo run.
///
/// Realization `r` of an ensemble draws from stream index `r`, so results do
/// not depend on the order in which realizations are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// Recipe that regenerates a schedule bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleDescriptor {
    Periodic {
        amplitude: f64,
        period: f64,
        count: usize,
    },
    Poisson {
        amplitude: f64,
        mean_period: f64,
        count: usize,
        stream: RngStream,
    },
    UniformAmplitude {
        lo: f64,
        hi: f64,
        period: f64,
        count: usize,
        stream: RngStream,
    },
    /// No kicks at all (continuous drive only).
    Empty,
}

impl ScheduleDescriptor {
    pub fn generate(&self) -> Result<KickSchedule> {
        match *self {
            Self::Periodic {
                amplitude,
                period,
                count,
            } => periodic_schedule(amplitude, period, count),
            Self::Poisson {
                amplitude,
                mean_period,
                count,
                stream,
            } => poisson_schedule(amplitude, mean_period, count, stream),
            Self::UniformAmplitude {
                lo,
                hi,
                period,
                count,
                stream,
            } => uniform_amplitude_schedule(lo, hi, period, count, stream),
            Self::Empty => Ok(KickSchedule::empty()),
        }
    }
}

/// Kick instants (min) and amplitudes (added to `G`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickSchedule {
    times: Vec<f64>,
    amplitudes: Vec<f64>,
    descriptor: ScheduleDescriptor,
}

impl KickSchedule {
    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            amplitudes: Vec::new(),
            descriptor: ScheduleDescriptor::Empty,
        }
    }

    fn from_parts(
        times: Vec<f64>,
        amplitudes: Vec<f64>,
        descriptor: ScheduleDescriptor,
    ) -> Result<Self> {
        if times.len() != amplitudes.len() {
            return Err(Error::invalid(
                "schedule",
                "times and amplitudes differ in length",
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "schedule",
                "kick times must be strictly increasing",
            ));
        }
        if amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::invalid(
                "schedule",
                "amplitudes must be finite and >= 0",
            ));
        }
        Ok(Self {
            times,
            amplitudes,
            descriptor,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn descriptor(&self) -> &ScheduleDescriptor {
        &self.descriptor
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn kicks(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.amplitudes.iter().copied())
    }

    /// Gaps `T_{n+1} − T_n`.
    pub fn gaps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Writes `n,time_min,amplitude`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["n", "time_min", "amplitude"])?;
        for (n, (t, a)) in self.kicks().enumerate() {
            out.write_record([n.to_string(), t.to_string(), a.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_period(name: &'static str, period: f64) -> Result<()> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::invalid(name, format!("must be > 0, got {period}")));
    }
    Ok(())
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::invalid(
            "amplitude",
            format!("must be >= 0, got {a}"),
        ));
    }
    Ok(())
}

/// Kicks of amplitude `a` at `0, T, 2T, …, (n−1)T`.
pub fn periodic_schedule(a: f64, period: f64, n: usize) -> Result<KickSchedule> {
    check_period("inter-kick time", period)?;
    check_amplitude(a)?;
    let times = (0..n).map(|k| k as f64 * period).collect();
    KickSchedule::from_parts(
        times,
        vec![a; n],
        ScheduleDescriptor::Periodic {
            amplitude: a,
            period,
            count: n,
        },
    )
}

/// Kicks of amplitude `a` with i.i.d. exponential gaps of mean `mean_period`.
/// The first kick happens after the first sampled gap.
pub fn poisson_schedule(
    a: f64,
    mean_period: f64,
    n: usize,
    stream: RngStream,
) -> Result<KickSchedule> {
    check_period("mean inter-kick time", mean_period)?;
    check_amplitude(a)?;
    let mut rng = stream.generator();
    let mut t = 0.0;
    let mut times = Vec::with_capacity(n);
    while times.len() < n {
        // inverse CDF; u in [0, 1) so 1 - u is never zero
        let u: f64 = rng.random();
        let gap = -mean_period * (1.0 - u).ln();
        if gap <= 0.0 {
            continue;
        }
        t += gap;
        times.push(t);
    }
    KickSchedule::from_parts(
        times,
        vec![a; n],
        ScheduleDescriptor::Poisson {
            amplitude: a,
            mean_period,
            count: n,
            stream,
        },
    )
}

/// Periodic kicks with amplitudes i.i.d. uniform on `[lo, hi]`.
pub fn uniform_amplitude_schedule(
    lo: f64,
    hi: f64,
    period: f64,
    n: usize,
    stream: RngStream,
) -> Result<KickSchedule> {
    check_period("inter-kick time", period)?;
    check_amplitude(lo)?;
    check_amplitude(hi)?;
    if lo > hi {
        return Err(Error::invalid(
            "amplitude range",
            format!("lo {lo} > hi {hi}"),
        ));
    }
    let mut rng = stream.generator();
    let amplitudes = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            lo + (hi - lo) * u
        })
        .collect();
    let times = (0..n).map(|k| k as f64 * period).collect();
    KickSchedule::from_parts(
        times,
        amplitudes,
        ScheduleDescriptor::UniformAmplitude {
            lo,
            hi,
            period,
            count: n,
            stream,
        },
    )
}

/// Instantaneous glucose kick `G ↦ G + A`; every other component untouched.
pub fn apply_kick(s: &UltradianState, amplitude: f64) -> UltradianState {
    UltradianState {
        g: s.g + amplitude,
        ..*s
    }
}

/// A square pulse `[start, end)` of height `level` on top of the basal rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: f64,
    pub end: f64,
    pub level: f64,
}

/// Piecewise-constant glucose inflow rate (mg/min).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSignal {
    basal: f64,
    pulses: Vec<Pulse>,
    /// Natural cycle length, if the signal repeats (one day for meals).
    period: Option<f64>,
}

impl DriveSignal {
    pub fn basal(level: f64) -> Self {
        Self {
            basal: level,
            pulses: Vec::new(),
            period: None,
        }
    }

    pub fn new(basal: f64, mut pulses: Vec<Pulse>, period: Option<f64>) -> Result<Self> {
        if !basal.is_finite() || basal < 0.0 {
            return Err(Error::invalid("basal rate", "must be finite and >= 0"));
        }
        pulses.sort_by(|a, b| a.start.total_cmp(&b.start));
        for p in &pulses {
            if !(p.start < p.end) || !p.level.is_finite() {
                return Err(Error::invalid("pulse", format!("bad interval {p:?}")));
            }
        }
        if pulses.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::invalid("pulse", "intervals overlap"));
        }
        if let Some(t) = period {
            check_period("drive period", t)?;
        }
        Ok(Self {
            basal,
            pulses,
            period,
        })
    }

    pub fn basal_level(&self) -> f64 {
        self.basal
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Inflow rate at `t`: basal plus the level of the pulse containing `t`.
    pub fn level_at(&self, t: f64) -> f64 {
        let i = self.pulses.partition_point(|p| p.start <= t);
        match i.checked_sub(1).map(|j| &self.pulses[j]) {
            Some(p) if t < p.end => self.basal + p.level,
            _ => self.basal,
        }
    }

    /// All discontinuity instants, sorted.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pulses.iter().flat_map(|p| [p.start, p.end]).collect();
        v.dedup();
        v
    }

    /// Discontinuities strictly inside `(t0, t1)`.
    pub fn breakpoints_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .pulses
            .iter()
            .flat_map(|p| [p.start, p.end])
            .filter(|&t| t > t0 && t < t1)
            .collect();
        v.dedup();
        v
    }

    /// Exact integral of the inflow over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        let pulses: f64 = self
            .pulses
            .iter()
            .map(|p| (p.end.min(t1) - p.start.max(t0)).max(0.0) * p.level)
            .sum();
        self.basal * (t1 - t0) + pulses
    }
}

pub const MINUTES_PER_DAY: f64 = 1440.0;

/// Meal starts in minutes after midnight: 8 am, noon and 6 pm.
pub const MEAL_STARTS: [f64; 3] = [480.0, 720.0, 1080.0];

pub const MEAL_DURATION: f64 = 30.0;

/// Three daily 30-minute square pulses of height `a`, zero basal rate.
/// Simulation time 0 is midnight of day 0.
pub fn meal_square_driver(a: f64, days: usize) -> Result<DriveSignal> {
    check_amplitude(a)?;
    if days == 0 {
        return Err(Error::invalid("days", "must be >= 1"));
    }
    let pulses = (0..days)
        .flat_map(|d| {
            MEAL_STARTS.iter().map(move |&s| {
                let start = d as f64 * MINUTES_PER_DAY + s;
                Pulse {
                    start,
                    end: start + MEAL_DURATION,
                    level: a,
                }
            })
        })
        .collect();
    DriveSignal::new(0.0, pulses, Some(MINUTES_PER_DAY))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var)
    }

    #[test]
    fn periodic_examples() {
        let s = periodic_schedule(2.0, 20.0, 3).unwrap();
        assert_eq!(s.times(), &[0.0, 20.0, 40.0]);
        assert_eq!(s.amplitudes(), &[2.0, 2.0, 2.0]);

        let s = periodic_schedule(0.0, 10.0, 5).unwrap();
        assert!(s.amplitudes().iter().all(|&a| a == 0.0));
        assert_eq!(s.len(), 5);

        let s = periodic_schedule(50.0, 200.0, 1000).unwrap();
        assert_eq!(*s.times().last().unwrap(), 199_800.0);
        assert!(s.gaps().iter().all(|&g| g == 200.0));
    }

    #[test]
    fn periodic_rejects_nonpositive_period() {
        assert!(periodic_schedule(1.0, 0.0, 3).is_err());
        assert!(periodic_schedule(1.0, -5.0, 3).is_err());
    }

    #[test]
    fn poisson_gap_moments() {
        let s = poisson_schedule(1.0, 20.0, 10_000, RngStream::new(7, 0)).unwrap();
        // gaps: first kick time plus the successive differences
        let mut gaps = vec![s.times()[0]];
        gaps.extend(s.gaps());
        let (m, v) = mean_var(&gaps);
        assert!((19.4..=20.6).contains(&m), "mean {m}");
        assert!((377.0..=423.0).contains(&v), "var {v}");
        assert!(s.times()[0] > 0.0);
    }

    #[test]
    fn poisson_gaps_pass_ks_test() {
        let s = poisson_schedule(1.0, 20.0, 10_000, RngStream::new(11, 3)).unwrap();
        let mut gaps = vec![s.times()[0]];
        gaps.extend(s.gaps());
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-x / 20.0).exp();
                (cdf - i as f64 / n).abs().max((i as f64 + 1.0) / n - cdf)
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d < 1.628 / n.sqrt(), "D = {d}");
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = poisson_schedule(1.0, 20.0, 100, RngStream::new(5, 1)).unwrap();
        let b = poisson_schedule(1.0, 20.0, 100, RngStream::new(5, 1)).unwrap();
        let c = poisson_schedule(1.0, 20.0, 100, RngStream::new(5, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.times(), c.times());
    }

    #[test]
    fn uniform_amplitude_examples() {
        let s = uniform_amplitude_schedule(50.0, 50.0, 20.0, 10, RngStream::new(1, 0)).unwrap();
        assert!(s.amplitudes().iter().all(|&a| a == 50.0));
        assert_eq!(
            s.times(),
            periodic_schedule(50.0, 20.0, 10).unwrap().times()
        );

        let s = uniform_amplitude_schedule(45.0, 55.0, 20.0, 10_000, RngStream::new(2, 0)).unwrap();
        let (m, v) = mean_var(s.amplitudes());
        assert!((49.91..=50.09).contains(&m), "mean {m}");
        assert!((7.9..=8.7).contains(&v), "var {v}");
        assert!(s.amplitudes().iter().all(|a| (45.0..=55.0).contains(a)));

        assert!(uniform_amplitude_schedule(55.0, 45.0, 20.0, 10, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn descriptors_regenerate_bit_identically() {
        let schedules = [
            periodic_schedule(3.5, 17.0, 50).unwrap(),
            poisson_schedule(10.0, 20.0, 50, RngStream::new(9, 4)).unwrap(),
            uniform_amplitude_schedule(45.0, 55.0, 40.0, 50, RngStream::new(9, 5)).unwrap(),
        ];
        for s in schedules {
            let again = s.descriptor().generate().unwrap();
            assert_eq!(s.times().len(), again.times().len());
            for (a, b) in s.kicks().zip(again.kicks()) {
                assert_eq!(a.0.to_bits(), b.0.to_bits());
                assert_eq!(a.1.to_bits(), b.1.to_bits());
            }
        }
    }

    #[test]
    fn kick_jump_rule() {
        let s = UltradianState::new(1.0, 2.0, 100.0, 4.0, 5.0, 6.0);
        let k = apply_kick(&s, 10.0);
        assert_eq!(k.g, 110.0);
        assert_eq!([k.ip, k.ii, k.h1, k.h2, k.h3], [1.0, 2.0, 4.0, 5.0, 6.0]);
        assert_eq!(apply_kick(&s, 0.0), s);
        assert_eq!(apply_kick(&apply_kick(&s, 3.0), 4.5), apply_kick(&s, 7.5));
    }

    #[test]
    fn meal_driver_layout() {
        let d = meal_square_driver(100.0, 1).unwrap();
        let starts: Vec<f64> = d.pulses().iter().map(|p| p.start).collect();
        assert_eq!(starts, vec![480.0, 720.0, 1080.0]);
        assert_eq!(d.level_at(495.0), 100.0);
        assert_eq!(d.level_at(600.0), 0.0);
        assert_eq!(d.level_at(480.0), 100.0);
        assert_eq!(d.level_at(510.0), 0.0);
        assert_eq!(d.integral(0.0, 1440.0), 90.0 * 100.0);
        assert_eq!(d.breakpoints().len(), 6);
        assert_eq!(d.breakpoints_in(500.0, 730.0), vec![510.0, 720.0]);

        let d = meal_square_driver(10.0, 3).unwrap();
        assert_eq!(d.level_at(2.0 * 1440.0 + 1090.0), 10.0);
        assert_eq!(d.period(), Some(1440.0));
    }

    #[test]
    fn overlapping_pulses_rejected() {
        let p = |s, e| Pulse {
            start: s,
            end: e,
            level: 1.0,
        };
        assert!(DriveSignal::new(0.0, vec![p(0.0, 10.0), p(5.0, 20.0)], None).is_err());
        assert!(DriveSignal::new(0.0, vec![p(10.0, 10.0)], None).is_err());
    }

    #[test]
    fn schedule_csv_format() {
        let mut buf = Vec::new();
        periodic_schedule(2.0, 20.0, 2)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,time_min,amplitude\n0,0,2\n1,20,2\n"
        );
    }
}
