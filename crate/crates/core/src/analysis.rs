//! Experiment-level procedures: the Hopf delay scan, exponent sweeps over
//! forcing parameters, empirical glucose distributions and mode counting.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forcing::{
    periodic_schedule, poisson_schedule, uniform_amplitude_schedule, DriveSignal, RngStream,
};
use crate::integrate::{integrate, integrate_sampled, IntegratorConfig, Trajectory};
use crate::lyapunov::{lyapunov_ensemble, max_lyapunov, LyapunovConfig};
use crate::model::{UltradianParams, UltradianState};
use crate::shearflow::{dde_heatmap, DdeConfig, ShearParams};
use crate::{Error, Result};

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfScanResult {
    pub td: Vec<f64>,
    /// Peak-to-peak glucose over the window (mg).
    pub amplitudes: Vec<f64>,
    pub threshold: f64,
    /// Adjacent scanned delays with amplitude below and above the threshold.
    pub bracket: Option<(f64, f64)>,
}

impl HopfScanResult {
    /// Whether each scanned delay shows a limit cycle at `threshold`.
    pub fn oscillating(&self, threshold: f64) -> Vec<bool> {
        self.amplitudes.iter().map(|&a| a > threshold).collect()
    }

    /// Writes `td,amplitude`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["td", "amplitude"])?;
        for (t, a) in self.td.iter().zip(&self.amplitudes) {
            out.write_record([t.to_string(), a.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const HOPF_TRANSIENT: f64 = 5000.0;
pub const HOPF_WINDOW: f64 = 2000.0;
pub const HOPF_THRESHOLD: f64 = 1.0;

/// Peak-to-peak glucose of the unforced system after `transient` minutes,
/// measured over `window` minutes, for each delay in `td_values`.
pub fn hopf_scan(
    p_base: &UltradianParams,
    td_values: &[f64],
    transient: f64,
    window: f64,
    cfg: &IntegratorConfig,
    threshold: f64,
) -> Result<HopfScanResult> {
    if td_values.is_empty() {
        return Err(Error::invalid("td_values", "must not be empty"));
    }
    if !(transient >= 0.0 && window > 0.0) {
        return Err(Error::invalid(
            "window",
            "need transient >= 0 and window > 0",
        ));
    }
    let drive = DriveSignal::basal(0.0);
    let sample_dt = 0.5;
    let grid: Vec<f64> = (0..=(window / sample_dt) as usize)
        .map(|k| transient + k as f64 * sample_dt)
        .collect();
    let amplitudes = td_values
        .par_iter()
        .map(|&td| {
            let p = p_base.clone().with_delay(td);
            p.validate()?;
            let s = integrate(&p, &UltradianState::REFERENCE, 0.0, transient, cfg, &drive)?;
            let (_, samples) =
                integrate_sampled(&p, &s, transient, transient + window, cfg, &drive, &grid)?;
            let (lo, hi) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s.g), hi.max(s.g))
                });
            Ok(hi - lo)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut order: Vec<usize> = (0..td_values.len()).collect();
    order.sort_by(|&a, &b| td_values[a].total_cmp(&td_values[b]));
    let bracket = order
        .windows(2)
        .find(|w| amplitudes[w[0]] <= threshold && amplitudes[w[1]] > threshold)
        .map(|w| (td_values[w[0]], td_values[w[1]]));
    Ok(HopfScanResult {
        td: td_values.to_vec(),
        amplitudes,
        threshold,
        bracket,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KickKind {
    Periodic,
    Poisson,
    /// Periodic times, amplitudes uniform on `[A − half_width, A + half_width]`.
    UniformAmplitude {
        half_width: f64,
    },
}

/// An exponent sweep over kick amplitude × inter-kick time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: KickKind,
    pub amplitudes: Vec<f64>,
    pub periods: Vec<f64>,
    /// Ensemble size for random kick kinds.
    pub realizations: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub x: f64,
    pub y: f64,
    pub lambda_max: f64,
    pub stderr: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub x_name: String,
    pub x: Vec<f64>,
    pub y_name: String,
    pub y: Vec<f64>,
    /// Row-major in `x`, then `y`.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn is_partial(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }

    pub fn cell(&self, x: f64, y: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.x == x && c.y == y)
    }

    /// Writes `<x>,<y>,lambda_max,stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record([
            self.x_name.as_str(),
            self.y_name.as_str(),
            "lambda_max",
            "stderr",
        ])?;
        for c in &self.cells {
            out.write_record([c.x, c.y, c.lambda_max, c.stderr].map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn sweep_cell(
    p: &UltradianParams,
    spec: &SweepSpec,
    a: f64,
    period: f64,
    cfg: &LyapunovConfig,
    integ: &IntegratorConfig,
) -> Result<(f64, f64)> {
    let drive = DriveSignal::basal(p.i_0);
    let n = cfg.required_kicks(p);
    match spec.kind {
        KickKind::Periodic => {
            let e = max_lyapunov(p, &periodic_schedule(a, period, n)?, &drive, cfg, integ)?;
            Ok((e.lambda_max, e.stderr))
        }
        KickKind::Poisson | KickKind::UniformAmplitude { .. } => {
            let kind = spec.kind;
            let gen = move |s: RngStream| match kind {
                KickKind::UniformAmplitude { half_width } => uniform_amplitude_schedule(
                    (a - half_width).max(0.0),
                    a + half_width,
                    period,
                    n,
                    s,
                ),
                _ => poisson_schedule(a, period, n, s),
            };
            let ens = lyapunov_ensemble(
                p,
                gen,
                &drive,
                cfg,
                integ,
                spec.realizations,
                spec.base_seed,
                30,
            )?;
            if !ens.failures.is_empty() {
                return Err(Error::EnsembleFailed {
                    failed: ens.failures.len(),
                    total: spec.realizations,
                    first: ens.failures[0].error.clone(),
                });
            }
            Ok((ens.mean, ens.std / (ens.exponents.len() as f64).sqrt()))
        }
    }
}

/// `Λ_max` (ensemble mean for random kinds) on the grid `A × T`. Failed
/// cells carry their error and a NaN exponent.
pub fn sweep_lambda_max(
    p: &UltradianParams,
    spec: &SweepSpec,
    cfg: &LyapunovConfig,
    integ: &IntegratorConfig,
) -> Result<SweepGrid> {
    if spec.amplitudes.is_empty() || spec.periods.is_empty() {
        return Err(Error::invalid("sweep axes", "must be nonempty"));
    }
    if !matches!(spec.kind, KickKind::Periodic) && spec.realizations == 0 {
        return Err(Error::invalid("realizations", "must be >= 1"));
    }
    cfg.validate()?;
    integ.validate()?;
    let grid: Vec<(f64, f64)> = spec
        .amplitudes
        .iter()
        .flat_map(|&a| spec.periods.iter().map(move |&t| (a, t)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(a, t)| match sweep_cell(p, spec, a, t, cfg, integ) {
            Ok((lambda_max, stderr)) => SweepCell {
                x: a,
                y: t,
                lambda_max,
                stderr,
                error: None,
            },
            Err(e) => SweepCell {
                x: a,
                y: t,
                lambda_max: f64::NAN,
                stderr: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(SweepGrid {
        x_name: "A".into(),
        x: spec.amplitudes.clone(),
        y_name: "T".into(),
        y: spec.periods.clone(),
        cells,
    })
}

/// `Λ_max` of the delay shear flow on the grid `τ × T`.
pub fn sweep_dde(
    p: &ShearParams,
    taus: &[f64],
    periods: &[f64],
    cfg: &LyapunovConfig,
    dde: &DdeConfig,
) -> Result<SweepGrid> {
    if taus.is_empty() || periods.is_empty() {
        return Err(Error::invalid("sweep axes", "must be nonempty"));
    }
    let cells = dde_heatmap(p, taus, periods, cfg, dde)
        .into_iter()
        .map(|(c, error)| SweepCell {
            x: c.tau,
            y: c.period,
            lambda_max: c.lambda_max,
            stderr: f64::NAN,
            error,
        })
        .collect();
    Ok(SweepGrid {
        x_name: "tau".into(),
        x: taus.to_vec(),
        y_name: "T".into(),
        y: periods.to_vec(),
        cells,
    })
}

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_BANDWIDTH_BINS: f64 = 2.0;
pub const DEFAULT_PROMINENCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// Kernel bandwidth in bin widths.
    pub bandwidth_bins: f64,
    pub modes: usize,
}

impl EmpiricalDistribution {
    /// Normalized histogram of `values` with `bins` equal bins over their range.
    pub fn from_samples(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("samples", "empty window"));
        }
        if bins == 0 {
            return Err(Error::invalid("bins", "must be >= 1"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", format!("non-finite value {v}")));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let w = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * w })
            .collect();
        let mut counts = vec![0usize; bins];
        for v in values {
            counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
        }
        let n = values.len() as f64;
        let mut d = Self {
            edges,
            mass: counts.iter().map(|&c| c as f64 / n).collect(),
            bandwidth_bins: DEFAULT_BANDWIDTH_BINS,
            modes: 0,
        };
        d.modes = count_modes(&d, DEFAULT_BANDWIDTH_BINS, DEFAULT_PROMINENCE);
        Ok(d)
    }

    /// Writes `bin_left,bin_right,mass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["bin_left", "bin_right", "mass"])?;
        for (e, m) in self.edges.windows(2).zip(&self.mass) {
            out.write_record([e[0], e[1], *m].map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Glucose distribution of `traj` after `burn_in` minutes, resampled every
/// `sample_dt` minutes by linear interpolation between recorded samples.
pub fn glucose_distribution(
    traj: &Trajectory,
    bins: usize,
    sample_dt: f64,
    burn_in: f64,
) -> Result<EmpiricalDistribution> {
    if !(sample_dt > 0.0) {
        return Err(Error::invalid("sample_dt", "must be > 0"));
    }
    let (Some(&t_first), Some(&t_last)) = (traj.times.first(), traj.times.last()) else {
        return Err(Error::invalid("trajectory", "empty window"));
    };
    let start = t_first.max(burn_in);
    if t_last - start < 100.0 * sample_dt {
        return Err(Error::invalid(
            "trajectory",
            format!("window [{start}, {t_last}] shorter than 100 sample intervals"),
        ));
    }
    let n = ((t_last - start) / sample_dt + 1e-9).floor() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let t = start + k as f64 * sample_dt;
        while j + 1 < traj.times.len() && traj.times[j + 1] <= t {
            j += 1;
        }
        let g = if j + 1 < traj.times.len() && traj.times[j + 1] > traj.times[j] {
            let (t0, t1) = (traj.times[j], traj.times[j + 1]);
            let s = (t - t0) / (t1 - t0);
            traj.states[j].g + s * (traj.states[j + 1].g - traj.states[j].g)
        } else {
            traj.states[j].g
        };
        values.push(g);
    }
    EmpiricalDistribution::from_samples(&values, bins)
}

/// Number of local maxima of the Gaussian-smoothed histogram whose
/// topographic prominence exceeds `prominence` times the global maximum.
pub fn count_modes(d: &EmpiricalDistribution, bandwidth_bins: f64, prominence: f64) -> usize {
    let n = d.mass.len();
    if n == 0 {
        return 0;
    }
    let smooth: Vec<f64> = if bandwidth_bins > 0.0 {
        let reach = (4.0 * bandwidth_bins).ceil() as isize;
        let kernel: Vec<f64> = (-reach..=reach)
            .map(|k| (-0.5 * (k as f64 / bandwidth_bins).powi(2)).exp())
            .collect();
        (0..n as isize)
            .map(|i| {
                (-reach..=reach)
                    .filter_map(|k| {
                        let j = i + k;
                        (0..n as isize)
                            .contains(&j)
                            .then(|| kernel[(k + reach) as usize] * d.mass[j as usize])
                    })
                    .sum()
            })
            .collect()
    } else {
        d.mass.clone()
    };
    // zero padding makes the edges valleys
    let mut y = Vec::with_capacity(n + 2);
    y.push(0.0);
    y.extend(smooth);
    y.push(0.0);
    let top = y.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }

    // plateaus count once, at their left end
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < y.len() - 1 {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < y.len() - 1 && y[j + 1] == y[i] {
                j += 1;
            }
            if y[j + 1] < y[i] {
                peaks.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
        .into_iter()
        .filter(|&i| {
            let h = y[i];
            let left = y[..i]
                .iter()
                .rev()
                .take_while(|&&v| v <= h)
                .copied()
                .fold(h, f64::min);
            let right = y[i + 1..]
                .iter()
                .take_while(|&&v| v <= h)
                .copied()
                .fold(h, f64::min);
            h - left.max(right) > prominence * top
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(mass: Vec<f64>) -> EmpiricalDistribution {
        let edges = (0..=mass.len()).map(|i| i as f64).collect();
        EmpiricalDistribution {
            edges,
            mass,
            bandwidth_bins: 2.0,
            modes: 0,
        }
    }

    fn bumps(centers: &[f64], width: f64) -> Vec<f64> {
        let raw: Vec<f64> = (0..100)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| (-0.5 * ((i as f64 - c) / width).powi(2)).exp())
                    .sum()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn two_separated_bumps_are_bimodal() {
        assert_eq!(count_modes(&dist(bumps(&[25.0, 75.0], 3.0)), 2.0, 0.05), 2);
    }

    #[test]
    fn single_bump_is_unimodal() {
        assert_eq!(count_modes(&dist(bumps(&[40.0], 6.0)), 2.0, 0.05), 1);
    }

    #[test]
    fn small_shoulder_is_ignored() {
        let mut m = bumps(&[50.0], 5.0);
        m[80] += 0.001 * m[50];
        assert_eq!(count_modes(&dist(m), 0.0, 0.05), 1);
    }

    #[test]
    fn flat_plateau_counts_once() {
        let mut m = vec![0.0; 20];
        m[5..10].iter_mut().for_each(|v| *v = 0.2);
        assert_eq!(count_modes(&dist(m), 0.0, 0.05), 1);
    }

    #[test]
    fn constant_trajectory_fills_one_bin() {
        let s = UltradianState::REFERENCE;
        let traj = Trajectory {
            times: (0..=500).map(f64::from).collect(),
            states: vec![s; 501],
            final_time: 500.0,
            final_state: Some(s),
            nonnegative: true,
            ..Trajectory::default()
        };
        let d = glucose_distribution(&traj, 100, 1.0, 0.0).unwrap();
        assert_eq!(d.mass.iter().filter(|&&m| m > 0.0).count(), 1);
        assert_eq!(d.modes, 1);
        assert!((d.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        let traj = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![UltradianState::REFERENCE; 2],
            ..Trajectory::default()
        };
        assert!(glucose_distribution(&traj, 10, 1.0, 0.0).is_err());
        assert!(glucose_distribution(&Trajectory::default(), 10, 1.0, 0.0).is_err());
    }

    #[test]
    fn distribution_csv() {
        let d = EmpiricalDistribution::from_samples(&[0.0, 1.0, 1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_left,bin_right,mass\n0,1,0.25\n1,2,0.75\n"
        );
    }

    #[test]
    fn hopf_scan_separates_equilibrium_from_cycle() {
        let r = hopf_scan(
            &UltradianParams::default(),
            &[2.0, 20.0],
            HOPF_TRANSIENT,
            HOPF_WINDOW,
            &IntegratorConfig::default(),
            HOPF_THRESHOLD,
        )
        .unwrap();
        assert!(r.amplitudes[0] < 0.5, "{:?}", r.amplitudes);
        assert!(r.amplitudes[1] > 10.0, "{:?}", r.amplitudes);
        assert_eq!(r.bracket, Some((2.0, 20.0)));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("td,amplitude\n2,"));
    }

    #[test]
    fn sweep_is_deterministic_and_complete() {
        let p = UltradianParams::default();
        let spec = SweepSpec {
            kind: KickKind::UniformAmplitude { half_width: 5.0 },
            amplitudes: vec![50.0],
            periods: vec![20.0, 40.0],
            realizations: 3,
            base_seed: 11,
        };
        let cfg = LyapunovConfig {
            cycles: 20,
            burn_in: 5,
            ..LyapunovConfig::default()
        };
        let a = sweep_lambda_max(&p, &spec, &cfg, &IntegratorConfig::default()).unwrap();
        let b = sweep_lambda_max(&p, &spec, &cfg, &IntegratorConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 2);
        assert!(!a.is_partial());
        assert!(a.cell(50.0, 40.0).is_some());
    }

    #[test]
    fn empty_axes_rejected() {
        let spec = SweepSpec {
            kind: KickKind::Periodic,
            amplitudes: vec![],
            periods: vec![10.0],
            realizations: 1,
            base_seed: 0,
        };
        assert!(sweep_lambda_max(
            &UltradianParams::default(),
            &spec,
            &LyapunovConfig::default(),
            &IntegratorConfig::default()
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn masses_sum_to_one(values in proptest::collection::vec(-1e4f64..1e4, 1..500), bins in 1usize..200) {
            let d = EmpiricalDistribution::from_samples(&values, bins).unwrap();
            prop_assert!((d.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.modes >= 1);
        }

        #[test]
        fn modes_invariant_under_scaling(
            mass in proptest::collection::vec(0.0f64..1.0, 5..80),
            k in 0.01f64..100.0,
        ) {
            let a = dist(mass.clone());
            let b = dist(mass.iter().map(|m| m * k).collect());
            prop_assert_eq!(count_modes(&a, 2.0, 0.05), count_modes(&b, 2.0, 0.05));
        }
    }
}
