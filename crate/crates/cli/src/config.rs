//! Experiment configuration: TOML with one table per concern.

use std::fmt;
use std::path::Path;

use diu_core::integrate::IntegratorConfig;
use diu_core::lyapunov::LyapunovConfig;
use diu_core::model::{UltradianParams, UltradianState};
use diu_core::shearflow::{DdeConfig, KickProfile, ShearParams};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;

/// A configuration problem, located by section.
#[derive(Debug)]
pub struct ConfigError {
    pub section: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.section.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "[{}] {}", self.section, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(section: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError {
        section: section.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingKind {
    Periodic,
    Poisson,
    UniformAmplitude,
    /// Three daily square pulses of height `A`; no kicks.
    Meals,
    None,
}

impl ForcingKind {
    pub fn is_random(self) -> bool {
        matches!(self, Self::Poisson | Self::UniformAmplitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSection {
    pub kind: ForcingKind,
    /// Kick amplitude, or pulse height for meals.
    #[serde(rename = "A")]
    pub amplitude: f64,
    /// Amplitude range for `uniform_amplitude`.
    pub lo: f64,
    pub hi: f64,
    /// Inter-kick time, or mean inter-kick time for `poisson`.
    #[serde(rename = "T")]
    pub period: f64,
    /// Schedule length; derived from the command when absent.
    pub count: Option<usize>,
    pub seed: u64,
    /// Stream index for single-realization runs of random kinds.
    pub stream: u64,
}

impl Default for ForcingSection {
    fn default() -> Self {
        Self {
            kind: ForcingKind::Periodic,
            amplitude: 10.0,
            lo: 45.0,
            hi: 55.0,
            period: 20.0,
            count: None,
            seed: 0,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovSection {
    pub d0: f64,
    pub cycles: usize,
    pub burn_in: usize,
    /// Perturbation direction seed.
    pub seed: u64,
    /// Ensemble size for random forcing.
    pub realizations: usize,
    pub histogram_bins: usize,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        let d = LyapunovConfig::default();
        Self {
            d0: d.d0,
            cycles: d.cycles,
            burn_in: d.burn_in,
            seed: d.seed,
            realizations: 100,
            histogram_bins: 30,
        }
    }
}

impl LyapunovSection {
    pub fn to_config(&self) -> LyapunovConfig {
        LyapunovConfig {
            d0: self.d0,
            cycles: self.cycles,
            burn_in: self.burn_in,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: f64,
    pub sample_dt: f64,
    /// `[Ip, Ii, G, h1, h2, h3]`; the default initial condition when absent.
    pub initial_state: Option<[f64; 6]>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            horizon: 1000.0,
            sample_dt: 1.0,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopfSection {
    pub td_values: Vec<f64>,
    pub transient: f64,
    pub window: f64,
    pub threshold: f64,
}

impl Default for HopfSection {
    fn default() -> Self {
        use diu_core::analysis::{HOPF_THRESHOLD, HOPF_TRANSIENT, HOPF_WINDOW};
        Self {
            td_values: vec![2.0, 8.0, 12.0, 20.0],
            transient: HOPF_TRANSIENT,
            window: HOPF_WINDOW,
            threshold: HOPF_THRESHOLD,
        }
    }
}

/// Axes of an exponent sweep; the kick kind comes from `[forcing]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Kick amplitudes (centres of the range for `uniform_amplitude`).
    #[serde(rename = "A")]
    pub amplitudes: Vec<f64>,
    #[serde(rename = "T")]
    pub periods: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdeSection {
    pub lambda: f64,
    pub sigma: f64,
    pub tau: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub profile: KickProfile,
    pub steps_per_delay: usize,
    pub max_step: f64,
    pub min_step: f64,
    /// Heatmap axes; a single estimate at (`tau`, `T`) when either is empty.
    pub taus: Vec<f64>,
    pub periods: Vec<f64>,
}

impl Default for DdeSection {
    fn default() -> Self {
        let p = ShearParams::default();
        let d = DdeConfig::default();
        Self {
            lambda: p.lambda,
            sigma: p.sigma,
            tau: p.tau,
            amplitude: p.amplitude,
            period: p.period,
            profile: p.profile,
            steps_per_delay: d.steps_per_delay,
            max_step: d.max_step,
            min_step: d.min_step,
            taus: Vec::new(),
            periods: Vec::new(),
        }
    }
}

impl DdeSection {
    pub fn params(&self) -> ShearParams {
        ShearParams {
            lambda: self.lambda,
            sigma: self.sigma,
            tau: self.tau,
            amplitude: self.amplitude,
            period: self.period,
            profile: self.profile,
        }
    }

    pub fn numerics(&self) -> DdeConfig {
        DdeConfig {
            steps_per_delay: self.steps_per_delay,
            max_step: self.max_step,
            min_step: self.min_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttractorSection {
    pub burn_in: usize,
    pub keep: usize,
}

impl Default for AttractorSection {
    fn default() -> Self {
        Self {
            burn_in: 100,
            keep: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistSection {
    /// Simulated time (min).
    pub horizon: f64,
    /// Discarded leading time (min).
    pub burn_in: f64,
    pub bins: usize,
    pub sample_dt: f64,
    /// Kernel bandwidth in bins.
    pub bandwidth: f64,
    /// Minimum mode prominence relative to the tallest peak.
    pub prominence: f64,
}

impl Default for HistSection {
    fn default() -> Self {
        use diu_core::analysis::{DEFAULT_BANDWIDTH_BINS, DEFAULT_BINS, DEFAULT_PROMINENCE};
        Self {
            horizon: 22_000.0,
            burn_in: 2000.0,
            bins: DEFAULT_BINS,
            sample_dt: 1.0,
            bandwidth: DEFAULT_BANDWIDTH_BINS,
            prominence: DEFAULT_PROMINENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: UltradianParams,
    pub forcing: ForcingSection,
    pub lyapunov: LyapunovSection,
    pub integrator: IntegratorConfig,
    pub simulate: SimulateSection,
    pub hopf: HopfSection,
    pub sweep: SweepSection,
    pub dde: DdeSection,
    pub attractor: AttractorSection,
    pub hist: HistSection,
    pub output: OutputSection,
}

/// Where a configuration came from.
pub enum Loaded {
    Toml(ExperimentConfig),
    Manifest(RunManifest),
}

pub fn parse_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| err("", e))
}

/// Reads a TOML config or a `manifest.json` from an earlier run.
pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err("", format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| err("", format!("{}: not a run manifest: {e}", path.display())))?;
        return Ok(Loaded::Manifest(m));
    }
    parse_toml(&text)
        .map(Loaded::Toml)
        .map_err(|e| ConfigError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
}

fn positive(section: &str, name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(err(
            section,
            format!("{name} must be finite and > 0, got {v}"),
        ))
    }
}

impl ExperimentConfig {
    /// Checks every section against the preconditions of the operations
    /// it feeds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| err("model", e))?;
        if let Some(s) = self.simulate.initial_state {
            UltradianState::from_array(s)
                .check_finite(0.0)
                .map_err(|e| err("simulate", e))?;
        }

        let f = &self.forcing;
        if !matches!(f.kind, ForcingKind::None) {
            positive("forcing", "T", f.period)?;
        }
        if !(f.amplitude.is_finite() && f.amplitude >= 0.0) {
            return Err(err(
                "forcing",
                format!("A must be finite and >= 0, got {}", f.amplitude),
            ));
        }
        if matches!(f.kind, ForcingKind::UniformAmplitude)
            && !(0.0 <= f.lo && f.lo <= f.hi && f.hi.is_finite())
        {
            return Err(err(
                "forcing",
                format!("need 0 <= lo <= hi, got lo = {}, hi = {}", f.lo, f.hi),
            ));
        }
        if f.count == Some(0) {
            return Err(err("forcing", "count must be >= 1"));
        }

        self.lyapunov
            .to_config()
            .validate()
            .map_err(|e| err("lyapunov", e))?;
        if self.lyapunov.realizations == 0 {
            return Err(err("lyapunov", "realizations must be >= 1"));
        }
        self.integrator
            .validate()
            .map_err(|e| err("integrator", e))?;

        positive("simulate", "horizon", self.simulate.horizon)?;
        positive("simulate", "sample_dt", self.simulate.sample_dt)?;

        let h = &self.hopf;
        if h.td_values.is_empty() {
            return Err(err("hopf", "td_values must not be empty"));
        }
        for &td in &h.td_values {
            positive("hopf", "td", td)?;
        }
        positive("hopf", "window", h.window)?;
        if !(h.transient >= 0.0) {
            return Err(err("hopf", "transient must be >= 0"));
        }

        for &a in &self.sweep.amplitudes {
            if !(a.is_finite() && a >= 0.0) {
                return Err(err("sweep", format!("A values must be >= 0, got {a}")));
            }
        }
        for &t in &self.sweep.periods {
            positive("sweep", "T", t)?;
        }

        let d = &self.dde;
        d.params().validate().map_err(|e| err("dde", e))?;
        d.numerics().validate().map_err(|e| err("dde", e))?;
        for &t in &d.taus {
            if !(t.is_finite() && t >= 0.0) {
                return Err(err("dde", format!("taus must be >= 0, got {t}")));
            }
        }
        for &t in &d.periods {
            positive("dde", "periods", t)?;
        }

        let hs = &self.hist;
        positive("hist", "horizon", hs.horizon)?;
        positive("hist", "sample_dt", hs.sample_dt)?;
        if hs.bins == 0 {
            return Err(err("hist", "bins must be >= 1"));
        }
        if !(hs.burn_in >= 0.0 && hs.burn_in < hs.horizon) {
            return Err(err("hist", "burn_in must lie in [0, horizon)"));
        }
        if !(hs.bandwidth >= 0.0 && (0.0..1.0).contains(&hs.prominence)) {
            return Err(err("hist", "need bandwidth >= 0 and prominence in [0, 1)"));
        }
        if self.output.dir.is_empty() {
            return Err(err("output", "dir must not be empty"));
        }
        Ok(())
    }

    /// Applies a global seed to every random stream and perturbation.
    pub fn override_seed(&mut self, seed: u64) {
        self.forcing.seed = seed;
        self.lyapunov.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let e = parse_toml("[forcing]\nA = 1\nbogus = 2\n").unwrap_err();
        assert!(e.message.contains("bogus"), "{e}");
        assert!(e.message.contains("line 3"), "{e}");
        assert!(parse_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn negative_period_names_forcing_section() {
        let c = parse_toml("[forcing]\nT = -5\n").unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.section, "forcing");
        assert!(e.to_string().starts_with("[forcing]"));
    }

    #[test]
    fn sections_parse() {
        let c = parse_toml(
            r#"
            [model]
            t_d = 12
            [forcing]
            kind = "uniform_amplitude"
            lo = 45
            hi = 55
            T = 100
            [lyapunov]
            cycles = 10
            [integrator]
            method = "rosenbrock23"
            [dde]
            profile = { kind = "sine" }
            taus = [0.5, 12]
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.forcing.kind, ForcingKind::UniformAmplitude);
        assert_eq!(c.lyapunov.cycles, 10);
        assert_eq!(c.dde.profile, KickProfile::Sine);
    }

    #[test]
    fn bad_model_value_names_model_section() {
        let c = parse_toml("[model]\nV_p = 0\n").unwrap();
        assert_eq!(c.validate().unwrap_err().section, "model");
    }

    #[test]
    fn seed_override_reaches_all_streams() {
        let mut c = ExperimentConfig::default();
        c.override_seed(42);
        assert_eq!((c.forcing.seed, c.lyapunov.seed), (42, 42));
    }
}
