//! Closed-form oracles checked against the numerical experiments, and
//! helpers for driving the `diu` commands in-process.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use diu_cli::{run, Cli};
use serde_json::Value;

/// Principal branch of the Lambert W function on `[−1/e, ∞)`, by Halley
/// iteration.
pub fn lambert_w0(x: f64) -> f64 {
    assert!(x >= -(-1.0f64).exp(), "outside the principal branch domain");
    let mut w = if x < 1.0 { x } else { x.ln() };
    for _ in 0..100 {
        let e = w.exp();
        let f = w * e - x;
        let step = f / (e * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    w
}

/// Real rightmost root of `γ + λe^(−γτ) = 0` when `λτ ≤ 1/e`.
pub fn real_characteristic_root(lambda: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        -lambda
    } else {
        lambert_w0(-lambda * tau) / tau
    }
}

/// Maximal exponent per cycle of the delay-free kicked shear flow with
/// constant kick profile.
///
/// One kick plus relaxation over `T` is the affine map
/// `(θ, z) ↦ (θ + T + σ(z + A)(1 − e)/λ, e(z + A))`, `e = exp(−λT)`, whose
/// linear part is triangular with eigenvalues `1` and `e`.
pub fn delay_free_exponent(lambda: f64, period: f64) -> f64 {
    let e = (-lambda * period).exp();
    1f64.max(e).ln()
}

/// A finished in-process `diu` invocation.
pub struct Run {
    pub dir: PathBuf,
    pub code: u8,
    pub manifest: Value,
    pub elapsed: Duration,
    pub diagnostics: Vec<String>,
}

impl Run {
    pub fn read(&self, file: &str) -> String {
        std::fs::read_to_string(self.dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
    }

    pub fn json(&self, file: &str) -> Value {
        serde_json::from_str(&self.read(file)).unwrap()
    }

    /// Rows of a CSV output without the header.
    pub fn rows(&self, file: &str) -> Vec<Vec<String>> {
        self.read(file)
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    }

    /// Data files listed in the manifest.
    pub fn outputs(&self) -> Vec<String> {
        self.manifest["outputs"]
            .as_array()
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str().map(String::from))
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Runs `diu <args…> --out <dir>`.
pub fn diu(args: &[&str], dir: &Path) -> Run {
    let mut argv = vec!["diu"];
    argv.extend_from_slice(args);
    let dir_arg = dir.to_string_lossy().into_owned();
    argv.extend(["--out", dir_arg.as_str()]);
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
    let start = Instant::now();
    let out = run(&cli);
    let elapsed = start.elapsed();
    let manifest = out
        .manifest
        .map(|m| serde_json::to_value(m).unwrap())
        .unwrap_or(Value::Null);
    Run {
        dir: dir.to_path_buf(),
        code: out.code,
        manifest,
        elapsed,
        diagnostics: out.diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambert_w_inverts() {
        for x in [-0.36, -0.1, 0.0, 0.5, 1.0, 10.0, 1e3] {
            let w = lambert_w0(x);
            assert!((w * w.exp() - x).abs() <= 1e-13 * x.abs().max(1.0), "{x}");
            assert!(w >= -1.0);
        }
        assert!((lambert_w0(1.0) - 0.567_143_290_409_783_9).abs() < 1e-15);
    }

    #[test]
    fn real_root_satisfies_equation() {
        for (l, t) in [(0.1, 1.0), (0.5, 0.5), (1.0, 0.3), (0.2, 0.0)] {
            let g = real_characteristic_root(l, t);
            assert!((g + l * (-g * t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn delay_free_exponent_is_neutral() {
        assert_eq!(delay_free_exponent(0.1, 20.0), 0.0);
        assert_eq!(delay_free_exponent(3.0, 0.5), 0.0);
    }
}
