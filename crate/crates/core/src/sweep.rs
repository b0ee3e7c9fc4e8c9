//! Accuracy-versus-noise sweeps.
//!
//! The sweep axis is the noise amplitude `√(2D)`; each grid point configures
//! a single source with intensity `D = a² / 2`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::mitigation::{Mitigation, PoolSpec};
use crate::network::Network;
use crate::noise::{
    noisy_accuracy, Correlation, NoiseConfig, NoiseKind, NoiseSource, NoisyAccuracy,
};

pub const DEFAULT_REPEATS: usize = 10;
pub const CSV_HEADER: &str = "sqrt2D,mean_accuracy,stderr";

/// Parses a decimal literal without exponent into `(digits, decimals)`,
/// e.g. `"0.05"` → `(5, 2)`.
fn parse_decimal(s: &str) -> Result<(u64, u32)> {
    let bad = || Error::Config(format!("invalid grid value {s:?}"));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 9 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let value = digits.parse::<u64>().map_err(|_| bad())?;
    Ok((value, frac.len() as u32))
}

/// Parses `start:end:step` (inclusive, evaluated in exact decimal arithmetic
/// so `0:1:0.05` yields exactly 0, 0.05, …, 1) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    let values = if let Some((start, rest)) = text.split_once(':') {
        let (end, step) = rest
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("grid {text:?} must be start:end:step")))?;
        let parts = [
            parse_decimal(start)?,
            parse_decimal(end)?,
            parse_decimal(step)?,
        ];
        let decimals = parts.iter().map(|p| p.1).max().unwrap();
        let scaled: Vec<u64> = parts
            .iter()
            .map(|&(v, d)| v * 10u64.pow(decimals - d))
            .collect();
        let (start, end, step) = (scaled[0], scaled[1], scaled[2]);
        if step == 0 {
            return Err(Error::Config("grid step must be positive".into()));
        }
        if end < start {
            return Err(Error::Config(format!("grid {text:?} runs backwards")));
        }
        let scale = 10f64.powi(decimals as i32);
        (0..=(end - start) / step)
            .map(|k| (start + k * step) as f64 / scale)
            .collect()
    } else {
        text.split(',')
            .map(|v| {
                let (digits, decimals) = parse_decimal(v.trim())?;
                Ok(digits as f64 / 10f64.powi(decimals as i32))
            })
            .collect::<Result<Vec<_>>>()?
    };
    validate_grid(&values)?;
    Ok(values)
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config(
            "grid values must be finite and non-negative".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("grid must be strictly ascending".into()));
    }
    Ok(())
}

/// `0, 0.05, …, 1`
pub fn default_grid() -> Vec<f64> {
    parse_grid("0:1:0.05").expect("default grid parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: NoiseKind,
    pub layer: usize,
    /// Amplitudes `√(2D)`, ascending.
    pub grid: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub split: Split,
    pub mitigation: Option<Mitigation>,
}

impl SweepSpec {
    pub fn new(kind: NoiseKind, layer: usize) -> Self {
        SweepSpec {
            kind,
            layer,
            grid: default_grid(),
            repeats: DEFAULT_REPEATS,
            seed: 0,
            split: Split::Test,
            mitigation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.grid)?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config_at(&self, amplitude: f64) -> NoiseConfig {
        NoiseConfig::single(
            NoiseSource::from_amplitude(self.kind, self.layer, amplitude),
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// `√(2D)`
    pub amplitude: f64,
    pub mean_accuracy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Digest of the weight file the sweep ran on, when known.
    pub network: Option<String>,
    pub seed: u64,
    pub spec: SweepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub provenance: Provenance,
}

impl SweepResult {
    /// `sqrt2D,mean_accuracy,stderr` rows in grid order, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.amplitude, r.mean_accuracy, r.stderr);
        }
        out
    }

    pub fn min_row(&self) -> Option<&SweepRow> {
        self.rows
            .iter()
            .min_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy))
    }
}

/// Parses a CSV written by [`SweepResult::to_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config(format!(
            "sweep CSV must start with {CSV_HEADER:?}"
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::Config(format!("sweep CSV line {}: bad number {s:?}", i + 2))
                })
            };
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "sweep CSV line {}: expected 3 fields",
                    i + 2
                )));
            }
            Ok(SweepRow {
                amplitude: parse(fields[0])?,
                mean_accuracy: parse(fields[1])?,
                stderr: parse(fields[2])?,
            })
        })
        .collect()
}

/// Applies `spec.mitigation` (if any), then measures mean accuracy at
/// every grid amplitude.
pub fn run_sweep(net: &Network, spec: &SweepSpec, data: &Dataset) -> Result<SweepResult> {
    spec.validate()?;
    let target = match &spec.mitigation {
        Some(m) => m.apply(net)?,
        None => net.clone(),
    };
    let rows = spec
        .grid
        .iter()
        .map(|&amplitude| {
            let acc = noisy_accuracy(&target, data, &spec.config_at(amplitude), spec.repeats)?;
            Ok(SweepRow {
                amplitude,
                mean_accuracy: acc.mean,
                stderr: acc.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        rows,
        provenance: Provenance {
            network: None,
            seed: spec.seed,
            spec: spec.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRow {
    pub m: usize,
    pub amplitude: f64,
    pub accuracy: NoisyAccuracy,
}

/// Worst-case accuracy of the pooled network for each `m`, measured at the
/// largest grid amplitude of `template` (where uncorrelated noise does the
/// most damage). `template.mitigation` is ignored.
pub fn min_accuracy_vs_m(
    net: &Network,
    data: &Dataset,
    template: &SweepSpec,
    ms: &[usize],
) -> Result<Vec<PoolRow>> {
    template.validate()?;
    if template.kind.correlation != Correlation::Uncorrelated {
        return Err(Error::Config(format!(
            "pooling targets uncorrelated noise, got {}",
            template.kind
        )));
    }
    let amplitude = *template.grid.last().expect("validated grid is nonempty");
    let cfg = template.config_at(amplitude);
    ms.iter()
        .map(|&m| {
            let pooled = Mitigation::Pool(PoolSpec {
                m,
                layer: template.layer,
            })
            .apply(net)?;
            Ok(PoolRow {
                m,
                amplitude,
                accuracy: noisy_accuracy(&pooled, data, &cfg, template.repeats)?,
            })
        })
        .collect()
}
