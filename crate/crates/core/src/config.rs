//! Run configuration: one TOML file with a schema version, optionally based
//! on a named preset whose values the file overrides key by key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyrate::SecurityParams;
use crate::montecarlo::DriftScenario;
use crate::photonics::{ChannelModel, PhaseTrajectory, SourceModel};
use crate::tags::CoincidenceConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 2] = ["paper_scenario_i", "paper_scenario_ii"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_signals: u64,
    /// s
    pub block_time: f64,
    pub trials: u32,
    /// rad/s
    pub rates: Vec<f64>,
    /// Key-rate loss that defines the tolerance threshold.
    pub threshold_fraction: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_signals: 3000,
            block_time: 1.0,
            trials: 300,
            rates: (0..=30).map(|k| k as f64 * 0.1).collect(),
            threshold_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Delay range searched for the slot triplet, ps.
    pub range_lo: i64,
    pub range_hi: i64,
    pub bin_width: i64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            range_lo: 0,
            range_hi: 200_000,
            bin_width: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// s
    pub duration: f64,
    /// s
    pub block_duration: f64,
    pub output_dir: PathBuf,
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub coincidence: CoincidenceConfig,
    pub security: SecurityParams,
    pub sweep: SweepConfig,
    pub calibration: CalibrationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            preset: None,
            scenario: "default".into(),
            seed: None,
            duration: 60.0,
            block_duration: 1.0,
            output_dir: PathBuf::from("out"),
            source: SourceModel::default(),
            channel: ChannelModel::default(),
            coincidence: CoincidenceConfig::default(),
            security: SecurityParams::default(),
            sweep: SweepConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Named parameter sets for the two recorded field runs.
    ///
    /// Both use 100 ps jitter and 300 ps slots, and a pair rate chosen so that
    /// `pair_rate * eta_A * eta_B` is about 9000 coincidences/s.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = RunConfig {
            preset: Some(name.to_string()),
            scenario: name.to_string(),
            seed: Some(1),
            ..RunConfig::default()
        };
        cfg.source.pair_rate = 8.8e6;
        cfg.channel.detector_jitter_sigma = 100.0;
        cfg.coincidence = cfg.coincidence.with_halfwidth(300);
        match name {
            "paper_scenario_i" => {
                cfg.source.visibility_z = 1.0 - 2.0 * 0.042;
                cfg.source.visibility_xy = 0.885;
                // free-running interferometers: 0.6 mrad/s intrinsic drift
                cfg.source.trajectory = PhaseTrajectory::Linear {
                    initial: 0.4,
                    rate: 6e-4,
                };
            }
            "paper_scenario_ii" => {
                cfg.source.visibility_z = 1.0 - 2.0 * 0.034;
                cfg.source.visibility_xy = 0.865;
                cfg.source.trajectory = PhaseTrajectory::Linear {
                    initial: 0.0,
                    rate: 0.1,
                };
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (available: {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        Self::from_toml_with_preset(src, None)
    }

    /// Parse `src`, using `preset` as the base instead of the file's own
    /// `preset` key when given.
    pub fn from_toml_with_preset(src: &str, preset: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = src.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(p) = preset {
            table.insert("preset".into(), toml::Value::String(p.to_string()));
        }
        let merged = match table.get("preset") {
            Some(toml::Value::String(name)) => {
                let mut base = toml::Table::try_from(RunConfig::preset(name).map_err(|e| located(src, "preset", e))?)
                    .map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut base, table);
                base
            }
            Some(_) => {
                return Err(located(
                    src,
                    "preset",
                    Error::Config("`preset` must be a string".into()),
                ))
            }
            None => table,
        };
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| deser_error(src, e))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(located(
                src,
                "schema_version",
                Error::Config(format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    cfg.schema_version
                )),
            ));
        }
        cfg.validate().map_err(|e| match &e {
            Error::InvalidParameter { name, .. } => located(src, name, Error::Config(e.to_string())),
            _ => Error::Config(e.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::load_with_preset(path, None)
    }

    pub fn load_with_preset(path: &std::path::Path, preset: Option<&str>) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_toml_with_preset(&src, preset).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(crate::error::invalid("duration", "must be finite and non-negative"));
        }
        if !(self.block_duration > 0.0 && self.block_duration.is_finite()) {
            return Err(crate::error::invalid("block_duration", "must be positive"));
        }
        self.source.validate()?;
        self.channel.validate()?;
        self.coincidence.validate()?;
        self.security.validate()?;
        if self.sweep.rates.is_empty() {
            return Err(crate::error::invalid("rates", "sweep needs at least one rate"));
        }
        if !(0.0..1.0).contains(&self.sweep.threshold_fraction) {
            return Err(crate::error::invalid("threshold_fraction", "must be in [0, 1)"));
        }
        self.drift_template().validate()?;
        if self.calibration.bin_width <= 0 || self.calibration.range_hi <= self.calibration.range_lo {
            return Err(crate::error::invalid(
                "bin_width",
                "calibration range or bin width is empty",
            ));
        }
        Ok(())
    }

    /// Monte Carlo template matching the source's state and the sweep settings.
    pub fn drift_template(&self) -> DriftScenario {
        DriftScenario {
            n_signals: self.sweep.n_signals,
            block_time: self.sweep.block_time,
            trials: self.sweep.trials,
            seed: self.seed.unwrap_or(0),
            visibility_z: self.source.visibility_z,
            visibility_xy: self.source.visibility_xy,
            ..DriftScenario::default()
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Table-level errors carry no span, only the key path; locate its last segment.
fn deser_error(src: &str, e: toml::de::Error) -> Error {
    let msg = e.to_string();
    let key = msg
        .rsplit_once("in `")
        .and_then(|(_, rest)| rest.split('`').next())
        .and_then(|path| path.rsplit('.').next())
        .map(str::to_string);
    let msg = msg.trim_end().replace('\n', " ");
    match key {
        Some(k) => located(src, &k, Error::Config(msg)),
        None => Error::Config(msg),
    }
}

/// Prefix the first line that assigns `key`, when there is one.
fn located(src: &str, key: &str, err: Error) -> Error {
    let msg = match err {
        Error::Config(m) => m,
        other => other.to_string(),
    };
    let line = src.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    });
    match line {
        Some(n) => Error::Config(format!("line {}: {msg}", n + 1)),
        None => Error::Config(msg),
    }
}
