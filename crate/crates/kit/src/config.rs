//! Strict JSON configuration. Every section is optional and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use leads_kit_core::analysis::CollisionVolume;
use leads_kit_core::devtree::{DeviceSpec, DeviceTree};
use leads_kit_core::esc::{Calibration, EscSystem, EscTables, VehicleParams};
use leads_kit_core::infer::Inference;
use serde::{Deserialize, Serialize};

use crate::comm::ServerOptions;

pub const CONFIG_ENV: &str = "LEADS_KIT_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {key}: {message}")]
    Parse { key: String, message: String },
    #[error("config {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub devices: Vec<DeviceSpec>,
    pub comm: CommConfig,
    pub vehicle: VehicleParams,
    pub esc: EscTables,
    pub calibration: Calibration,
    pub systems: Vec<EscSystem>,
    pub pacer: PacerConfig,
    pub emulation: EmulationConfig,
    pub analysis: CollisionVolume,
    pub inference: InferenceConfig,
    pub paths: PathsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            devices: Vec::new(),
            comm: CommConfig::default(),
            vehicle: VehicleParams::default(),
            esc: EscTables::default(),
            calibration: Calibration::Standard,
            systems: EscSystem::ALL.to_vec(),
            pacer: PacerConfig::default(),
            emulation: EmulationConfig::default(),
            analysis: CollisionVolume::default(),
            inference: InferenceConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommConfig {
    pub host: String,
    pub port: u16,
    /// A single ASCII character.
    pub separator: String,
    pub pool_size: usize,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 16900,
            separator: ";".into(),
            pool_size: 4,
        }
    }
}

impl CommConfig {
    pub fn separator_byte(&self) -> Result<u8, ConfigError> {
        match self.separator.as_bytes() {
            [b] if b.is_ascii() => Ok(*b),
            _ => Err(ConfigError::Invalid {
                key: "comm.separator",
                message: format!("{:?} is not a single ASCII character", self.separator),
            }),
        }
    }

    pub fn server_options(&self) -> Result<ServerOptions, ConfigError> {
        Ok(ServerOptions {
            host: self.host.clone(),
            port: self.port,
            separator: self.separator_byte()?,
            pool_size: self.pool_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacerConfig {
    pub target_rate: f64,
}

impl Default for PacerConfig {
    fn default() -> Self {
        Self { target_rate: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmulationConfig {
    /// Seconds of (simulated) time.
    pub duration: f64,
    pub seed: u64,
    /// Multiplier on every channel's noise; 0 gives a clean trajectory.
    pub noise: f64,
    /// Simulated per-frame work, Gaussian in seconds, truncated at 0.
    pub net_delay_mean: f64,
    pub net_delay_std: f64,
    /// `(lat, lon)` of the circuit center.
    pub center: (f64, f64),
    /// Ellipse semi-axes in meters, east and north.
    pub semi_major: f64,
    pub semi_minor: f64,
    /// km/h
    pub mean_speed: f64,
    pub speed_amplitude: f64,
    /// Seconds per speed oscillation.
    pub speed_period: f64,
    /// Meters to a constant obstacle ahead; absent channel when `None`.
    pub obstacle_distance: Option<f64>,
}

impl Default for EmulationConfig {
    fn default() -> Self {
        Self {
            duration: 30.0,
            seed: 0,
            noise: 1.0,
            net_delay_mean: 0.0032,
            net_delay_std: 0.001,
            center: (45.0, 7.0),
            semi_major: 300.0,
            semi_minor: 150.0,
            mean_speed: 60.0,
            speed_amplitude: 20.0,
            speed_period: 20.0,
            obstacle_distance: Some(200.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Names as accepted by the `infer` command, applied in order.
    pub inferences: Vec<String>,
    pub cache_limit: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            inferences: Vec::new(),
            cache_limit: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Default output location when `--output` is not given.
    pub output: Option<PathBuf>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Parse {
                key: if key == "." { "(root)".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// `explicit`, else the `LEADS_KIT_CONFIG` path, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn invalid(key: &'static str, message: impl ToString) -> ConfigError {
            ConfigError::Invalid {
                key,
                message: message.to_string(),
            }
        }
        DeviceTree::from_specs(&self.devices).map_err(|e| invalid("devices", e))?;
        self.comm.separator_byte()?;
        if self.comm.pool_size == 0 {
            return Err(invalid("comm.pool_size", "must be at least 1"));
        }
        self.vehicle.validate().map_err(|e| invalid("vehicle", e))?;
        self.esc.validate().map_err(|e| invalid("esc", e))?;
        for (i, s) in self.systems.iter().enumerate() {
            if self.systems[..i].contains(s) {
                return Err(invalid("systems", format!("{s} listed twice")));
            }
        }
        let r = self.pacer.target_rate;
        if !(r > 0.0 && r < 1000.0) {
            return Err(invalid("pacer.target_rate", "must lie in (0, 1000)"));
        }
        let em = &self.emulation;
        if !(em.duration > 0.0) || !em.duration.is_finite() {
            return Err(invalid("emulation.duration", "must be positive"));
        }
        if !(em.noise >= 0.0 && em.net_delay_mean >= 0.0 && em.net_delay_std >= 0.0) {
            return Err(invalid("emulation", "noise and net delays must be non-negative"));
        }
        if !(em.semi_major > 0.0 && em.semi_minor > 0.0 && em.speed_period > 0.0) {
            return Err(invalid("emulation", "circuit axes and speed period must be positive"));
        }
        if !(em.mean_speed > 0.0 && em.speed_amplitude >= 0.0 && em.speed_amplitude < em.mean_speed)
        {
            return Err(invalid(
                "emulation.speed_amplitude",
                "need 0 <= speed_amplitude < mean_speed",
            ));
        }
        if em.obstacle_distance.is_some_and(|d| !(d >= 0.0)) {
            return Err(invalid("emulation.obstacle_distance", "must be non-negative"));
        }
        self.analysis.validate().map_err(|e| invalid("analysis", e))?;
        self.inferences()?;
        if self.inference.cache_limit == 0 {
            return Err(invalid("inference.cache_limit", "must be at least 1"));
        }
        Ok(())
    }

    pub fn inferences(&self) -> Result<Vec<Inference>, ConfigError> {
        parse_inferences(self.inference.inferences.iter().map(String::as_str))
            .map_err(|message| ConfigError::Invalid {
                key: "inference.inferences",
                message,
            })
    }
}

pub fn parse_inferences<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<Inference>, String> {
    names
        .into_iter()
        .map(|n| Inference::parse(n).map_err(|e| e.to_string()))
        .collect()
}
