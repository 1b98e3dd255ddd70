//! Scenario configuration.
//!
//! A scenario is a TOML document; every field has a default so an empty file
//! is a valid scenario. Physical quantities use the units engineers quote
//! (dB, dBm, degrees) and are converted to linear units by the accessors.
//! [`provenance`] tells which defaults come from the published parameter list
//! and which were chosen for this simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelParams;
use crate::em::{self, ArrayFrame, CircuitParams, FitCoefficients, PhaseCodebook, Vec3};
use crate::uav::{KinematicLimits, UavState};

/// Configuration problem, with the dotted path of the offending field.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Self { path: path.into(), msg: msg.into() }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Slots per episode.
    pub slots: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { slots: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub gamma0_db: f64,
    pub kappa_db: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub noise_dbm: f64,
    pub carrier_hz: f64,
    pub gamma0_in_rician: bool,
    pub los_only: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            gamma0_db: -10.0,
            kappa_db: 10.0,
            alpha_los: 2.0,
            alpha_nlos: 3.0,
            noise_dbm: -50.0,
            carrier_hz: 0.839e9,
            gamma0_in_rician: true,
            los_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NomaConfig {
    pub transmit_power_w: f64,
    /// Box that raw power-split actions are projected into.
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NomaConfig {
    fn default() -> Self {
        Self { transmit_power_w: 0.2, beta_min: 1e-6, beta_max: 1.0 - 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovertConfig {
    /// Covertness level: require `xi >= 1 - epsilon`.
    pub epsilon: f64,
    /// Required average public rate, bit/s/Hz.
    pub public_rate_min: f64,
}

impl Default for CovertConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, public_rate_min: 3.3 }
    }
}

/// Which running-average rate forms the main reward term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateSource {
    #[default]
    Bob,
    Carol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the public-rate indicator.
    pub nu1: f64,
    /// Weight of the covertness indicator.
    pub nu2: f64,
    pub rate_source: RateSource,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { nu1: 1.0, nu2: 1.0, rate_source: RateSource::Bob }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RisConfig {
    pub elements: usize,
    pub phase_bits: PhaseCodebook,
    pub center: Vec3,
    /// Direction along which the elements are laid out (horizontal).
    pub axis: Vec3,
    /// Broadside direction of the unbent surface.
    pub normal: Vec3,
    /// Element pitch in carrier wavelengths.
    pub spacing_wavelengths: f64,
    /// Largest bend magnitude accepted from actions, degrees.
    pub max_bend_deg: f64,
    /// Replace every fitted amplitude by this value (diagnostics only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude_override: Option<f64>,
    pub fit: FitCoefficients,
}

impl Default for RisConfig {
    fn default() -> Self {
        Self {
            elements: 64,
            phase_bits: PhaseCodebook::default(),
            center: [100.0, 0.0, 20.0],
            axis: [1.0, 0.0, 0.0],
            normal: [0.0, 1.0, 0.0],
            spacing_wavelengths: 0.5,
            max_bend_deg: em::MAX_BEND_DEG,
            amplitude_override: None,
            fit: FitCoefficients::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub carol: Vec3,
    pub willie: Vec3,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self { carol: [0.0, 0.0, 0.0], willie: [200.0, 0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Master seed used when a reset does not name one.
    pub seed: u64,
    pub episode: EpisodeConfig,
    pub channel: ChannelConfig,
    pub noma: NomaConfig,
    pub covert: CovertConfig,
    pub reward: RewardConfig,
    pub kinematics: KinematicLimits,
    pub ris: RisConfig,
    pub circuit: CircuitParams,
    pub nodes: NodeConfig,
    pub alice: UavState,
    pub bob: UavState,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            episode: EpisodeConfig::default(),
            channel: ChannelConfig::default(),
            noma: NomaConfig::default(),
            covert: CovertConfig::default(),
            reward: RewardConfig::default(),
            kinematics: KinematicLimits::default(),
            ris: RisConfig::default(),
            circuit: CircuitParams::default(),
            nodes: NodeConfig::default(),
            alice: UavState::at([60.0, 60.0, 45.0]),
            bob: UavState::at([150.0, 60.0, 45.0]),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

impl ScenarioConfig {
    /// Parses a scenario; omitted keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides::<&str>(text, &[])
    }

    /// Applies dotted-path overrides (`"covert.epsilon=0.2"`) on top of a TOML
    /// document, then parses and validates the result.
    pub fn from_toml_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::new("<toml>", e.to_string()))?;
        let mut doc = toml::Table::try_from(Self::default()).expect("defaults serialize");
        merge(&mut doc, user, "")?;
        for item in overrides {
            let item = item.as_ref();
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::new(item, "override must look like key.path=value"))?;
            set_path(&mut doc, path.trim(), parse_value(raw.trim()))?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| ConfigError::new("<toml>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            gamma0: db_to_linear(c.gamma0_db),
            kappa: db_to_linear(c.kappa_db),
            alpha_los: c.alpha_los,
            alpha_nlos: c.alpha_nlos,
            noise_power: dbm_to_watts(c.noise_dbm),
            carrier_hz: c.carrier_hz,
            gamma0_in_rician: c.gamma0_in_rician,
            los_only: c.los_only,
        }
    }

    pub fn array_frame(&self) -> Result<ArrayFrame> {
        let spacing = self.ris.spacing_wavelengths * self.channel_params().wavelength();
        ArrayFrame::new(self.ris.center, self.ris.axis, self.ris.normal, spacing)
            .map_err(|e| ConfigError::new("ris", e.to_string()))
    }

    pub fn elements(&self) -> usize {
        self.ris.elements
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode.slots < 1 {
            return Err(ConfigError::new("episode.slots", "must be >= 1"));
        }
        self.channel_params()
            .validate()
            .map_err(|e| ConfigError::new("channel", e.to_string()))?;
        let n = &self.noma;
        if !(n.transmit_power_w > 0.0 && n.transmit_power_w.is_finite()) {
            return Err(ConfigError::new("noma.transmit_power_w", "must be positive"));
        }
        if !(n.beta_min > 0.0 && n.beta_min <= n.beta_max && n.beta_max < 1.0) {
            return Err(ConfigError::new("noma.beta_min", "need 0 < beta_min <= beta_max < 1"));
        }
        if !(0.0..=1.0).contains(&self.covert.epsilon) {
            return Err(ConfigError::new("covert.epsilon", "must lie in [0, 1]"));
        }
        if !(self.covert.public_rate_min >= 0.0 && self.covert.public_rate_min.is_finite()) {
            return Err(ConfigError::new("covert.public_rate_min", "must be non-negative"));
        }
        if !(self.reward.nu1.is_finite() && self.reward.nu2.is_finite()) {
            return Err(ConfigError::new("reward", "weights must be finite"));
        }
        if let Some(name) = self.kinematics.check() {
            return Err(ConfigError::new(format!("kinematics.{name}"), "out of range"));
        }
        if self.ris.elements < 1 {
            return Err(ConfigError::new("ris.elements", "must be >= 1"));
        }
        if !(self.ris.spacing_wavelengths > 0.0) {
            return Err(ConfigError::new("ris.spacing_wavelengths", "must be positive"));
        }
        if !(0.0..=em::MAX_BEND_DEG).contains(&self.ris.max_bend_deg) {
            return Err(ConfigError::new("ris.max_bend_deg", "must lie in [0, 90]"));
        }
        if let Some(a) = self.ris.amplitude_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(ConfigError::new("ris.amplitude_override", "must lie in [0, 1]"));
            }
        }
        self.array_frame()?;
        self.circuit
            .validate()
            .map_err(|e| ConfigError::new("circuit", e.to_string()))?;
        for (name, p) in [("nodes.carol", self.nodes.carol), ("nodes.willie", self.nodes.willie)] {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new(name, "coordinates must be finite"));
            }
        }
        for (name, s) in [("alice", &self.alice), ("bob", &self.bob)] {
            if !self.kinematics.admits(s) || s.position.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new(name, "initial state lies outside the flight envelope"));
            }
        }
        let sep = crate::uav::check_separation(self.alice.position, self.bob.position, self.kinematics.d_min);
        if !sep.ok {
            return Err(ConfigError::new(
                "bob.position",
                format!("initial separation {:.3} m is below d_min", sep.distance),
            ));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn coerce(existing: Option<&toml::Value>, value: toml::Value) -> toml::Value {
    match (existing, value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (Some(toml::Value::Array(old)), toml::Value::Array(new)) => {
            let hint = old.first();
            toml::Value::Array(new.into_iter().map(|v| coerce(hint, v)).collect())
        }
        (_, v) => v,
    }
}

fn merge(doc: &mut toml::Table, user: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in user {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (doc.get_mut(&key), value) {
            (Some(toml::Value::Table(inner)), toml::Value::Table(sub)) => merge(inner, sub, &path)?,
            (Some(toml::Value::Table(_)), _) => return Err(ConfigError::new(path, "expected a table")),
            (existing, value) => {
                let value = coerce(existing.as_deref(), value);
                doc.insert(key, value);
            }
        }
    }
    Ok(())
}

fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::new(path, "empty key"))?;
    let mut table = doc;
    for part in parts {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(path, format!("`{part}` is not a table")))?;
    }
    let value = coerce(table.get(leaf), value);
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Where a default value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Published simulation parameter.
    Published,
    /// Chosen for this simulator.
    Invented,
}

const PUBLISHED: &[&str] = &[
    "channel.gamma0_db",
    "channel.kappa_db",
    "channel.alpha_los",
    "channel.alpha_nlos",
    "channel.noise_dbm",
    "noma.transmit_power_w",
    "covert.epsilon",
    "covert.public_rate_min",
    "kinematics.v_max",
    "kinematics.ac_max",
    "kinematics.z_min",
    "kinematics.z_max",
    "kinematics.d_min",
    "ris.elements",
    "ris.fit.p",
    "circuit.l_b",
    "circuit.l_t",
    "circuit.r_t",
    "circuit.c_t",
    "circuit.c_range",
];

/// Provenance of the default at dotted `path`.
pub fn provenance(path: &str) -> Provenance {
    if PUBLISHED.contains(&path) {
        Provenance::Published
    } else {
        Provenance::Invented
    }
}

/// TOML dump of `cfg` with a provenance comment on every key.
pub fn annotated_toml(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let mut section = String::new();
    for line in cfg.to_toml().lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            out.push_str(line);
        } else if let Some((key, _)) = trimmed.split_once('=') {
            let key = key.trim();
            let path = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            let tag = match provenance(&path) {
                Provenance::Published => "published default",
                Provenance::Invented => "simulator default",
            };
            out.push_str(&format!("{line}  # {tag}"));
        } else {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}
