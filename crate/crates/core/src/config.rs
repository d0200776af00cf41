//! Scenario configuration: TOML sections, `key=value` overrides, alternate
//! device mixes and validation with section/line diagnostics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dormancy::DormancyMode;
use crate::mobility::{CsfbConfig, ReselectionConfig};
use crate::radio::CellConfig;
use crate::rng::Distribution;
use crate::rrc::{StateTimers, TransitionCostTable};
use crate::traffic::{class_counts, default_mix, DeviceClass, DeviceProfile, LoadShape, Profiles, TrafficConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub section: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error in [{}] at line {line}: {}", self.section, self.message),
            None => write!(f, "config error in [{}]: {}", self.section, self.message),
        }
    }
}

impl ConfigError {
    pub fn new(section: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            section: section.into(),
            line: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Features {
    pub cell_pch: bool,
    pub ura_pch: bool,
    pub e_fd: bool,
    pub legacy_imei_handling: bool,
    pub d2p_direct: bool,
    pub p2d_direct: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            cell_pch: true,
            ura_pch: false,
            e_fd: false,
            legacy_imei_handling: false,
            d2p_direct: false,
            p2d_direct: false,
        }
    }
}

const FEATURE_KEYS: [&str; 6] = ["cell_pch", "ura_pch", "e_fd", "legacy_imei_handling", "d2p_direct", "p2d_direct"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DormancyConfig {
    /// Forces one mode on every class; absent means per-class modes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<DormancyMode>,
    pub t323_s: f64,
    pub gap_s: Distribution,
    pub imei_registry: Vec<DeviceClass>,
}

impl Default for DormancyConfig {
    fn default() -> Self {
        Self {
            mode: None,
            t323_s: 10.0,
            gap_s: Distribution::Uniform { lo: 3.0, hi: 10.0 },
            imei_registry: vec![DeviceClass::SmartS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FachConfig {
    pub tb_count: u8,
}

impl Default for FachConfig {
    fn default() -> Self {
        Self { tb_count: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PagingConfig {
    pub capacity_pps: f64,
    pub retry_limit: u32,
    pub retry_interval_ms: u64,
    /// Cells in one location area; 0 means the whole network.
    pub la_cells: u32,
}

impl Default for PagingConfig {
    fn default() -> Self {
        Self {
            capacity_pps: 3.0,
            retry_limit: 2,
            retry_interval_ms: 1000,
            la_cells: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropConfig {
    /// Drop hazard per transition out of a connected state.
    pub ps_drop_p: f64,
    /// Drop hazard per FACH/DCH switch.
    pub hsdpa_drop_p: f64,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            ps_drop_p: 0.0022,
            hsdpa_drop_p: 0.0022,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub population: u32,
    pub features: Features,
    pub costs: TransitionCostTable,
    pub timers: StateTimers,
    pub dormancy: DormancyConfig,
    pub fach: FachConfig,
    pub paging: PagingConfig,
    pub cell: CellConfig,
    pub resel: ReselectionConfig,
    pub csfb: CsfbConfig,
    pub traffic: TrafficConfig,
    pub drops: DropConfig,
    pub load: LoadShape,
    pub profiles: Profiles,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            duration_s: 86_400.0,
            population: 10_000,
            features: Features::default(),
            costs: TransitionCostTable::default(),
            timers: StateTimers::default(),
            dormancy: DormancyConfig::default(),
            fach: FachConfig::default(),
            paging: PagingConfig::default(),
            cell: CellConfig::default(),
            resel: ReselectionConfig::default(),
            csfb: CsfbConfig::default(),
            traffic: TrafficConfig::default(),
            drops: DropConfig::default(),
            load: LoadShape::default(),
            profiles: default_profiles(),
        }
    }
}

/// Shipped per-class calibration: the observed device mix with rates chosen
/// so smartphones carry about 88% of CS setups and tablets signal most per
/// device.
pub fn default_profiles() -> Profiles {
    let mut out = BTreeMap::new();
    for (class, pen) in default_mix() {
        let mut p = DeviceProfile::new(pen);
        let (ps, cs, mode, mob) = match class {
            DeviceClass::Feature => (0.02, 0.0617, DormancyMode::None, 1.0),
            DeviceClass::SmartA => (2.0, 0.5, DormancyMode::EFd, 2.0),
            DeviceClass::SmartS => (1.0, 0.5, DormancyMode::LegacyFd, 2.0),
            DeviceClass::SmartI => (2.0, 0.5, DormancyMode::None, 2.0),
            DeviceClass::SmartB => (2.0, 0.5, DormancyMode::LegacyFd, 2.0),
            DeviceClass::Tablet => (8.0, 0.0, DormancyMode::EFd, 1.0),
            DeviceClass::Datacard => (1.0, 0.0, DormancyMode::None, 0.5),
            DeviceClass::Router => (1.0, 0.0, DormancyMode::None, 0.0),
        };
        p.ps_session_rate_per_hour = ps;
        p.cs_call_rate_per_hour = cs;
        p.dormancy_mode = mode;
        p.mobility_rate_per_hour = mob;
        out.insert(class, p);
    }
    out
}

impl ScenarioConfig {
    pub fn duration_ms(&self) -> u64 {
        crate::engine::secs_to_ms(self.duration_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |section: &str, m: String| Err(ConfigError::new(section, m));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return err("top-level", format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if self.population == 0 {
            return err("top-level", "population must be > 0".into());
        }
        self.timers.validate().or_else(|m| err("timers", m))?;
        if !(0.0..=120.0).contains(&self.dormancy.t323_s) {
            return err("dormancy", format!("t323_s must lie in [0, 120], got {}", self.dormancy.t323_s));
        }
        if let Err(e) = self.dormancy.gap_s.validate() {
            return err("dormancy", format!("gap_s: {e}"));
        }
        if self.dormancy.gap_s.min_value() <= 0.0 {
            return err("dormancy", "gap_s must be > 0".into());
        }
        for class in &self.dormancy.imei_registry {
            if !self.profiles.contains_key(class) {
                return err("dormancy", format!("imei_registry names undefined profile {class}"));
            }
        }
        if !matches!(self.fach.tb_count, 1 | 2) {
            return err("fach", format!("tb_count must be 1 or 2, got {}", self.fach.tb_count));
        }
        if self.paging.capacity_pps.is_nan() || self.paging.capacity_pps <= 0.0 {
            return err("paging", format!("capacity_pps must be > 0, got {}", self.paging.capacity_pps));
        }
        if self.paging.retry_interval_ms == 0 {
            return err("paging", "retry_interval_ms must be > 0".into());
        }
        self.cell.validate().or_else(|m| err("cell", m))?;
        self.resel.validate().or_else(|m| err("resel", m))?;
        self.csfb.validate().or_else(|m| err("csfb", m))?;
        self.traffic.validate().or_else(|m| err("traffic", m))?;
        for (name, p) in [("ps_drop_p", self.drops.ps_drop_p), ("hsdpa_drop_p", self.drops.hsdpa_drop_p)] {
            if !(0.0..=1.0).contains(&p) {
                return err("drops", format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        self.load.validate().or_else(|e| err("load", e.to_string()))?;
        if self.profiles.is_empty() {
            return err("profiles", "at least one profile is required".into());
        }
        for (class, p) in &self.profiles {
            p.validate(*class).or_else(|e| err(&format!("profiles.{class}"), e.to_string()))?;
        }
        if let Err(e) = class_counts(self.population, &self.profiles) {
            return err("profiles", e.to_string());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Parses and validates a config text with no overrides.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        ConfigSource::parse(text)?.build(&[])
    }
}

/// A parsed config file that overrides and mixes can be applied to before
/// the final typed build.
#[derive(Debug, Clone)]
pub struct ConfigSource {
    text: String,
    table: toml::Table,
}

impl ConfigSource {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e| de_error(text, &e))?;
        // Typed pass over the raw text for line-accurate schema errors.
        toml::from_str::<ScenarioConfig>(text).map_err(|e| de_error(text, &e))?;
        Ok(Self {
            text: text.to_string(),
            table,
        })
    }

    /// Replaces the profile set with the classes of a mix file, given either
    /// as `[profiles.CLASS]` tables or bare `[CLASS]` tables.
    pub fn with_mix(mut self, mix_text: &str) -> Result<Self, ConfigError> {
        let mix: toml::Table = mix_text.parse().map_err(|e| {
            let mut err = de_error(mix_text, &e);
            err.section = format!("mix: {}", err.section);
            err
        })?;
        let profiles = match mix.get("profiles") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(ConfigError::new("profiles", "mix `profiles` must be a table")),
            None => mix,
        };
        toml::Value::Table(profiles.clone())
            .try_into::<Profiles>()
            .map_err(|e| ConfigError::new("profiles", format!("mix: {}", e.message())))?;
        self.table.insert("profiles".into(), toml::Value::Table(profiles));
        Ok(self)
    }

    /// Applies `key=value` overrides in order, then deserializes and
    /// validates.
    pub fn build(&self, overrides: &[(String, String)]) -> Result<ScenarioConfig, ConfigError> {
        let mut table = self.table.clone();
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let merged = toml::to_string(&table).map_err(|e| ConfigError::new("top-level", e.to_string()))?;
        let cfg: ScenarioConfig = toml::from_str(&merged).map_err(|e| {
            let mut err = de_error(&merged, &e);
            err.line = locate_section(&self.text, &err.section);
            err
        })?;
        cfg.validate().map_err(|mut e| {
            e.line = locate_section(&self.text, &e.section);
            e
        })?;
        Ok(cfg)
    }
}

fn section_of_key(key: &str) -> String {
    match key.rsplit_once('.') {
        Some((section, _)) => section.to_string(),
        None => "top-level".into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn header_name(line: &str) -> Option<String> {
    let t = line.trim();
    let inner = t.strip_prefix('[')?.split(']').next()?;
    Some(inner.trim_matches(|c| c == '[' || c == ' ').to_string())
}

fn de_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let Some(span) = e.span() else {
        return ConfigError::new("top-level", e.message().to_string());
    };
    let line = line_of(text, span.start);
    let section = text
        .lines()
        .take(line)
        .filter_map(header_name)
        .last()
        .unwrap_or_else(|| "top-level".into());
    ConfigError {
        section,
        line: Some(line),
        message: e.message().trim().to_string(),
    }
}

fn locate_section(text: &str, section: &str) -> Option<usize> {
    text.lines()
        .position(|l| header_name(l).as_deref() == Some(section))
        .map(|i| i + 1)
}

/// Maps shorthand keys onto their full path: bare feature names and `pch`
/// live under `features`.
pub fn canonical_key(key: &str) -> String {
    let key = key.trim();
    if key == "pch" {
        return "features.cell_pch".into();
    }
    if FEATURE_KEYS.contains(&key) {
        return format!("features.{key}");
    }
    key.to_string()
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match raw.to_ascii_lowercase().as_str() {
        "on" | "yes" => return toml::Value::Boolean(true),
        "off" | "no" => return toml::Value::Boolean(false),
        _ => {}
    }
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let key = canonical_key(key);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(section_of_key(&key), format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(ConfigError::new(
                    section_of_key(&key),
                    format!("`{part}` in `{key}` is not a section"),
                ))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::new("override", format!("expected key=value, got `{s}`")))?;
    if k.trim().is_empty() {
        return Err(ConfigError::new("override", format!("empty key in `{s}`")));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Splits a comma-separated `k=v,k=v` list.
pub fn parse_override_list(s: &str) -> Result<Vec<(String, String)>, ConfigError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_override)
        .collect()
}
