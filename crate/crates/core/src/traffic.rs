//! Device classes, per-class traffic profiles, population building and the
//! PS-session / CS-call generators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dormancy::DormancyMode;
use crate::engine::{secs_to_ms, CellId, SimTime, UeId};
use crate::rng::{sample, Distribution, Purpose, RngStream};
use crate::rrc::UeContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeviceClass {
    Feature,
    SmartA,
    SmartS,
    SmartI,
    SmartB,
    Tablet,
    Datacard,
    Router,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 8] = [
        DeviceClass::Feature,
        DeviceClass::SmartA,
        DeviceClass::SmartS,
        DeviceClass::SmartI,
        DeviceClass::SmartB,
        DeviceClass::Tablet,
        DeviceClass::Datacard,
        DeviceClass::Router,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceClass::Feature => "FEATURE",
            DeviceClass::SmartA => "SMART_A",
            DeviceClass::SmartS => "SMART_S",
            DeviceClass::SmartI => "SMART_I",
            DeviceClass::SmartB => "SMART_B",
            DeviceClass::Tablet => "TABLET",
            DeviceClass::Datacard => "DATACARD",
            DeviceClass::Router => "ROUTER",
        }
    }

    pub fn is_smartphone(self) -> bool {
        matches!(
            self,
            DeviceClass::SmartA | DeviceClass::SmartS | DeviceClass::SmartI | DeviceClass::SmartB
        )
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeviceClass {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TrafficError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("penetrations sum to {0}, expected 1")]
    PenetrationSum(f64),
    #[error("unknown device class {0}")]
    UnknownClass(String),
    #[error("population must be positive")]
    EmptyPopulation,
    #[error("profile {class}: {message}")]
    InvalidProfile { class: DeviceClass, message: String },
    #[error("load shape: {0}")]
    InvalidShape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub penetration: f64,
    #[serde(default)]
    pub ps_session_rate_per_hour: f64,
    #[serde(default)]
    pub cs_call_rate_per_hour: f64,
    #[serde(default = "default_burst_size")]
    pub burst_size_bits: Distribution,
    #[serde(default = "default_intra_gap")]
    pub intra_session_gap_s: Distribution,
    #[serde(default)]
    pub dormancy_mode: DormancyMode,
    #[serde(default)]
    pub imei_in_registry: bool,
    #[serde(default)]
    pub mobility_rate_per_hour: f64,
}

fn default_burst_size() -> Distribution {
    Distribution::Exponential { mean: 100_000.0 }
}

fn default_intra_gap() -> Distribution {
    Distribution::Exponential { mean: 20.0 }
}

impl DeviceProfile {
    pub fn new(penetration: f64) -> Self {
        Self {
            penetration,
            ps_session_rate_per_hour: 0.0,
            cs_call_rate_per_hour: 0.0,
            burst_size_bits: default_burst_size(),
            intra_session_gap_s: default_intra_gap(),
            dormancy_mode: DormancyMode::None,
            imei_in_registry: false,
            mobility_rate_per_hour: 0.0,
        }
    }

    pub fn validate(&self, class: DeviceClass) -> Result<(), TrafficError> {
        let bad = |message: String| Err(TrafficError::InvalidProfile { class, message });
        for (name, v) in [
            ("penetration", self.penetration),
            ("ps_session_rate_per_hour", self.ps_session_rate_per_hour),
            ("cs_call_rate_per_hour", self.cs_call_rate_per_hour),
            ("mobility_rate_per_hour", self.mobility_rate_per_hour),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if let Err(e) = self.burst_size_bits.validate() {
            return bad(format!("burst_size_bits: {e}"));
        }
        if self.burst_size_bits.mean() <= 0.0 {
            return bad("burst sizes must be positive".into());
        }
        if let Err(e) = self.intra_session_gap_s.validate() {
            return bad(format!("intra_session_gap_s: {e}"));
        }
        if self.intra_session_gap_s.min_value() < 0.0 {
            return bad("intra-session gaps must be nonnegative".into());
        }
        Ok(())
    }
}

pub type Profiles = BTreeMap<DeviceClass, DeviceProfile>;

/// Hourly multipliers on session and call rates. Multipliers are used
/// relative to their mean, so configured rates are daily averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadShape {
    pub hourly: Vec<f64>,
}

impl Default for LoadShape {
    fn default() -> Self {
        Self {
            hourly: vec![
                0.35, 0.25, 0.18, 0.15, 0.15, 0.22, 0.45, 0.75, 1.00, 1.10, 1.15, 1.20, //
                1.25, 1.20, 1.15, 1.20, 1.30, 1.45, 1.60, 1.50, 1.40, 1.25, 0.95, 0.60,
            ],
        }
    }
}

impl LoadShape {
    pub fn flat() -> Self {
        Self {
            hourly: vec![1.0; 24],
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.hourly.len() != 24 {
            return Err(TrafficError::InvalidShape(format!(
                "expected 24 hourly factors, got {}",
                self.hourly.len()
            )));
        }
        if self.hourly.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(TrafficError::InvalidShape("factors must be nonnegative".into()));
        }
        if !self.hourly.iter().any(|h| *h > 0.0) {
            return Err(TrafficError::InvalidShape("at least one factor must be positive".into()));
        }
        Ok(())
    }

    fn normalized(&self, hour: usize) -> f64 {
        let mean = self.hourly.iter().sum::<f64>() / 24.0;
        self.hourly[hour % 24] / mean
    }

    /// Hour of the day with the largest multiplier (first on ties).
    pub fn busy_hour(&self) -> usize {
        let mut best = 0;
        for (h, v) in self.hourly.iter().enumerate() {
            if *v > self.hourly[best] {
                best = h;
            }
        }
        best
    }
}

const HOUR_MS: u64 = 3_600_000;

/// Next arrival of a Poisson process with rate `rate_per_hour` modulated by
/// `shape`, by inverting the integrated rate with a single uniform draw.
pub fn shaped_arrival(
    now: SimTime,
    rate_per_hour: f64,
    shape: &LoadShape,
    rng: &mut RngStream,
) -> Option<SimTime> {
    let u = rng.uniform01();
    if rate_per_hour <= 0.0 {
        return None;
    }
    let mut need = -(1.0 - u).ln();
    let mut t = now.as_millis();
    loop {
        let hour = ((t / HOUR_MS) % 24) as usize;
        let hour_end = (t / HOUR_MS + 1) * HOUR_MS;
        let rate_ms = rate_per_hour * shape.normalized(hour) / HOUR_MS as f64;
        if rate_ms > 0.0 {
            let span = (hour_end - t) as f64;
            let mass = rate_ms * span;
            if mass >= need {
                let dt = (need / rate_ms).round() as u64;
                return Some(SimTime::from_millis(t + dt.min(hour_end - t)));
            }
            need -= mass;
        }
        t = hour_end;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsSession {
    pub arrival: SimTime,
    pub downlink: bool,
    /// `(offset from arrival in ms, bits)`; the first offset is 0.
    pub bursts: Vec<(u64, u64)>,
}

/// Session parameters shared by every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub dl_fraction: f64,
    pub bursts_mean: f64,
    pub cs_hold_s: Distribution,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            dl_fraction: 0.3,
            bursts_mean: 3.0,
            cs_hold_s: Distribution::Exponential { mean: 90.0 },
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.dl_fraction) {
            return Err(format!("dl_fraction must lie in [0, 1], got {}", self.dl_fraction));
        }
        if !(self.bursts_mean.is_finite() && self.bursts_mean >= 1.0) {
            return Err(format!("bursts_mean must be >= 1, got {}", self.bursts_mean));
        }
        self.cs_hold_s.validate().map_err(|e| format!("cs_hold_s: {e}"))?;
        if self.cs_hold_s.min_value() < 0.0 {
            return Err("cs_hold_s must be nonnegative".into());
        }
        Ok(())
    }
}

/// Burst count with the given mean, at least one.
fn geometric_bursts(mean: f64, u: f64) -> u32 {
    if mean <= 1.0 {
        return 1;
    }
    let q = 1.0 / mean;
    let k = ((1.0 - u).ln() / (1.0 - q).ln()).floor();
    1 + k.min(10_000.0) as u32
}

pub fn next_ps_session(
    profile: &DeviceProfile,
    traffic: &TrafficConfig,
    now: SimTime,
    shape: &LoadShape,
    rng: &mut RngStream,
) -> Option<PsSession> {
    let arrival = shaped_arrival(now, profile.ps_session_rate_per_hour, shape, rng)?;
    let downlink = rng.bernoulli(traffic.dl_fraction);
    let count = geometric_bursts(traffic.bursts_mean, rng.uniform01());
    let mut bursts = Vec::with_capacity(count as usize);
    let mut offset = 0;
    for i in 0..count {
        if i > 0 {
            offset += secs_to_ms(sample(rng, &profile.intra_session_gap_s));
        }
        let bits = sample(rng, &profile.burst_size_bits).round().max(1.0) as u64;
        bursts.push((offset, bits));
    }
    Some(PsSession {
        arrival,
        downlink,
        bursts,
    })
}

/// Next CS call `(arrival, hold time in ms)`, `None` for classes without CS traffic.
pub fn next_cs_call(
    profile: &DeviceProfile,
    traffic: &TrafficConfig,
    now: SimTime,
    shape: &LoadShape,
    rng: &mut RngStream,
) -> Option<(SimTime, u64)> {
    let arrival = shaped_arrival(now, profile.cs_call_rate_per_hour, shape, rng)?;
    let hold = secs_to_ms(sample(rng, &traffic.cs_hold_s));
    Some((arrival, hold))
}

/// Largest-remainder apportionment of `n` UEs over the classes in `profiles`
/// (class order breaks remainder ties).
pub fn class_counts(n: u32, profiles: &Profiles) -> Result<Vec<(DeviceClass, u32)>, TrafficError> {
    if n == 0 {
        return Err(TrafficError::EmptyPopulation);
    }
    let sum: f64 = profiles.values().map(|p| p.penetration).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(TrafficError::PenetrationSum(sum));
    }
    let mut counts = Vec::with_capacity(profiles.len());
    let mut rema = Vec::with_capacity(profiles.len());
    let mut assigned = 0u32;
    for (i, (class, p)) in profiles.iter().enumerate() {
        let exact = p.penetration * f64::from(n);
        let base = exact.floor() as u32;
        assigned += base;
        counts.push((*class, base));
        rema.push((exact - f64::from(base), i));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rema.into_iter().take(n.saturating_sub(assigned) as usize) {
        counts[i].1 += 1;
    }
    Ok(counts)
}

/// Cell and URA geometry used for initial placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cells: u32,
    pub ura_size: u32,
}

impl Layout {
    pub fn ura_of(&self, cell: CellId) -> u32 {
        cell / self.ura_size
    }
}

/// UEs in contiguous class blocks, each placed in a cell drawn from its own
/// placement stream.
pub fn build_population(
    n: u32,
    profiles: &Profiles,
    layout: Layout,
    seed: u64,
) -> Result<Vec<UeContext>, TrafficError> {
    for (class, p) in profiles {
        p.validate(*class)?;
    }
    let mut ues = Vec::with_capacity(n as usize);
    for (class, count) in class_counts(n, profiles)? {
        for _ in 0..count {
            let id = ues.len() as UeId;
            let mut rng = RngStream::for_ue(seed, id, Purpose::Placement);
            let cell = rng.below(layout.cells);
            ues.push(UeContext::new(id, class, cell, layout.ura_of(cell)));
        }
    }
    Ok(ues)
}

/// The mix of device-class penetrations reported for the studied network,
/// with the unattributed remainder assigned to feature phones.
pub fn default_mix() -> Vec<(DeviceClass, f64)> {
    vec![
        (DeviceClass::Feature, 0.519),
        (DeviceClass::SmartA, 0.21),
        (DeviceClass::SmartS, 0.15),
        (DeviceClass::SmartI, 0.07),
        (DeviceClass::SmartB, 0.04),
        (DeviceClass::Tablet, 0.009),
        (DeviceClass::Datacard, 0.001),
        (DeviceClass::Router, 0.001),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(entries: &[(DeviceClass, f64)]) -> Profiles {
        entries.iter().map(|(c, p)| (*c, DeviceProfile::new(*p))).collect()
    }

    #[test]
    fn default_mix_counts_for_thousand() {
        let counts = class_counts(1000, &mix(&default_mix())).unwrap();
        let got: Vec<u32> = counts.iter().map(|(_, n)| *n).collect();
        assert_eq!(got, vec![519, 210, 150, 70, 40, 9, 1, 1]);
    }

    #[test]
    fn single_profile_single_ue() {
        let ues = build_population(
            1,
            &mix(&[(DeviceClass::Tablet, 1.0)]),
            Layout { cells: 4, ura_size: 2 },
            3,
        )
        .unwrap();
        assert_eq!(ues.len(), 1);
        assert_eq!(ues[0].device_class, DeviceClass::Tablet);
    }

    #[test]
    fn even_split() {
        let counts = class_counts(100, &mix(&[(DeviceClass::SmartA, 0.5), (DeviceClass::SmartS, 0.5)])).unwrap();
        assert_eq!(counts, vec![(DeviceClass::SmartA, 50), (DeviceClass::SmartS, 50)]);
    }

    #[test]
    fn bad_sum_rejected() {
        let r = class_counts(10, &mix(&[(DeviceClass::SmartA, 0.5), (DeviceClass::SmartS, 0.4)]));
        assert!(matches!(r, Err(TrafficError::PenetrationSum(_))));
    }

    #[test]
    fn sessions_have_at_least_one_burst() {
        let mut p = DeviceProfile::new(1.0);
        p.ps_session_rate_per_hour = 5.0;
        let t = TrafficConfig {
            bursts_mean: 1.0,
            ..TrafficConfig::default()
        };
        let mut rng = RngStream::new(1, 1);
        for _ in 0..100 {
            let s = next_ps_session(&p, &t, SimTime::ZERO, &LoadShape::flat(), &mut rng).unwrap();
            assert_eq!(s.bursts.len(), 1);
            assert_eq!(s.bursts[0].0, 0);
        }
    }

    #[test]
    fn deterministic_gap_exceeds_dormancy_gap() {
        let mut p = DeviceProfile::new(1.0);
        p.ps_session_rate_per_hour = 1.0;
        p.intra_session_gap_s = Distribution::Deterministic { value: 20.0 };
        let mut rng = RngStream::new(9, 1);
        let fd_gap_ms = 5_000;
        for _ in 0..50 {
            let s = next_ps_session(&p, &TrafficConfig::default(), SimTime::ZERO, &LoadShape::flat(), &mut rng)
                .unwrap();
            for w in s.bursts.windows(2) {
                assert_eq!(w[1].0 - w[0].0, 20_000);
                assert!(w[1].0 - w[0].0 > fd_gap_ms);
            }
        }
    }

    #[test]
    fn session_count_matches_rate() {
        let mut p = DeviceProfile::new(1.0);
        p.ps_session_rate_per_hour = 2.0;
        let end = SimTime::from_secs(36_000);
        let mut total = 0u64;
        for ue in 0..1000 {
            let mut rng = RngStream::for_ue(77, ue, Purpose::Traffic);
            let mut now = SimTime::ZERO;
            while let Some(s) = next_ps_session(&p, &TrafficConfig::default(), now, &LoadShape::default(), &mut rng) {
                if s.arrival > end {
                    break;
                }
                total += 1;
                now = s.arrival;
            }
        }
        let mean = total as f64 / 1000.0;
        // The day-shaped rate over hours 0..10 integrates below the flat rate,
        // so compare with the shape's own expectation.
        let shape = LoadShape::default();
        let expected: f64 = (0..10).map(|h| 2.0 * shape.normalized(h)).sum();
        assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn flat_rate_twenty_sessions_in_ten_hours() {
        let mut p = DeviceProfile::new(1.0);
        p.ps_session_rate_per_hour = 2.0;
        let end = SimTime::from_secs(36_000);
        let mut total = 0u64;
        for ue in 0..1000 {
            let mut rng = RngStream::for_ue(5, ue, Purpose::Traffic);
            let mut now = SimTime::ZERO;
            while let Some(s) = next_ps_session(&p, &TrafficConfig::default(), now, &LoadShape::flat(), &mut rng) {
                if s.arrival > end {
                    break;
                }
                total += 1;
                now = s.arrival;
            }
        }
        let mean = total as f64 / 1000.0;
        assert!((mean - 20.0).abs() / 20.0 < 0.05, "{mean}");
    }

    #[test]
    fn zero_rate_never_calls() {
        let p = DeviceProfile::new(1.0);
        let mut rng = RngStream::new(1, 2);
        assert!(next_cs_call(&p, &TrafficConfig::default(), SimTime::ZERO, &LoadShape::flat(), &mut rng).is_none());
    }

    #[test]
    fn hundred_hours_of_calls() {
        let mut p = DeviceProfile::new(1.0);
        p.cs_call_rate_per_hour = 1.0;
        let mut rng = RngStream::new(21, 2);
        let end = SimTime::from_secs(100 * 3600);
        let mut now = SimTime::ZERO;
        let mut calls = 0;
        while let Some((t, _)) = next_cs_call(&p, &TrafficConfig::default(), now, &LoadShape::flat(), &mut rng) {
            if t > end {
                break;
            }
            calls += 1;
            now = t;
        }
        assert!((80..=120).contains(&calls), "{calls}");
    }

    #[test]
    fn class_names_round_trip() {
        for c in DeviceClass::ALL {
            assert_eq!(c.name().parse::<DeviceClass>().unwrap(), c);
        }
        assert!("PHABLET".parse::<DeviceClass>().is_err());
    }
}
