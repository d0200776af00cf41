//! Cell reselection with T_resel hysteresis, cell-update emission per RRC
//! state, and CS call setup timing including the cell-update collision.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{secs_to_ms, CellId, SimTime};
use crate::rng::RngStream;
use crate::rrc::RrcState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReselectionConfig {
    pub t_resel_idle_s: f64,
    pub sib4: bool,
    pub t_resel_fach_s: f64,
    pub t_resel_pch_s: f64,
    /// Mean time a candidate cell stays better than the serving cell.
    pub persistence_mean_s: f64,
}

impl Default for ReselectionConfig {
    fn default() -> Self {
        Self {
            t_resel_idle_s: 2.0,
            sib4: false,
            t_resel_fach_s: 4.0,
            t_resel_pch_s: 4.0,
            persistence_mean_s: 10.0,
        }
    }
}

impl ReselectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("t_resel_idle_s", self.t_resel_idle_s),
            ("t_resel_fach_s", self.t_resel_fach_s),
            ("t_resel_pch_s", self.t_resel_pch_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.persistence_mean_s.is_finite() && self.persistence_mean_s > 0.0) {
            return Err(format!("persistence_mean_s must be > 0, got {}", self.persistence_mean_s));
        }
        Ok(())
    }

    /// T_resel in force for a UE in `state`. Without SIB-4 every state uses
    /// the SIB-3 value.
    pub fn t_resel_ms(&self, state: RrcState) -> u64 {
        let s = match state {
            RrcState::CellFach if self.sib4 => self.t_resel_fach_s,
            RrcState::CellPch | RrcState::UraPch if self.sib4 => self.t_resel_pch_s,
            _ => self.t_resel_idle_s,
        };
        secs_to_ms(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellUpdateCause {
    Reselection,
    UlData,
    PagingResponse,
    CsCall,
}

impl fmt::Display for CellUpdateCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellUpdateCause::Reselection => "RESELECTION",
            CellUpdateCause::UlData => "UL_DATA",
            CellUpdateCause::PagingResponse => "PAGING_RESPONSE",
            CellUpdateCause::CsCall => "CS_CALL",
        })
    }
}

/// A neighbour cell that became better than the serving cell for
/// `persistence_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub time: SimTime,
    pub target: CellId,
    pub persistence_ms: u64,
}

/// Next reselection candidate of a UE camped on `cell`. Neighbours are the
/// adjacent cells on a ring of `cells`.
pub fn next_candidate(
    now: SimTime,
    cell: CellId,
    cells: u32,
    rate_per_hour: f64,
    cfg: &ReselectionConfig,
    rng: &mut RngStream,
) -> Option<Candidate> {
    if rate_per_hour <= 0.0 || cells < 2 {
        return None;
    }
    let u_gap = rng.uniform01();
    let up = rng.bernoulli(0.5);
    let u_persist = rng.uniform01();
    let gap_s = -(1.0 - u_gap).ln() * 3600.0 / rate_per_hour;
    let target = if up { (cell + 1) % cells } else { (cell + cells - 1) % cells };
    Some(Candidate {
        time: now.after_ms(secs_to_ms(gap_s).max(1)),
        target,
        persistence_ms: secs_to_ms(-(1.0 - u_persist).ln() * cfg.persistence_mean_s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReselectOutcome {
    pub committed: bool,
    pub cell_update: bool,
}

/// Whether a candidate is committed, and whether the commit costs a cell
/// update. DCH UEs are handed over by the network and never reselect.
pub fn maybe_reselect(
    state: RrcState,
    candidate: &Candidate,
    serving_ura: u32,
    target_ura: u32,
    cfg: &ReselectionConfig,
) -> ReselectOutcome {
    let none = ReselectOutcome {
        committed: false,
        cell_update: false,
    };
    if state == RrcState::CellDch || candidate.persistence_ms < cfg.t_resel_ms(state) {
        return none;
    }
    let cell_update = match state {
        RrcState::CellFach | RrcState::CellPch => true,
        RrcState::UraPch => serving_ura != target_ura,
        _ => false,
    };
    ReselectOutcome {
        committed: true,
        cell_update,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsSetupTiming {
    pub setup_idle_ms: u64,
    pub setup_fach_ms: u64,
    pub setup_pch_ms: u64,
    pub setup_dch_ms: u64,
    pub srb_rate_p2d_bps: u64,
    pub srb_rate_idle_bps: u64,
    pub p2d_signaling_bits: u64,
}

impl Default for CsSetupTiming {
    fn default() -> Self {
        Self {
            setup_idle_ms: 2109,
            setup_fach_ms: 2171,
            setup_pch_ms: 3297,
            setup_dch_ms: 500,
            srb_rate_p2d_bps: 3400,
            srb_rate_idle_bps: 13_600,
            p2d_signaling_bits: 1000,
        }
    }
}

impl CsSetupTiming {
    pub fn validate(&self) -> Result<(), String> {
        if [self.setup_idle_ms, self.setup_fach_ms, self.setup_pch_ms, self.setup_dch_ms]
            .contains(&0)
        {
            return Err("setup times must be positive".into());
        }
        if self.srb_rate_p2d_bps == 0 || self.srb_rate_idle_bps == 0 {
            return Err("SRB rates must be positive".into());
        }
        Ok(())
    }

    /// Direct PCH to DCH setup: the PCH time plus the setup signaling carried
    /// on the slow SRB, i.e. the 13.6 kbps transfer time scaled by 13.6/3.4.
    pub fn p2d_ms(&self) -> u64 {
        let fast_ms = self.p2d_signaling_bits as f64 * 1000.0 / self.srb_rate_idle_bps as f64;
        let scale = self.srb_rate_idle_bps as f64 / self.srb_rate_p2d_bps as f64;
        self.setup_pch_ms + (fast_ms * scale).round() as u64
    }

    pub fn setup_ms(&self, origin: RrcState, p2d_direct: bool) -> u64 {
        match origin {
            RrcState::Idle => self.setup_idle_ms,
            RrcState::CellFach => self.setup_fach_ms,
            RrcState::CellDch => self.setup_dch_ms,
            RrcState::CellPch | RrcState::UraPch if p2d_direct => self.p2d_ms(),
            RrcState::CellPch | RrcState::UraPch => self.setup_pch_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollisionModel {
    pub collision_window_ms: u64,
    pub collision_p: f64,
}

impl Default for CollisionModel {
    fn default() -> Self {
        Self {
            collision_window_ms: 200,
            collision_p: 0.5,
        }
    }
}

/// The `[csfb]` section: collision model and setup timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsfbConfig {
    pub collision_window_ms: u64,
    pub collision_p: f64,
    pub setup_idle_ms: u64,
    pub setup_fach_ms: u64,
    pub setup_pch_ms: u64,
    pub setup_dch_ms: u64,
    pub srb_rate_p2d_bps: u64,
    pub srb_rate_idle_bps: u64,
    pub p2d_signaling_bits: u64,
}

impl Default for CsfbConfig {
    fn default() -> Self {
        let c = CollisionModel::default();
        let t = CsSetupTiming::default();
        Self {
            collision_window_ms: c.collision_window_ms,
            collision_p: c.collision_p,
            setup_idle_ms: t.setup_idle_ms,
            setup_fach_ms: t.setup_fach_ms,
            setup_pch_ms: t.setup_pch_ms,
            setup_dch_ms: t.setup_dch_ms,
            srb_rate_p2d_bps: t.srb_rate_p2d_bps,
            srb_rate_idle_bps: t.srb_rate_idle_bps,
            p2d_signaling_bits: t.p2d_signaling_bits,
        }
    }
}

impl CsfbConfig {
    pub fn collision(&self) -> CollisionModel {
        CollisionModel {
            collision_window_ms: self.collision_window_ms,
            collision_p: self.collision_p,
        }
    }

    pub fn timing(&self) -> CsSetupTiming {
        CsSetupTiming {
            setup_idle_ms: self.setup_idle_ms,
            setup_fach_ms: self.setup_fach_ms,
            setup_pch_ms: self.setup_pch_ms,
            setup_dch_ms: self.setup_dch_ms,
            srb_rate_p2d_bps: self.srb_rate_p2d_bps,
            srb_rate_idle_bps: self.srb_rate_idle_bps,
            p2d_signaling_bits: self.p2d_signaling_bits,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.collision_p) {
            return Err(format!("collision_p must lie in [0, 1], got {}", self.collision_p));
        }
        self.timing().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsSetupResult {
    pub success: bool,
    pub setup_ms: u64,
    pub path: Vec<RrcState>,
    pub collided: bool,
}

/// CS setup from `origin`. The collision draw is always taken so the stream
/// advances identically whether or not a cell update was in flight.
pub fn cs_setup(
    origin: RrcState,
    p2d_direct: bool,
    last_cell_update: Option<SimTime>,
    now: SimTime,
    timing: &CsSetupTiming,
    coll: &CollisionModel,
    rng: &mut RngStream,
) -> CsSetupResult {
    let u = rng.uniform01();
    let overlapped = last_cell_update
        .is_some_and(|t| t <= now && now.since(t) <= coll.collision_window_ms);
    let collided = overlapped && u < coll.collision_p;
    let path = match origin {
        RrcState::Idle => vec![RrcState::Idle, RrcState::CellDch],
        RrcState::CellFach => vec![RrcState::CellFach, RrcState::CellDch],
        RrcState::CellDch => vec![RrcState::CellDch],
        p if p2d_direct => vec![p, RrcState::CellDch],
        p => vec![p, RrcState::CellFach, RrcState::CellDch],
    };
    CsSetupResult {
        success: !collided,
        setup_ms: timing.setup_ms(origin, p2d_direct),
        path,
        collided,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(persistence_ms: u64) -> Candidate {
        Candidate {
            time: SimTime::ZERO,
            target: 1,
            persistence_ms,
        }
    }

    #[test]
    fn idle_reselection_is_silent() {
        let o = maybe_reselect(RrcState::Idle, &cand(60_000), 0, 1, &ReselectionConfig::default());
        assert!(o.committed && !o.cell_update);
    }

    #[test]
    fn ura_pch_updates_only_across_uras() {
        let cfg = ReselectionConfig::default();
        assert!(!maybe_reselect(RrcState::UraPch, &cand(60_000), 3, 3, &cfg).cell_update);
        assert!(maybe_reselect(RrcState::UraPch, &cand(60_000), 3, 4, &cfg).cell_update);
        assert!(maybe_reselect(RrcState::CellPch, &cand(60_000), 3, 3, &cfg).cell_update);
        assert!(maybe_reselect(RrcState::CellFach, &cand(60_000), 3, 3, &cfg).cell_update);
    }

    #[test]
    fn short_persistence_is_rejected() {
        let cfg = ReselectionConfig::default();
        assert!(!maybe_reselect(RrcState::CellPch, &cand(1_999), 0, 0, &cfg).committed);
        assert!(maybe_reselect(RrcState::CellPch, &cand(2_000), 0, 0, &cfg).committed);
        assert!(!maybe_reselect(RrcState::CellDch, &cand(60_000), 0, 0, &cfg).committed);
    }

    #[test]
    fn sib3_only_applies_idle_value_everywhere() {
        let cfg = ReselectionConfig {
            t_resel_idle_s: 1.0,
            t_resel_fach_s: 9.0,
            t_resel_pch_s: 9.0,
            sib4: false,
            ..ReselectionConfig::default()
        };
        assert_eq!(cfg.t_resel_ms(RrcState::CellFach), 1_000);
        let cfg = ReselectionConfig { sib4: true, ..cfg };
        assert_eq!(cfg.t_resel_ms(RrcState::CellFach), 9_000);
        assert_eq!(cfg.t_resel_ms(RrcState::Idle), 1_000);
    }

    #[test]
    fn table_setup_times() {
        let t = CsSetupTiming::default();
        assert_eq!(t.setup_ms(RrcState::Idle, false), 2109);
        assert_eq!(t.setup_ms(RrcState::CellFach, false), 2171);
        assert_eq!(t.setup_ms(RrcState::CellPch, false), 3297);
        assert_eq!(t.setup_ms(RrcState::CellDch, false), 500);
        // 1000 bits at 13.6 kbps take 73.5 ms; at 3.4 kbps they take 294 ms.
        assert_eq!(t.p2d_ms(), 3297 + 294);
        assert!(t.p2d_ms() > t.setup_pch_ms);
    }

    #[test]
    fn setup_paths() {
        let mut rng = RngStream::new(1, 6);
        let t = CsSetupTiming::default();
        let c = CollisionModel::default();
        let r = cs_setup(RrcState::CellPch, false, None, SimTime::ZERO, &t, &c, &mut rng);
        assert_eq!(r.path, vec![RrcState::CellPch, RrcState::CellFach, RrcState::CellDch]);
        assert!(r.success);
        let r = cs_setup(RrcState::CellPch, true, None, SimTime::ZERO, &t, &c, &mut rng);
        assert_eq!(r.path, vec![RrcState::CellPch, RrcState::CellDch]);
        let r = cs_setup(RrcState::Idle, false, None, SimTime::ZERO, &t, &c, &mut rng);
        assert_eq!((r.success, r.setup_ms), (true, 2109));
    }

    #[test]
    fn forced_collision_fails() {
        let mut rng = RngStream::new(1, 6);
        let c = CollisionModel {
            collision_window_ms: 200,
            collision_p: 1.0,
        };
        let now = SimTime::from_millis(1_000);
        let t = CsSetupTiming::default();
        let r = cs_setup(RrcState::CellFach, false, Some(SimTime::from_millis(900)), now, &t, &c, &mut rng);
        assert!(!r.success && r.collided);
        let r = cs_setup(RrcState::CellFach, false, Some(SimTime::from_millis(700)), now, &t, &c, &mut rng);
        assert!(r.success);
    }

    #[test]
    fn doubling_t_resel_halves_commits_at_median() {
        // With exponential persistence of mean m, a commit needs persistence
        // >= T, so the commit fraction is exp(-T/m). At T = m ln 2 that is 1/2
        // and at 2T it is 1/4.
        let m = 10.0;
        let t1 = m * std::f64::consts::LN_2;
        let base = ReselectionConfig {
            persistence_mean_s: m,
            sib4: true,
            t_resel_fach_s: t1,
            ..ReselectionConfig::default()
        };
        let doubled = ReselectionConfig {
            t_resel_fach_s: 2.0 * t1,
            ..base
        };
        let mut rng = RngStream::new(3, 3);
        let n = 200_000;
        let (mut c1, mut c2) = (0u32, 0u32);
        for _ in 0..n {
            let c = next_candidate(SimTime::ZERO, 0, 10, 1.0, &base, &mut rng).unwrap();
            c1 += u32::from(maybe_reselect(RrcState::CellFach, &c, 0, 0, &base).committed);
            c2 += u32::from(maybe_reselect(RrcState::CellFach, &c, 0, 0, &doubled).committed);
        }
        let ratio = f64::from(c2) / f64::from(c1);
        assert!((ratio - 0.5).abs() < 0.01, "{ratio}");
        assert!((f64::from(c1) / n as f64 - 0.5).abs() < 0.01);
    }
}
