//! RRC state machine shared by the UE and RNC peers: states, legal edges,
//! per-edge signaling message costs and network inactivity timers.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Features;
use crate::dormancy::{DormancyMode, RncAction};
use crate::engine::{secs_to_ms, CellId, SimTime, UeId};
use crate::traffic::DeviceClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RrcState {
    Idle,
    CellDch,
    CellFach,
    CellPch,
    UraPch,
}

impl RrcState {
    pub const ALL: [RrcState; 5] = [
        RrcState::Idle,
        RrcState::CellDch,
        RrcState::CellFach,
        RrcState::CellPch,
        RrcState::UraPch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_pch(self) -> bool {
        matches!(self, RrcState::CellPch | RrcState::UraPch)
    }

    pub fn is_connected(self) -> bool {
        self != RrcState::Idle
    }

    pub fn name(self) -> &'static str {
        match self {
            RrcState::Idle => "IDLE",
            RrcState::CellDch => "CELL_DCH",
            RrcState::CellFach => "CELL_FACH",
            RrcState::CellPch => "CELL_PCH",
            RrcState::UraPch => "URA_PCH",
        }
    }
}

impl fmt::Display for RrcState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// RRC message count per state transition. URA_PCH edges reuse the
/// CELL_PCH entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionCostTable {
    pub idle_dch: u32,
    pub idle_fach: u32,
    pub dch_idle: u32,
    pub fach_idle: u32,
    pub dch_fach: u32,
    pub fach_dch: u32,
    pub fach_pch: u32,
    pub pch_fach: u32,
    pub pch_idle: u32,
    pub dch_pch: u32,
    pub pch_dch: u32,
}

impl Default for TransitionCostTable {
    fn default() -> Self {
        Self {
            idle_dch: 25,
            idle_fach: 20,
            dch_idle: 2,
            fach_idle: 2,
            dch_fach: 4,
            fach_dch: 4,
            fach_pch: 2,
            pch_fach: 3,
            pch_idle: 1,
            dch_pch: 2,
            pch_dch: 8,
        }
    }
}

impl TransitionCostTable {
    /// Message count for `from -> to`; `None` when the pair is not an edge of
    /// the full state graph.
    pub fn cost(&self, from: RrcState, to: RrcState) -> Option<u32> {
        use RrcState::*;
        let norm = |s: RrcState| if s == UraPch { CellPch } else { s };
        if from == to {
            return Some(0);
        }
        Some(match (norm(from), norm(to)) {
            (Idle, CellDch) => self.idle_dch,
            (Idle, CellFach) => self.idle_fach,
            (CellDch, Idle) => self.dch_idle,
            (CellFach, Idle) => self.fach_idle,
            (CellDch, CellFach) => self.dch_fach,
            (CellFach, CellDch) => self.fach_dch,
            (CellFach, CellPch) => self.fach_pch,
            (CellPch, CellFach) => self.pch_fach,
            (CellPch, Idle) => self.pch_idle,
            (CellDch, CellPch) => self.dch_pch,
            (CellPch, CellDch) => self.pch_dch,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateTimers {
    pub dch_inactivity_s: f64,
    pub fach_inactivity_s: f64,
    pub pch_to_idle_s: f64,
    pub dch_downswitch_threshold_bps: u64,
}

impl Default for StateTimers {
    fn default() -> Self {
        Self {
            dch_inactivity_s: 10.0,
            fach_inactivity_s: 5.0,
            pch_to_idle_s: 3600.0,
            dch_downswitch_threshold_bps: 256_000,
        }
    }
}

impl StateTimers {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("dch_inactivity_s", self.dch_inactivity_s),
            ("fach_inactivity_s", self.fach_inactivity_s),
            ("pch_to_idle_s", self.pch_to_idle_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.dch_downswitch_threshold_bps == 0 {
            return Err("dch_downswitch_threshold_bps must be > 0".into());
        }
        Ok(())
    }

    /// Inactivity period after which the network leaves `state`, if any.
    pub fn timeout_ms(&self, state: RrcState) -> Option<u64> {
        match state {
            RrcState::Idle => None,
            RrcState::CellDch => Some(secs_to_ms(self.dch_inactivity_s)),
            RrcState::CellFach => Some(secs_to_ms(self.fach_inactivity_s)),
            RrcState::CellPch | RrcState::UraPch => Some(secs_to_ms(self.pch_to_idle_s)),
        }
    }

    /// Buffered volume that moves a common-channel UE to CELL_DCH: the
    /// threshold rate sustained over one second.
    pub fn dch_buffer_threshold_bits(&self) -> u64 {
        self.dch_downswitch_threshold_bps
    }
}

/// Per-UE runtime record shared by every model.
#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub ue_id: UeId,
    pub device_class: DeviceClass,
    pub state: RrcState,
    pub state_since: SimTime,
    pub serving_cell: CellId,
    pub ura_id: u32,
    pub ul_buffer_bits: u64,
    pub dl_buffer_bits: u64,
    pub last_activity_time: SimTime,
    pub t323_deadline: Option<SimTime>,
    pub last_scri: Option<SimTime>,
    pub pdp_context_active: bool,
    /// Effective dormancy behaviour for this run.
    pub imei_class: DormancyMode,
    /// UE-side inactivity gap before it requests dormancy.
    pub dormancy_gap_ms: u64,
    pub cs_call_until: Option<SimTime>,
    pub last_cell_update: Option<SimTime>,
}

impl UeContext {
    pub fn new(ue_id: UeId, device_class: DeviceClass, serving_cell: CellId, ura_id: u32) -> Self {
        Self {
            ue_id,
            device_class,
            state: RrcState::Idle,
            state_since: SimTime::ZERO,
            serving_cell,
            ura_id,
            ul_buffer_bits: 0,
            dl_buffer_bits: 0,
            last_activity_time: SimTime::ZERO,
            t323_deadline: None,
            last_scri: None,
            pdp_context_active: false,
            imei_class: DormancyMode::None,
            dormancy_gap_ms: 5_000,
            cs_call_until: None,
            last_cell_update: None,
        }
    }

    pub fn buffers_empty(&self) -> bool {
        self.ul_buffer_bits == 0 && self.dl_buffer_bits == 0
    }

    pub fn in_cs_call(&self) -> bool {
        self.cs_call_until.is_some()
    }

    /// Start of the current inactivity period: the later of the last data
    /// activity and entry into the current state.
    pub fn idle_since(&self) -> SimTime {
        self.last_activity_time.max(self.state_since)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    UlData,
    DlDataDelivered,
    InactivityDch,
    InactivityFach,
    InactivityPch,
    ScriAccepted(RncAction),
    CsCall,
    /// End of a CS call for a UE without an active PDP context.
    CsRelease,
    DemandAboveThreshold,
    DemandLow,
}

impl Trigger {
    fn is_ps(self) -> bool {
        !matches!(self, Trigger::CsCall | Trigger::CsRelease)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: RrcState,
    pub to: RrcState,
    pub messages: u32,
    pub rab_attempt: bool,
    pub rrc_attempt: bool,
}

impl Transition {
    pub fn is_change(&self) -> bool {
        self.from != self.to
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RrcError {
    #[error("illegal transition {from} -> {to} on {trigger:?}")]
    IllegalTransition {
        from: RrcState,
        to: RrcState,
        trigger: Trigger,
    },
    #[error("trigger {trigger:?} is not defined in state {state}")]
    UndefinedTrigger { state: RrcState, trigger: Trigger },
}

/// Feature toggles and costs the state machine needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RrcPolicy {
    pub pch_target: Option<RrcState>,
    pub d2p_direct: bool,
    pub p2d_direct: bool,
    pub costs: TransitionCostTable,
}

impl RrcPolicy {
    pub fn new(features: &Features, costs: TransitionCostTable) -> Self {
        Self {
            pch_target: pch_target(features),
            d2p_direct: features.d2p_direct,
            p2d_direct: features.p2d_direct,
            costs,
        }
    }
}

/// The paging state FACH demotes into: URA_PCH when enabled, else CELL_PCH
/// when enabled, else none.
pub fn pch_target(features: &Features) -> Option<RrcState> {
    if features.ura_pch {
        Some(RrcState::UraPch)
    } else if features.cell_pch {
        Some(RrcState::CellPch)
    } else {
        None
    }
}

pub fn legal_edges(features: &Features) -> BTreeSet<(RrcState, RrcState)> {
    let mut edges = BTreeSet::new();
    for from in RrcState::ALL {
        for to in RrcState::ALL {
            if is_legal_edge(features, from, to) {
                edges.insert((from, to));
            }
        }
    }
    edges
}

pub fn is_legal_edge(features: &Features, from: RrcState, to: RrcState) -> bool {
    use RrcState::*;
    let enabled = |s: RrcState| match s {
        CellPch => features.cell_pch,
        UraPch => features.ura_pch,
        _ => true,
    };
    if from == to || !enabled(from) || !enabled(to) {
        return false;
    }
    match (from, to) {
        (Idle, CellDch) | (CellDch, Idle) | (Idle, CellFach) | (CellFach, Idle) => true,
        (CellDch, CellFach) | (CellFach, CellDch) => true,
        (CellFach, p) | (p, CellFach) if p.is_pch() => true,
        (p, Idle) if p.is_pch() => true,
        (CellDch, p) if p.is_pch() => features.d2p_direct,
        (p, CellDch) if p.is_pch() => features.p2d_direct,
        _ => false,
    }
}

pub fn apply_trigger(
    state: RrcState,
    trigger: Trigger,
    policy: &RrcPolicy,
) -> Result<Transition, RrcError> {
    use RrcState::*;
    use Trigger::*;
    let undefined = || RrcError::UndefinedTrigger { state, trigger };
    let pch = policy.pch_target;

    let to = match (state, trigger) {
        (Idle, UlData | DlDataDelivered | DemandAboveThreshold | CsCall) => CellDch,
        (Idle, DemandLow) => CellFach,

        (CellDch, UlData | DlDataDelivered | DemandAboveThreshold | CsCall) => CellDch,
        (CellDch, DemandLow) => CellFach,
        (CellDch, InactivityDch) => match pch {
            Some(p) if policy.d2p_direct => p,
            _ => CellFach,
        },
        (CellDch, ScriAccepted(RncAction::ReleaseToIdle) | CsRelease) => Idle,
        (CellDch, ScriAccepted(RncAction::MoveToFach)) => CellFach,
        (CellDch, ScriAccepted(RncAction::MoveToPch)) => pch.ok_or_else(undefined)?,

        (CellFach, UlData | DlDataDelivered | DemandLow) => CellFach,
        (CellFach, DemandAboveThreshold | CsCall) => CellDch,
        (CellFach, InactivityFach) => pch.unwrap_or(Idle),
        (CellFach, ScriAccepted(RncAction::ReleaseToIdle)) => Idle,
        (CellFach, ScriAccepted(RncAction::MoveToFach)) => CellFach,
        (CellFach, ScriAccepted(RncAction::MoveToPch)) => pch.ok_or_else(undefined)?,

        (CellPch | UraPch, UlData | DlDataDelivered | DemandLow) => CellFach,
        (CellPch | UraPch, DemandAboveThreshold | CsCall) => {
            if policy.p2d_direct {
                CellDch
            } else {
                CellFach
            }
        }
        (CellPch | UraPch, InactivityPch) => Idle,

        _ => return Err(undefined()),
    };

    if state != to && !is_legal_edge(&policy_features(policy), state, to) {
        return Err(RrcError::IllegalTransition {
            from: state,
            to,
            trigger,
        });
    }
    let messages = policy.costs.cost(state, to).ok_or(RrcError::IllegalTransition {
        from: state,
        to,
        trigger,
    })?;
    let rrc_attempt = state == Idle && to != Idle;
    Ok(Transition {
        from: state,
        to,
        messages,
        rrc_attempt,
        rab_attempt: rrc_attempt && trigger.is_ps(),
    })
}

fn policy_features(policy: &RrcPolicy) -> Features {
    Features {
        cell_pch: policy.pch_target == Some(RrcState::CellPch),
        ura_pch: policy.pch_target == Some(RrcState::UraPch),
        d2p_direct: policy.d2p_direct,
        p2d_direct: policy.p2d_direct,
        ..Features::default()
    }
}

/// Network inactivity handling: the demotion due at `now`, if the timer of
/// the current state has run out.
pub fn on_inactivity(
    ue: &UeContext,
    now: SimTime,
    timers: &StateTimers,
    policy: &RrcPolicy,
) -> Option<Transition> {
    let timeout = timers.timeout_ms(ue.state)?;
    if now.since(ue.idle_since()) < timeout {
        return None;
    }
    let trigger = match ue.state {
        RrcState::CellDch => Trigger::InactivityDch,
        RrcState::CellFach => Trigger::InactivityFach,
        RrcState::CellPch | RrcState::UraPch => Trigger::InactivityPch,
        RrcState::Idle => return None,
    };
    apply_trigger(ue.state, trigger, policy).ok()
}
