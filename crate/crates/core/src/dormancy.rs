//! Fast dormancy: UE-initiated SCRI (legacy without cause, Release-8 with
//! cause and T323 inhibition) and the RNC's response, including IMEI-based
//! handling of known legacy devices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{secs_to_ms, SimTime, UeId};
use crate::rrc::{RrcPolicy, RrcState, UeContext};
use crate::traffic::DeviceClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DormancyMode {
    #[default]
    None,
    LegacyFd,
    EFd,
}

impl DormancyMode {
    /// Behaviour actually exhibited in a run. Without network E-FD support a
    /// Release-8 UE falls back to the legacy (cause-less) request.
    pub fn effective(self, network_e_fd: bool) -> DormancyMode {
        match self {
            DormancyMode::EFd if !network_e_fd => DormancyMode::LegacyFd,
            m => m,
        }
    }
}

impl fmt::Display for DormancyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DormancyMode::None => "NONE",
            DormancyMode::LegacyFd => "LEGACY_FD",
            DormancyMode::EFd => "E_FD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriCause {
    PsDataSessionEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriMessage {
    pub ue_id: UeId,
    pub time: SimTime,
    pub cause: Option<ScriCause>,
}

/// Device classes the RNC recognises as legacy fast-dormancy devices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImeiRegistry {
    classes: BTreeSet<DeviceClass>,
}

impl ImeiRegistry {
    pub fn new(classes: impl IntoIterator<Item = DeviceClass>) -> Self {
        Self {
            classes: classes.into_iter().collect(),
        }
    }

    pub fn contains(&self, class: DeviceClass) -> bool {
        self.classes.contains(&class)
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T323Config {
    pub t323_s: f64,
}

impl T323Config {
    pub fn new(t323_s: f64) -> Result<Self, DormancyError> {
        if !(0.0..=120.0).contains(&t323_s) {
            return Err(DormancyError::InvalidT323(t323_s));
        }
        Ok(Self { t323_s })
    }

    pub fn as_ms(&self) -> u64 {
        secs_to_ms(self.t323_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RncAction {
    ReleaseToIdle,
    MoveToFach,
    MoveToPch,
}

impl fmt::Display for RncAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RncAction::ReleaseToIdle => "RELEASE_TO_IDLE",
            RncAction::MoveToFach => "MOVE_TO_FACH",
            RncAction::MoveToPch => "MOVE_TO_PCH",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DormancyError {
    #[error("SCRI from ue {ue} received in state {state}")]
    Protocol { ue: UeId, state: RrcState },
    #[error("t323_s must lie in [0, 120], got {0}")]
    InvalidT323(f64),
}

fn may_request_dormancy(ue: &UeContext) -> bool {
    matches!(ue.state, RrcState::CellDch | RrcState::CellFach)
        && ue.buffers_empty()
        && !ue.in_cs_call()
}

/// Earliest time the UE may send its next SCRI given its inactivity gap,
/// the spacing from its previous SCRI and a running T323. `None` when the UE
/// never sends SCRI or is not in a state that can.
pub fn next_scri_eligibility(ue: &UeContext) -> Option<SimTime> {
    if ue.imei_class == DormancyMode::None || !may_request_dormancy(ue) {
        return None;
    }
    let mut at = ue.last_activity_time.after_ms(ue.dormancy_gap_ms);
    if let Some(prev) = ue.last_scri {
        at = at.max(prev.after_ms(ue.dormancy_gap_ms));
    }
    if ue.imei_class == DormancyMode::EFd {
        if let Some(deadline) = ue.t323_deadline {
            at = at.max(deadline);
        }
    }
    Some(at)
}

/// UE-side dormancy decision at `now`. On an E-FD send, T323 is started.
pub fn ue_maybe_send_scri(ue: &mut UeContext, now: SimTime, t323: &T323Config) -> Option<ScriMessage> {
    let eligible = next_scri_eligibility(ue)?;
    if now < eligible {
        return None;
    }
    let cause = match ue.imei_class {
        DormancyMode::None => return None,
        DormancyMode::LegacyFd => None,
        DormancyMode::EFd => {
            ue.t323_deadline = Some(now.after_ms(t323.as_ms()));
            Some(ScriCause::PsDataSessionEnd)
        }
    };
    ue.last_scri = Some(now);
    Some(ScriMessage {
        ue_id: ue.ue_id,
        time: now,
        cause,
    })
}

/// RNC reaction to a SCRI. Caused requests and registry-listed devices are
/// demoted one step at a time (DCH to FACH, then FACH to PCH); unrecognised
/// cause-less requests are released to idle.
pub fn rnc_handle_scri(
    msg: &ScriMessage,
    ue: &UeContext,
    registry: &ImeiRegistry,
    policy: &RrcPolicy,
) -> Result<RncAction, DormancyError> {
    if !matches!(ue.state, RrcState::CellDch | RrcState::CellFach) {
        return Err(DormancyError::Protocol {
            ue: ue.ue_id,
            state: ue.state,
        });
    }
    let staged = msg.cause.is_some() || registry.contains(ue.device_class);
    if !staged {
        return Ok(RncAction::ReleaseToIdle);
    }
    Ok(match ue.state {
        RrcState::CellDch => RncAction::MoveToFach,
        _ if policy.pch_target.is_some() => RncAction::MoveToPch,
        _ => RncAction::ReleaseToIdle,
    })
}
