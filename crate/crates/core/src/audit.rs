//! Invariant checks over a traced run.

use std::fmt;

use crate::config::ScenarioConfig;
use crate::dormancy::DormancyMode;
use crate::engine::{Effect, Subject, UeId};
use crate::rrc::{is_legal_edge, RrcState};
use crate::sim::SimOutput;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub time_ms: u64,
    pub ue: Option<UeId>,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ue {
            Some(ue) => write!(f, "{} ue:{} {}: {}", self.time_ms, ue, self.rule, self.detail),
            None => write!(f, "{} {}: {}", self.time_ms, self.rule, self.detail),
        }
    }
}

/// Checks a run that was recorded with tracing on. Returns every violation
/// found; an empty list means the run is consistent.
pub fn audit(cfg: &ScenarioConfig, out: &SimOutput) -> Vec<Violation> {
    let mut v = Vec::new();
    let n = cfg.population as usize;
    let mut state = vec![RrcState::Idle; n];
    let mut cell = out.initial_cells.clone();
    let mut last_caused: Vec<Option<u64>> = vec![None; n];
    let mut messages = 0u64;
    let mut rrc_attempts = 0u64;
    let mut bad = |time_ms: u64, ue: Option<UeId>, rule: &'static str, detail: String| {
        v.push(Violation {
            time_ms,
            ue,
            rule,
            detail,
        })
    };
    let count = cfg.cell.count;
    let la_size = |cell: u32| match cfg.paging.la_cells {
        0 => count,
        la if la >= count => count,
        la => {
            let lo = cell / la * la;
            (lo + la).min(count) - lo
        }
    };
    let t323_ms = (cfg.dormancy.t323_s * 1000.0).round() as u64;

    for (ev, effect) in out.trace.effects() {
        let t = ev.time.as_millis();
        let ue = match ev.subject {
            Subject::Ue(u) => u,
            Subject::Cell(_) => {
                if !matches!(effect, Effect::FachServed { .. }) {
                    bad(t, None, "cell-effect", format!("unexpected {effect}"));
                }
                continue;
            }
        };
        let i = ue as usize;
        match effect {
            Effect::Transition {
                from,
                to,
                messages: m,
                rrc_attempt,
                ..
            } => {
                messages += u64::from(*m);
                rrc_attempts += u64::from(*rrc_attempt);
                if *from != state[i] {
                    bad(t, Some(ue), "state-continuity", format!("{from} recorded while in {}", state[i]));
                }
                if !is_legal_edge(&cfg.features, *from, *to) {
                    bad(t, Some(ue), "legal-edge", format!("{from}->{to}"));
                }
                state[i] = *to;
            }
            Effect::Page {
                target_state, cells, ..
            } => {
                let expected = match target_state {
                    RrcState::Idle => la_size(cell[i]),
                    RrcState::CellPch => 1,
                    RrcState::UraPch => cfg.cell.ura_cells(cfg.cell.ura_of(cell[i])).len() as u32,
                    s => {
                        bad(t, Some(ue), "page-target", format!("paged in {s}"));
                        continue;
                    }
                };
                if *target_state != state[i] {
                    bad(t, Some(ue), "page-target", format!("paged as {target_state} while in {}", state[i]));
                }
                if *cells != expected {
                    bad(t, Some(ue), "page-scope", format!("{cells} cells for {target_state}, expected {expected}"));
                }
            }
            Effect::Scri { caused } => {
                let mode = out.modes[i];
                if mode == DormancyMode::None {
                    bad(t, Some(ue), "scri-typing", "SCRI from a UE without fast dormancy".into());
                }
                if *caused != (mode == DormancyMode::EFd) {
                    bad(t, Some(ue), "scri-typing", format!("caused={caused} from {mode} UE"));
                }
                if !matches!(state[i], RrcState::CellDch | RrcState::CellFach) {
                    bad(t, Some(ue), "scri-state", format!("SCRI sent in {}", state[i]));
                }
                if *caused {
                    if let Some(prev) = last_caused[i] {
                        if t - prev < t323_ms {
                            bad(t, Some(ue), "t323-spacing", format!("{} ms after previous", t - prev));
                        }
                    }
                    last_caused[i] = Some(t);
                }
            }
            Effect::Reselected { from_cell, to_cell } => {
                if *from_cell != cell[i] {
                    bad(t, Some(ue), "cell-continuity", format!("left {from_cell} while in {}", cell[i]));
                }
                if state[i] == RrcState::CellDch {
                    bad(t, Some(ue), "reselection-state", "reselected in CELL_DCH".into());
                }
                cell[i] = *to_cell;
            }
            _ => {}
        }
    }

    let end = out.report.duration_ms;
    let occupied: u128 = out.report.occupancy_ms.iter().sum();
    if occupied != u128::from(end) * n as u128 {
        bad(end, None, "population", format!("occupancy {occupied} ms != {n} UEs x {end} ms"));
    }
    let reported = |k: &str| out.report.get(k).unwrap_or(f64::NAN);
    if reported("total_rrc_messages") != messages as f64 {
        bad(end, None, "message-accounting", format!("trace {messages}, report {}", reported("total_rrc_messages")));
    }
    if reported("rrc_connection_attempts") != rrc_attempts as f64 {
        bad(end, None, "attempt-accounting", format!("trace {rrc_attempts}, report {}", reported("rrc_connection_attempts")));
    }
    v
}
