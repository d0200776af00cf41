#![allow(dead_code)]

use sigload::engine::{Effect, EventKind};
use sigload::rrc::RrcState;
use sigload::sim::{SimOptions, SimOutput, Simulation};
use sigload::traffic::{DeviceClass, DeviceProfile};
use sigload::{ScenarioConfig, SimTime};

/// A population of `n` UEs of one class with no generated traffic.
pub fn single_class(n: u32, class: DeviceClass) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.population = n;
    cfg.profiles.clear();
    cfg.profiles.insert(class, DeviceProfile::new(1.0));
    cfg.dormancy.imei_registry.clear();
    cfg
}

pub fn scripted(cfg: &ScenarioConfig, events: &[(u64, u32, EventKind)], end_ms: u64) -> SimOutput {
    let mut sim = Simulation::new(
        cfg,
        SimOptions {
            tracing: true,
            autogen: false,
        },
    )
    .expect("valid scenario");
    for (t, ue, kind) in events {
        sim.inject(SimTime::from_millis(*t), *ue, kind.clone()).expect("future event");
    }
    sim.run_until(SimTime::from_millis(end_ms)).expect("run");
    sim.finish().expect("finish")
}

pub fn ul(bits: u64) -> EventKind {
    EventKind::UlDataArrival {
        bits,
        session_start: true,
    }
}

pub fn call(hold_ms: u64) -> EventKind {
    EventKind::CsCallAttempt { hold_ms }
}

/// `(from, to)` of every state change in trace order.
pub fn transitions(out: &SimOutput) -> Vec<(RrcState, RrcState)> {
    out.trace
        .effects()
        .filter_map(|(_, e)| match e {
            Effect::Transition { from, to, .. } => Some((*from, *to)),
            _ => None,
        })
        .collect()
}
