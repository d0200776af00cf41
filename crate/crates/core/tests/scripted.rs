mod common;

use common::{call, scripted, single_class, transitions, ul};
use sigload::engine::Effect;
use sigload::rrc::RrcState::{self, *};
use sigload::traffic::DeviceClass;

#[test]
fn two_bursts_and_a_call_from_pch() {
    let cfg = single_class(1, DeviceClass::Feature);
    let out = scripted(&cfg, &[(0, 0, ul(300_000)), (30_000, 0, ul(300_000)), (60_000, 0, call(20_000))], 300_000);
    let expected: Vec<(RrcState, RrcState)> = vec![
        (Idle, CellDch),
        (CellDch, CellFach),
        (CellFach, CellPch),
        (CellPch, CellFach),
        (CellFach, CellDch),
        (CellDch, CellFach),
        (CellFach, CellPch),
        (CellPch, CellFach),
        (CellFach, CellDch),
        (CellDch, CellFach),
        (CellFach, CellPch),
    ];
    assert_eq!(transitions(&out), expected);
    let c = &cfg.costs;
    let oracle = c.idle_dch + c.dch_fach + c.fach_pch + 2 * (c.pch_fach + c.fach_dch + c.dch_fach + c.fach_pch);
    assert_eq!(oracle, 57);
    assert_eq!(out.report.get("total_rrc_messages").unwrap(), f64::from(oracle));
    assert_eq!(out.report.get("rrc_connection_attempts").unwrap(), 1.0);
    assert_eq!(out.report.get("cell_update_attempts").unwrap(), 2.0);
}

#[test]
fn call_without_data_session_releases_to_idle() {
    let cfg = single_class(1, DeviceClass::Feature);
    let out = scripted(&cfg, &[(1_000, 0, call(30_000))], 120_000);
    assert_eq!(transitions(&out), vec![(Idle, CellDch), (CellDch, Idle)]);
    let release = out
        .trace
        .effects()
        .find(|(_, e)| matches!(e, Effect::Transition { to: Idle, .. }))
        .unwrap()
        .0
        .time
        .as_millis();
    assert_eq!(release, 1_000 + 2_109 + 30_000);
}

#[test]
fn downlink_to_idle_pages_the_location_area() {
    let cfg = single_class(1, DeviceClass::Feature);
    let dl = sigload::EventKind::DlDataArrival {
        bits: 50_000,
        session_start: true,
    };
    let out = scripted(&cfg, &[(500, 0, dl)], 60_000);
    let pages: Vec<u32> = out
        .trace
        .effects()
        .filter_map(|(_, e)| match e {
            Effect::Page { cells, .. } => Some(*cells),
            _ => None,
        })
        .collect();
    assert_eq!(pages, vec![cfg.cell.count]);
    assert_eq!(transitions(&out)[0], (Idle, CellDch));
}

#[test]
fn shipped_config_matches_defaults() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml")).unwrap();
    let cfg = sigload::ScenarioConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, sigload::ScenarioConfig::default());
}
