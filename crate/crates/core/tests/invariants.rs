use proptest::prelude::*;
use sigload::audit::audit;
use sigload::config::Features;
use sigload::dormancy::RncAction;
use sigload::engine::{EventKind, EventQueue, Subject};
use sigload::kpi::compare;
use sigload::rrc::{apply_trigger, is_legal_edge, RrcPolicy, RrcState, TransitionCostTable, Trigger};
use sigload::config::default_profiles;
use sigload::traffic::{class_counts, DeviceClass};
use sigload::{simulate, ScenarioConfig, SimTime};

fn features() -> impl Strategy<Value = Features> {
    any::<[bool; 6]>().prop_map(|b| Features {
        cell_pch: b[0],
        ura_pch: b[1],
        e_fd: b[2],
        legacy_imei_handling: b[3],
        d2p_direct: b[4],
        p2d_direct: b[5],
    })
}

fn trigger() -> impl Strategy<Value = Trigger> {
    prop_oneof![
        Just(Trigger::UlData),
        Just(Trigger::DlDataDelivered),
        Just(Trigger::InactivityDch),
        Just(Trigger::InactivityFach),
        Just(Trigger::InactivityPch),
        Just(Trigger::ScriAccepted(RncAction::ReleaseToIdle)),
        Just(Trigger::ScriAccepted(RncAction::MoveToFach)),
        Just(Trigger::ScriAccepted(RncAction::MoveToPch)),
        Just(Trigger::CsCall),
        Just(Trigger::CsRelease),
        Just(Trigger::DemandAboveThreshold),
        Just(Trigger::DemandLow),
    ]
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    (
        any::<u64>(),
        20u32..150,
        600u32..3600,
        features(),
        prop_oneof![Just(0.0), Just(10.0), Just(45.0)],
        1u8..=2,
        0u32..=10,
    )
        .prop_map(|(seed, population, duration, features, t323, tb, la)| {
            let mut cfg = ScenarioConfig::default();
            cfg.seed = seed;
            cfg.population = population;
            cfg.duration_s = f64::from(duration);
            cfg.features = features;
            cfg.dormancy.t323_s = t323;
            cfg.fach.tb_count = tb;
            cfg.paging.la_cells = la;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn traced_runs_pass_the_audit(cfg in scenario()) {
        let out = simulate(&cfg, true).unwrap();
        let violations = audit(&cfg, &out);
        prop_assert!(violations.is_empty(), "{}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"));
    }

    #[test]
    fn occupancy_means_sum_to_population(cfg in scenario()) {
        let r = simulate(&cfg, false).unwrap().report;
        let sum: f64 = ["users_pch", "users_dch", "users_fach", "users_idle"].iter().map(|k| r.get(k).unwrap()).sum();
        prop_assert!((sum - f64::from(cfg.population)).abs() < 1e-6, "{sum}");
    }

    #[test]
    fn self_comparison_is_zero(cfg in scenario()) {
        let a = simulate(&cfg, false).unwrap().report;
        let b = simulate(&cfg, false).unwrap().report;
        prop_assert_eq!(a.to_csv(), b.to_csv());
        for row in compare(&a, &b).unwrap().rows {
            prop_assert!(row.delta_pct.is_none_or(|d| d == 0.0), "{}", row.kpi);
        }
    }

    #[test]
    fn triggers_only_follow_legal_edges(f in features(), from_i in 0usize..5, t in trigger()) {
        let from = RrcState::ALL[from_i];
        let policy = RrcPolicy::new(&f, TransitionCostTable::default());
        if let Ok(tr) = apply_trigger(from, t, &policy) {
            if tr.is_change() {
                prop_assert!(is_legal_edge(&f, tr.from, tr.to), "{:?} -> {:?}", tr.from, tr.to);
            }
        }
    }

    #[test]
    fn queue_pops_in_time_then_insertion_order(times in prop::collection::vec(0u64..1_000, 1..200)) {
        let mut q = EventQueue::new();
        for (i, t) in times.iter().enumerate() {
            q.schedule(SimTime::from_millis(*t), Subject::Ue(i as u32), EventKind::FachScheduleTick).unwrap();
        }
        let mut last = (0u64, 0u64);
        while let Some(ev) = q.pop_due(SimTime::MAX) {
            let key = (ev.time.as_millis(), ev.seq);
            prop_assert!(key >= last);
            last = key;
        }
    }

    #[test]
    fn class_counts_cover_the_population(n in 1u32..100_000) {
        let counts = class_counts(n, &default_profiles()).unwrap();
        prop_assert_eq!(counts.iter().map(|(_, c)| *c).sum::<u32>(), n);
        prop_assert!(counts.iter().any(|(c, _)| *c == DeviceClass::Feature));
    }
}
