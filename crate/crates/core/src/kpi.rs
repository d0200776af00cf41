//! KPI counters, time-integrated state occupancy, and before/after
//! comparison tables.

use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{Effect, SimTime};
use crate::radio::{power_proxy, CellConfig, PageOutcome};
use crate::rrc::RrcState;

#[derive(Debug, Error, PartialEq)]
pub enum KpiError {
    #[error("unknown event kind {0}")]
    UnknownEventKind(String),
    #[error("reports cover different durations ({before_ms} ms vs {after_ms} ms)")]
    DurationMismatch { before_ms: u64, after_ms: u64 },
    #[error("unknown KPI {0}")]
    UnknownKpi(String),
}

/// Counter names accepted by [`KpiRecorder::record_count`].
pub const COUNTERS: [&str; 6] = [
    "RRC_CONNECTION_ATTEMPT",
    "PS_RAB_ATTEMPT",
    "CELL_UPDATE",
    "PAGING_ATTEMPT",
    "PAGING_LOSS",
    "PS_SESSION",
];

/// Row order of reports and comparison tables, with display labels.
pub const ROWS: [(&str, &str); 28] = [
    ("rrc_connection_attempts", "RRC Connection Establishment Attempts"),
    ("ps_rab_establishment_attempts", "PS RAB Establishment Attempts"),
    ("cell_update_attempts", "Cell Update Attempts"),
    ("users_pch", "Mean # of Users in Cell-PCH/URA-PCH"),
    ("users_dch", "Mean # of Users in Cell-DCH"),
    ("users_fach", "Mean # of Users in Cell-FACH"),
    ("users_idle", "Mean # of Users in Idle"),
    ("users_pch_peak", "Peak # of Users in Cell-PCH/URA-PCH"),
    ("users_dch_peak", "Peak # of Users in Cell-DCH"),
    ("users_fach_peak", "Peak # of Users in Cell-FACH"),
    ("users_idle_peak", "Peak # of Users in Idle"),
    ("fach_to_hsdpa_transitions", "Cell-FACH to HSDPA Transitions"),
    ("hsdpa_to_fach_transitions", "HSDPA to Cell-FACH Transitions"),
    ("fach_to_pch_transitions", "Cell-FACH to Cell-PCH Transitions"),
    ("paging_attempts", "PS Paging Attempts"),
    ("paging_losses", "PS Paging Losses"),
    ("ps_drops", "PS Call Drops"),
    ("ps_drop_rate_pct", "PS Call Drop Rate (%)"),
    ("hsdpa_drops", "HSDPA Call Drops"),
    ("cs_setup_attempts", "CS Call Setup Attempts"),
    ("cs_setup_failures", "CS Call Setup Failures"),
    ("cs_setup_time_mean_ms", "Mean CS Call Setup Time (ms)"),
    ("fach_congestion_seconds", "FACH DTCH Congestion (s)"),
    ("ce_utilization_mean", "Channel Element Utilization (DL)"),
    ("dch_admission_rejections", "DCH Admission Rejections"),
    ("scri_sent", "SCRI Messages"),
    ("total_rrc_messages", "Total RRC Messages"),
    ("ps_sessions", "PS Sessions"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Idle,
    Dch,
    Fach,
    Pch,
}

fn group(s: RrcState) -> Group {
    match s {
        RrcState::Idle => Group::Idle,
        RrcState::CellDch => Group::Dch,
        RrcState::CellFach => Group::Fach,
        RrcState::CellPch | RrcState::UraPch => Group::Pch,
    }
}

/// Mutable counter registry owned by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiRecorder {
    population: u32,
    counts: [u64; 5],
    peaks: [u64; 5],
    occupancy_ms: [u128; 5],
    dch_hourly: Vec<u128>,
    last: SimTime,
    pub rrc_connection_attempts: u64,
    pub ps_rab_attempts: u64,
    pub cell_update_attempts: u64,
    pub fach_to_dch: u64,
    pub dch_to_fach: u64,
    pub fach_to_pch: u64,
    pub paging_attempts: u64,
    pub paging_losses: u64,
    pub ps_drops: u64,
    pub hsdpa_drops: u64,
    pub cs_setup_attempts: u64,
    pub cs_setup_failures: u64,
    pub cs_setup_time_ms: u64,
    pub cs_setups_ok: u64,
    pub dch_rejections: u64,
    pub scri_sent: u64,
    pub total_rrc_messages: u64,
    pub ps_sessions: u64,
    pub reselections: u64,
    pub fach_served_bits: u64,
}

impl KpiRecorder {
    /// Starts with the whole population idle at time zero.
    pub fn new(population: u32) -> Self {
        let mut counts = [0; 5];
        counts[RrcState::Idle.index()] = u64::from(population);
        Self {
            population,
            counts,
            peaks: counts,
            occupancy_ms: [0; 5],
            dch_hourly: Vec::new(),
            last: SimTime::ZERO,
            rrc_connection_attempts: 0,
            ps_rab_attempts: 0,
            cell_update_attempts: 0,
            fach_to_dch: 0,
            dch_to_fach: 0,
            fach_to_pch: 0,
            paging_attempts: 0,
            paging_losses: 0,
            ps_drops: 0,
            hsdpa_drops: 0,
            cs_setup_attempts: 0,
            cs_setup_failures: 0,
            cs_setup_time_ms: 0,
            cs_setups_ok: 0,
            dch_rejections: 0,
            scri_sent: 0,
            total_rrc_messages: 0,
            ps_sessions: 0,
            reselections: 0,
            fach_served_bits: 0,
        }
    }

    pub fn population(&self) -> u32 {
        self.population
    }

    pub fn count_in(&self, s: RrcState) -> u64 {
        self.counts[s.index()]
    }

    fn accumulate(&mut self, now: SimTime) {
        if now <= self.last {
            return;
        }
        let span = u128::from(now.since(self.last));
        for (acc, n) in self.occupancy_ms.iter_mut().zip(self.counts) {
            *acc += span * u128::from(n);
        }
        let dch = u128::from(self.counts[RrcState::CellDch.index()]);
        let mut t = self.last.as_millis();
        while t < now.as_millis() {
            let hour = (t / 3_600_000) as usize;
            let end = ((hour as u64 + 1) * 3_600_000).min(now.as_millis());
            if self.dch_hourly.len() <= hour {
                self.dch_hourly.resize(hour + 1, 0);
            }
            self.dch_hourly[hour] += dch * u128::from(end - t);
            t = end;
        }
        self.last = now;
    }

    /// Applies one effect observed at `now`.
    pub fn record(&mut self, now: SimTime, effect: &Effect) {
        match effect {
            Effect::Transition {
                from,
                to,
                messages,
                rrc_attempt,
                rab_attempt,
            } => {
                self.total_rrc_messages += u64::from(*messages);
                self.rrc_connection_attempts += u64::from(*rrc_attempt);
                self.ps_rab_attempts += u64::from(*rab_attempt);
                match (from, to) {
                    (RrcState::CellFach, RrcState::CellDch) => self.fach_to_dch += 1,
                    (RrcState::CellDch, RrcState::CellFach) => self.dch_to_fach += 1,
                    (RrcState::CellFach, p) if p.is_pch() => self.fach_to_pch += 1,
                    _ => {}
                }
                if from != to {
                    self.accumulate(now);
                    self.counts[from.index()] -= 1;
                    self.counts[to.index()] += 1;
                    let i = to.index();
                    self.peaks[i] = self.peaks[i].max(self.counts[i]);
                }
            }
            Effect::Scri { .. } => self.scri_sent += 1,
            Effect::RncDecision(_) => {}
            Effect::Page { cells, outcome, .. } => {
                self.paging_attempts += u64::from(*cells);
                if *outcome != PageOutcome::Delivered {
                    self.paging_losses += 1;
                }
            }
            Effect::CellUpdate(_) => self.cell_update_attempts += 1,
            Effect::Reselected { .. } => self.reselections += 1,
            Effect::CsSetup {
                success, setup_ms, ..
            } => {
                self.cs_setup_attempts += 1;
                if *success {
                    self.cs_setups_ok += 1;
                    self.cs_setup_time_ms += setup_ms;
                } else {
                    self.cs_setup_failures += 1;
                }
            }
            Effect::FachServed { bits, .. } => self.fach_served_bits += bits,
            Effect::SetupRejected => self.dch_rejections += 1,
            Effect::PsDrop => self.ps_drops += 1,
            Effect::HsdpaDrop => self.hsdpa_drops += 1,
        }
    }

    /// Increments a plain counter by name.
    pub fn record_count(&mut self, kind: &str) -> Result<(), KpiError> {
        let c = match kind {
            "RRC_CONNECTION_ATTEMPT" => &mut self.rrc_connection_attempts,
            "PS_RAB_ATTEMPT" => &mut self.ps_rab_attempts,
            "CELL_UPDATE" => &mut self.cell_update_attempts,
            "PAGING_ATTEMPT" => &mut self.paging_attempts,
            "PAGING_LOSS" => &mut self.paging_losses,
            "PS_SESSION" => &mut self.ps_sessions,
            other => return Err(KpiError::UnknownEventKind(other.to_string())),
        };
        *c += 1;
        Ok(())
    }

    /// Closes the occupancy integrals at `end` and produces the report.
    pub fn finalize(&mut self, end: SimTime, fach_congestion_seconds: f64, cell: &CellConfig) -> KpiReport {
        self.accumulate(end);
        let dur = end.as_millis();
        let mean = |ms: u128| if dur == 0 { 0.0 } else { ms as f64 / dur as f64 };
        let by_group = |g: Group, arr: &[u128; 5]| -> u128 {
            RrcState::ALL.iter().filter(|s| group(**s) == g).map(|s| arr[s.index()]).sum()
        };
        let peak = |g: Group| -> u64 {
            RrcState::ALL
                .iter()
                .filter(|s| group(**s) == g)
                .map(|s| self.peaks[s.index()])
                .max()
                .unwrap_or(0)
        };
        let dch_mean = mean(by_group(Group::Dch, &self.occupancy_ms));
        let ce_total = f64::from(cell.ce_capacity) * f64::from(cell.count);
        let ce_util = dch_mean * f64::from(cell.ce_per_dch_user) / ce_total;
        let cs_mean = if self.cs_setups_ok == 0 {
            0.0
        } else {
            self.cs_setup_time_ms as f64 / self.cs_setups_ok as f64
        };
        let drop_rate = if self.ps_sessions == 0 {
            0.0
        } else {
            100.0 * self.ps_drops as f64 / self.ps_sessions as f64
        };

        let mut rows: Vec<(String, f64)> = Vec::new();
        let values: [f64; 28] = [
            self.rrc_connection_attempts as f64,
            self.ps_rab_attempts as f64,
            self.cell_update_attempts as f64,
            mean(by_group(Group::Pch, &self.occupancy_ms)),
            dch_mean,
            mean(by_group(Group::Fach, &self.occupancy_ms)),
            mean(by_group(Group::Idle, &self.occupancy_ms)),
            peak(Group::Pch) as f64,
            peak(Group::Dch) as f64,
            peak(Group::Fach) as f64,
            peak(Group::Idle) as f64,
            self.fach_to_dch as f64,
            self.dch_to_fach as f64,
            self.fach_to_pch as f64,
            self.paging_attempts as f64,
            self.paging_losses as f64,
            self.ps_drops as f64,
            drop_rate,
            self.hsdpa_drops as f64,
            self.cs_setup_attempts as f64,
            self.cs_setup_failures as f64,
            cs_mean,
            fach_congestion_seconds,
            ce_util,
            self.dch_rejections as f64,
            self.scri_sent as f64,
            self.total_rrc_messages as f64,
            self.ps_sessions as f64,
        ];
        for ((name, _), v) in ROWS.iter().zip(values) {
            rows.push((name.to_string(), v));
        }

        let hours = dur.div_ceil(3_600_000) as usize;
        let cells = f64::from(cell.count);
        let mut series = Vec::with_capacity(hours);
        for h in 0..hours {
            let start = h as u64 * 3_600_000;
            let span = (dur.min(start + 3_600_000) - start) as f64;
            let dch = self.dch_hourly.get(h).copied().unwrap_or(0) as f64 / span;
            series.push(power_proxy(cell, dch / cells));
        }
        rows.push(("power_proxy_mean".into(), power_proxy(cell, dch_mean / cells)));
        for (h, p) in series.iter().enumerate() {
            rows.push((format!("power_proxy_h{h:02}"), *p));
        }

        KpiReport {
            duration_ms: dur,
            population: self.population,
            occupancy_ms: self.occupancy_ms,
            rows,
        }
    }
}

/// Finalized KPI snapshot of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiReport {
    pub duration_ms: u64,
    pub population: u32,
    /// Time-integrated occupancy per RRC state, in ms x users, indexed by
    /// [`RrcState::index`].
    pub occupancy_ms: [u128; 5],
    rows: Vec<(String, f64)>,
}

impl KpiReport {
    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn get(&self, name: &str) -> Result<f64, KpiError> {
        self.rows
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| KpiError::UnknownKpi(name.to_string()))
    }

    /// `kpi,value` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kpi,value\n");
        for (name, v) in &self.rows {
            let _ = writeln!(out, "{name},{}", fmt_value(*v));
        }
        out
    }
}

pub fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub kpi: String,
    pub before: f64,
    pub after: f64,
    /// `None` when `before` is zero.
    pub delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

pub fn compare(before: &KpiReport, after: &KpiReport) -> Result<DeltaTable, KpiError> {
    if before.duration_ms != after.duration_ms {
        return Err(KpiError::DurationMismatch {
            before_ms: before.duration_ms,
            after_ms: after.duration_ms,
        });
    }
    let rows = before
        .rows
        .iter()
        .map(|(name, b)| {
            let a = after.get(name).unwrap_or(0.0);
            DeltaRow {
                kpi: name.clone(),
                before: *b,
                after: a,
                delta_pct: delta_pct(*b, a),
            }
        })
        .collect();
    Ok(DeltaTable { rows })
}

pub fn delta_pct(before: f64, after: f64) -> Option<f64> {
    if before == 0.0 {
        None
    } else {
        Some(100.0 * (after - before) / before)
    }
}

impl DeltaTable {
    pub fn get(&self, kpi: &str) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.kpi == kpi)
    }

    /// `kpi,before,after,delta_pct` CSV with `N/A` for undefined deltas.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kpi,before,after,delta_pct\n");
        for r in &self.rows {
            let d = r.delta_pct.map_or_else(|| "N/A".to_string(), |d| format!("{d:.2}"));
            let _ = writeln!(out, "{},{},{},{d}", r.kpi, fmt_value(r.before), fmt_value(r.after));
        }
        out
    }

    /// Fixed-width before/after/delta table.
    pub fn to_text(&self, title: &str) -> String {
        let label = |k: &str| {
            ROWS.iter()
                .find(|(n, _)| *n == k)
                .map(|(_, l)| l.to_string())
                .unwrap_or_else(|| k.to_string())
        };
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(out, "{:<44} {:>16} {:>16} {:>10}", "KPI", "Before", "After", "Delta");
        let _ = writeln!(out, "{}", "-".repeat(89));
        for r in &self.rows {
            let d = r.delta_pct.map_or_else(|| "N/A".to_string(), |d| format!("{d:+.1}%"));
            let _ = writeln!(
                out,
                "{:<44} {:>16} {:>16} {:>10}",
                label(&r.kpi),
                fmt_value(r.before),
                fmt_value(r.after),
                d
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transition(from: RrcState, to: RrcState, messages: u32, rrc: bool, rab: bool) -> Effect {
        Effect::Transition {
            from,
            to,
            messages,
            rrc_attempt: rrc,
            rab_attempt: rab,
        }
    }

    #[test]
    fn idle_to_dch_counts_attempts() {
        let mut k = KpiRecorder::new(1);
        k.record(SimTime::ZERO, &transition(RrcState::Idle, RrcState::CellDch, 25, true, true));
        assert_eq!((k.rrc_connection_attempts, k.ps_rab_attempts, k.total_rrc_messages), (1, 1, 25));
    }

    #[test]
    fn pch_wakeup_counts_cell_update_only() {
        let mut k = KpiRecorder::new(1);
        k.record(SimTime::ZERO, &transition(RrcState::Idle, RrcState::CellDch, 25, true, true));
        k.record(SimTime::ZERO, &transition(RrcState::CellDch, RrcState::CellFach, 4, false, false));
        k.record(SimTime::ZERO, &transition(RrcState::CellFach, RrcState::CellPch, 2, false, false));
        let rrc = k.rrc_connection_attempts;
        k.record(SimTime::ZERO, &Effect::CellUpdate(crate::mobility::CellUpdateCause::UlData));
        k.record(SimTime::ZERO, &transition(RrcState::CellPch, RrcState::CellFach, 3, false, false));
        assert_eq!(k.cell_update_attempts, 1);
        assert_eq!(k.rrc_connection_attempts, rrc);
    }

    #[test]
    fn no_events_all_zero() {
        let mut k = KpiRecorder::new(0);
        let r = k.finalize(SimTime::from_secs(10), 0.0, &CellConfig::default());
        assert!(r.rows().iter().all(|(n, v)| *v == 0.0 || n.starts_with("power_proxy")));
    }

    #[test]
    fn occupancy_integrates_over_time() {
        let mut k = KpiRecorder::new(2);
        k.record(SimTime::from_secs(10), &transition(RrcState::Idle, RrcState::CellDch, 25, true, true));
        let r = k.finalize(SimTime::from_secs(20), 0.0, &CellConfig::default());
        assert_eq!(r.occupancy_ms[RrcState::CellDch.index()], 10_000);
        assert_eq!(r.occupancy_ms[RrcState::Idle.index()], 30_000);
        assert_eq!(r.occupancy_ms.iter().sum::<u128>(), 2 * 20_000);
        assert!((r.get("users_dch").unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.get("users_dch_peak").unwrap(), 1.0);
    }

    #[test]
    fn unknown_counter_rejected() {
        let mut k = KpiRecorder::new(1);
        assert!(k.record_count("CELL_UPDATE").is_ok());
        assert_eq!(k.cell_update_attempts, 1);
        assert_eq!(
            k.record_count("WARP_DRIVE"),
            Err(KpiError::UnknownEventKind("WARP_DRIVE".into()))
        );
    }

    #[test]
    fn published_deltas() {
        let d = delta_pct(35_676_287.0, 14_645_168.0).unwrap();
        assert_eq!(d.round(), -59.0);
        let d = delta_pct(6_950.0, 24_073.0).unwrap();
        assert_eq!(d.round(), 246.0);
        assert_eq!(delta_pct(0.0, 5.0), None);
    }

    #[test]
    fn self_compare_is_zero() {
        let mut k = KpiRecorder::new(3);
        k.record(SimTime::from_secs(1), &transition(RrcState::Idle, RrcState::CellDch, 25, true, true));
        let r = k.finalize(SimTime::from_secs(5), 1.5, &CellConfig::default());
        let t = compare(&r, &r).unwrap();
        assert!(t.rows.iter().all(|row| row.delta_pct.is_none_or(|d| d == 0.0)));
        assert!(t.to_csv().starts_with("kpi,before,after,delta_pct\n"));
    }

    #[test]
    fn duration_mismatch_rejected() {
        let a = KpiRecorder::new(1).finalize(SimTime::from_secs(5), 0.0, &CellConfig::default());
        let b = KpiRecorder::new(1).finalize(SimTime::from_secs(6), 0.0, &CellConfig::default());
        assert!(matches!(compare(&a, &b), Err(KpiError::DurationMismatch { .. })));
    }

    #[test]
    fn power_series_has_one_entry_per_hour() {
        let r = KpiRecorder::new(1).finalize(SimTime::from_secs(7_200), 0.0, &CellConfig::default());
        assert!(r.get("power_proxy_h01").is_ok());
        assert!(r.get("power_proxy_h02").is_err());
    }
}
