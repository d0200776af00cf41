//! Shared-channel capacity: the per-cell FACH/DTCH scheduler, the paging
//! channel, channel-element admission and the transmit-power proxy.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CellId, SimTime, UeId};
use crate::rrc::RrcState;

pub const FACH_TICK_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FachEntry {
    ue: UeId,
    dir: Direction,
    bits: u64,
    remaining: u64,
}

/// A queued transfer that finished in the tick ending at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FachCompletion {
    pub ue: UeId,
    pub dir: Direction,
    pub bits: u64,
    pub time: SimTime,
}

/// FIFO scheduler of one cell's FACH traffic part. Service happens at the end
/// of each 100 ms tick of the global tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FachChannel {
    tb_count: u8,
    queue: VecDeque<FachEntry>,
    backlog_bits: u64,
    next_tick: u64,
    congestion_ms: u64,
    served_bits: u64,
    offered_bits: u64,
}

impl FachChannel {
    /// `tb_count` must be 1 or 2.
    pub fn new(tb_count: u8) -> Self {
        assert!(matches!(tb_count, 1 | 2), "tb_count must be 1 or 2");
        Self {
            tb_count,
            queue: VecDeque::new(),
            backlog_bits: 0,
            next_tick: 0,
            congestion_ms: 0,
            served_bits: 0,
            offered_bits: 0,
        }
    }

    pub fn tb_count(&self) -> u8 {
        self.tb_count
    }

    pub fn traffic_rate_bps(&self) -> u64 {
        if self.tb_count == 2 {
            72_000
        } else {
            36_000
        }
    }

    fn bits_per_tick(&self) -> u64 {
        self.traffic_rate_bps() * FACH_TICK_MS / 1000
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    pub fn congestion_seconds(&self) -> f64 {
        self.congestion_ms as f64 / 1000.0
    }

    pub fn served_bits(&self) -> u64 {
        self.served_bits
    }

    pub fn offered_bits(&self) -> u64 {
        self.offered_bits
    }

    /// Adds bits to the backlog without attributing them to a UE transfer.
    pub fn offer(&mut self, bits: u64) {
        self.enqueue(UeId::MAX, Direction::Downlink, bits);
    }

    pub fn enqueue(&mut self, ue: UeId, dir: Direction, bits: u64) {
        if bits == 0 {
            return;
        }
        self.offered_bits += bits;
        self.backlog_bits += bits;
        self.queue.push_back(FachEntry {
            ue,
            dir,
            bits,
            remaining: bits,
        });
    }

    /// Serves one tick of `dt_ms` and returns the bits served. The tick
    /// counts as congested when backlog is still left at its end.
    pub fn fach_tick(&mut self, dt_ms: u64) -> u64 {
        let capacity = self.traffic_rate_bps() * dt_ms / 1000;
        let served = self.serve(capacity, SimTime::ZERO, 1).0;
        if self.backlog_bits > 0 {
            self.congestion_ms += dt_ms;
        }
        served
    }

    /// Runs every whole tick that ends at or before `now`.
    pub fn advance_to(&mut self, now: SimTime) -> Vec<FachCompletion> {
        let end_tick = now.as_millis() / FACH_TICK_MS;
        if end_tick <= self.next_tick {
            return Vec::new();
        }
        let ticks = end_tick - self.next_tick;
        let start = self.next_tick;
        self.next_tick = end_tick;
        if self.backlog_bits == 0 {
            return Vec::new();
        }
        let per_tick = self.bits_per_tick();
        let ticks_to_clear = self.backlog_bits.div_ceil(per_tick);
        self.congestion_ms += ticks.min(ticks_to_clear - 1) * FACH_TICK_MS;
        let capacity = per_tick.saturating_mul(ticks);
        self.serve(capacity, SimTime::from_millis(start * FACH_TICK_MS), per_tick).1
    }

    fn serve(&mut self, capacity: u64, start: SimTime, per_tick: u64) -> (u64, Vec<FachCompletion>) {
        let served = capacity.min(self.backlog_bits);
        let mut done = Vec::new();
        let mut used = 0u64;
        while let Some(front) = self.queue.front_mut() {
            let left = served - used;
            if front.remaining <= left {
                used += front.remaining;
                let entry = self.queue.pop_front().expect("front exists");
                if entry.ue != UeId::MAX {
                    let ticks = used.div_ceil(per_tick);
                    done.push(FachCompletion {
                        ue: entry.ue,
                        dir: entry.dir,
                        bits: entry.bits,
                        time: start.after_ms(ticks * FACH_TICK_MS),
                    });
                }
            } else {
                front.remaining -= left;
                break;
            }
        }
        self.backlog_bits -= served;
        self.served_bits += served;
        (served, done)
    }

    /// Tick-end time at which the head of the queue completes, given no new
    /// arrivals.
    pub fn next_completion(&self) -> Option<SimTime> {
        let head = self.queue.front()?;
        let ticks = head.remaining.div_ceil(self.bits_per_tick());
        Some(SimTime::from_millis((self.next_tick + ticks) * FACH_TICK_MS))
    }

    /// Drops a UE's queued entries and returns the unsent bits per direction
    /// `(uplink, downlink)`.
    pub fn remove_ue(&mut self, ue: UeId) -> (u64, u64) {
        let mut ul = 0;
        let mut dl = 0;
        self.queue.retain(|e| {
            if e.ue != ue {
                return true;
            }
            match e.dir {
                Direction::Uplink => ul += e.remaining,
                Direction::Downlink => dl += e.remaining,
            }
            false
        });
        self.backlog_bits -= ul + dl;
        self.offered_bits -= ul + dl;
        (ul, dl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageOutcome {
    Delivered,
    LostRetry,
    LostFinal,
}

impl fmt::Display for PageOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PageOutcome::Delivered => "DELIVERED",
            PageOutcome::LostRetry => "LOST_RETRY",
            PageOutcome::LostFinal => "LOST_FINAL",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RadioError {
    #[error("page requested for ue {ue} in {state}")]
    ContractViolation { ue: UeId, state: RrcState },
}

/// Paging Type 1 capacity, budgeted per cell in one-second buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct PagingChannel {
    pub capacity_pps: f64,
    pub retry_limit: u32,
    pub attempts: u64,
    pub losses: u64,
    buckets: Vec<(u64, u32)>,
}

impl PagingChannel {
    pub fn new(cells: u32, capacity_pps: f64, retry_limit: u32) -> Self {
        Self {
            capacity_pps,
            retry_limit,
            attempts: 0,
            losses: 0,
            buckets: vec![(u64::MAX, 0); cells as usize],
        }
    }

    fn take(&mut self, cell: CellId, now: SimTime) -> bool {
        let second = now.as_millis() / 1000;
        let b = &mut self.buckets[cell as usize];
        if b.0 != second {
            *b = (second, 0);
        }
        if f64::from(b.1) + 1.0 <= self.capacity_pps {
            b.1 += 1;
            true
        } else {
            false
        }
    }

    /// Sends one page in each of `cells` for a UE camped on `serving_cell`.
    /// `attempt` is zero for the first try. Every cell consumes a page from
    /// its budget; the page reaches the UE iff the serving cell had room.
    pub fn page_ue(
        &mut self,
        ue: UeId,
        state: RrcState,
        serving_cell: CellId,
        cells: &[CellId],
        attempt: u32,
        now: SimTime,
    ) -> Result<PageOutcome, RadioError> {
        if !matches!(state, RrcState::Idle | RrcState::CellPch | RrcState::UraPch) {
            return Err(RadioError::ContractViolation { ue, state });
        }
        let mut delivered = false;
        for &cell in cells {
            self.attempts += 1;
            let ok = self.take(cell, now);
            if cell == serving_cell {
                delivered = ok;
            }
        }
        if delivered {
            return Ok(PageOutcome::Delivered);
        }
        self.losses += 1;
        Ok(if attempt < self.retry_limit {
            PageOutcome::LostRetry
        } else {
            PageOutcome::LostFinal
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub count: u32,
    pub ura_size: u32,
    pub ce_capacity: u32,
    pub ce_per_dch_user: u32,
    pub dch_rate_bps: u64,
    pub power_base: f64,
    pub power_per_dch_user: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            count: 50,
            ura_size: 10,
            ce_capacity: 128,
            ce_per_dch_user: 1,
            dch_rate_bps: 1_000_000,
            power_base: 10.0,
            power_per_dch_user: 0.5,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.count == 0 || self.ura_size == 0 {
            return Err("count and ura_size must be positive".into());
        }
        if self.ce_per_dch_user == 0 || self.ce_capacity == 0 {
            return Err("ce_capacity and ce_per_dch_user must be positive".into());
        }
        if self.dch_rate_bps == 0 {
            return Err("dch_rate_bps must be positive".into());
        }
        if !(self.power_base.is_finite() && self.power_per_dch_user.is_finite() && self.power_per_dch_user >= 0.0) {
            return Err("power_per_dch_user must be a nonnegative number".into());
        }
        Ok(())
    }

    pub fn ura_of(&self, cell: CellId) -> u32 {
        cell / self.ura_size
    }

    /// Cells belonging to registration area `ura`.
    pub fn ura_cells(&self, ura: u32) -> std::ops::Range<CellId> {
        let lo = ura * self.ura_size;
        lo..(lo + self.ura_size).min(self.count)
    }
}

/// Channel-element pool of one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellResources {
    pub ce_capacity: u32,
    pub ce_per_dch_user: u32,
    pub used_ce: u32,
}

impl CellResources {
    pub fn new(ce_capacity: u32, ce_per_dch_user: u32) -> Self {
        Self {
            ce_capacity,
            ce_per_dch_user,
            used_ce: 0,
        }
    }

    pub fn admit_dch(&mut self) -> bool {
        if self.used_ce + self.ce_per_dch_user <= self.ce_capacity {
            self.used_ce += self.ce_per_dch_user;
            true
        } else {
            false
        }
    }

    pub fn release(&mut self) {
        self.used_ce = self.used_ce.saturating_sub(self.ce_per_dch_user);
    }

    pub fn dch_users(&self) -> u32 {
        self.used_ce / self.ce_per_dch_user
    }
}

/// Linear mean-power proxy of a cell carrying `dch_users` dedicated users.
pub fn power_proxy(cell: &CellConfig, dch_users: f64) -> f64 {
    cell.power_base + cell.power_per_dch_user * dch_users
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_follow_tb_count() {
        assert_eq!(FachChannel::new(1).traffic_rate_bps(), 36_000);
        assert_eq!(FachChannel::new(2).traffic_rate_bps(), 72_000);
    }

    #[test]
    fn ten_second_tick_drains_exactly() {
        let mut ch = FachChannel::new(1);
        ch.offer(360_000);
        assert_eq!(ch.fach_tick(10_000), 360_000);
        assert_eq!(ch.backlog_bits(), 0);
        assert_eq!(ch.congestion_seconds(), 0.0);

        let mut ch = FachChannel::new(2);
        ch.offer(360_000);
        assert_eq!(ch.fach_tick(5_000), 360_000);
        assert_eq!(ch.backlog_bits(), 0);
    }

    #[test]
    fn empty_tick_serves_nothing() {
        let mut ch = FachChannel::new(1);
        assert_eq!(ch.fach_tick(100), 0);
        assert_eq!(ch.congestion_seconds(), 0.0);
    }

    #[test]
    fn residual_tick_is_congested() {
        let mut ch = FachChannel::new(1);
        ch.offer(5_000);
        assert_eq!(ch.fach_tick(100), 3_600);
        assert!((ch.congestion_seconds() - 0.1).abs() < 1e-12);
        assert_eq!(ch.fach_tick(100), 1_400);
        assert!((ch.congestion_seconds() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_tick_by_tick() {
        let mut lazy = FachChannel::new(1);
        let mut step = FachChannel::new(1);
        for (ue, bits) in [(1, 10_000), (2, 2_000), (3, 25_000)] {
            lazy.enqueue(ue, Direction::Downlink, bits);
            step.enqueue(ue, Direction::Downlink, bits);
        }
        let done = lazy.advance_to(SimTime::from_millis(2_050));
        for _ in 0..20 {
            step.fach_tick(100);
        }
        assert_eq!(lazy.backlog_bits(), step.backlog_bits());
        assert_eq!(lazy.congestion_seconds(), step.congestion_seconds());
        // 10k done in tick 3, 12k cumulative in tick 4, 37k in tick 11.
        let times: Vec<u64> = done.iter().map(|c| c.time.as_millis()).collect();
        assert_eq!(times, vec![300, 400, 1_100]);
    }

    #[test]
    fn next_completion_and_removal() {
        let mut ch = FachChannel::new(2);
        ch.enqueue(4, Direction::Uplink, 7_300);
        ch.enqueue(5, Direction::Downlink, 100);
        assert_eq!(ch.next_completion(), Some(SimTime::from_millis(200)));
        assert_eq!(ch.remove_ue(4), (7_300, 0));
        assert_eq!(ch.next_completion(), Some(SimTime::from_millis(100)));
        assert_eq!(ch.backlog_bits(), 100);
    }

    #[test]
    fn infinite_capacity_never_loses() {
        let mut p = PagingChannel::new(1, f64::INFINITY, 0);
        for ue in 0..100 {
            let o = p.page_ue(ue, RrcState::Idle, 0, &[0], 0, SimTime::ZERO).unwrap();
            assert_eq!(o, PageOutcome::Delivered);
        }
        assert_eq!(p.losses, 0);
    }

    #[test]
    fn one_page_per_second_loses_two_of_three() {
        let mut p = PagingChannel::new(1, 1.0, 0);
        let outcomes: Vec<_> = (0..3)
            .map(|ue| p.page_ue(ue, RrcState::Idle, 0, &[0], 0, SimTime::from_millis(10)).unwrap())
            .collect();
        assert_eq!(
            outcomes,
            vec![PageOutcome::Delivered, PageOutcome::LostFinal, PageOutcome::LostFinal]
        );
        assert_eq!((p.attempts, p.losses), (3, 2));
        // A new second restores the budget.
        let o = p.page_ue(9, RrcState::CellPch, 0, &[0], 0, SimTime::from_millis(1_000)).unwrap();
        assert_eq!(o, PageOutcome::Delivered);
    }

    #[test]
    fn retry_until_limit() {
        let mut p = PagingChannel::new(1, 1.0, 2);
        p.page_ue(0, RrcState::Idle, 0, &[0], 0, SimTime::ZERO).unwrap();
        assert_eq!(p.page_ue(1, RrcState::Idle, 0, &[0], 1, SimTime::ZERO), Ok(PageOutcome::LostRetry));
        assert_eq!(p.page_ue(1, RrcState::Idle, 0, &[0], 2, SimTime::ZERO), Ok(PageOutcome::LostFinal));
    }

    #[test]
    fn paging_connected_ue_is_a_contract_violation() {
        let mut p = PagingChannel::new(1, 10.0, 0);
        for s in [RrcState::CellFach, RrcState::CellDch] {
            assert!(p.page_ue(0, s, 0, &[0], 0, SimTime::ZERO).is_err());
        }
        assert_eq!(p.attempts, 0);
    }

    #[test]
    fn admission_respects_capacity() {
        let mut c = CellResources::new(100, 1);
        assert!((0..50).all(|_| c.admit_dch()));
        let mut c = CellResources::new(1, 1);
        assert!(c.admit_dch());
        assert!(!c.admit_dch());
        c.release();
        assert!(c.admit_dch());
    }

    #[test]
    fn power_proxy_is_monotone() {
        let cell = CellConfig::default();
        assert!(power_proxy(&cell, 3.0) >= power_proxy(&cell, 2.0));
    }

    #[test]
    fn ura_cells_clip_to_cell_count() {
        let cell = CellConfig {
            count: 25,
            ura_size: 10,
            ..CellConfig::default()
        };
        assert_eq!(cell.ura_cells(2), 20..25);
        assert_eq!(cell.ura_of(19), 1);
    }
}
