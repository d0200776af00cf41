//! Discrete-event kernel: virtual clock, ordered event queue and trace.
//!
//! Time is kept in integer milliseconds. Events are totally ordered by
//! `(time, seq)` where `seq` is the scheduling order, so equal-time events
//! pop in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use thiserror::Error;

use crate::dormancy::RncAction;
use crate::mobility::CellUpdateCause;
use crate::radio::PageOutcome;
use crate::rrc::RrcState;

pub type UeId = u32;
pub type CellId = u32;

/// Simulated time in milliseconds since the start of the run (00:00).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    /// Rounds to the nearest millisecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime(secs_to_ms(s))
    }

    pub const fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub const fn after_ms(self, ms: u64) -> Self {
        SimTime(self.0.saturating_add(ms))
    }

    pub const fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    /// Hour of day, assuming the run starts at midnight.
    pub const fn hour_of_day(self) -> usize {
        ((self.0 / 3_600_000) % 24) as usize
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub(crate) fn secs_to_ms(s: f64) -> u64 {
    if s.is_nan() || s <= 0.0 {
        0
    } else {
        (s * 1000.0).round() as u64
    }
}

/// Per-UE timers. Each is armed lazily: at most one queued expiry per UE and
/// timer id, re-armed on expiry when the deadline moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimerId {
    /// Network inactivity timer of the current RRC state.
    Inactivity,
    /// UE-side dormancy detection (inactivity gap and T323).
    Dormancy,
    /// End of a dedicated-channel transfer.
    TransferDone,
    /// End of a CS call.
    CallEnd,
}

impl fmt::Display for TimerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TimerId::Inactivity => "inactivity",
            TimerId::Dormancy => "dormancy",
            TimerId::TransferDone => "transfer_done",
            TimerId::CallEnd => "call_end",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    UlDataArrival { bits: u64, session_start: bool },
    DlDataArrival { bits: u64, session_start: bool },
    TimerExpiry(TimerId),
    ScriSent { caused: bool },
    PageAttempt { attempt: u32 },
    CellReselection { target: CellId, persistence_ms: u64 },
    CsCallAttempt { hold_ms: u64 },
    FachScheduleTick,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::UlDataArrival { .. } => "UL_DATA_ARRIVAL",
            EventKind::DlDataArrival { .. } => "DL_DATA_ARRIVAL",
            EventKind::TimerExpiry(_) => "TIMER_EXPIRY",
            EventKind::ScriSent { .. } => "SCRI_SENT",
            EventKind::PageAttempt { .. } => "PAGE_ATTEMPT",
            EventKind::CellReselection { .. } => "CELL_RESELECTION",
            EventKind::CsCallAttempt { .. } => "CS_CALL_ATTEMPT",
            EventKind::FachScheduleTick => "FACH_SCHEDULE_TICK",
        }
    }

    fn payload(&self) -> String {
        match self {
            EventKind::UlDataArrival { bits, session_start }
            | EventKind::DlDataArrival { bits, session_start } => {
                format!("bits={bits} start={}", u8::from(*session_start))
            }
            EventKind::TimerExpiry(id) => format!("timer={id}"),
            EventKind::ScriSent { caused } => format!("cause={}", u8::from(*caused)),
            EventKind::PageAttempt { attempt } => format!("attempt={attempt}"),
            EventKind::CellReselection { target, persistence_ms } => {
                format!("target={target} persist_ms={persistence_ms}")
            }
            EventKind::CsCallAttempt { hold_ms } => format!("hold_ms={hold_ms}"),
            EventKind::FachScheduleTick => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Ue(UeId),
    Cell(CellId),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Ue(id) => write!(f, "ue:{id}"),
            Subject::Cell(id) => write!(f, "cell:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
    pub subject: Subject,
}

#[derive(Debug)]
struct Queued(SimEvent);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("event at {event_ms} ms scheduled in the past (clock {clock_ms} ms)")]
    PastEvent { event_ms: u64, clock_ms: u64 },
}

#[derive(Debug, Default)]
pub struct EventQueue {
    clock: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Queued>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queues an event and returns its tie-break sequence number.
    pub fn schedule(
        &mut self,
        time: SimTime,
        subject: Subject,
        kind: EventKind,
    ) -> Result<u64, EngineError> {
        if time < self.clock {
            return Err(EngineError::PastEvent {
                event_ms: time.as_millis(),
                clock_ms: self.clock.as_millis(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued(SimEvent {
            time,
            seq,
            kind,
            subject,
        }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|q| q.0.time)
    }

    /// Pops the next event if it is due at or before `end`, advancing the clock.
    pub fn pop_due(&mut self, end: SimTime) -> Option<SimEvent> {
        if self.peek_time()? > end {
            return None;
        }
        let Queued(event) = self.heap.pop()?;
        self.clock = event.time;
        Some(event)
    }

    fn advance_to(&mut self, time: SimTime) {
        if time > self.clock {
            self.clock = time;
        }
    }
}

/// Observable consequence of handling an event, recorded alongside it in the trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Transition {
        from: RrcState,
        to: RrcState,
        messages: u32,
        rrc_attempt: bool,
        rab_attempt: bool,
    },
    Scri {
        caused: bool,
    },
    RncDecision(RncAction),
    Page {
        target_state: RrcState,
        cells: u32,
        outcome: PageOutcome,
    },
    CellUpdate(CellUpdateCause),
    Reselected {
        from_cell: CellId,
        to_cell: CellId,
    },
    CsSetup {
        origin: RrcState,
        success: bool,
        setup_ms: u64,
    },
    FachServed {
        ue: UeId,
        bits: u64,
    },
    SetupRejected,
    PsDrop,
    HsdpaDrop,
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Effect::Transition {
                from,
                to,
                messages,
                rrc_attempt,
                rab_attempt,
            } => write!(
                f,
                "{from}>{to} msgs={messages} rrc={} rab={}",
                u8::from(*rrc_attempt),
                u8::from(*rab_attempt)
            ),
            Effect::Scri { caused } => write!(f, "scri cause={}", u8::from(*caused)),
            Effect::RncDecision(a) => write!(f, "rnc={a}"),
            Effect::Page {
                target_state,
                cells,
                outcome,
            } => write!(f, "page state={target_state} cells={cells} outcome={outcome}"),
            Effect::CellUpdate(cause) => write!(f, "cell_update cause={cause}"),
            Effect::Reselected { from_cell, to_cell } => {
                write!(f, "reselect {from_cell}>{to_cell}")
            }
            Effect::CsSetup {
                origin,
                success,
                setup_ms,
            } => write!(
                f,
                "cs_setup origin={origin} ok={} ms={setup_ms}",
                u8::from(*success)
            ),
            Effect::FachServed { ue, bits } => write!(f, "fach_served ue={ue} bits={bits}"),
            Effect::SetupRejected => f.write_str("setup_rejected"),
            Effect::PsDrop => f.write_str("ps_drop"),
            Effect::HsdpaDrop => f.write_str("hsdpa_drop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub event: SimEvent,
    pub effects: Vec<Effect>,
}

impl fmt::Display for TraceRecord {
    /// `time_ms kind subject detail`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut detail = self.event.kind.payload();
        for e in &self.effects {
            if !detail.is_empty() {
                detail.push_str(" | ");
            }
            detail.push_str(&e.to_string());
        }
        if detail.is_empty() {
            detail.push('-');
        }
        write!(
            f,
            "{} {} {} {}",
            self.event.time,
            self.event.kind.name(),
            self.event.subject,
            detail
        )
    }
}

/// Processed events in order. Records are only kept when tracing is enabled;
/// `processed` counts every handled event either way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
    pub processed: u64,
}

impl EventTrace {
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    /// Iterates over every effect with the event that produced it.
    pub fn effects(&self) -> impl Iterator<Item = (&SimEvent, &Effect)> {
        self.records
            .iter()
            .flat_map(|r| r.effects.iter().map(move |e| (&r.event, e)))
    }
}

pub trait EventHandler {
    type Error;

    fn handle(
        &mut self,
        queue: &mut EventQueue,
        event: &SimEvent,
        effects: &mut Vec<Effect>,
    ) -> Result<(), Self::Error>;
}

/// Owns the queue and drives a handler through it.
#[derive(Debug, Default)]
pub struct Kernel {
    pub queue: EventQueue,
    tracing: bool,
}

impl Kernel {
    pub fn new(tracing: bool) -> Self {
        Self {
            queue: EventQueue::new(),
            tracing,
        }
    }

    pub fn clock(&self) -> SimTime {
        self.queue.clock()
    }

    /// Processes every event with `time <= end` in `(time, seq)` order, then
    /// sets the clock to `end`.
    pub fn run_until<H: EventHandler>(
        &mut self,
        end: SimTime,
        handler: &mut H,
    ) -> Result<EventTrace, H::Error> {
        let mut trace = EventTrace::default();
        let mut effects = Vec::new();
        while let Some(event) = self.queue.pop_due(end) {
            effects.clear();
            handler.handle(&mut self.queue, &event, &mut effects)?;
            trace.processed += 1;
            if self.tracing {
                trace.records.push(TraceRecord {
                    event,
                    effects: std::mem::take(&mut effects),
                });
            }
        }
        self.queue.advance_to(end);
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Noop;

    impl EventHandler for Noop {
        type Error = ();
        fn handle(&mut self, _: &mut EventQueue, _: &SimEvent, _: &mut Vec<Effect>) -> Result<(), ()> {
            Ok(())
        }
    }

    fn tick() -> EventKind {
        EventKind::FachScheduleTick
    }

    #[test]
    fn schedule_at_clock_is_accepted() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::ZERO, Subject::Cell(0), tick()).unwrap();
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn heap_pops_earliest_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(5), Subject::Cell(0), tick()).unwrap();
        q.schedule(SimTime::from_secs(3), Subject::Cell(1), tick()).unwrap();
        assert_eq!(q.pop_due(SimTime::MAX).unwrap().time, SimTime::from_secs(3));
        assert_eq!(q.pop_due(SimTime::MAX).unwrap().time, SimTime::from_secs(5));
    }

    #[test]
    fn past_event_rejected() {
        let mut k = Kernel::new(false);
        k.run_until(SimTime::from_secs(2), &mut Noop).unwrap();
        let err = k
            .queue
            .schedule(SimTime::from_secs(1), Subject::Cell(0), tick())
            .unwrap_err();
        assert_eq!(
            err,
            EngineError::PastEvent {
                event_ms: 1000,
                clock_ms: 2000
            }
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut k = Kernel::new(true);
        let trace = k.run_until(SimTime::from_secs(100), &mut Noop).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(k.clock(), SimTime::from_secs(100));
    }

    #[test]
    fn run_until_stops_at_end() {
        let mut k = Kernel::new(true);
        k.queue.schedule(SimTime::from_secs(1), Subject::Cell(0), tick()).unwrap();
        k.queue.schedule(SimTime::from_secs(2), Subject::Cell(0), tick()).unwrap();
        let trace = k.run_until(SimTime::from_millis(1500), &mut Noop).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(k.queue.len(), 1);
        assert_eq!(k.clock(), SimTime::from_millis(1500));
    }

    #[test]
    fn equal_times_pop_in_scheduling_order() {
        let mut k = Kernel::new(true);
        let seqs: Vec<u64> = (0..3)
            .map(|c| k.queue.schedule(SimTime::from_secs(5), Subject::Cell(c), tick()).unwrap())
            .collect();
        let trace = k.run_until(SimTime::from_secs(10), &mut Noop).unwrap();
        let got: Vec<u64> = trace.records.iter().map(|r| r.event.seq).collect();
        assert_eq!(got, seqs);
        let subjects: Vec<Subject> = trace.records.iter().map(|r| r.event.subject).collect();
        assert_eq!(subjects, vec![Subject::Cell(0), Subject::Cell(1), Subject::Cell(2)]);
    }

    #[test]
    fn trace_line_format() {
        let r = TraceRecord {
            event: SimEvent {
                time: SimTime::from_millis(1234),
                seq: 7,
                kind: EventKind::UlDataArrival {
                    bits: 800,
                    session_start: true,
                },
                subject: Subject::Ue(3),
            },
            effects: vec![],
        };
        assert_eq!(r.to_string(), "1234 UL_DATA_ARRIVAL ue:3 bits=800 start=1");
    }

    #[test]
    fn secs_conversion_rounds() {
        assert_eq!(SimTime::from_secs_f64(1.2345).as_millis(), 1235);
        assert_eq!(SimTime::from_secs_f64(-3.0), SimTime::ZERO);
        assert_eq!(SimTime::from_secs(7200).hour_of_day(), 2);
    }
}
