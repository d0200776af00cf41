//! The network model: UEs, cells and the RNC reacting to traffic, timers,
//! dormancy requests, paging and mobility on top of the event kernel.

use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::dormancy::{
    next_scri_eligibility, rnc_handle_scri, ue_maybe_send_scri, DormancyMode, ImeiRegistry, ScriCause,
    ScriMessage, T323Config,
};
use crate::engine::{
    secs_to_ms, CellId, Effect, EngineError, EventHandler, EventKind, EventQueue, EventTrace, Kernel, SimEvent,
    SimTime, Subject, TimerId, UeId,
};
use crate::kpi::{KpiRecorder, KpiReport};
use crate::mobility::{cs_setup, maybe_reselect, next_candidate, Candidate, CellUpdateCause};
use crate::radio::{CellResources, Direction, FachChannel, PagingChannel, PageOutcome, RadioError};
use crate::rng::{sample, Purpose, RngStream};
use crate::rrc::{apply_trigger, on_inactivity, RrcError, RrcPolicy, RrcState, Trigger, UeContext};
use crate::traffic::{build_population, next_cs_call, next_ps_session, DeviceClass, Layout};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Rrc(#[from] RrcError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("unknown ue {0}")]
    UnknownUe(UeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep every processed event and its effects.
    pub tracing: bool,
    /// Generate traffic, calls and mobility from the profiles. Disabled for
    /// scripted runs driven by [`Simulation::inject`].
    pub autogen: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tracing: false,
            autogen: true,
        }
    }
}

#[derive(Debug)]
struct UeRt {
    ctx: UeContext,
    traffic: RngStream,
    call: RngStream,
    mobility: RngStream,
    drop: RngStream,
    collision: RngStream,
    pending: [Option<SimTime>; 4],
    dch_busy_until: SimTime,
    /// Attempt number of the outstanding page, if any.
    page: Option<u32>,
    fach_cell: Option<CellId>,
    ce_cell: Option<CellId>,
}

#[derive(Debug)]
struct CellRt {
    fach: FachChannel,
    res: CellResources,
    tick_at: Option<SimTime>,
}

fn timer_slot(id: TimerId) -> usize {
    match id {
        TimerId::Inactivity => 0,
        TimerId::Dormancy => 1,
        TimerId::TransferDone => 2,
        TimerId::CallEnd => 3,
    }
}

/// Everything the event handler mutates.
#[derive(Debug)]
pub struct World {
    cfg: ScenarioConfig,
    autogen: bool,
    end: SimTime,
    policy: RrcPolicy,
    t323: T323Config,
    registry: ImeiRegistry,
    ues: Vec<UeRt>,
    cells: Vec<CellRt>,
    paging: PagingChannel,
    kpi: KpiRecorder,
    initial_cells: Vec<CellId>,
}

pub struct Simulation {
    kernel: Kernel,
    world: World,
    trace: EventTrace,
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: KpiReport,
    pub trace: EventTrace,
    /// Effective dormancy mode per UE id.
    pub modes: Vec<DormancyMode>,
    pub classes: Vec<DeviceClass>,
    /// Serving cell of each UE at time zero.
    pub initial_cells: Vec<CellId>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, opts: SimOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let layout = Layout {
            cells: cfg.cell.count,
            ura_size: cfg.cell.ura_size,
        };
        let population = build_population(cfg.population, &cfg.profiles, layout, cfg.seed)
            .map_err(|e| ConfigError::new("profiles", e.to_string()))?;
        let t323 = T323Config::new(cfg.dormancy.t323_s).map_err(|e| ConfigError::new("dormancy", e.to_string()))?;
        let registry = ImeiRegistry::new(
            cfg.dormancy
                .imei_registry
                .iter()
                .copied()
                .chain(cfg.profiles.iter().filter(|(_, p)| p.imei_in_registry).map(|(c, _)| *c)),
        );
        let seed = cfg.seed;
        let ues = population
            .into_iter()
            .map(|mut ctx| {
                let id = ctx.ue_id;
                let profile = &cfg.profiles[&ctx.device_class];
                let mode = cfg.dormancy.mode.unwrap_or(profile.dormancy_mode);
                ctx.imei_class = mode.effective(cfg.features.e_fd);
                let mut dormancy = RngStream::for_ue(seed, id, Purpose::Dormancy);
                ctx.dormancy_gap_ms = secs_to_ms(sample(&mut dormancy, &cfg.dormancy.gap_s)).max(1);
                UeRt {
                    ctx,
                    traffic: RngStream::for_ue(seed, id, Purpose::Traffic),
                    call: RngStream::for_ue(seed, id, Purpose::Call),
                    mobility: RngStream::for_ue(seed, id, Purpose::Mobility),
                    drop: RngStream::for_ue(seed, id, Purpose::Drop),
                    collision: RngStream::for_ue(seed, id, Purpose::Collision),
                    pending: [None; 4],
                    dch_busy_until: SimTime::ZERO,
                    page: None,
                    fach_cell: None,
                    ce_cell: None,
                }
            })
            .collect();
        let cells = (0..cfg.cell.count)
            .map(|_| CellRt {
                fach: FachChannel::new(cfg.fach.tb_count),
                res: CellResources::new(cfg.cell.ce_capacity, cfg.cell.ce_per_dch_user),
                tick_at: None,
            })
            .collect();
        let mut world = World {
            policy: RrcPolicy::new(&cfg.features, cfg.costs),
            t323,
            registry,
            ues,
            cells,
            paging: PagingChannel::new(cfg.cell.count, cfg.paging.capacity_pps, cfg.paging.retry_limit),
            kpi: KpiRecorder::new(cfg.population),
            initial_cells: Vec::new(),
            autogen: opts.autogen,
            end: SimTime::from_millis(cfg.duration_ms()),
            cfg: cfg.clone(),
        };
        world.initial_cells = world.ues.iter().map(|u| u.ctx.serving_cell).collect();
        let mut kernel = Kernel::new(opts.tracing);
        if opts.autogen {
            world.seed_events(&mut kernel.queue)?;
        }
        Ok(Self {
            kernel,
            world,
            trace: EventTrace::default(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.world.cfg
    }

    pub fn clock(&self) -> SimTime {
        self.kernel.clock()
    }

    pub fn ue(&self, id: UeId) -> Option<&UeContext> {
        self.world.ues.get(id as usize).map(|u| &u.ctx)
    }

    pub fn kpi(&self) -> &KpiRecorder {
        &self.world.kpi
    }

    /// Queues a scripted event for a UE.
    pub fn inject(&mut self, time: SimTime, ue: UeId, kind: EventKind) -> Result<(), SimError> {
        if ue as usize >= self.world.ues.len() {
            return Err(SimError::UnknownUe(ue));
        }
        self.kernel.queue.schedule(time, Subject::Ue(ue), kind)?;
        Ok(())
    }

    /// Advances to `end`, appending to the run's trace.
    pub fn run_until(&mut self, end: SimTime) -> Result<(), SimError> {
        let part = self.kernel.run_until(end, &mut self.world)?;
        self.trace.processed += part.processed;
        self.trace.records.extend(part.records);
        Ok(())
    }

    /// Runs to the configured duration and closes the report.
    pub fn run(mut self) -> Result<SimOutput, SimError> {
        let end = self.world.end;
        if self.clock() < end {
            self.run_until(end)?;
        }
        self.finish()
    }

    /// Closes the report at the current clock.
    pub fn finish(mut self) -> Result<SimOutput, SimError> {
        let end = self.kernel.clock();
        let mut congestion = 0.0;
        for cell in &mut self.world.cells {
            cell.fach.advance_to(end);
            congestion += cell.fach.congestion_seconds();
        }
        let report = self.world.kpi.finalize(end, congestion, &self.world.cfg.cell);
        Ok(SimOutput {
            report,
            trace: self.trace,
            modes: self.world.ues.iter().map(|u| u.ctx.imei_class).collect(),
            classes: self.world.ues.iter().map(|u| u.ctx.device_class).collect(),
            initial_cells: self.world.initial_cells,
        })
    }
}

/// Runs a scenario to completion.
pub fn simulate(cfg: &ScenarioConfig, tracing: bool) -> Result<SimOutput, SimError> {
    Simulation::new(
        cfg,
        SimOptions {
            tracing,
            autogen: true,
        },
    )?
    .run()
}

type Fx = Vec<Effect>;

impl World {
    fn seed_events(&mut self, q: &mut EventQueue) -> Result<(), SimError> {
        for i in 0..self.ues.len() {
            self.schedule_session(q, i, SimTime::ZERO)?;
            self.schedule_call(q, i, SimTime::ZERO)?;
            self.schedule_candidate(q, i, SimTime::ZERO)?;
        }
        Ok(())
    }

    fn schedule_session(&mut self, q: &mut EventQueue, i: usize, from: SimTime) -> Result<(), SimError> {
        let ue = &mut self.ues[i];
        let profile = &self.cfg.profiles[&ue.ctx.device_class];
        let Some(s) = next_ps_session(profile, &self.cfg.traffic, from, &self.cfg.load, &mut ue.traffic) else {
            return Ok(());
        };
        if s.arrival > self.end {
            return Ok(());
        }
        for (k, (offset, bits)) in s.bursts.iter().enumerate() {
            let at = s.arrival.after_ms(*offset);
            if at > self.end {
                break;
            }
            let session_start = k == 0;
            let kind = if s.downlink {
                EventKind::DlDataArrival { bits: *bits, session_start }
            } else {
                EventKind::UlDataArrival { bits: *bits, session_start }
            };
            q.schedule(at, Subject::Ue(i as UeId), kind)?;
        }
        Ok(())
    }

    fn schedule_call(&mut self, q: &mut EventQueue, i: usize, from: SimTime) -> Result<(), SimError> {
        let ue = &mut self.ues[i];
        let profile = &self.cfg.profiles[&ue.ctx.device_class];
        if let Some((at, hold_ms)) = next_cs_call(profile, &self.cfg.traffic, from, &self.cfg.load, &mut ue.call) {
            if at <= self.end {
                q.schedule(at, Subject::Ue(i as UeId), EventKind::CsCallAttempt { hold_ms })?;
            }
        }
        Ok(())
    }

    fn schedule_candidate(&mut self, q: &mut EventQueue, i: usize, from: SimTime) -> Result<(), SimError> {
        let ue = &mut self.ues[i];
        let rate = self.cfg.profiles[&ue.ctx.device_class].mobility_rate_per_hour;
        if let Some(c) = next_candidate(from, ue.ctx.serving_cell, self.cfg.cell.count, rate, &self.cfg.resel, &mut ue.mobility) {
            if c.time <= self.end {
                q.schedule(
                    c.time,
                    Subject::Ue(i as UeId),
                    EventKind::CellReselection {
                        target: c.target,
                        persistence_ms: c.persistence_ms,
                    },
                )?;
            }
        }
        Ok(())
    }

    fn emit(&mut self, now: SimTime, fx: &mut Fx, e: Effect) {
        self.kpi.record(now, &e);
        fx.push(e);
    }

    fn arm(&mut self, q: &mut EventQueue, i: usize, id: TimerId, at: SimTime) -> Result<(), SimError> {
        let at = at.max(q.clock());
        let slot = &mut self.ues[i].pending[timer_slot(id)];
        if slot.is_some_and(|p| p <= at) {
            return Ok(());
        }
        *slot = Some(at);
        q.schedule(at, Subject::Ue(i as UeId), EventKind::TimerExpiry(id))?;
        Ok(())
    }

    fn refresh_timers(&mut self, q: &mut EventQueue, i: usize) -> Result<(), SimError> {
        let ctx = &self.ues[i].ctx;
        let inactivity = match self.cfg.timers.timeout_ms(ctx.state) {
            Some(t) if ctx.buffers_empty() && !ctx.in_cs_call() => Some(ctx.idle_since().after_ms(t)),
            _ => None,
        };
        let dormancy = next_scri_eligibility(ctx);
        if let Some(at) = inactivity {
            self.arm(q, i, TimerId::Inactivity, at)?;
        }
        if let Some(at) = dormancy {
            self.arm(q, i, TimerId::Dormancy, at)?;
        }
        Ok(())
    }

    fn transition(
        &mut self,
        q: &mut EventQueue,
        i: usize,
        trigger: Trigger,
        now: SimTime,
        fx: &mut Fx,
    ) -> Result<RrcState, SimError> {
        let from = self.ues[i].ctx.state;
        let t = apply_trigger(from, trigger, &self.policy)?;
        if !t.is_change() {
            return Ok(from);
        }
        let to = t.to;
        if from == RrcState::CellFach {
            if let Some(cell) = self.ues[i].fach_cell.take() {
                self.service_cell(q, cell, now, fx)?;
                let (ul, dl) = self.cells[cell as usize].fach.remove_ue(i as UeId);
                self.ensure_tick(q, cell)?;
                if to == RrcState::CellDch && ul + dl > 0 {
                    self.dch_send(q, i, ul + dl, now)?;
                }
            }
        }
        if from == RrcState::CellDch {
            if let Some(cell) = self.ues[i].ce_cell.take() {
                self.cells[cell as usize].res.release();
            }
        }
        {
            let ue = &mut self.ues[i];
            ue.ctx.state = to;
            ue.ctx.state_since = now;
            if to == RrcState::Idle {
                ue.ctx.pdp_context_active = false;
            }
        }
        self.emit(
            now,
            fx,
            Effect::Transition {
                from,
                to,
                messages: t.messages,
                rrc_attempt: t.rrc_attempt,
                rab_attempt: t.rab_attempt,
            },
        );
        if from.is_connected() && self.ues[i].drop.bernoulli(self.cfg.drops.ps_drop_p) {
            self.emit(now, fx, Effect::PsDrop);
        }
        let fd_switch = matches!(
            (from, to),
            (RrcState::CellFach, RrcState::CellDch) | (RrcState::CellDch, RrcState::CellFach)
        );
        if fd_switch && self.ues[i].drop.bernoulli(self.cfg.drops.hsdpa_drop_p) {
            self.emit(now, fx, Effect::HsdpaDrop);
        }
        Ok(to)
    }

    fn has_dch_room(&self, i: usize) -> bool {
        let res = &self.cells[self.ues[i].ctx.serving_cell as usize].res;
        res.used_ce + res.ce_per_dch_user <= res.ce_capacity
    }

    /// Moves the UE to DCH when a channel element is free; reports a
    /// rejection otherwise.
    fn enter_dch(&mut self, q: &mut EventQueue, i: usize, trigger: Trigger, now: SimTime, fx: &mut Fx) -> Result<bool, SimError> {
        if self.ues[i].ctx.state == RrcState::CellDch {
            return Ok(true);
        }
        let cell = self.ues[i].ctx.serving_cell;
        if !self.cells[cell as usize].res.admit_dch() {
            self.emit(now, fx, Effect::SetupRejected);
            return Ok(false);
        }
        self.transition(q, i, trigger, now, fx)?;
        self.ues[i].ce_cell = Some(cell);
        Ok(true)
    }

    fn dch_send(&mut self, q: &mut EventQueue, i: usize, bits: u64, now: SimTime) -> Result<(), SimError> {
        let rate = self.cfg.cell.dch_rate_bps;
        let ue = &mut self.ues[i];
        let ms = (bits * 1000).div_ceil(rate);
        ue.dch_busy_until = ue.dch_busy_until.max(now).after_ms(ms);
        let at = ue.dch_busy_until;
        self.arm(q, i, TimerId::TransferDone, at)
    }

    fn fach_send(&mut self, q: &mut EventQueue, i: usize, dir: Direction, bits: u64, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        if bits == 0 {
            return Ok(());
        }
        let cell = match self.ues[i].fach_cell {
            Some(c) => c,
            None => {
                let c = self.ues[i].ctx.serving_cell;
                self.ues[i].fach_cell = Some(c);
                c
            }
        };
        self.service_cell(q, cell, now, fx)?;
        self.cells[cell as usize].fach.enqueue(i as UeId, dir, bits);
        self.ensure_tick(q, cell)
    }

    /// Hands all buffered data of a freshly connected UE to its channel.
    fn serve_buffers(&mut self, q: &mut EventQueue, i: usize, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let (ul, dl) = (self.ues[i].ctx.ul_buffer_bits, self.ues[i].ctx.dl_buffer_bits);
        match self.ues[i].ctx.state {
            RrcState::CellDch => {
                if ul + dl > 0 {
                    self.dch_send(q, i, ul + dl, now)?;
                }
            }
            RrcState::CellFach => {
                self.fach_send(q, i, Direction::Uplink, ul, now, fx)?;
                self.fach_send(q, i, Direction::Downlink, dl, now, fx)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn over_threshold(&self, i: usize) -> bool {
        let c = &self.ues[i].ctx;
        c.ul_buffer_bits + c.dl_buffer_bits >= self.cfg.timers.dch_buffer_threshold_bits()
    }

    fn connect_from_idle(&mut self, q: &mut EventQueue, i: usize, trigger: Trigger, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        if !self.enter_dch(q, i, trigger, now, fx)? {
            self.transition(q, i, Trigger::DemandLow, now, fx)?;
        }
        self.serve_buffers(q, i, now, fx)
    }

    /// Data-triggered wake-up from a paging state after the cell update.
    fn wake_from_pch(&mut self, q: &mut EventQueue, i: usize, trigger: Trigger, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let high = self.over_threshold(i);
        if high && self.policy.p2d_direct && self.enter_dch(q, i, Trigger::DemandAboveThreshold, now, fx)? {
            return self.serve_buffers(q, i, now, fx);
        }
        if self.ues[i].ctx.state.is_pch() {
            self.transition(q, i, trigger, now, fx)?;
        }
        if high {
            self.enter_dch(q, i, Trigger::DemandAboveThreshold, now, fx)?;
        }
        self.serve_buffers(q, i, now, fx)
    }

    fn cell_update(&mut self, i: usize, cause: CellUpdateCause, now: SimTime, fx: &mut Fx) {
        self.ues[i].ctx.last_cell_update = Some(now);
        self.emit(now, fx, Effect::CellUpdate(cause));
    }

    fn on_data(&mut self, q: &mut EventQueue, i: usize, dir: Direction, bits: u64, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        {
            let ctx = &mut self.ues[i].ctx;
            ctx.last_activity_time = now;
            ctx.pdp_context_active = true;
            match dir {
                Direction::Uplink => ctx.ul_buffer_bits += bits,
                Direction::Downlink => ctx.dl_buffer_bits += bits,
            }
        }
        match self.ues[i].ctx.state {
            RrcState::CellDch => self.dch_send(q, i, bits, now),
            RrcState::CellFach => {
                self.fach_send(q, i, dir, bits, now, fx)?;
                if self.over_threshold(i) {
                    self.enter_dch(q, i, Trigger::DemandAboveThreshold, now, fx)?;
                }
                Ok(())
            }
            RrcState::Idle | RrcState::CellPch | RrcState::UraPch if dir == Direction::Downlink => {
                if self.ues[i].page.is_none() {
                    self.page(q, i, 0, now, fx)?;
                }
                Ok(())
            }
            RrcState::Idle => {
                self.ues[i].page = None;
                self.connect_from_idle(q, i, Trigger::UlData, now, fx)
            }
            RrcState::CellPch | RrcState::UraPch => {
                self.ues[i].page = None;
                self.cell_update(i, CellUpdateCause::UlData, now, fx);
                self.wake_from_pch(q, i, Trigger::UlData, now, fx)
            }
        }
    }

    fn page_cells(&self, i: usize) -> Vec<CellId> {
        let ctx = &self.ues[i].ctx;
        let cell = &self.cfg.cell;
        match ctx.state {
            RrcState::CellPch => vec![ctx.serving_cell],
            RrcState::UraPch => cell.ura_cells(ctx.ura_id).collect(),
            _ => {
                let la = self.cfg.paging.la_cells;
                if la == 0 || la >= cell.count {
                    (0..cell.count).collect()
                } else {
                    let lo = ctx.serving_cell / la * la;
                    (lo..(lo + la).min(cell.count)).collect()
                }
            }
        }
    }

    fn page(&mut self, q: &mut EventQueue, i: usize, attempt: u32, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let cells = self.page_cells(i);
        let (state, serving) = (self.ues[i].ctx.state, self.ues[i].ctx.serving_cell);
        let outcome = self.paging.page_ue(i as UeId, state, serving, &cells, attempt, now)?;
        self.emit(
            now,
            fx,
            Effect::Page {
                target_state: state,
                cells: cells.len() as u32,
                outcome,
            },
        );
        match outcome {
            PageOutcome::Delivered => {
                self.ues[i].page = None;
                if state == RrcState::Idle {
                    self.connect_from_idle(q, i, Trigger::DlDataDelivered, now, fx)?;
                } else {
                    self.cell_update(i, CellUpdateCause::PagingResponse, now, fx);
                    self.wake_from_pch(q, i, Trigger::DlDataDelivered, now, fx)?;
                }
            }
            PageOutcome::LostRetry => {
                self.ues[i].page = Some(attempt + 1);
                let at = now.after_ms(self.cfg.paging.retry_interval_ms);
                q.schedule(at, Subject::Ue(i as UeId), EventKind::PageAttempt { attempt: attempt + 1 })?;
            }
            PageOutcome::LostFinal => {
                self.ues[i].page = None;
                self.ues[i].ctx.dl_buffer_bits = 0;
            }
        }
        Ok(())
    }

    fn service_cell(&mut self, q: &mut EventQueue, cell: CellId, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let done = self.cells[cell as usize].fach.advance_to(now);
        for c in done {
            let i = c.ue as usize;
            {
                let ctx = &mut self.ues[i].ctx;
                match c.dir {
                    Direction::Uplink => ctx.ul_buffer_bits = ctx.ul_buffer_bits.saturating_sub(c.bits),
                    Direction::Downlink => ctx.dl_buffer_bits = ctx.dl_buffer_bits.saturating_sub(c.bits),
                }
                ctx.last_activity_time = ctx.last_activity_time.max(c.time);
            }
            self.emit(now, fx, Effect::FachServed { ue: c.ue, bits: c.bits });
            self.refresh_timers(q, i)?;
        }
        Ok(())
    }

    fn ensure_tick(&mut self, q: &mut EventQueue, cell: CellId) -> Result<(), SimError> {
        let rt = &mut self.cells[cell as usize];
        if let Some(t) = rt.fach.next_completion() {
            if rt.tick_at.is_none_or(|p| t < p) {
                rt.tick_at = Some(t);
                q.schedule(t, Subject::Cell(cell), EventKind::FachScheduleTick)?;
            }
        }
        Ok(())
    }

    fn on_timer(&mut self, q: &mut EventQueue, i: usize, id: TimerId, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let slot = timer_slot(id);
        if self.ues[i].pending[slot] != Some(now) {
            return Ok(());
        }
        self.ues[i].pending[slot] = None;
        match id {
            TimerId::Inactivity => {
                let ctx = &self.ues[i].ctx;
                if !ctx.buffers_empty() || ctx.in_cs_call() {
                    return Ok(());
                }
                if on_inactivity(ctx, now, &self.cfg.timers, &self.policy).is_some() {
                    let trigger = match ctx.state {
                        RrcState::CellDch => Trigger::InactivityDch,
                        RrcState::CellFach => Trigger::InactivityFach,
                        _ => Trigger::InactivityPch,
                    };
                    self.transition(q, i, trigger, now, fx)?;
                }
            }
            TimerId::Dormancy => {
                if let Some(msg) = ue_maybe_send_scri(&mut self.ues[i].ctx, now, &self.t323) {
                    let caused = msg.cause.is_some();
                    self.emit(now, fx, Effect::Scri { caused });
                    q.schedule(now, Subject::Ue(i as UeId), EventKind::ScriSent { caused })?;
                }
            }
            TimerId::TransferDone => {
                let ue = &mut self.ues[i];
                if now < ue.dch_busy_until {
                    let at = ue.dch_busy_until;
                    return self.arm(q, i, TimerId::TransferDone, at);
                }
                if ue.ctx.state == RrcState::CellDch {
                    ue.ctx.ul_buffer_bits = 0;
                    ue.ctx.dl_buffer_bits = 0;
                    ue.ctx.last_activity_time = now;
                }
            }
            TimerId::CallEnd => {
                let Some(until) = self.ues[i].ctx.cs_call_until else {
                    return Ok(());
                };
                if now < until {
                    return self.arm(q, i, TimerId::CallEnd, until);
                }
                let ctx = &mut self.ues[i].ctx;
                ctx.cs_call_until = None;
                ctx.last_activity_time = now;
                if ctx.state == RrcState::CellDch && !ctx.pdp_context_active && ctx.buffers_empty() {
                    self.transition(q, i, Trigger::CsRelease, now, fx)?;
                }
            }
        }
        Ok(())
    }

    fn on_scri(&mut self, i: usize, caused: bool, q: &mut EventQueue, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let ctx = &self.ues[i].ctx;
        // A request overtaken by new activity or a state change is discarded.
        if !matches!(ctx.state, RrcState::CellDch | RrcState::CellFach) || !ctx.buffers_empty() || ctx.in_cs_call() {
            return Ok(());
        }
        let msg = ScriMessage {
            ue_id: i as UeId,
            time: now,
            cause: caused.then_some(ScriCause::PsDataSessionEnd),
        };
        let empty = ImeiRegistry::default();
        let registry = if self.cfg.features.legacy_imei_handling {
            &self.registry
        } else {
            &empty
        };
        let action = match rnc_handle_scri(&msg, ctx, registry, &self.policy) {
            Ok(a) => a,
            Err(_) => return Ok(()),
        };
        self.emit(now, fx, Effect::RncDecision(action));
        self.transition(q, i, Trigger::ScriAccepted(action), now, fx)?;
        Ok(())
    }

    fn on_cs_call(&mut self, q: &mut EventQueue, i: usize, hold_ms: u64, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        if self.autogen {
            self.schedule_call(q, i, now)?;
        }
        if self.ues[i].ctx.in_cs_call() {
            return Ok(());
        }
        let origin = self.ues[i].ctx.state;
        let timing = self.cfg.csfb.timing();
        let coll = self.cfg.csfb.collision();
        let ue = &mut self.ues[i];
        let res = cs_setup(origin, self.policy.p2d_direct, ue.ctx.last_cell_update, now, &timing, &coll, &mut ue.collision);
        let failed = |w: &mut Self, fx: &mut Fx| {
            w.emit(
                now,
                fx,
                Effect::CsSetup {
                    origin,
                    success: false,
                    setup_ms: res.setup_ms,
                },
            );
        };
        if !res.success {
            failed(self, fx);
            return Ok(());
        }
        if origin != RrcState::CellDch && !self.has_dch_room(i) {
            self.emit(now, fx, Effect::SetupRejected);
            failed(self, fx);
            return Ok(());
        }
        if origin.is_pch() {
            self.ues[i].page = None;
            self.cell_update(i, CellUpdateCause::CsCall, now, fx);
            if !self.policy.p2d_direct {
                self.transition(q, i, Trigger::CsCall, now, fx)?;
            }
        }
        self.enter_dch(q, i, Trigger::CsCall, now, fx)?;
        if origin == RrcState::Idle {
            self.ues[i].page = None;
        }
        if matches!(origin, RrcState::Idle | RrcState::CellPch | RrcState::UraPch) {
            self.serve_buffers(q, i, now, fx)?;
        }
        self.emit(
            now,
            fx,
            Effect::CsSetup {
                origin,
                success: true,
                setup_ms: res.setup_ms,
            },
        );
        let until = now.after_ms(res.setup_ms + hold_ms);
        self.ues[i].ctx.cs_call_until = Some(until);
        self.arm(q, i, TimerId::CallEnd, until)
    }

    fn on_reselection(&mut self, q: &mut EventQueue, i: usize, target: CellId, persistence_ms: u64, now: SimTime, fx: &mut Fx) -> Result<(), SimError> {
        let state = self.ues[i].ctx.state;
        let cand = Candidate {
            time: now,
            target,
            persistence_ms,
        };
        let serving_ura = self.ues[i].ctx.ura_id;
        let target_ura = self.cfg.cell.ura_of(target);
        let out = maybe_reselect(state, &cand, serving_ura, target_ura, &self.cfg.resel);
        if out.committed {
            let from_cell = self.ues[i].ctx.serving_cell;
            self.ues[i].ctx.serving_cell = target;
            self.ues[i].ctx.ura_id = target_ura;
            self.emit(now, fx, Effect::Reselected { from_cell, to_cell: target });
            if out.cell_update {
                self.cell_update(i, CellUpdateCause::Reselection, now, fx);
            }
        }
        if self.autogen {
            self.schedule_candidate(q, i, now)?;
        }
        Ok(())
    }
}

impl EventHandler for World {
    type Error = SimError;

    fn handle(&mut self, q: &mut EventQueue, ev: &SimEvent, fx: &mut Vec<Effect>) -> Result<(), SimError> {
        let now = ev.time;
        let i = match ev.subject {
            Subject::Cell(cell) => {
                let rt = &mut self.cells[cell as usize];
                if rt.tick_at == Some(now) {
                    rt.tick_at = None;
                }
                self.service_cell(q, cell, now, fx)?;
                return self.ensure_tick(q, cell);
            }
            Subject::Ue(u) => u as usize,
        };
        if i >= self.ues.len() {
            return Err(SimError::UnknownUe(i as UeId));
        }
        match ev.kind {
            EventKind::UlDataArrival { bits, session_start } | EventKind::DlDataArrival { bits, session_start } => {
                let dir = if matches!(ev.kind, EventKind::UlDataArrival { .. }) {
                    Direction::Uplink
                } else {
                    Direction::Downlink
                };
                if session_start {
                    self.kpi.ps_sessions += 1;
                    if self.autogen {
                        self.schedule_session(q, i, now)?;
                    }
                }
                self.on_data(q, i, dir, bits, now, fx)?;
            }
            EventKind::TimerExpiry(id) => self.on_timer(q, i, id, now, fx)?,
            EventKind::ScriSent { caused } => self.on_scri(i, caused, q, now, fx)?,
            EventKind::PageAttempt { attempt } => {
                let state = self.ues[i].ctx.state;
                if self.ues[i].page == Some(attempt) {
                    if matches!(state, RrcState::Idle | RrcState::CellPch | RrcState::UraPch) {
                        self.page(q, i, attempt, now, fx)?;
                    } else {
                        self.ues[i].page = None;
                    }
                }
            }
            EventKind::CellReselection { target, persistence_ms } => {
                self.on_reselection(q, i, target, persistence_ms, now, fx)?
            }
            EventKind::CsCallAttempt { hold_ms } => self.on_cs_call(q, i, hold_ms, now, fx)?,
            EventKind::FachScheduleTick => {}
        }
        self.refresh_timers(q, i)
    }
}
