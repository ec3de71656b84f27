//! The four dissemination strategies and the event loop of a single run.
//!
//! | kind | uplink content               | BS relay                          |
//! |------|------------------------------|-----------------------------------|
//! | MFF  | N full-frame streams         | forward each copy to its vehicle  |
//! | BFF  | one full-frame stream        | duplicate every packet to all N   |
//! | BFA  | one full-frame stream        | reassemble, detect, annotate all N|
//! | BAO  | one annotation stream        | duplicate every packet to all N   |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::buffers::{Admission, BearerId, BearerSet};
use crate::engine::{rng_stream, Event, EventKind, EventQueue, RandomStream, SimTime};
use crate::error::{Result, SimError};
use crate::metrics::{LinkCounters, MetricRecord, MetricsCollector, RunId};
use crate::radio::{demands, serve, RadioScheduler, ServiceCompletion, Slot, SlotAllocation, SlotConfig};
use crate::topology::{channel_draw, place_vehicles, DeliveryOutcome, Direction, LinkModel, NodeLayout, Rect};
use crate::traffic::{
    annotation_payload_bytes, fragment, Emission, EmissionMode, EmissionSchedule, FrameTraceEntry,
    Fragmentation, Packet, SourceProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Mff,
    Bff,
    Bfa,
    Bao,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Mff,
        ScenarioKind::Bff,
        ScenarioKind::Bfa,
        ScenarioKind::Bao,
    ];

    pub fn uplink_mode(self) -> EmissionMode {
        match self {
            ScenarioKind::Bao => EmissionMode::Annotations,
            _ => EmissionMode::FullFrames,
        }
    }

    pub fn relay_rule(self) -> RelayRule {
        match self {
            ScenarioKind::Mff => RelayRule::ForwardPerVehicleCopy,
            ScenarioKind::Bff | ScenarioKind::Bao => RelayRule::DuplicateToAll,
            ScenarioKind::Bfa => RelayRule::ProcessThenAnnotateAll,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Mff => "mff",
            ScenarioKind::Bff => "bff",
            ScenarioKind::Bfa => "bfa",
            ScenarioKind::Bao => "bao",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mff" => Ok(ScenarioKind::Mff),
            "bff" => Ok(ScenarioKind::Bff),
            "bfa" => Ok(ScenarioKind::Bfa),
            "bao" => Ok(ScenarioKind::Bao),
            _ => Err(SimError::UnknownScenario(s.to_string())),
        }
    }
}

/// What the BS does with a packet that arrived intact on the uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayRule {
    /// Uplink already carries one copy per vehicle.
    ForwardPerVehicleCopy,
    DuplicateToAll,
    /// Wait for the whole frame, run detection, send annotations to everyone.
    ProcessThenAnnotateAll,
}

/// Everything needed to run one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub kind: ScenarioKind,
    pub n_vehicles: u32,
    pub seed: u64,
    pub profile: SourceProfile,
    pub trace_entry: FrameTraceEntry,
    pub link: LinkModel,
    pub slot: SlotConfig,
    pub ul_buffer_bytes: u64,
    pub dl_buffer_bytes: u64,
    pub sim_time_secs: f64,
    pub warmup_secs: f64,
    pub frame_jitter: bool,
    /// Detection time on the UAV before an annotation leaves (BAO).
    pub uav_processing_secs: f64,
    /// Detection time at the BS after a frame is reassembled (BFA).
    pub bs_processing_secs: f64,
    pub uav_height_m: f64,
    pub deployment_rect: Rect,
}

impl CellSpec {
    pub fn run_id(&self) -> RunId {
        RunId {
            scenario: self.kind,
            n_vehicles: self.n_vehicles,
            fps: self.profile.frame_rate.round() as u32,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles == 0 {
            return Err(SimError::InvalidCount(0));
        }
        self.profile.validate()?;
        self.link.validate()?;
        self.slot.validate()?;
        if !(self.sim_time_secs > 0.0) {
            return Err(SimError::config("simulation time must be positive"));
        }
        if !(0.0..self.sim_time_secs).contains(&self.warmup_secs) {
            return Err(SimError::config("warm-up must be in [0, simulation time)"));
        }
        if self.uav_processing_secs < 0.0 || self.bs_processing_secs < 0.0 {
            return Err(SimError::config("processing delays must be non-negative"));
        }
        if self.ul_buffer_bytes == 0 || self.dl_buffer_bytes == 0 {
            return Err(SimError::config("buffer capacity must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FrameAssembly {
    received: u32,
    failed: bool,
}

#[derive(Debug)]
enum Action {
    Emit,
    Slot(u64),
    Complete(ServiceCompletion),
    Annotate(u64),
    Flush,
    End,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: MetricRecord,
    pub layout: NodeLayout,
    pub events: u64,
    pub slots: u64,
    /// Every bearer's ledger closed and no buffer exceeded its capacity.
    pub ledger_ok: bool,
}

/// A fully wired single-cell run.
pub struct Simulation {
    spec: CellSpec,
    layout: NodeLayout,
    relay: RelayRule,
    bearers: BearerSet,
    scheduler: RadioScheduler,
    metrics: MetricsCollector,
    source: EmissionSchedule,
    pending: Option<Emission>,
    chan_ul: RandomStream,
    chan_dl: RandomStream,
    frames: Vec<FrameAssembly>,
    annotation: Fragmentation,
    slots: u64,
    check_every_event: bool,
    ledger_ok: bool,
}

pub fn build_scenario(spec: &CellSpec) -> Result<Simulation> {
    spec.validate()?;
    let n = spec.n_vehicles;
    let layout = place_vehicles(
        n as usize,
        spec.deployment_rect,
        spec.uav_height_m,
        &mut rng_stream("placement", spec.seed),
    )?;
    let end = SimTime::from_secs(spec.sim_time_secs);
    let mode = spec.kind.uplink_mode();
    let offset = match mode {
        EmissionMode::Annotations => SimTime::from_secs(spec.uav_processing_secs),
        EmissionMode::FullFrames => SimTime::ZERO,
    };
    let jitter = (spec.frame_jitter && mode == EmissionMode::FullFrames)
        .then(|| rng_stream("trace", spec.seed));
    let mut source = EmissionSchedule::new(mode, &spec.profile, &spec.trace_entry, offset, end, jitter);
    let pending = source.next();
    let annotation = fragment(
        u64::from(annotation_payload_bytes(n, spec.profile.box_size_bytes)),
        spec.profile.udp_payload_bytes,
    );
    Ok(Simulation {
        layout,
        relay: spec.kind.relay_rule(),
        bearers: BearerSet::new(n, spec.ul_buffer_bytes, spec.dl_buffer_bytes),
        scheduler: RadioScheduler::new(spec.slot, &spec.link),
        metrics: MetricsCollector::new(n, SimTime::from_secs(spec.warmup_secs)),
        source,
        pending,
        chan_ul: rng_stream("channel.ul", spec.seed),
        chan_dl: rng_stream("channel.dl", spec.seed),
        frames: Vec::new(),
        annotation,
        slots: 0,
        check_every_event: false,
        ledger_ok: true,
        spec: spec.clone(),
    })
}

impl Simulation {
    pub fn layout(&self) -> &NodeLayout {
        &self.layout
    }

    /// Re-checks buffer occupancy and every ledger after each event.
    pub fn with_event_checks(mut self, on: bool) -> Self {
        self.check_every_event = on;
        self
    }

    pub fn run(self) -> RunOutcome {
        self.run_observed(|_, _| {})
    }

    /// Runs to completion, handing every slot allocation to `observe`.
    pub fn run_observed<F>(mut self, mut observe: F) -> RunOutcome
    where
        F: FnMut(Slot, &SlotAllocation),
    {
        let end = SimTime::from_secs(self.spec.sim_time_secs);
        let mut q = EventQueue::new(end);
        if let Some(e) = self.pending {
            q.schedule(e.at, emission_kind(&e), Action::Emit)
                .expect("first emission is not in the past");
        }
        q.schedule(SimTime::ZERO, EventKind::SlotBoundary, Action::Slot(0))
            .expect("t=0");
        let warmup = self.metrics.warmup();
        if warmup > SimTime::ZERO {
            q.schedule(warmup, EventKind::MeasurementFlush, Action::Flush)
                .expect("warm-up inside run");
        }
        q.schedule(end, EventKind::SimulationEnd, Action::End)
            .expect("end is in the future");

        let events = q.run_until(end, |q, ev| {
            self.handle(q, ev, &mut observe);
            if self.check_every_event {
                self.check_buffers(false);
            }
        });
        self.finish(events)
    }

    fn handle<F>(&mut self, q: &mut EventQueue<Action>, ev: Event<Action>, observe: &mut F)
    where
        F: FnMut(Slot, &SlotAllocation),
    {
        let now = ev.fire_time;
        match ev.payload {
            Action::Emit => self.on_emit(q, now),
            Action::Slot(index) => self.on_slot(q, index, now, observe),
            Action::Complete(c) => self.on_complete(q, c, now),
            Action::Annotate(frame_id) => self.emit_annotations(frame_id, now),
            Action::Flush => self.metrics.start_measurement(),
            Action::End => {}
        }
    }

    fn on_emit(&mut self, q: &mut EventQueue<Action>, now: SimTime) {
        let e = self.pending.take().expect("emission event without pending emission");
        let n = self.spec.n_vehicles;
        let overhead = self.spec.profile.per_packet_overhead_bytes;
        match self.relay {
            RelayRule::ForwardPerVehicleCopy => {
                for k in 0..n {
                    let mut p = Packet::from_emission(BearerId::Uplink, &e, overhead);
                    p.dest = Some(k);
                    self.metrics.expect_units(1);
                    self.bearers.get_mut(BearerId::Uplink).enqueue(p, now);
                }
            }
            RelayRule::DuplicateToAll => {
                self.metrics.expect_units(u64::from(n));
                let p = Packet::from_emission(BearerId::Uplink, &e, overhead);
                self.bearers.get_mut(BearerId::Uplink).enqueue(p, now);
            }
            RelayRule::ProcessThenAnnotateAll => {
                if e.fragment_index == 0 {
                    self.metrics
                        .expect_units(u64::from(n) * u64::from(self.annotation.count));
                }
                let fid = e.frame_id as usize;
                if self.frames.len() <= fid {
                    self.frames.resize(fid + 1, FrameAssembly::default());
                }
                let p = Packet::from_emission(BearerId::Uplink, &e, overhead);
                if self.bearers.get_mut(BearerId::Uplink).enqueue(p, now) == Admission::DroppedOverflow {
                    self.frames[fid].failed = true;
                }
            }
        }
        self.pending = self.source.next();
        if let Some(next) = self.pending {
            q.schedule(next.at, emission_kind(&next), Action::Emit)
                .expect("emissions are time-ordered");
        }
    }

    fn on_slot<F>(&mut self, q: &mut EventQueue<Action>, index: u64, now: SimTime, observe: &mut F)
    where
        F: FnMut(Slot, &SlotAllocation),
    {
        let slot = Slot { index, start: now };
        let allocation = self.scheduler.schedule_slot(&demands(&self.bearers));
        observe(slot, &allocation);
        for c in serve(&self.scheduler, slot, &allocation, &mut self.bearers) {
            q.schedule(c.at, EventKind::PacketServiceComplete, Action::Complete(c))
                .expect("completion inside the slot");
        }
        self.slots += 1;
        let next = SimTime::from_nanos((index + 1) * self.spec.slot.duration().as_nanos());
        if next < q.end_time() {
            q.schedule(next, EventKind::SlotBoundary, Action::Slot(index + 1))
                .expect("next slot is in the future");
        }
    }

    fn on_complete(&mut self, q: &mut EventQueue<Action>, c: ServiceCompletion, now: SimTime) {
        let dir = c.bearer.direction();
        for mut p in c.packets {
            let rng = match dir {
                Direction::Uplink => &mut self.chan_ul,
                Direction::Downlink => &mut self.chan_dl,
            };
            let delivered = channel_draw(&self.spec.link, dir, rng) == DeliveryOutcome::Delivered;
            self.bearers.get_mut(c.bearer).resolve(delivered);
            if let Some(h) = p.hops[c.bearer.hop_index()].as_mut() {
                h.completed_at = Some(now);
            }
            if !delivered {
                if dir == Direction::Uplink && self.relay == RelayRule::ProcessThenAnnotateAll {
                    self.frames[p.frame_id as usize].failed = true;
                }
                continue;
            }
            if dir == Direction::Downlink {
                p.delivered_at = Some(now);
            }
            self.metrics.record_delivery(&p, dir, now);
            if dir == Direction::Uplink {
                self.relay_on_delivery(q, &p, now);
            }
        }
    }

    fn relay_on_delivery(&mut self, q: &mut EventQueue<Action>, p: &Packet, now: SimTime) {
        let n = self.spec.n_vehicles;
        match self.relay {
            RelayRule::ForwardPerVehicleCopy => {
                let k = p.dest.expect("per-vehicle stream packet carries its vehicle");
                let id = BearerId::Downlink(k);
                self.bearers.get_mut(id).enqueue(p.forwarded(id), now);
            }
            RelayRule::DuplicateToAll => {
                for k in 0..n {
                    let id = BearerId::Downlink(k);
                    self.bearers.get_mut(id).enqueue(p.forwarded(id), now);
                }
            }
            RelayRule::ProcessThenAnnotateAll => {
                let frame = &mut self.frames[p.frame_id as usize];
                frame.received += 1;
                if frame.received == p.fragment_count && !frame.failed {
                    let delay = SimTime::from_secs(self.spec.bs_processing_secs);
                    if delay == SimTime::ZERO {
                        self.emit_annotations(p.frame_id, now);
                    } else {
                        q.schedule(now + delay, EventKind::ProcessingComplete, Action::Annotate(p.frame_id))
                            .expect("processing finishes in the future");
                    }
                }
            }
        }
    }

    fn emit_annotations(&mut self, frame_id: u64, now: SimTime) {
        let overhead = self.spec.profile.per_packet_overhead_bytes;
        let frag = self.annotation;
        for k in 0..self.spec.n_vehicles {
            let id = BearerId::Downlink(k);
            for j in 0..frag.count {
                let mut p = Packet::new(id, frag.size_of(j), overhead, now);
                p.frame_id = frame_id;
                p.fragment_index = j;
                p.fragment_count = frag.count;
                self.bearers.get_mut(id).enqueue(p, now);
            }
        }
    }

    fn check_buffers(&mut self, full: bool) {
        for b in self.bearers.iter() {
            let ok = b.ledger_closes()
                && b.occupancy_bytes() <= b.capacity_bytes()
                && (!full || b.occupancy_consistent());
            if !ok {
                self.ledger_ok = false;
            }
        }
    }

    fn finish(mut self, events: u64) -> RunOutcome {
        self.check_buffers(true);
        let ul_bearer = self.bearers.uplink();
        let c = ul_bearer.counters();
        let ul = LinkCounters {
            offered: c.enqueued,
            delivered: c.served,
            dropped_overflow: c.dropped_overflow,
            dropped_channel: c.dropped_channel,
            in_flight: ul_bearer.in_flight(),
        };
        let mut dl = LinkCounters::default();
        for b in self.bearers.downlink() {
            let c = b.counters();
            dl.offered += c.enqueued;
            dl.delivered += c.served;
            dl.dropped_overflow += c.dropped_overflow;
            dl.dropped_channel += c.dropped_channel;
            dl.in_flight += b.in_flight();
        }
        let record = self.metrics.finalize(
            self.spec.run_id(),
            SimTime::from_secs(self.spec.sim_time_secs),
            ul,
            dl,
        );
        RunOutcome {
            record,
            layout: self.layout,
            events,
            slots: self.slots,
            ledger_ok: self.ledger_ok && ul.closes() && dl.closes(),
        }
    }
}

fn emission_kind(e: &Emission) -> EventKind {
    if e.fragment_index == 0 {
        EventKind::FrameGeneration
    } else {
        EventKind::FragmentEmission
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::DEFAULT_BUFFER_BYTES;
    use crate::traffic::{builtin_trace, trace_entry};

    fn spec(kind: ScenarioKind, n: u32, fps: f64) -> CellSpec {
        CellSpec {
            kind,
            n_vehicles: n,
            seed: 1,
            profile: SourceProfile::with_frame_rate(fps),
            trace_entry: trace_entry(&builtin_trace(), n).unwrap(),
            link: LinkModel {
                uplink_rate_bps: 2e9,
                downlink_rate_bps: 4e9,
                loss_prob_ul: 0.0,
                loss_prob_dl: 0.0,
            },
            slot: SlotConfig::default(),
            ul_buffer_bytes: DEFAULT_BUFFER_BYTES,
            dl_buffer_bytes: DEFAULT_BUFFER_BYTES,
            sim_time_secs: 1.0,
            warmup_secs: 0.0,
            frame_jitter: false,
            uav_processing_secs: 0.0,
            bs_processing_secs: 0.0,
            uav_height_m: 50.0,
            deployment_rect: Rect::default(),
        }
    }

    fn run(s: &CellSpec) -> RunOutcome {
        build_scenario(s).unwrap().with_event_checks(true).run()
    }

    #[test]
    fn parses_scenario_names() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.to_string().parse::<ScenarioKind>().unwrap(), k);
        }
        assert_eq!("BFA".parse::<ScenarioKind>().unwrap(), ScenarioKind::Bfa);
        assert!(matches!(
            "xyz".parse::<ScenarioKind>(),
            Err(SimError::UnknownScenario(_))
        ));
    }

    #[test]
    fn zero_vehicles_rejected() {
        let mut s = spec(ScenarioKind::Bff, 4, 30.0);
        s.n_vehicles = 0;
        assert!(matches!(build_scenario(&s), Err(SimError::InvalidCount(0))));
    }

    #[test]
    fn mff_uplink_carries_n_times_bff() {
        let mff = run(&spec(ScenarioKind::Mff, 4, 30.0)).record;
        let bff = run(&spec(ScenarioKind::Bff, 4, 30.0)).record;
        assert_eq!(mff.ul.offered, 4 * bff.ul.offered);
    }

    #[test]
    fn mff_and_bff_deliver_the_same_bytes_per_vehicle() {
        // Loss-free, uncongested: every vehicle sees the same content.
        let mut a = spec(ScenarioKind::Mff, 5, 15.0);
        let mut b = spec(ScenarioKind::Bff, 5, 15.0);
        a.sim_time_secs = 2.0;
        b.sim_time_secs = 2.0;
        let ra = run(&a).record;
        let rb = run(&b).record;
        assert!((ra.per_user_throughput_bps - rb.per_user_throughput_bps).abs() < 1e-6);
        assert_eq!(ra.dl.delivered, rb.dl.delivered);
    }

    #[test]
    fn bff_and_bao_duplicate_to_every_vehicle() {
        for kind in [ScenarioKind::Bff, ScenarioKind::Bao] {
            let r = run(&spec(kind, 5, 30.0)).record;
            assert_eq!(r.dl.offered, 5 * r.ul.delivered, "{kind}");
        }
    }

    #[test]
    fn bfa_and_bao_deliver_same_annotation_bytes() {
        let mut a = spec(ScenarioKind::Bfa, 7, 30.0);
        let mut b = spec(ScenarioKind::Bao, 7, 30.0);
        a.sim_time_secs = 3.0;
        b.sim_time_secs = 3.0;
        let ra = run(&a).record;
        let rb = run(&b).record;
        // Same annotation size; BFA annotations start one frame later.
        let per_frame = (279.0 + 28.0) * 8.0;
        let diff = (ra.per_user_throughput_bps - rb.per_user_throughput_bps).abs();
        assert!(diff <= per_frame / 3.0 + 1e-9, "diff {diff}");
    }

    #[test]
    fn bfa_drops_the_whole_frame_when_a_fragment_is_lost() {
        let mut s = spec(ScenarioKind::Bfa, 4, 30.0);
        s.link.loss_prob_ul = 1.0;
        let r = run(&s).record;
        assert_eq!(r.dl.offered, 0);
        assert_eq!(r.reliability, 0.0);
    }

    #[test]
    fn bfa_emits_one_annotation_per_vehicle_per_frame() {
        let mut s = spec(ScenarioKind::Bfa, 21, 30.0);
        s.sim_time_secs = 1.0;
        let r = run(&s).record;
        // 30 frames; the one still being paced at the end is unfinished.
        let frames_done = r.dl.offered / 21;
        assert!((29..=30).contains(&frames_done), "{frames_done}");
        assert_eq!(r.dl.offered % 21, 0);
    }

    #[test]
    fn processing_delay_shifts_latency_only() {
        let mut s = spec(ScenarioKind::Bfa, 4, 30.0);
        s.bs_processing_secs = 0.005;
        let delayed = run(&s).record;
        let plain = run(&spec(ScenarioKind::Bfa, 4, 30.0)).record;
        assert_eq!(delayed.dl.offered, plain.dl.offered);
        assert!(delayed.latency_l2.is_some());
    }

    #[test]
    fn ledger_closes_and_buffers_stay_bounded_under_overload() {
        let mut s = spec(ScenarioKind::Mff, 21, 30.0);
        s.link.uplink_rate_bps = 200e6;
        s.ul_buffer_bytes = 2_000_000;
        s.link.loss_prob_ul = 0.01;
        s.link.loss_prob_dl = 0.01;
        s.sim_time_secs = 2.0;
        let out = run(&s);
        assert!(out.ledger_ok);
        assert!(out.record.ul.dropped_overflow > 0);
        assert!(out.record.reliability < 0.6);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut s = spec(ScenarioKind::Bff, 9, 30.0);
        s.link.loss_prob_dl = 0.01;
        s.frame_jitter = true;
        let a = run(&s);
        let b = run(&s);
        assert_eq!(a.record, b.record);
        assert_eq!(a.layout, b.layout);
    }

    #[test]
    fn every_slot_allocation_is_valid() {
        let s = spec(ScenarioKind::Bfa, 21, 30.0);
        let slot = s.slot;
        let mut checked = 0;
        build_scenario(&s).unwrap().run_observed(|_, a| {
            assert!(a.is_valid(&slot));
            checked += 1;
        });
        assert_eq!(checked, 1000);
    }
}
