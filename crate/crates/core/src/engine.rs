//! Deterministic discrete-event core.
//!
//! Time is kept as integer nanoseconds ([`SimTime`]) so that long runs do not
//! accumulate floating-point drift; conversion to and from seconds happens at
//! the edges. Events with equal fire times pop in insertion order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;

const NANOS_PER_SEC: f64 = 1e9;

/// Simulated time in nanoseconds since the start of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    /// Rounds to the nearest nanosecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((s * NANOS_PER_SEC).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.9}s", self.as_secs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    FrameGeneration,
    FragmentEmission,
    SlotBoundary,
    PacketServiceComplete,
    ProcessingComplete,
    MeasurementFlush,
    SimulationEnd,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub kind: EventKind,
    pub payload: P,
}

/// Returned by [`EventQueue::schedule`]; pass to [`EventQueue::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P> {
    fire_time: SimTime,
    seq: u64,
    kind: EventKind,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.seq == other.seq
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Time-ordered event queue together with the simulation clock.
pub struct EventQueue<P> {
    now: SimTime,
    end_time: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
}

impl<P> EventQueue<P> {
    pub fn new(end_time: SimTime) -> Self {
        Self {
            now: SimTime::ZERO,
            end_time,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn end_time(&self) -> SimTime {
        self.end_time
    }

    /// Number of pending (not yet popped) entries, cancelled ones included.
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(
        &mut self,
        fire_time: SimTime,
        kind: EventKind,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        if fire_time < self.now {
            return Err(SimError::SchedulingInPast {
                fire_time: fire_time.as_secs(),
                now: self.now.as_secs(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_time,
            seq,
            kind,
            payload,
        });
        Ok(EventHandle(seq))
    }

    /// Cancels a pending event. Returns false if it was already cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pops the next live event with `fire_time <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_time > limit {
                return None;
            }
            let entry = self.heap.pop().expect("peeked entry");
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_time >= self.now);
            self.now = entry.fire_time;
            return Some(Event {
                fire_time: entry.fire_time,
                kind: entry.kind,
                payload: entry.payload,
            });
        }
    }

    /// Processes every event with `fire_time <= end` through `handler`, then
    /// sets the clock to `end`. Returns the number of events processed.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let end = end.max(self.now);
        let mut processed = 0;
        while let Some(ev) = self.pop_until(end) {
            handler(self, ev);
            processed += 1;
        }
        self.now = end;
        processed
    }
}

/// Seeded pseudo-random stream for one stochastic concern of a run.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// Derives an independent stream from a concern label and a run seed.
///
/// The seed selects the ChaCha key, the label selects the ChaCha stream, so
/// changing either yields a different sequence.
pub fn rng_stream(label: &str, seed: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()));
    RandomStream { rng }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs(s)
    }

    #[test]
    fn schedule_at_now_is_accepted() {
        let mut q: EventQueue<()> = EventQueue::new(secs(15.0));
        assert!(q.schedule(secs(0.0), EventKind::SlotBoundary, ()).is_ok());
    }

    #[test]
    fn pops_in_time_order() {
        let mut q = EventQueue::new(secs(15.0));
        q.schedule(secs(1.0), EventKind::SlotBoundary, 1).unwrap();
        q.schedule(secs(0.5), EventKind::SlotBoundary, 2).unwrap();
        assert_eq!(q.pop_until(secs(10.0)).unwrap().payload, 2);
        assert_eq!(q.pop_until(secs(10.0)).unwrap().payload, 1);
        assert!(q.pop_until(secs(10.0)).is_none());
    }

    #[test]
    fn ties_pop_in_insertion_order() {
        let mut q = EventQueue::new(secs(15.0));
        for i in 0..10 {
            q.schedule(secs(2.0), EventKind::FragmentEmission, i).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| q.pop_until(secs(3.0)))
            .map(|e| e.payload)
            .collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut q = EventQueue::new(secs(15.0));
        q.schedule(secs(1.0), EventKind::SlotBoundary, ()).unwrap();
        q.pop_until(secs(1.0)).unwrap();
        let err = q
            .schedule(SimTime::from_nanos(999_999_999), EventKind::SlotBoundary, ())
            .unwrap_err();
        assert!(matches!(err, SimError::SchedulingInPast { .. }));
    }

    #[test]
    fn run_until_on_empty_queue_moves_clock() {
        let mut q: EventQueue<()> = EventQueue::new(secs(15.0));
        let n = q.run_until(secs(15.0), |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(q.now(), secs(15.0));
    }

    #[test]
    fn run_until_stops_at_boundary() {
        let mut q = EventQueue::new(secs(15.0));
        for t in [1.0, 2.0, 3.0] {
            q.schedule(secs(t), EventKind::SlotBoundary, ()).unwrap();
        }
        assert_eq!(q.run_until(secs(2.5), |_, _| {}), 2);
        assert_eq!(q.now(), secs(2.5));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn periodic_source_fires_once_per_period() {
        let mut q = EventQueue::new(secs(15.0));
        let period = SimTime::from_secs(1.0 / 30.0);
        q.schedule(SimTime::ZERO, EventKind::FrameGeneration, 0u64)
            .unwrap();
        let end = secs(15.0);
        let mut frames = 0u64;
        q.run_until(end, |q, ev| {
            frames += 1;
            // Frame k fires at k/30 s computed from its index, never by accumulation.
            let next = ev.payload + 1;
            let t = SimTime::from_secs(next as f64 / 30.0);
            if t < end {
                q.schedule(t, EventKind::FrameGeneration, next).unwrap();
            }
        });
        // 15 s * 30 Hz, counting t = 0 and excluding t = 15 s.
        assert_eq!(frames, 450);
        assert!(period.as_nanos() > 0);
    }

    #[test]
    fn cancelled_events_never_fire() {
        let mut q = EventQueue::new(secs(15.0));
        let a = q.schedule(secs(1.0), EventKind::SlotBoundary, 'a').unwrap();
        q.schedule(secs(2.0), EventKind::SlotBoundary, 'b').unwrap();
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let mut seen = vec![];
        q.run_until(secs(5.0), |_, e| seen.push(e.payload));
        assert_eq!(seen, vec!['b']);
    }

    #[test]
    fn clock_never_decreases() {
        let mut q = EventQueue::new(secs(15.0));
        for (i, t) in [0.3, 0.1, 0.7, 0.1, 0.0, 0.9].iter().enumerate() {
            q.schedule(secs(*t), EventKind::SlotBoundary, i).unwrap();
        }
        let mut last = SimTime::ZERO;
        q.run_until(secs(1.0), |q, _| {
            assert!(q.now() >= last);
            last = q.now();
        });
    }

    #[test]
    fn same_label_and_seed_reproduce() {
        let mut a = rng_stream("chan", 7);
        let mut b = rng_stream("chan", 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn seed_and_label_separate_streams() {
        let draw = |label: &str, seed| {
            let mut s = rng_stream(label, seed);
            (0..16).map(|_| s.next_u64()).collect::<Vec<_>>()
        };
        assert_ne!(draw("chan", 1), draw("chan", 2));
        assert_ne!(draw("chan", 1), draw("pos", 1));
    }

    #[test]
    fn secs_round_trip() {
        assert_eq!(SimTime::from_secs(0.001).as_nanos(), 1_000_000);
        assert_eq!(SimTime::from_secs(-1.0), SimTime::ZERO);
        assert!((SimTime::from_secs(15.0).as_secs() - 15.0).abs() < 1e-12);
    }
}
