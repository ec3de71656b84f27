//! Finite drop-tail transmit queues, one per bearer.

use std::collections::VecDeque;
use std::fmt;

use serde::Serialize;

use crate::engine::SimTime;
use crate::topology::Direction;
use crate::traffic::{HopStamp, Packet};

/// Default per-bearer RLC buffer: 10 MiB.
pub const DEFAULT_BUFFER_BYTES: u64 = 10 * 1024 * 1024;

/// One-direction logical flow. The uplink bearer runs UAV to BS; downlink
/// bearer `k` runs BS to vehicle `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BearerId {
    Uplink,
    Downlink(u32),
}

impl BearerId {
    pub fn direction(self) -> Direction {
        match self {
            BearerId::Uplink => Direction::Uplink,
            BearerId::Downlink(_) => Direction::Downlink,
        }
    }

    pub fn hop_index(self) -> usize {
        match self {
            BearerId::Uplink => 0,
            BearerId::Downlink(_) => 1,
        }
    }
}

impl fmt::Display for BearerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BearerId::Uplink => write!(f, "uav->bs"),
            BearerId::Downlink(k) => write!(f, "bs->v{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BearerCounters {
    pub enqueued: u64,
    pub served: u64,
    pub dropped_overflow: u64,
    pub dropped_channel: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    DroppedOverflow,
}

#[derive(Debug)]
pub struct Bearer {
    id: BearerId,
    queue: VecDeque<Packet>,
    capacity_bytes: u64,
    occupancy_bytes: u64,
    /// Packets that left the queue and whose delivery outcome is pending.
    in_service: u64,
    counters: BearerCounters,
}

impl Bearer {
    pub fn new(id: BearerId, capacity_bytes: u64) -> Self {
        Self {
            id,
            queue: VecDeque::new(),
            capacity_bytes,
            occupancy_bytes: 0,
            in_service: 0,
            counters: BearerCounters::default(),
        }
    }

    pub fn id(&self) -> BearerId {
        self.id
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn occupancy_bytes(&self) -> u64 {
        self.occupancy_bytes
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn counters(&self) -> &BearerCounters {
        &self.counters
    }

    /// Packets accepted but not yet resolved (queued or on the air).
    pub fn in_flight(&self) -> u64 {
        self.queue.len() as u64 + self.in_service
    }

    /// Drop-tail admission of a whole packet. Attempts are counted in
    /// `enqueued`, so dropped packets also appear there.
    pub fn enqueue(&mut self, mut p: Packet, now: SimTime) -> Admission {
        debug_assert!(p.wire_bytes() > 0, "empty packets are not enqueued");
        self.counters.enqueued += 1;
        let size = u64::from(p.residual_bytes);
        if self.occupancy_bytes + size > self.capacity_bytes {
            self.counters.dropped_overflow += 1;
            return Admission::DroppedOverflow;
        }
        p.flow = self.id;
        p.hops[self.id.hop_index()] = Some(HopStamp {
            enqueued_at: now,
            completed_at: None,
        });
        self.occupancy_bytes += size;
        self.queue.push_back(p);
        Admission::Accepted
    }

    pub fn head_of_line(&self) -> Option<&Packet> {
        self.queue.front()
    }

    /// Sends up to `budget` bytes from the head of the queue. Packets whose
    /// last byte fits are removed and returned; a partially sent head packet
    /// stays with its residual size reduced.
    pub fn drain(&mut self, mut budget: u64) -> Vec<Packet> {
        let mut done = Vec::new();
        while budget > 0 {
            let Some(head) = self.queue.front_mut() else {
                break;
            };
            let residual = u64::from(head.residual_bytes);
            if residual <= budget {
                budget -= residual;
                self.occupancy_bytes -= residual;
                let mut p = self.queue.pop_front().expect("front exists");
                p.residual_bytes = 0;
                done.push(p);
            } else {
                head.residual_bytes -= budget as u32;
                self.occupancy_bytes -= budget;
                budget = 0;
            }
        }
        self.in_service += done.len() as u64;
        done
    }

    /// Records the fate of a packet returned by [`Bearer::drain`].
    pub fn resolve(&mut self, delivered: bool) {
        debug_assert!(self.in_service > 0);
        self.in_service -= 1;
        if delivered {
            self.counters.served += 1;
        } else {
            self.counters.dropped_channel += 1;
        }
    }

    /// `enqueued = served + dropped_overflow + dropped_channel + in_flight`.
    pub fn ledger_closes(&self) -> bool {
        let c = &self.counters;
        c.enqueued == c.served + c.dropped_overflow + c.dropped_channel + self.in_flight()
    }

    pub fn occupancy_consistent(&self) -> bool {
        let sum: u64 = self.queue.iter().map(|p| u64::from(p.residual_bytes)).sum();
        sum == self.occupancy_bytes && self.occupancy_bytes <= self.capacity_bytes
    }

    pub fn queued(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }
}

/// The uplink bearer plus one downlink bearer per vehicle.
#[derive(Debug)]
pub struct BearerSet {
    uplink: Bearer,
    downlink: Vec<Bearer>,
}

impl BearerSet {
    pub fn new(vehicles: u32, uplink_capacity: u64, downlink_capacity: u64) -> Self {
        Self {
            uplink: Bearer::new(BearerId::Uplink, uplink_capacity),
            downlink: (0..vehicles)
                .map(|k| Bearer::new(BearerId::Downlink(k), downlink_capacity))
                .collect(),
        }
    }

    pub fn vehicles(&self) -> u32 {
        self.downlink.len() as u32
    }

    pub fn get(&self, id: BearerId) -> &Bearer {
        match id {
            BearerId::Uplink => &self.uplink,
            BearerId::Downlink(k) => &self.downlink[k as usize],
        }
    }

    pub fn get_mut(&mut self, id: BearerId) -> &mut Bearer {
        match id {
            BearerId::Uplink => &mut self.uplink,
            BearerId::Downlink(k) => &mut self.downlink[k as usize],
        }
    }

    pub fn uplink(&self) -> &Bearer {
        &self.uplink
    }

    pub fn downlink(&self) -> &[Bearer] {
        &self.downlink
    }

    /// Uplink first, then downlink bearers by vehicle index.
    pub fn iter(&self) -> impl Iterator<Item = &Bearer> {
        std::iter::once(&self.uplink).chain(self.downlink.iter())
    }
}
