//! Slotted dynamic-TDD air interface.
//!
//! Every slot the data symbols are split between uplink and downlink in
//! proportion to the bytes waiting in each direction, then handed out
//! round-robin to the backlogged bearers of that direction one whole symbol at
//! a time. A symbol never carries more than one bearer, so a bearer with a few
//! bytes still occupies a full symbol.

use serde::{Deserialize, Serialize};

use crate::buffers::{BearerId, BearerSet};
use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::topology::{Direction, LinkModel};
use crate::traffic::Packet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotConfig {
    pub duration_secs: f64,
    pub symbol_count: u32,
    /// Leading symbols per slot reserved for control signalling.
    pub ctrl_symbols: u32,
}

impl Default for SlotConfig {
    fn default() -> Self {
        Self {
            duration_secs: 1e-3,
            symbol_count: 14,
            ctrl_symbols: 1,
        }
    }
}

impl SlotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_secs > 0.0) {
            return Err(SimError::config("slot duration must be positive"));
        }
        if self.symbol_count == 0 || self.ctrl_symbols >= self.symbol_count {
            return Err(SimError::config(
                "slot needs at least one data symbol after the control symbols",
            ));
        }
        Ok(())
    }

    pub fn data_symbols(&self) -> u32 {
        self.symbol_count - self.ctrl_symbols
    }

    pub fn duration(&self) -> SimTime {
        SimTime::from_secs(self.duration_secs)
    }

    /// Offset of the end of symbol `k` (exclusive index) from the slot start.
    pub fn symbol_end_offset(&self, k: u32) -> SimTime {
        let ns = self.duration().as_nanos() as f64 * f64::from(k) / f64::from(self.symbol_count);
        SimTime::from_nanos(ns.round() as u64)
    }
}

/// Bytes one data symbol carries, such that a direction holding every data
/// symbol of every slot achieves its configured rate.
pub fn bytes_per_symbol(link: &LinkModel, dir: Direction, slot: &SlotConfig) -> f64 {
    link.rate_bps(dir) * slot.duration_secs / f64::from(slot.data_symbols()) / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub index: u64,
    pub start: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BearerDemand {
    pub id: BearerId,
    pub backlog_bytes: u64,
}

/// Contiguous symbols `[first_symbol, first_symbol + symbols)` granted to one
/// bearer. Symbol indices count from the start of the slot, control included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub bearer: BearerId,
    pub first_symbol: u32,
    pub symbols: u32,
}

impl Grant {
    pub fn end_symbol(&self) -> u32 {
        self.first_symbol + self.symbols
    }

    pub fn direction(&self) -> Direction {
        self.bearer.direction()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotAllocation {
    pub grants: Vec<Grant>,
}

impl SlotAllocation {
    pub fn symbols(&self, dir: Direction) -> u32 {
        self.grants
            .iter()
            .filter(|g| g.direction() == dir)
            .map(|g| g.symbols)
            .sum()
    }

    pub fn total_symbols(&self) -> u32 {
        self.grants.iter().map(|g| g.symbols).sum()
    }

    /// True if the grants are disjoint, inside the data region and at most one
    /// per bearer.
    pub fn is_valid(&self, slot: &SlotConfig) -> bool {
        let mut used = vec![false; slot.symbol_count as usize];
        let mut seen = std::collections::HashSet::new();
        for g in &self.grants {
            if g.symbols == 0 || g.first_symbol < slot.ctrl_symbols || g.end_symbol() > slot.symbol_count {
                return false;
            }
            if !seen.insert(g.bearer) {
                return false;
            }
            for s in g.first_symbol..g.end_symbol() {
                if std::mem::replace(&mut used[s as usize], true) {
                    return false;
                }
            }
        }
        true
    }
}

/// Per-run scheduler state: symbol sizes and round-robin pointers.
#[derive(Debug, Clone)]
pub struct RadioScheduler {
    slot: SlotConfig,
    bps_ul: f64,
    bps_dl: f64,
    rr_ul: usize,
    rr_dl: usize,
}

impl RadioScheduler {
    pub fn new(slot: SlotConfig, link: &LinkModel) -> Self {
        Self {
            slot,
            bps_ul: bytes_per_symbol(link, Direction::Uplink, &slot),
            bps_dl: bytes_per_symbol(link, Direction::Downlink, &slot),
            rr_ul: 0,
            rr_dl: 0,
        }
    }

    pub fn slot_config(&self) -> &SlotConfig {
        &self.slot
    }

    pub fn bytes_per_symbol(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Uplink => self.bps_ul,
            Direction::Downlink => self.bps_dl,
        }
    }

    /// Byte budget of `symbols` whole symbols in `dir`.
    pub fn budget(&self, dir: Direction, symbols: u32) -> u64 {
        (f64::from(symbols) * self.bytes_per_symbol(dir)).floor() as u64
    }

    fn symbols_needed(&self, dir: Direction, bytes: u64) -> u32 {
        if bytes == 0 {
            0
        } else {
            (bytes as f64 / self.bytes_per_symbol(dir)).ceil() as u32
        }
    }

    /// Allocates the data symbols of one slot. `bearers` must list every
    /// bearer of the run in the same order each slot; empty ones get nothing.
    pub fn schedule_slot(&mut self, bearers: &[BearerDemand]) -> SlotAllocation {
        let total = self.slot.data_symbols();
        let mut ul = Vec::new();
        let mut dl = Vec::new();
        for b in bearers {
            let dir = b.id.direction();
            let need = self.symbols_needed(dir, b.backlog_bytes);
            match dir {
                Direction::Uplink => ul.push((b.id, need)),
                Direction::Downlink => dl.push((b.id, need)),
            }
        }
        let ul_bytes: u64 = bearers
            .iter()
            .filter(|b| b.id.direction() == Direction::Uplink)
            .map(|b| b.backlog_bytes)
            .sum();
        let dl_bytes: u64 = bearers
            .iter()
            .filter(|b| b.id.direction() == Direction::Downlink)
            .map(|b| b.backlog_bytes)
            .sum();
        let (ul_share, dl_share) = split_symbols(total, ul_bytes, dl_bytes);

        // Hand symbols a direction cannot use to the other one.
        let ul_need: u32 = ul.iter().map(|&(_, n)| n).sum();
        let dl_need: u32 = dl.iter().map(|&(_, n)| n).sum();
        let mut ul_use = ul_share.min(ul_need);
        let mut dl_use = dl_share.min(dl_need);
        let spare = total - ul_use - dl_use;
        if spare > 0 {
            let extra = spare.min(ul_need - ul_use);
            ul_use += extra;
            dl_use += (spare - extra).min(dl_need - dl_use);
        }

        let dl_grants = round_robin(&dl, dl_use, &mut self.rr_dl);
        let ul_grants = round_robin(&ul, ul_use, &mut self.rr_ul);

        // Downlink region first, then uplink, after the control symbols.
        let mut next = self.slot.ctrl_symbols;
        let mut grants = Vec::with_capacity(dl_grants.len() + ul_grants.len());
        for (bearer, symbols) in dl_grants.into_iter().chain(ul_grants) {
            grants.push(Grant {
                bearer,
                first_symbol: next,
                symbols,
            });
            next += symbols;
        }
        SlotAllocation { grants }
    }
}

/// Backlog-proportional UL/DL split of `total` symbols. A direction with
/// bytes waiting gets at least one symbol.
pub fn split_symbols(total: u32, ul_bytes: u64, dl_bytes: u64) -> (u32, u32) {
    match (ul_bytes, dl_bytes) {
        (0, 0) => (0, 0),
        (_, 0) => (total, 0),
        (0, _) => (0, total),
        _ if total == 1 => {
            if ul_bytes >= dl_bytes {
                (1, 0)
            } else {
                (0, 1)
            }
        }
        _ => {
            let frac = ul_bytes as f64 / (ul_bytes as f64 + dl_bytes as f64);
            let ul = ((f64::from(total) * frac).round() as u32).clamp(1, total - 1);
            (ul, total - ul)
        }
    }
}

/// Whole-symbol round-robin over `(bearer, symbols needed)` starting at
/// `*pointer`. Returns the grants in service order and advances the pointer.
fn round_robin(bearers: &[(BearerId, u32)], mut symbols: u32, pointer: &mut usize) -> Vec<(BearerId, u32)> {
    let len = bearers.len();
    if len == 0 || symbols == 0 {
        return Vec::new();
    }
    let start = *pointer % len;
    let mut granted = vec![0u32; len];
    let mut order = Vec::new();
    let mut last_first_pass = None;
    let mut first_pass = true;
    while symbols > 0 {
        let mut progressed = false;
        for step in 0..len {
            if symbols == 0 {
                break;
            }
            let i = (start + step) % len;
            if granted[i] < bearers[i].1 {
                if granted[i] == 0 {
                    order.push(i);
                    if first_pass {
                        last_first_pass = Some(i);
                    }
                }
                granted[i] += 1;
                symbols -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
        first_pass = false;
    }
    let backlogged = bearers.iter().filter(|b| b.1 > 0).count();
    if let Some(&first) = order.first() {
        *pointer = if order.len() == backlogged {
            // Everyone got served: rotate who goes first next slot.
            (first + 1) % len
        } else {
            (last_first_pass.unwrap_or(first) + 1) % len
        };
    }
    order.into_iter().map(|i| (bearers[i].0, granted[i])).collect()
}

/// Current backlog of every bearer, in the stable order the scheduler expects.
pub fn demands(bearers: &BearerSet) -> Vec<BearerDemand> {
    bearers
        .iter()
        .map(|b| BearerDemand {
            id: b.id(),
            backlog_bytes: b.occupancy_bytes(),
        })
        .collect()
}

/// Packets that finished transmission in one grant; all complete at `at`,
/// the end of the grant's last symbol.
#[derive(Debug, Clone)]
pub struct ServiceCompletion {
    pub bearer: BearerId,
    pub at: SimTime,
    pub packets: Vec<Packet>,
}

/// Drains each granted bearer by its byte budget and reports the packets
/// whose last byte was sent in this slot.
pub fn serve(
    scheduler: &RadioScheduler,
    slot: Slot,
    allocation: &SlotAllocation,
    bearers: &mut BearerSet,
) -> Vec<ServiceCompletion> {
    let cfg = scheduler.slot_config();
    let mut out = Vec::new();
    for g in &allocation.grants {
        let budget = scheduler.budget(g.direction(), g.symbols);
        let packets = bearers.get_mut(g.bearer).drain(budget);
        if packets.is_empty() {
            continue;
        }
        out.push(ServiceCompletion {
            bearer: g.bearer,
            at: slot.start + cfg.symbol_end_offset(g.end_symbol()),
            packets,
        });
    }
    out
}
