//! Node geometry and the abstract link model.
//!
//! Each scheduled link delivers a fixed achievable rate; on top of that every
//! packet independently survives or is lost with a per-direction Bernoulli
//! probability. Vehicle positions are recorded but do not modulate either.

use serde::{Deserialize, Serialize};

use crate::engine::RandomStream;
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub width_m: f64,
    pub height_m: f64,
}

impl Rect {
    pub fn new(width_m: f64, height_m: f64) -> Self {
        Self { width_m, height_m }
    }

    pub fn center(&self) -> Point {
        Point {
            x: self.width_m / 2.0,
            y: self.height_m / 2.0,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.width_m).contains(&p.x) && (0.0..=self.height_m).contains(&p.y)
    }
}

impl Default for Rect {
    fn default() -> Self {
        Rect::new(100.0, 100.0)
    }
}

/// Static placement of the UAV, the BS and the vehicles for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeLayout {
    pub uav_height_m: f64,
    /// Ground point under the UAV; the BS sits here.
    pub bs_position: Point,
    pub vehicle_positions: Vec<Point>,
    pub deployment_rect: Rect,
}

impl NodeLayout {
    pub fn vehicle_count(&self) -> usize {
        self.vehicle_positions.len()
    }
}

/// Draws `n` i.i.d. uniform vehicle positions inside `rect`.
pub fn place_vehicles(
    n: usize,
    rect: Rect,
    uav_height_m: f64,
    rng: &mut RandomStream,
) -> Result<NodeLayout> {
    if n == 0 {
        return Err(SimError::InvalidCount(n));
    }
    if !(rect.width_m > 0.0 && rect.height_m > 0.0) {
        return Err(SimError::config("deployment rectangle must be positive"));
    }
    if !(uav_height_m > 0.0) {
        return Err(SimError::config("UAV height must be positive"));
    }
    let vehicle_positions = (0..n)
        .map(|_| Point {
            x: rng.uniform_range(0.0, rect.width_m),
            y: rng.uniform_range(0.0, rect.height_m),
        })
        .collect();
    Ok(NodeLayout {
        uav_height_m,
        bs_position: rect.center(),
        vehicle_positions,
        deployment_rect: rect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// UAV to BS rate when the uplink holds every data symbol, bit/s.
    pub uplink_rate_bps: f64,
    /// BS to vehicles aggregate rate when the downlink holds every data symbol, bit/s.
    pub downlink_rate_bps: f64,
    pub loss_prob_ul: f64,
    pub loss_prob_dl: f64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.uplink_rate_bps > 0.0 && self.downlink_rate_bps > 0.0) {
            return Err(SimError::config("link rates must be positive"));
        }
        for p in [self.loss_prob_ul, self.loss_prob_dl] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::config(format!(
                    "loss probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn rate_bps(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Uplink => self.uplink_rate_bps,
            Direction::Downlink => self.downlink_rate_bps,
        }
    }

    pub fn loss_prob(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Uplink => self.loss_prob_ul,
            Direction::Downlink => self.loss_prob_dl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryOutcome {
    Delivered,
    Lost,
}

pub fn channel_draw(link: &LinkModel, dir: Direction, rng: &mut RandomStream) -> DeliveryOutcome {
    if rng.bernoulli(link.loss_prob(dir)) {
        DeliveryOutcome::Lost
    } else {
        DeliveryOutcome::Delivered
    }
}
