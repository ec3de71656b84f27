//! End-to-end measurements: per-user throughput, per-hop latency and
//! reliability, plus the per-link packet ledger.

use std::io::Write;

use serde::Serialize;

use crate::engine::SimTime;
use crate::error::{Result, SimError};
use crate::scenario::ScenarioKind;
use crate::topology::Direction;
use crate::traffic::Packet;

/// Packet ledger of one link (all bearers of one direction together).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounters {
    /// Enqueue attempts, dropped ones included.
    pub offered: u64,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_channel: u64,
    /// Still queued or on the air when the run ended.
    pub in_flight: u64,
}

impl LinkCounters {
    /// Packets whose fate was decided before the end of the run.
    pub fn sent(&self) -> u64 {
        self.offered - self.in_flight
    }

    pub fn closes(&self) -> bool {
        self.sent() == self.delivered + self.dropped_overflow + self.dropped_channel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub scenario: ScenarioKind,
    pub n_vehicles: u32,
    pub fps: u32,
    pub seed: u64,
    /// Mean over vehicles of received wire bytes per second, as bit/s.
    pub per_user_throughput_bps: f64,
    /// Mean uplink (UAV to BS) latency, seconds.
    pub latency_l1: Option<f64>,
    /// Mean over vehicles of the per-vehicle downlink latency, seconds.
    pub latency_l2: Option<f64>,
    pub latency_total: Option<f64>,
    pub reliability: f64,
    pub ul: LinkCounters,
    pub dl: LinkCounters,
}

#[derive(Debug, Clone, Copy, Default)]
struct Mean {
    sum_ns: u128,
    count: u64,
}

impl Mean {
    fn push(&mut self, d: SimTime) {
        self.sum_ns += u128::from(d.as_nanos());
        self.count += 1;
    }

    fn secs(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_ns as f64 / self.count as f64 / 1e9)
    }
}

/// Per-run accumulator.
#[derive(Debug)]
pub struct MetricsCollector {
    warmup: SimTime,
    measuring: bool,
    l1: Mean,
    l2: Vec<Mean>,
    rx_bytes: Vec<u64>,
    expected_units: u64,
    delivered_units: u64,
}

impl MetricsCollector {
    pub fn new(vehicles: u32, warmup: SimTime) -> Self {
        Self {
            warmup,
            measuring: warmup == SimTime::ZERO,
            l1: Mean::default(),
            l2: vec![Mean::default(); vehicles as usize],
            rx_bytes: vec![0; vehicles as usize],
            expected_units: 0,
            delivered_units: 0,
        }
    }

    /// Ends the warm-up window; later deliveries feed the averages.
    pub fn start_measurement(&mut self) {
        self.measuring = true;
    }

    pub fn warmup(&self) -> SimTime {
        self.warmup
    }

    /// Registers units the UAV committed to deliver to vehicles.
    pub fn expect_units(&mut self, units: u64) {
        self.expected_units += units;
    }

    /// Accounts a packet that arrived intact at the end of `hop`.
    pub fn record_delivery(&mut self, p: &Packet, hop: Direction, now: SimTime) {
        let stamp = p.hops[match hop {
            Direction::Uplink => 0,
            Direction::Downlink => 1,
        }]
        .expect("delivered packet carries its hop timestamp");
        let sample = now.saturating_sub(stamp.enqueued_at);
        match hop {
            Direction::Uplink => {
                if self.measuring {
                    self.l1.push(sample);
                }
            }
            Direction::Downlink => {
                let k = match p.flow {
                    crate::buffers::BearerId::Downlink(k) => k as usize,
                    crate::buffers::BearerId::Uplink => unreachable!("downlink hop on uplink bearer"),
                };
                self.delivered_units += 1;
                if self.measuring {
                    self.l2[k].push(sample);
                    self.rx_bytes[k] += u64::from(p.wire_bytes());
                }
            }
        }
    }

    pub fn l1_samples(&self) -> u64 {
        self.l1.count
    }

    pub fn l2_samples(&self) -> u64 {
        self.l2.iter().map(|m| m.count).sum()
    }

    pub fn finalize(
        &self,
        id: RunId,
        sim_time: SimTime,
        ul: LinkCounters,
        dl: LinkCounters,
    ) -> MetricRecord {
        let window = sim_time.saturating_sub(self.warmup).as_secs();
        let n = self.rx_bytes.len().max(1) as f64;
        let per_user_throughput_bps = if window > 0.0 {
            self.rx_bytes.iter().map(|&b| b as f64 * 8.0 / window).sum::<f64>() / n
        } else {
            0.0
        };
        let latency_l1 = self.l1.secs();
        let per_vehicle: Vec<f64> = self.l2.iter().filter_map(Mean::secs).collect();
        let latency_l2 =
            (!per_vehicle.is_empty()).then(|| per_vehicle.iter().sum::<f64>() / per_vehicle.len() as f64);
        let latency_total = match (latency_l1, latency_l2) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        let reliability = if self.expected_units == 0 {
            1.0
        } else {
            (self.delivered_units as f64 / self.expected_units as f64).min(1.0)
        };
        MetricRecord {
            scenario: id.scenario,
            n_vehicles: id.n_vehicles,
            fps: id.fps,
            seed: id.seed,
            per_user_throughput_bps,
            latency_l1,
            latency_l2,
            latency_total,
            reliability,
            ul,
            dl,
        }
    }
}

/// Identity of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RunId {
    pub scenario: ScenarioKind,
    pub n_vehicles: u32,
    pub fps: u32,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 17] = [
    "scenario",
    "n",
    "fps",
    "seed",
    "throughput_mbps",
    "l1_ms",
    "l2_ms",
    "latency_ms",
    "reliability_pct",
    "sent_ul",
    "delivered_ul",
    "dropped_buf_ul",
    "dropped_ch_ul",
    "sent_dl",
    "delivered_dl",
    "dropped_buf_dl",
    "dropped_ch_dl",
];

fn ms(v: Option<f64>) -> String {
    v.map(|s| format!("{:.6}", s * 1e3)).unwrap_or_default()
}

impl MetricRecord {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.scenario.to_string(),
            self.n_vehicles.to_string(),
            self.fps.to_string(),
            self.seed.to_string(),
            format!("{:.6}", self.per_user_throughput_bps / 1e6),
            ms(self.latency_l1),
            ms(self.latency_l2),
            ms(self.latency_total),
            format!("{:.6}", self.reliability * 100.0),
            self.ul.sent().to_string(),
            self.ul.delivered.to_string(),
            self.ul.dropped_overflow.to_string(),
            self.ul.dropped_channel.to_string(),
            self.dl.sent().to_string(),
            self.dl.delivered.to_string(),
            self.dl.dropped_overflow.to_string(),
            self.dl.dropped_channel.to_string(),
        ]
    }

    pub fn run_id(&self) -> RunId {
        RunId {
            scenario: self.scenario,
            n_vehicles: self.n_vehicles,
            fps: self.fps,
            seed: self.seed,
        }
    }
}

pub fn write_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<()> {
    write_csv_columns(records, &CSV_HEADER, out)
}

/// Writes only `columns`, in the given order. Each must be in [`CSV_HEADER`].
pub fn write_csv_columns<W: Write, S: AsRef<str>>(
    records: &[MetricRecord],
    columns: &[S],
    out: W,
) -> Result<()> {
    let index = column_indices(columns)?;
    let to_err = |e: csv::Error| SimError::io("<csv>", std::io::Error::other(e));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(index.iter().map(|&i| CSV_HEADER[i])).map_err(to_err)?;
    for r in records {
        let row = r.csv_row();
        w.write_record(index.iter().map(|&i| &row[i])).map_err(to_err)?;
    }
    w.flush().map_err(|e| SimError::io("<csv>", e))?;
    Ok(())
}

pub fn column_indices<S: AsRef<str>>(columns: &[S]) -> Result<Vec<usize>> {
    columns
        .iter()
        .map(|c| {
            let c = c.as_ref();
            CSV_HEADER
                .iter()
                .position(|h| *h == c)
                .ok_or_else(|| SimError::config(format!("unknown CSV column `{c}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::{Bearer, BearerId};

    fn id() -> RunId {
        RunId {
            scenario: ScenarioKind::Bao,
            n_vehicles: 2,
            fps: 30,
            seed: 1,
        }
    }

    fn queued_then_delivered(flow: BearerId, at: f64) -> Packet {
        let mut b = Bearer::new(flow, 1 << 20);
        b.enqueue(Packet::new(flow, 1000, 28, SimTime::ZERO), SimTime::from_secs(at));
        b.drain(u64::MAX).pop().unwrap()
    }

    #[test]
    fn latency_sample_is_enqueue_to_delivery() {
        let mut m = MetricsCollector::new(1, SimTime::ZERO);
        let p = queued_then_delivered(BearerId::Uplink, 1.000);
        m.record_delivery(&p, Direction::Uplink, SimTime::from_secs(1.002));
        let r = m.finalize(id(), SimTime::from_secs(15.0), LinkCounters::default(), LinkCounters::default());
        assert!((r.latency_l1.unwrap() - 0.002).abs() < 1e-12);
    }

    #[test]
    fn no_deliveries_means_absent_latency() {
        let m = MetricsCollector::new(3, SimTime::from_secs(0.5));
        let r = m.finalize(id(), SimTime::from_secs(15.0), LinkCounters::default(), LinkCounters::default());
        assert_eq!(r.latency_l1, None);
        assert_eq!(r.latency_l2, None);
        assert_eq!(r.latency_total, None);
        assert_eq!(r.csv_row()[5], "");
    }

    #[test]
    fn warmup_deliveries_do_not_count_toward_averages() {
        let mut m = MetricsCollector::new(1, SimTime::from_secs(0.5));
        let p = queued_then_delivered(BearerId::Downlink(0), 0.1);
        m.expect_units(2);
        m.record_delivery(&p, Direction::Downlink, SimTime::from_secs(0.2));
        assert_eq!(m.l2_samples(), 0);
        m.start_measurement();
        let p = queued_then_delivered(BearerId::Downlink(0), 1.0);
        m.record_delivery(&p, Direction::Downlink, SimTime::from_secs(1.001));
        let r = m.finalize(id(), SimTime::from_secs(1.5), LinkCounters::default(), LinkCounters::default());
        assert!((r.latency_l2.unwrap() - 0.001).abs() < 1e-12);
        // Reliability covers the whole run, warm-up included.
        assert_eq!(r.reliability, 1.0);
        // 1028 wire bytes over the 1 s measurement window.
        assert!((r.per_user_throughput_bps - 1028.0 * 8.0).abs() < 1e-9);
    }

    #[test]
    fn ledger_sent_excludes_in_flight() {
        let c = LinkCounters {
            offered: 10,
            delivered: 6,
            dropped_overflow: 1,
            dropped_channel: 1,
            in_flight: 2,
        };
        assert_eq!(c.sent(), 8);
        assert!(c.closes());
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "scenario,n,fps,seed,throughput_mbps,l1_ms,l2_ms,latency_ms,reliability_pct,sent_ul,delivered_ul,dropped_buf_ul,dropped_ch_ul,sent_dl,delivered_dl,dropped_buf_dl,dropped_ch_dl\n"
        );
    }

    #[test]
    fn column_subset_keeps_requested_order() {
        let m = MetricsCollector::new(1, SimTime::ZERO);
        let r = m.finalize(id(), SimTime::from_secs(1.0), LinkCounters::default(), LinkCounters::default());
        let mut buf = Vec::new();
        write_csv_columns(&[r], &["seed", "scenario"], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "seed,scenario\n1,bao\n");
        assert!(write_csv_columns(&[], &["nope"], Vec::new()).is_err());
    }
}
