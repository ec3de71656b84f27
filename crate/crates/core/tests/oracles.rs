//! Simulator outputs checked against closed-form values computed here,
//! independently of the library's own arithmetic.

use skyrelay::buffers::{BearerId, BearerSet};
use skyrelay::engine::SimTime;
use skyrelay::radio::{demands, serve, RadioScheduler, Slot, SlotConfig};
use skyrelay::runner::{run_cell, RunConfig};
use skyrelay::scenario::{CellSpec, ScenarioKind};
use skyrelay::topology::LinkModel;
use skyrelay::traffic::Packet;

fn cell(kind: ScenarioKind, n: u32, fps: u32) -> CellSpec {
    let mut cfg = RunConfig::default();
    cfg.link.loss_prob_ul = 0.0;
    cfg.link.loss_prob_dl = 0.0;
    cfg.traffic.frame_jitter = false;
    cfg.sim_time_secs = 5.0;
    cfg.scenarios = vec![kind];
    cfg.vehicles = vec![n];
    cfg.fps = vec![fps];
    cfg.seeds = vec![1];
    cfg.cells().unwrap().remove(0)
}

/// Per-user wire rate of a full-frame stream: every fragment carries 28 B
/// of headers, the last one is short.
fn full_frame_rate_bps(frame_mean: f64, fps: f64) -> f64 {
    let bytes = frame_mean.round();
    let packets = (bytes / 1472.0).ceil();
    (bytes + 28.0 * packets) * 8.0 * fps
}

#[test]
fn unsaturated_full_frame_throughput_matches_offered_load() {
    // Frame means for N=4 and N=9 from the built-in trace.
    for (n, mean) in [(4, 160529.0), (9, 149530.2)] {
        for kind in [ScenarioKind::Mff, ScenarioKind::Bff] {
            for fps in [15, 30] {
                let r = run_cell(&cell(kind, n, fps)).unwrap().record;
                let expect = full_frame_rate_bps(mean, f64::from(fps));
                let err = (r.per_user_throughput_bps - expect).abs() / expect;
                assert!(err < 0.01, "{kind} N={n} @{fps}: {} vs {expect}", r.per_user_throughput_bps);
            }
        }
    }
}

#[test]
fn annotation_throughput_matches_box_arithmetic() {
    for n in [4u32, 13, 21] {
        for fps in [15, 30] {
            let r = run_cell(&cell(ScenarioKind::Bao, n, fps)).unwrap().record;
            let anno = (f64::from(n) * 39.7).ceil();
            let expect = (anno + 28.0) * 8.0 * f64::from(fps);
            let err = (r.per_user_throughput_bps - expect).abs() / expect;
            assert!(err < 0.01, "N={n} @{fps}: {} vs {expect}", r.per_user_throughput_bps);
        }
    }
}

#[test]
fn unsaturated_runs_deliver_everything_without_loss() {
    for kind in ScenarioKind::ALL {
        let out = run_cell(&cell(kind, 6, 30)).unwrap();
        assert!(out.ledger_ok);
        assert_eq!(out.record.ul.dropped_overflow + out.record.dl.dropped_overflow, 0);
        // Only what was still in the air at the end is missing: for BFA
        // that is the whole last frame, one of 150.
        assert!(out.record.reliability > 1.0 - 1.5 / 150.0, "{kind}: {}", out.record.reliability);
    }
}

#[test]
fn overloaded_buffer_delay_approaches_buffer_drain_time() {
    let capacity: u64 = 1 << 20;
    let rate = 100e6;
    let slot = SlotConfig {
        duration_secs: 1e-3,
        symbol_count: 14,
        ctrl_symbols: 0,
    };
    let link = LinkModel {
        uplink_rate_bps: rate,
        downlink_rate_bps: rate,
        loss_prob_ul: 0.0,
        loss_prob_dl: 0.0,
    };
    let mut sched = RadioScheduler::new(slot, &link);
    let mut bearers = BearerSet::new(0, capacity, capacity);
    // Offer twice the service rate in 1500 B packets.
    let gap_ns = (1500.0 * 8.0 / (2.0 * rate) * 1e9) as u64;
    let slot_ns = 1_000_000u64;
    let mut next_arrival = 0u64;
    let (mut sum, mut count) = (0.0, 0u64);
    for k in 0..4000u64 {
        let start = SimTime::from_nanos(k * slot_ns);
        let alloc = sched.schedule_slot(&demands(&bearers));
        for c in serve(&sched, Slot { index: k, start }, &alloc, &mut bearers) {
            for p in c.packets {
                let b = bearers.get_mut(BearerId::Uplink);
                b.resolve(true);
                if k >= 1000 {
                    let queued = p.hops[0].unwrap().enqueued_at;
                    sum += (c.at - queued).as_secs();
                    count += 1;
                }
            }
        }
        while next_arrival < (k + 1) * slot_ns {
            let at = SimTime::from_nanos(next_arrival);
            bearers
                .get_mut(BearerId::Uplink)
                .enqueue(Packet::new(BearerId::Uplink, 1500, 0, at), at);
            next_arrival += gap_ns;
        }
    }
    let mean = sum / count as f64;
    let law = 8.0 * capacity as f64 / rate;
    assert!((mean - law).abs() / law < 0.1, "mean delay {mean} vs {law}");
    assert!(bearers.uplink().counters().dropped_overflow > 0);
}

#[test]
fn bfa_uplink_waits_less_than_downlink() {
    for n in [4, 12, 21] {
        let r = run_cell(&cell(ScenarioKind::Bfa, n, 30)).unwrap().record;
        let (l1, l2) = (r.latency_l1.unwrap(), r.latency_l2.unwrap());
        assert!(l1 < l2, "N={n}: L1 {l1} L2 {l2}");
        // Nothing in BFA queues for longer than a few slots.
        assert!(l1 + l2 < 5e-3);
    }
}

#[test]
fn mff_uplink_overload_caps_delivered_rate() {
    // N=21 at 30 FPS offers far more than the shared slot can carry; the
    // per-user rate then sits well below the offered rate.
    let r = run_cell(&cell(ScenarioKind::Mff, 21, 30)).unwrap().record;
    let offered = full_frame_rate_bps(163442.2, 30.0);
    assert!(r.per_user_throughput_bps < 0.5 * offered);
    assert!(r.ul.dropped_overflow > 0);
    assert!(r.latency_l1.unwrap() > 0.1);
}
