//! Frame and annotation sources.
//!
//! Full frames are split into UDP-sized fragments that are paced uniformly
//! over the frame period; annotations are a single packet of `ceil(N * beta)`
//! bytes per processed frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffers::BearerId;
use crate::engine::{RandomStream, SimTime};
use crate::error::{Result, SimError};

/// Average serialized size of one bounding box, bytes.
pub const DEFAULT_BOX_SIZE_BYTES: f64 = 39.7;
/// 1500 B MTU minus the IPv4 and UDP headers.
pub const DEFAULT_UDP_PAYLOAD_BYTES: u32 = 1472;
/// IPv4 (20 B) + UDP (8 B) headers counted on the wire.
pub const DEFAULT_OVERHEAD_BYTES: u32 = 28;

/// Mean frame size and its observed spread for a scene with `vehicle_count`
/// detected vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTraceEntry {
    pub vehicle_count: u32,
    pub frame_size_bytes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<(f64, f64)>,
}

// (vehicles, mean, low, high) measured over drone-camera frames.
const BUILTIN_TRACE: [(u32, f64, f64, f64); 18] = [
    (4, 160529.0, 160402.2, 160702.8),
    (5, 159668.0, 159571.59, 159774.2),
    (6, 153324.6, 153060.2, 153532.4),
    (7, 151629.2, 151433.4, 151865.05),
    (8, 146249.2, 145241.6, 147188.6),
    (9, 149530.2, 149240.4, 149734.4),
    (10, 139844.8, 136945.6, 141508.2),
    (11, 143601.0, 143091.6, 143997.2),
    (12, 146011.0, 145461.8, 146585.555),
    (13, 140527.2, 135552.2, 144530.2),
    (14, 146486.6, 145890.4, 147082.8),
    (15, 144966.4, 143832.4, 145768.8),
    (16, 148324.2, 148217.6, 148429.4),
    (17, 148367.0, 148195.4, 148532.8),
    (18, 147567.8, 145550.6, 148658.57),
    (19, 149139.4, 149097.965, 149175.6),
    (20, 155336.2, 154661.0, 155950.74),
    (21, 163442.2, 161325.945, 164593.8),
];

pub fn builtin_trace() -> Vec<FrameTraceEntry> {
    BUILTIN_TRACE
        .iter()
        .map(|&(n, mean, lo, hi)| FrameTraceEntry {
            vehicle_count: n,
            frame_size_bytes: mean,
            spread: Some((lo, hi)),
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    vehicle_count: u32,
    frame_size_bytes: f64,
}

/// Reads a `vehicle_count,frame_size_bytes` CSV trace.
pub fn load_trace_csv(path: &Path) -> Result<Vec<FrameTraceEntry>> {
    let trace_err = |message: String| SimError::Trace {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| trace_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| trace_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["vehicle_count", "frame_size_bytes"] {
        return Err(trace_err(format!(
            "expected header `vehicle_count,frame_size_bytes`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in reader.deserialize::<TraceRow>() {
        let row = row.map_err(|e| trace_err(e.to_string()))?;
        if !(row.frame_size_bytes >= 0.0) {
            return Err(trace_err(format!(
                "negative frame size for N={}",
                row.vehicle_count
            )));
        }
        entries.push(FrameTraceEntry {
            vehicle_count: row.vehicle_count,
            frame_size_bytes: row.frame_size_bytes,
            spread: None,
        });
    }
    if entries.is_empty() {
        return Err(trace_err("trace has no rows".into()));
    }
    Ok(entries)
}

pub fn trace_entry(trace: &[FrameTraceEntry], n: u32) -> Result<FrameTraceEntry> {
    trace
        .iter()
        .find(|e| e.vehicle_count == n)
        .copied()
        .ok_or_else(|| SimError::config(format!("trace has no entry for N={n}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceProfile {
    /// Camera frame rate, frames/s.
    pub frame_rate: f64,
    /// Annotation rate, annotations/s.
    pub annotation_rate: f64,
    pub box_size_bytes: f64,
    pub udp_payload_bytes: u32,
    pub per_packet_overhead_bytes: u32,
}

impl SourceProfile {
    /// Annotation rate tied to the frame rate.
    pub fn with_frame_rate(frame_rate: f64) -> Self {
        Self {
            frame_rate,
            annotation_rate: frame_rate,
            box_size_bytes: DEFAULT_BOX_SIZE_BYTES,
            udp_payload_bytes: DEFAULT_UDP_PAYLOAD_BYTES,
            per_packet_overhead_bytes: DEFAULT_OVERHEAD_BYTES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.annotation_rate > 0.0) {
            return Err(SimError::config("frame and annotation rates must be positive"));
        }
        if !(self.box_size_bytes > 0.0) {
            return Err(SimError::config("bounding box size must be positive"));
        }
        if self.udp_payload_bytes == 0 {
            return Err(SimError::config("UDP payload must be at least one byte"));
        }
        Ok(())
    }
}

/// Annotation size for `n` detected objects, in (fractional) bytes.
pub fn annotation_size(n: u32, box_size_bytes: f64) -> f64 {
    f64::from(n) * box_size_bytes
}

/// Annotation payload on the wire: the fractional size rounded up.
pub fn annotation_payload_bytes(n: u32, box_size_bytes: f64) -> u32 {
    annotation_size(n, box_size_bytes).ceil() as u32
}

/// Frame size in whole bytes.
pub fn frame_bytes(frame_size_bytes: f64) -> u64 {
    frame_size_bytes.round().max(0.0) as u64
}

/// Split of a payload into UDP datagrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fragmentation {
    pub count: u32,
    pub full_size: u32,
    /// Size of the final fragment (equals `full_size` when it divides evenly).
    pub last_size: u32,
}

impl Fragmentation {
    pub fn size_of(&self, index: u32) -> u32 {
        debug_assert!(index < self.count);
        if index + 1 == self.count {
            self.last_size
        } else {
            self.full_size
        }
    }

    pub fn sizes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.count).map(|i| self.size_of(i))
    }

    pub fn total_bytes(&self) -> u64 {
        if self.count == 0 {
            return 0;
        }
        u64::from(self.count - 1) * u64::from(self.full_size) + u64::from(self.last_size)
    }
}

pub fn fragment(frame_size: u64, udp_payload: u32) -> Fragmentation {
    assert!(udp_payload >= 1, "udp payload must be positive");
    let udp = u64::from(udp_payload);
    let count = frame_size.div_ceil(udp);
    let last = if count == 0 {
        0
    } else {
        frame_size - (count - 1) * udp
    };
    Fragmentation {
        count: count as u32,
        full_size: udp_payload,
        last_size: last as u32,
    }
}

/// Gap between consecutive fragments so that a frame of `frame_size` bytes is
/// spread over one frame period: `udp_payload / (frame_size * frame_rate)`.
pub fn packet_interval_full_frames(frame_size: f64, frame_rate: f64, udp_payload: u32) -> f64 {
    f64::from(udp_payload) / (frame_size * frame_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmissionMode {
    FullFrames,
    Annotations,
}

/// One packet leaving a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub at: SimTime,
    pub frame_id: u64,
    pub fragment_index: u32,
    pub fragment_count: u32,
    pub payload_bytes: u32,
}

/// Time-ordered emission schedule of a periodic source up to `end` (exclusive).
pub struct EmissionSchedule {
    mode: EmissionMode,
    period_secs: f64,
    offset: SimTime,
    end: SimTime,
    frame_size: f64,
    spread: Option<(f64, f64)>,
    jitter: Option<RandomStream>,
    udp_payload: u32,
    annotation_bytes: u32,
    frame_rate: f64,
    // Current frame state.
    frame_id: u64,
    frame_start: SimTime,
    frag: Fragmentation,
    interval_secs: f64,
    next_fragment: u32,
    done: bool,
}

impl EmissionSchedule {
    /// `jitter`, when given, draws each frame's size uniformly inside the
    /// trace entry's spread. `offset` delays every emission (processing time).
    pub fn new(
        mode: EmissionMode,
        profile: &SourceProfile,
        entry: &FrameTraceEntry,
        offset: SimTime,
        end: SimTime,
        jitter: Option<RandomStream>,
    ) -> Self {
        let rate = match mode {
            EmissionMode::FullFrames => profile.frame_rate,
            EmissionMode::Annotations => profile.annotation_rate,
        };
        let mut s = Self {
            mode,
            period_secs: 1.0 / rate,
            offset,
            end,
            frame_size: entry.frame_size_bytes,
            spread: entry.spread,
            jitter,
            udp_payload: profile.udp_payload_bytes,
            annotation_bytes: annotation_payload_bytes(entry.vehicle_count, profile.box_size_bytes),
            frame_rate: profile.frame_rate,
            frame_id: 0,
            frame_start: SimTime::ZERO,
            frag: Fragmentation {
                count: 0,
                full_size: 0,
                last_size: 0,
            },
            interval_secs: 0.0,
            next_fragment: 0,
            done: false,
        };
        s.start_frame(0);
        s
    }

    pub fn mode(&self) -> EmissionMode {
        self.mode
    }

    fn start_frame(&mut self, frame_id: u64) {
        self.frame_id = frame_id;
        self.frame_start = self.offset + SimTime::from_secs(frame_id as f64 * self.period_secs);
        self.next_fragment = 0;
        match self.mode {
            EmissionMode::FullFrames => {
                let size = match (&mut self.jitter, self.spread) {
                    (Some(rng), Some((lo, hi))) => rng.uniform_range(lo, hi),
                    _ => self.frame_size,
                };
                let bytes = frame_bytes(size);
                self.frag = fragment(bytes, self.udp_payload);
                self.interval_secs =
                    packet_interval_full_frames(bytes as f64, self.frame_rate, self.udp_payload);
            }
            EmissionMode::Annotations => {
                self.frag = fragment(u64::from(self.annotation_bytes), self.udp_payload);
                self.interval_secs = 0.0;
            }
        }
        if self.frag.count == 0 {
            // Empty frame or empty scene: nothing to send, but time still moves.
            self.frag = Fragmentation {
                count: 0,
                full_size: 0,
                last_size: 0,
            };
        }
    }
}

impl Iterator for EmissionSchedule {
    type Item = Emission;

    fn next(&mut self) -> Option<Emission> {
        loop {
            if self.done {
                return None;
            }
            if self.next_fragment >= self.frag.count {
                self.start_frame(self.frame_id + 1);
                if self.frame_start >= self.end {
                    self.done = true;
                    return None;
                }
                continue;
            }
            if self.frame_start >= self.end {
                self.done = true;
                return None;
            }
            let j = self.next_fragment;
            let at = self.frame_start
                + SimTime::from_secs(f64::from(j) * self.interval_secs);
            if at >= self.end {
                // Remaining fragments of this frame fall past the end of the run.
                self.done = true;
                return None;
            }
            self.next_fragment += 1;
            return Some(Emission {
                at,
                frame_id: self.frame_id,
                fragment_index: j,
                fragment_count: self.frag.count,
                payload_bytes: self.frag.size_of(j),
            });
        }
    }
}

/// Wire timestamps for one hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopStamp {
    pub enqueued_at: SimTime,
    pub completed_at: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub flow: BearerId,
    /// Target vehicle for per-vehicle streams.
    pub dest: Option<u32>,
    pub payload_bytes: u32,
    pub overhead_bytes: u32,
    pub frame_id: u64,
    pub fragment_index: u32,
    pub fragment_count: u32,
    pub created_at: SimTime,
    pub delivered_at: Option<SimTime>,
    /// Index 0 is the uplink hop, 1 the downlink hop.
    pub hops: [Option<HopStamp>; 2],
    /// Bytes still to be sent on the current hop.
    pub residual_bytes: u32,
}

impl Packet {
    pub fn new(flow: BearerId, payload_bytes: u32, overhead_bytes: u32, created_at: SimTime) -> Self {
        Self {
            flow,
            dest: None,
            payload_bytes,
            overhead_bytes,
            frame_id: 0,
            fragment_index: 0,
            fragment_count: 1,
            created_at,
            delivered_at: None,
            hops: [None, None],
            residual_bytes: payload_bytes + overhead_bytes,
        }
    }

    pub fn from_emission(flow: BearerId, e: &Emission, overhead_bytes: u32) -> Self {
        let mut p = Packet::new(flow, e.payload_bytes, overhead_bytes, e.at);
        p.frame_id = e.frame_id;
        p.fragment_index = e.fragment_index;
        p.fragment_count = e.fragment_count;
        p
    }

    pub fn wire_bytes(&self) -> u32 {
        self.payload_bytes + self.overhead_bytes
    }

    /// Re-targets a copy of this packet onto the next hop's bearer.
    pub fn forwarded(&self, flow: BearerId) -> Packet {
        let mut p = self.clone();
        p.flow = flow;
        p.residual_bytes = p.wire_bytes();
        p.delivered_at = None;
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(n: u32) -> FrameTraceEntry {
        trace_entry(&builtin_trace(), n).unwrap()
    }

    #[test]
    fn builtin_trace_values() {
        let t = builtin_trace();
        assert_eq!(t.len(), 18);
        assert_eq!(entry(4).frame_size_bytes, 160529.0);
        assert_eq!(entry(21).frame_size_bytes, 163442.2);
        assert_eq!(entry(10).frame_size_bytes, 139844.8);
        for e in &t {
            assert!((4..=21).contains(&e.vehicle_count));
            assert!((134_000.0..=167_000.0).contains(&e.frame_size_bytes));
            let (lo, hi) = e.spread.unwrap();
            assert!(lo <= e.frame_size_bytes && e.frame_size_bytes <= hi);
        }
    }

    #[test]
    fn annotation_sizes() {
        assert_eq!(annotation_size(0, 39.7), 0.0);
        assert!((annotation_size(1, 39.7) - 39.7).abs() < 1e-12);
        assert!((annotation_size(21, 39.7) - 833.7).abs() < 1e-9);
        assert_eq!(annotation_payload_bytes(21, 39.7), 834);
        assert_eq!(annotation_payload_bytes(4, 39.7), 159);
    }

    #[test]
    fn fragment_examples() {
        let f = fragment(160529, 1472);
        assert_eq!(f.count, 110);
        assert_eq!(f.last_size, 81);
        assert_eq!(f.sizes().filter(|&s| s == 1472).count(), 109);
        assert_eq!(f.sizes().map(u64::from).sum::<u64>(), 160529);

        let f = fragment(1472, 1472);
        assert_eq!((f.count, f.last_size), (1, 1472));

        let f = fragment(834, 1472);
        assert_eq!((f.count, f.last_size), (1, 834));

        assert_eq!(fragment(0, 1472).count, 0);
    }

    #[test]
    fn pacing_interval() {
        let dt = packet_interval_full_frames(147200.0, 30.0, 1472);
        assert!((dt - 1.0 / 3000.0).abs() < 1e-15);
        let dt15 = packet_interval_full_frames(147200.0, 15.0, 1472);
        assert!((dt15 - 2.0 * dt).abs() < 1e-15);
    }

    #[test]
    fn fragments_fill_exactly_one_frame_period() {
        for e in builtin_trace() {
            for fps in [15.0, 30.0] {
                let bytes = frame_bytes(e.frame_size_bytes);
                let frag = fragment(bytes, 1472);
                let dt = packet_interval_full_frames(bytes as f64, fps, 1472);
                let period = 1.0 / fps;
                // Total paced bytes equal the frame, so count * gap covers the
                // period and the last fragment leaves inside it.
                assert!(f64::from(frag.count - 1) * dt < period);
                assert!(f64::from(frag.count) * dt >= period - 1e-12);
                let padded = f64::from(frag.count) * 1472.0;
                assert!((f64::from(frag.count) * dt - period * padded / bytes as f64).abs() < 1e-12);
            }
        }
    }

    fn count_emissions(mode: EmissionMode, n: u32, fps: f64) -> (u64, Vec<Emission>) {
        let profile = SourceProfile::with_frame_rate(fps);
        let s = EmissionSchedule::new(
            mode,
            &profile,
            &entry(n),
            SimTime::ZERO,
            SimTime::from_secs(15.0),
            None,
        );
        let all: Vec<_> = s.collect();
        let frames = all.iter().filter(|e| e.fragment_index == 0).count() as u64;
        (frames, all)
    }

    #[test]
    fn full_frame_schedule_counts() {
        let (frames, all) = count_emissions(EmissionMode::FullFrames, 4, 30.0);
        assert_eq!(frames, 450);
        // Every frame of 160529 B completes inside its period.
        assert_eq!(all.len(), 450 * 110);
        assert!(all.windows(2).all(|w| w[0].at <= w[1].at));
    }

    #[test]
    fn annotation_schedule_counts() {
        let (frames, all) = count_emissions(EmissionMode::Annotations, 21, 30.0);
        assert_eq!(frames, 450);
        assert_eq!(all.len(), 450);
        assert!(all.iter().all(|e| e.payload_bytes == 834));
        let (_, all) = count_emissions(EmissionMode::Annotations, 4, 30.0);
        assert!(all.iter().all(|e| e.payload_bytes == 159));
    }

    #[test]
    fn jitter_stays_inside_spread() {
        let profile = SourceProfile::with_frame_rate(30.0);
        let e = entry(13);
        let s = EmissionSchedule::new(
            EmissionMode::FullFrames,
            &profile,
            &e,
            SimTime::ZERO,
            SimTime::from_secs(2.0),
            Some(crate::engine::rng_stream("trace", 1)),
        );
        let mut per_frame = std::collections::BTreeMap::<u64, u64>::new();
        for em in s {
            *per_frame.entry(em.frame_id).or_default() += u64::from(em.payload_bytes);
        }
        let (lo, hi) = e.spread.unwrap();
        let sizes: Vec<_> = per_frame.values().copied().collect();
        assert!(sizes.iter().all(|&b| (lo.floor() as u64..=hi.ceil() as u64).contains(&b)));
        assert!(sizes.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn csv_trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        std::fs::write(&path, "vehicle_count,frame_size_bytes\n4,1000\n5,2000.5\n").unwrap();
        let t = load_trace_csv(&path).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].frame_size_bytes, 2000.5);

        std::fs::write(&path, "n,size\n4,1000\n").unwrap();
        assert!(matches!(load_trace_csv(&path), Err(SimError::Trace { .. })));
    }
}
