//! Sweep orchestration: configuration, cell expansion, parallel execution,
//! CSV output with a provenance sidecar, canned figure sweeps and the
//! rate calibration search.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::buffers::DEFAULT_BUFFER_BYTES;
use crate::error::{Result, SimError};
use crate::metrics::{column_indices, write_csv_columns, MetricRecord, CSV_HEADER};
use crate::radio::SlotConfig;
use crate::scenario::{build_scenario, CellSpec, RunOutcome, ScenarioKind};
use crate::topology::{LinkModel, Rect};
use crate::traffic::{
    builtin_trace, load_trace_csv, trace_entry, FrameTraceEntry, SourceProfile, DEFAULT_BOX_SIZE_BYTES,
    DEFAULT_OVERHEAD_BYTES, DEFAULT_UDP_PAYLOAD_BYTES,
};

/// Uplink rate found by `skyrelay calibrate` (see README).
pub const CALIBRATED_UPLINK_RATE_BPS: f64 = 650e6;
/// Aggregate downlink rate found by `skyrelay calibrate` (see README).
pub const CALIBRATED_DOWNLINK_RATE_BPS: f64 = 860e6;
pub const DEFAULT_LOSS_PROB_UL: f64 = 5e-5;
pub const DEFAULT_LOSS_PROB_DL: f64 = 2.5e-3;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            uplink_bytes: DEFAULT_BUFFER_BYTES,
            downlink_bytes: DEFAULT_BUFFER_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub box_size_bytes: f64,
    pub udp_payload_bytes: u32,
    pub overhead_bytes: u32,
    /// Annotations per second; follows the frame rate when absent.
    pub annotation_rate: Option<f64>,
    /// Draw each frame's size uniformly within the trace spread.
    pub frame_jitter: bool,
    pub uav_processing_secs: f64,
    pub bs_processing_secs: f64,
    /// `vehicle_count,frame_size_bytes` CSV; the built-in trace when absent.
    pub trace_file: Option<PathBuf>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            box_size_bytes: DEFAULT_BOX_SIZE_BYTES,
            udp_payload_bytes: DEFAULT_UDP_PAYLOAD_BYTES,
            overhead_bytes: DEFAULT_OVERHEAD_BYTES,
            annotation_rate: None,
            frame_jitter: true,
            uav_processing_secs: 0.0,
            bs_processing_secs: 0.0,
            trace_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub uav_height_m: f64,
    pub area: Rect,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            uav_height_m: 50.0,
            area: Rect::default(),
        }
    }
}

pub fn default_link() -> LinkModel {
    LinkModel {
        uplink_rate_bps: CALIBRATED_UPLINK_RATE_BPS,
        downlink_rate_bps: CALIBRATED_DOWNLINK_RATE_BPS,
        loss_prob_ul: DEFAULT_LOSS_PROB_UL,
        loss_prob_dl: DEFAULT_LOSS_PROB_DL,
    }
}

/// A whole sweep. The default is the full four-scenario campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<ScenarioKind>,
    #[serde(deserialize_with = "de_u32_set")]
    pub vehicles: Vec<u32>,
    #[serde(deserialize_with = "de_u32_set")]
    pub fps: Vec<u32>,
    #[serde(deserialize_with = "de_u64_set")]
    pub seeds: Vec<u64>,
    pub sim_time_secs: f64,
    pub warmup_secs: f64,
    pub link: LinkModel,
    pub slot: SlotConfig,
    pub buffers: BufferConfig,
    pub traffic: TrafficConfig,
    pub layout: LayoutConfig,
    /// CSV columns to write; all when absent.
    pub columns: Option<Vec<String>>,
    /// CSV destination; standard output when absent.
    pub output: Option<PathBuf>,
    /// Worker threads; all cores when absent, sequential when 1.
    pub parallelism: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            vehicles: (4..=21).collect(),
            fps: vec![15, 30],
            seeds: (1..=5).collect(),
            sim_time_secs: 15.0,
            warmup_secs: 0.5,
            link: default_link(),
            slot: SlotConfig::default(),
            buffers: BufferConfig::default(),
            traffic: TrafficConfig::default(),
            layout: LayoutConfig::default(),
            columns: None,
            output: None,
            parallelism: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberSet {
    List(Vec<u64>),
    One(u64),
    Text(String),
}

fn de_set<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u64>, D::Error> {
    match NumberSet::deserialize(d)? {
        NumberSet::List(v) => Ok(v),
        NumberSet::One(x) => Ok(vec![x]),
        NumberSet::Text(s) => parse_number_set(&s).map_err(serde::de::Error::custom),
    }
}

fn de_u64_set<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u64>, D::Error> {
    de_set(d)
}

fn de_u32_set<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u32>, D::Error> {
    de_set(d)?
        .into_iter()
        .map(|x| u32::try_from(x).map_err(serde::de::Error::custom))
        .collect()
}

/// Parses `4..21` (inclusive), `4-21`, `4,7,9` or mixtures like `1,3..5`.
pub fn parse_number_set(s: &str) -> Result<Vec<u64>> {
    let bad = || SimError::config(format!("cannot parse `{s}` as a number list or range"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bounds = part
            .split_once("..=")
            .or_else(|| part.split_once(".."))
            .or_else(|| part.split_once('-'));
        match bounds {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(SimError::config(format!("empty range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

/// Parses `mff,bao` or `all`.
pub fn parse_scenarios(s: &str) -> Result<Vec<ScenarioKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(ScenarioKind::ALL.to_vec());
    }
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

fn sorted_unique<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v.dedup();
    v
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always representable as TOML")
    }

    /// Number of sweep cells after de-duplication.
    pub fn cell_count(&self) -> usize {
        sorted_unique(self.scenarios.clone()).len()
            * sorted_unique(self.vehicles.clone()).len()
            * sorted_unique(self.fps.clone()).len()
            * sorted_unique(self.seeds.clone()).len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(SimError::config("no scenarios selected"));
        }
        if self.vehicles.is_empty() {
            return Err(SimError::config("no vehicle counts selected"));
        }
        if let Some(&n) = self.vehicles.iter().find(|&&n| n == 0) {
            return Err(SimError::InvalidCount(n as usize));
        }
        if self.fps.is_empty() || self.fps.contains(&0) {
            return Err(SimError::config("frame rates must be a non-empty list of positive values"));
        }
        if self.seeds.is_empty() {
            return Err(SimError::config("seed list is empty"));
        }
        if let Some(cols) = &self.columns {
            column_indices(cols)?;
        }
        if self.parallelism == Some(0) {
            return Err(SimError::config("parallelism must be at least 1"));
        }
        // Cell-level checks (rates, slot shape, times) on a representative cell.
        let trace = self.load_trace()?;
        self.cell(
            self.scenarios[0],
            self.vehicles[0],
            self.fps[0],
            self.seeds[0],
            &trace,
        )?
        .validate()
    }

    pub fn load_trace(&self) -> Result<Vec<FrameTraceEntry>> {
        match &self.traffic.trace_file {
            Some(path) => load_trace_csv(path),
            None => Ok(builtin_trace()),
        }
    }

    /// One cell of this configuration, which need not be on the sweep axes.
    pub fn cell_spec(&self, kind: ScenarioKind, n: u32, fps: u32, seed: u64) -> Result<CellSpec> {
        if n == 0 {
            return Err(SimError::InvalidCount(0));
        }
        let spec = self.cell(kind, n, fps, seed, &self.load_trace()?)?;
        spec.validate()?;
        Ok(spec)
    }

    fn cell(
        &self,
        kind: ScenarioKind,
        n: u32,
        fps: u32,
        seed: u64,
        trace: &[FrameTraceEntry],
    ) -> Result<CellSpec> {
        let t = &self.traffic;
        let frame_rate = f64::from(fps);
        Ok(CellSpec {
            kind,
            n_vehicles: n,
            seed,
            profile: SourceProfile {
                frame_rate,
                annotation_rate: t.annotation_rate.unwrap_or(frame_rate),
                box_size_bytes: t.box_size_bytes,
                udp_payload_bytes: t.udp_payload_bytes,
                per_packet_overhead_bytes: t.overhead_bytes,
            },
            trace_entry: trace_entry(trace, n)?,
            link: self.link,
            slot: self.slot,
            ul_buffer_bytes: self.buffers.uplink_bytes,
            dl_buffer_bytes: self.buffers.downlink_bytes,
            sim_time_secs: self.sim_time_secs,
            warmup_secs: self.warmup_secs,
            frame_jitter: t.frame_jitter,
            uav_processing_secs: t.uav_processing_secs,
            bs_processing_secs: t.bs_processing_secs,
            uav_height_m: self.layout.uav_height_m,
            deployment_rect: self.layout.area,
        })
    }

    /// Every cell of the sweep, ordered by (scenario, n, fps, seed).
    pub fn cells(&self) -> Result<Vec<CellSpec>> {
        self.validate()?;
        let trace = self.load_trace()?;
        let scenarios = sorted_unique(self.scenarios.clone());
        let vehicles = sorted_unique(self.vehicles.clone());
        let fps = sorted_unique(self.fps.clone());
        let seeds = sorted_unique(self.seeds.clone());
        let mut cells = Vec::with_capacity(self.cell_count());
        for &kind in &scenarios {
            for &n in &vehicles {
                for &f in &fps {
                    for &seed in &seeds {
                        cells.push(self.cell(kind, n, f, seed, &trace)?);
                    }
                }
            }
        }
        Ok(cells)
    }

    /// SHA-256 over every field that can change a result.
    pub fn config_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Semantic<'a> {
            config: &'a RunConfig,
            trace: Vec<FrameTraceEntry>,
        }
        let mut semantic = self.clone();
        semantic.output = None;
        semantic.parallelism = None;
        semantic.columns = None;
        semantic.traffic.trace_file = None;
        semantic.scenarios = sorted_unique(semantic.scenarios);
        semantic.vehicles = sorted_unique(semantic.vehicles);
        semantic.fps = sorted_unique(semantic.fps);
        semantic.seeds = sorted_unique(semantic.seeds);
        let payload = Semantic {
            trace: self.load_trace()?,
            config: &semantic,
        };
        let bytes = serde_json::to_vec(&payload).expect("configuration serializes");
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub timestamp_unix: u64,
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub records: Vec<MetricRecord>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, columns: Option<&[String]>, out: W) -> Result<()> {
        match columns {
            Some(cols) => write_csv_columns(&self.records, cols, out),
            None => write_csv_columns(&self.records, &CSV_HEADER, out),
        }
    }

    /// Writes the CSV to `path` and the provenance to `path` + `.meta.json`.
    pub fn write_files(&self, path: &Path, columns: Option<&[String]>) -> Result<()> {
        let file = File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(columns, &mut w)?;
        w.flush().map_err(|e| SimError::io(path, e))?;
        let meta = meta_path(path);
        let json = serde_json::to_string_pretty(&self.provenance).expect("provenance serializes");
        std::fs::write(&meta, json + "\n").map_err(|e| SimError::io(&meta, e))
    }
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn run_cell(spec: &CellSpec) -> Result<RunOutcome> {
    Ok(build_scenario(spec)?.run())
}

/// Runs every cell. Results come back in (scenario, n, fps, seed) order no
/// matter how the cells were scheduled. Writes the CSV when `cfg.output`
/// is set.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    let cells = cfg.cells()?;
    let provenance = Provenance {
        config_hash: cfg.config_hash()?,
        version: VERSION.to_string(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        cells: cells.len(),
    };
    let run_all = || -> Result<Vec<MetricRecord>> {
        cells
            .par_iter()
            .map(|c| run_cell(c).map(|o| o.record))
            .collect()
    };
    let mut records = match cfg.parallelism {
        Some(1) => cells
            .iter()
            .map(|c| run_cell(c).map(|o| o.record))
            .collect::<Result<Vec<_>>>()?,
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| SimError::config(e.to_string()))?
            .install(run_all)?,
        None => run_all()?,
    };
    records.sort_by_key(MetricRecord::run_id);
    let result = SweepResult {
        records,
        provenance,
    };
    if let Some(path) = &cfg.output {
        result.write_files(path, cfg.columns.as_deref())?;
    }
    Ok(result)
}

const ID_COLUMNS: [&str; 4] = ["scenario", "n", "fps", "seed"];

/// The canned sweep behind one of the published plots.
pub fn figure_recipe(name: &str) -> Result<RunConfig> {
    let metric: &[&str] = match name {
        "fig3a" => &["throughput_mbps"],
        "fig3b" => &["latency_ms"],
        "fig3c" => &["reliability_pct"],
        "fig4" => &["l1_ms", "l2_ms"],
        _ => return Err(SimError::UnknownFigure(name.to_string())),
    };
    let mut cfg = RunConfig::default();
    if name == "fig4" {
        cfg.scenarios = vec![ScenarioKind::Bfa];
        cfg.fps = vec![30];
    }
    cfg.columns = Some(
        ID_COLUMNS
            .iter()
            .chain(metric)
            .map(|c| c.to_string())
            .collect(),
    );
    Ok(cfg)
}

/// A cell counts as degraded when it loses more than 1% of its units or
/// its mean end-to-end latency reaches 100 ms.
pub fn is_degraded(reliability: f64, latency_total: Option<f64>) -> bool {
    reliability < 0.99 || latency_total.is_some_and(|l| l >= 0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub uplink_rate_bps: f64,
    pub downlink_rate_bps: f64,
    /// Seed-averaged (reliability, latency) of MFF@30 at N=10 and N=11,
    /// then BFF@30 at N=20 and N=21.
    pub probes: [(f64, Option<f64>); 4],
    pub feasible: bool,
}

/// Grid search for the (uplink, downlink) rate pair at which MFF at 30 FPS
/// first degrades at N=11 and BFF at 30 FPS first degrades at N=21.
/// `base` supplies everything except the two rates and the sweep axes.
pub fn calibrate(base: &RunConfig, uplink_grid: &[f64], downlink_grid: &[f64]) -> Result<Vec<CalibrationPoint>> {
    let probes = [
        (ScenarioKind::Mff, 10, false),
        (ScenarioKind::Mff, 11, true),
        (ScenarioKind::Bff, 20, false),
        (ScenarioKind::Bff, 21, true),
    ];
    let mut jobs = Vec::new();
    for &u in uplink_grid {
        for &d in downlink_grid {
            let mut cfg = base.clone();
            cfg.link.uplink_rate_bps = u;
            cfg.link.downlink_rate_bps = d;
            jobs.push(cfg);
        }
    }
    let trace = base.load_trace()?;
    jobs.par_iter()
        .map(|cfg| {
            let mut point = CalibrationPoint {
                uplink_rate_bps: cfg.link.uplink_rate_bps,
                downlink_rate_bps: cfg.link.downlink_rate_bps,
                probes: [(0.0, None); 4],
                feasible: true,
            };
            for (i, &(kind, n, should_degrade)) in probes.iter().enumerate() {
                let mut rel = 0.0;
                let mut lat = 0.0;
                let mut lat_count = 0;
                for &seed in &cfg.seeds {
                    let r = run_cell(&cfg.cell(kind, n, 30, seed, &trace)?)?.record;
                    rel += r.reliability;
                    if let Some(l) = r.latency_total {
                        lat += l;
                        lat_count += 1;
                    }
                }
                let rel = rel / cfg.seeds.len() as f64;
                let lat = (lat_count > 0).then(|| lat / f64::from(lat_count));
                point.probes[i] = (rel, lat);
                point.feasible &= is_degraded(rel, lat) == should_degrade;
            }
            Ok(point)
        })
        .collect()
}
