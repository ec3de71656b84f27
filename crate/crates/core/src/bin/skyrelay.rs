// `!(x > 0.0)` is how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skyrelay::runner::{calibrate, figure_recipe, parse_number_set, parse_scenarios, run_sweep, RunConfig};
use skyrelay::{Result, SimError};

#[derive(Parser)]
#[command(name = "skyrelay", version, about = "UAV-to-vehicle relay simulator: runs sweeps and writes CSV")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search the uplink and downlink rates against the breakpoints.
    Calibrate(CalibrateArgs),
    /// Print the effective configuration as TOML and exit.
    ShowConfig,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from a canned figure sweep: fig3a, fig3b, fig3c or fig4.
    #[arg(long, global = true)]
    figure: Option<String>,
    /// Scenario list, e.g. `mff,bff` or `all`.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Vehicle counts, e.g. `4..21` (inclusive) or `4,10,21`.
    #[arg(long, global = true)]
    vehicles: Option<String>,
    /// Frame rates, e.g. `15,30`.
    #[arg(long, global = true)]
    fps: Option<String>,
    /// Seeds, e.g. `1..5`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Simulated seconds per cell.
    #[arg(long, global = true)]
    sim_time: Option<f64>,
    /// Uplink rate in Mbit/s.
    #[arg(long, global = true)]
    uplink_rate: Option<f64>,
    /// Aggregate downlink rate in Mbit/s.
    #[arg(long, global = true)]
    downlink_rate: Option<f64>,
    /// Per-bearer buffer capacity in bytes, both directions.
    #[arg(long, global = true)]
    buffer_bytes: Option<u64>,
    /// Per-packet loss probability, both directions.
    #[arg(long, global = true)]
    loss_prob: Option<f64>,
    /// `vehicle_count,frame_size_bytes` CSV replacing the built-in trace.
    #[arg(long, global = true)]
    trace_file: Option<PathBuf>,
    /// CSV output path; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Uplink grid in Mbit/s as `start:stop:step`.
    #[arg(long, default_value = "560:760:20")]
    ul_grid: String,
    /// Downlink grid in Mbit/s as `start:stop:step`.
    #[arg(long, default_value = "780:940:20")]
    dl_grid: String,
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || SimError::Config(format!("grid `{s}` is not start:stop:step"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| (start + step * i as f64) * 1e6).collect())
}

fn build_config(a: &SweepArgs) -> Result<RunConfig> {
    let mut cfg = match (&a.figure, &a.config) {
        (Some(name), _) => {
            let mut cfg = figure_recipe(name)?;
            if let Some(path) = &a.config {
                let file = RunConfig::from_toml_file(path)?;
                cfg = RunConfig {
                    scenarios: cfg.scenarios,
                    vehicles: cfg.vehicles,
                    fps: cfg.fps,
                    columns: cfg.columns,
                    ..file
                };
            }
            cfg
        }
        (None, Some(path)) => RunConfig::from_toml_file(path)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = &a.scenario {
        cfg.scenarios = parse_scenarios(s)?;
    }
    if let Some(s) = &a.vehicles {
        cfg.vehicles = parse_number_set(s)?
            .into_iter()
            .map(|n| u32::try_from(n).map_err(|_| SimError::InvalidCount(n as usize)))
            .collect::<Result<_>>()?;
    }
    if let Some(s) = &a.fps {
        cfg.fps = parse_number_set(s)?
            .into_iter()
            .map(|f| u32::try_from(f).map_err(|_| SimError::Config(format!("frame rate {f} too large"))))
            .collect::<Result<_>>()?;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_number_set(s)?;
    }
    if let Some(t) = a.sim_time {
        cfg.sim_time_secs = t;
    }
    if let Some(r) = a.uplink_rate {
        cfg.link.uplink_rate_bps = r * 1e6;
    }
    if let Some(r) = a.downlink_rate {
        cfg.link.downlink_rate_bps = r * 1e6;
    }
    if let Some(b) = a.buffer_bytes {
        cfg.buffers.uplink_bytes = b;
        cfg.buffers.downlink_bytes = b;
    }
    if let Some(p) = a.loss_prob {
        cfg.link.loss_prob_ul = p;
        cfg.link.loss_prob_dl = p;
    }
    if let Some(path) = &a.trace_file {
        cfg.traffic.trace_file = Some(path.clone());
    }
    if let Some(path) = &a.out {
        cfg.output = Some(path.clone());
    }
    if let Some(j) = a.jobs {
        cfg.parallelism = Some(j);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.sweep)?;
    match cli.command {
        None => {
            let result = run_sweep(&cfg)?;
            let p = &result.provenance;
            match &cfg.output {
                Some(path) => eprintln!(
                    "wrote {} records to {} (config {})",
                    result.records.len(),
                    path.display(),
                    &p.config_hash[..12]
                ),
                None => {
                    let stdout = std::io::stdout();
                    result.write_csv(cfg.columns.as_deref(), stdout.lock())?;
                    eprintln!("config {} version {} at {}", p.config_hash, p.version, p.timestamp_unix);
                }
            }
        }
        Some(Command::ShowConfig) => print!("{}", cfg.to_toml_string()),
        Some(Command::Calibrate(args)) => {
            let ul = parse_grid(&args.ul_grid)?;
            let dl = parse_grid(&args.dl_grid)?;
            let points = calibrate(&cfg, &ul, &dl)?;
            let mut out = std::io::stdout().lock();
            let io = |e| SimError::Io {
                path: "<stdout>".into(),
                source: e,
            };
            writeln!(out, "ul_mbps,dl_mbps,mff10_rel,mff11_rel,mff11_ms,bff20_rel,bff20_ms,bff21_rel,bff21_ms,feasible")
                .map_err(io)?;
            let ms = |l: Option<f64>| l.map(|v| format!("{:.3}", v * 1e3)).unwrap_or_default();
            for p in &points {
                writeln!(
                    out,
                    "{:.0},{:.0},{:.4},{:.4},{},{:.4},{},{:.4},{},{}",
                    p.uplink_rate_bps / 1e6,
                    p.downlink_rate_bps / 1e6,
                    p.probes[0].0,
                    p.probes[1].0,
                    ms(p.probes[1].1),
                    p.probes[2].0,
                    ms(p.probes[2].1),
                    p.probes[3].0,
                    ms(p.probes[3].1),
                    p.feasible
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skyrelay: {e}");
            ExitCode::FAILURE
        }
    }
}
