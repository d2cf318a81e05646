//! SNR sweeps: configuration, parallel execution, aggregation and output.
//!
//! A sweep is a grid of `(protocol, snr)` cells, each run for
//! `trials_per_point` independent trials. Cell `c` gets the seed
//! [`cell_seed`]`(master, protocol, snr)` and trial `t` draws from stream `t`
//! of that seed, so results do not depend on thread scheduling or on which
//! other cells are in the grid.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::RngStream;
use crate::engine::{run_simulation_with, DecisionCounts, EngineError, RunResult};
use crate::model::{ConfigError, Fallback, Protocol, SimConfig, UnknownProtocol};

/// Command-line interface. Every flag overrides the matching key of the
/// `--config` file.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "maxlink-sim", version, about = "BER sweeps for buffer-aided MIMO relay selection")]
pub struct CliArgs {
    /// TOML file with sweep settings.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Comma-separated protocols: switched-max-link, max-link, direct.
    #[arg(long, value_name = "NAME[,NAME...]")]
    pub protocol: Option<String>,
    /// Antennas per node (M).
    #[arg(long, value_name = "M")]
    pub antennas: Option<usize>,
    /// Number of relays (N).
    #[arg(long, value_name = "N")]
    pub relays: Option<usize>,
    /// Relay buffer size in packets.
    #[arg(long, value_name = "CAP")]
    pub buffer: Option<usize>,
    /// Packets per trial (multiple of M).
    #[arg(long, value_name = "K")]
    pub packets: Option<usize>,
    /// Bits per packet.
    #[arg(long = "packet-len", value_name = "L")]
    pub packet_len: Option<usize>,
    /// SNR grid in dB, "start:step:stop" or "a,b,c".
    #[arg(long, value_name = "GRID", allow_hyphen_values = true)]
    pub snr: Option<String>,
    /// Master seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Independent trials per cell.
    #[arg(long, value_name = "T")]
    pub trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "J")]
    pub jobs: Option<usize>,
    /// Output format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// What max-link does when no relay link is usable: direct or idle.
    #[arg(long, value_name = "POLICY")]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// SNR grid as written in a config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SnrSetting {
    List(Vec<f64>),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(untagged)]
enum ProtocolSetting {
    #[default]
    Unset,
    One(String),
    Many(Vec<String>),
}

/// Keys accepted in the config file. All optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default, alias = "protocols")]
    protocol: ProtocolSetting,
    antennas: Option<usize>,
    relays: Option<usize>,
    buffer: Option<usize>,
    packets: Option<usize>,
    packet_len: Option<usize>,
    noise_power: Option<f64>,
    relay_energy_ratio: Option<f64>,
    snr: Option<SnrSetting>,
    seed: Option<u64>,
    trials: Option<usize>,
    jobs: Option<usize>,
    format: Option<Format>,
    out: Option<PathBuf>,
    fallback: Option<String>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: io::Error },
    #[error("config {path}: {message}")]
    ParseConfig { path: PathBuf, message: String },
    #[error("--{flag}: {message}")]
    BadFlag { flag: &'static str, message: String },
    #[error(transparent)]
    UnknownProtocol(#[from] UnknownProtocol),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    BadSpec(String),
    #[error("cell {protocol} @ {snr_db} dB, trial {trial}: {source}")]
    Cell { protocol: Protocol, snr_db: f64, trial: u64, source: EngineError },
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Template for every run. Energies are overwritten per SNR point; the
    /// `relay_energy / symbol_energy` ratio is kept.
    pub base: SimConfig,
    pub snr_points: Vec<f64>,
    pub protocols: Vec<Protocol>,
    pub trials_per_point: usize,
}

/// Where and how to write results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputOptions {
    pub format: Format,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl SweepSpec {
    /// Checks list invariants and that every cell's config validates.
    pub fn validate(self) -> Result<Self, SweepError> {
        if self.snr_points.is_empty() {
            return Err(SweepError::BadSpec("SNR grid is empty".into()));
        }
        if self.protocols.is_empty() {
            return Err(SweepError::BadSpec("no protocol selected".into()));
        }
        if self.trials_per_point == 0 {
            return Err(SweepError::BadSpec("trials must be positive".into()));
        }
        if self.snr_points.iter().any(|s| !s.is_finite()) {
            return Err(SweepError::BadSpec("SNR values must be finite".into()));
        }
        let distinct_snr: HashSet<u64> = self.snr_points.iter().map(|s| s.to_bits()).collect();
        let distinct_proto: HashSet<Protocol> = self.protocols.iter().copied().collect();
        if distinct_snr.len() != self.snr_points.len() || distinct_proto.len() != self.protocols.len() {
            return Err(SweepError::BadSpec("duplicate (protocol, snr) cell".into()));
        }
        for &snr in &self.snr_points {
            self.base.clone().with_snr_db(snr).validate()?;
        }
        Ok(self)
    }

    pub fn cell_config(&self, protocol: Protocol, snr_db: f64) -> SimConfig {
        SimConfig { protocol, seed: cell_seed(self.base.seed, protocol, snr_db), ..self.base.clone() }.with_snr_db(snr_db)
    }
}

/// Parses `"start:step:stop"` (inclusive) or a comma-separated list.
pub fn parse_snr_grid(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", s.trim()));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, step, stop] = parts[..] else {
            return Err(format!("expected start:step:stop, got `{text}`"));
        };
        let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(format!("range `{text}` needs step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect())
    } else {
        text.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
    }
}

fn parse_protocols<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<Protocol>, UnknownProtocol> {
    names.into_iter().filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Builds the sweep from the optional config file and command-line flags.
/// Unset values fall back to N=10, buffer 20, L=100, 10000 packets, N0=1,
/// SNR 0:2:16 dB, M=2, all three protocols and one trial.
pub fn parse_config(args: &CliArgs) -> Result<(SweepSpec, OutputOptions), SweepError> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| SweepError::ReadConfig { path: path.clone(), source })?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| SweepError::ParseConfig { path: path.clone(), message: e.to_string() })?
        }
        None => FileConfig::default(),
    };
    let file_err = |message: String| SweepError::ParseConfig {
        path: args.config.clone().unwrap_or_default(),
        message,
    };

    let protocols = match (&args.protocol, &file.protocol) {
        (Some(flag), _) => parse_protocols(flag.split(','))?,
        (None, ProtocolSetting::One(s)) => parse_protocols(s.split(','))?,
        (None, ProtocolSetting::Many(list)) => parse_protocols(list.iter().map(String::as_str))?,
        (None, ProtocolSetting::Unset) => Protocol::ALL.to_vec(),
    };

    let snr_points = match (&args.snr, &file.snr) {
        (Some(flag), _) => parse_snr_grid(flag).map_err(|message| SweepError::BadFlag { flag: "snr", message })?,
        (None, Some(SnrSetting::Text(s))) => parse_snr_grid(s).map_err(|m| file_err(format!("snr: {m}")))?,
        (None, Some(SnrSetting::List(v))) => v.clone(),
        (None, None) => SimConfig::default().snr_grid,
    };

    let fallback = match (&args.fallback, &file.fallback) {
        (Some(flag), _) => flag.parse().map_err(|message| SweepError::BadFlag { flag: "fallback", message })?,
        (None, Some(s)) => s.parse().map_err(|m| file_err(format!("fallback: {m}")))?,
        (None, None) => Fallback::default(),
    };

    let defaults = SimConfig::default();
    let noise_power = file.noise_power.unwrap_or(defaults.noise_power);
    let ratio = file.relay_energy_ratio.unwrap_or(1.0);
    let base = SimConfig {
        num_antennas: args.antennas.or(file.antennas).unwrap_or(defaults.num_antennas),
        num_relays: args.relays.or(file.relays).unwrap_or(defaults.num_relays),
        buffer_capacity: args.buffer.or(file.buffer).unwrap_or(defaults.buffer_capacity),
        packet_length: args.packet_len.or(file.packet_len).unwrap_or(defaults.packet_length),
        num_packets: args.packets.or(file.packets).unwrap_or(defaults.num_packets),
        symbol_energy: noise_power,
        relay_energy: noise_power * ratio,
        noise_power,
        snr_grid: snr_points.clone(),
        protocol: protocols.first().copied().unwrap_or(Protocol::SwitchedMaxLink),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        fallback,
    };
    let spec = SweepSpec {
        base,
        snr_points,
        protocols,
        trials_per_point: args.trials.or(file.trials).unwrap_or(1),
    }
    .validate()?;

    let output = OutputOptions {
        format: args.format.or(file.format).unwrap_or_default(),
        out: args.out.clone().or(file.out),
        jobs: args.jobs.or(file.jobs),
    };
    if output.jobs == Some(0) {
        return Err(SweepError::BadFlag { flag: "jobs", message: "must be positive".into() });
    }
    Ok((spec, output))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-cell seed: SplitMix64 chained over the master seed, a protocol tag
/// (1, 2, 3 for switched-max-link, max-link, direct) and the IEEE-754 bits
/// of the SNR value.
pub fn cell_seed(master: u64, protocol: Protocol, snr_db: f64) -> u64 {
    let tag = match protocol {
        Protocol::SwitchedMaxLink => 1,
        Protocol::MaxLink => 2,
        Protocol::Direct => 3,
    };
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ snr_db.to_bits())
}

/// One line of output: all trials of a `(protocol, snr)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub protocol: Protocol,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "N")]
    pub relays: usize,
    pub buffer_capacity: usize,
    pub snr_db: f64,
    pub ber: f64,
    pub bit_errors: u64,
    pub bits_simulated: u64,
    pub slot_count: u64,
    pub mean_delay_slots: f64,
    /// Standard error of `ber`: spread of the per-trial BERs when there are
    /// several trials, the binomial estimate otherwise.
    pub std_error: f64,
    pub trials: usize,
    pub decision_counts: DecisionCounts,
    pub seed: u64,
}

/// Trial results of one cell, keyed by trial index so merging order does not
/// matter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellAggregate {
    trials: BTreeMap<u64, RunResult>,
}

impl CellAggregate {
    pub fn add(&mut self, trial: u64, result: RunResult) {
        self.trials.insert(trial, result);
    }

    pub fn merge(mut self, other: CellAggregate) -> CellAggregate {
        self.trials.extend(other.trials);
        self
    }

    pub fn finish(&self, cfg: &SimConfig, snr_db: f64) -> ResultRow {
        let mut decisions = DecisionCounts::default();
        let (mut errors, mut bits, mut slots, mut delay) = (0u64, 0u64, 0u64, 0u64);
        for r in self.trials.values() {
            errors += r.bit_errors;
            bits += r.bits;
            slots += r.slot_count;
            delay += r.delay_sum;
            decisions.merge(&r.decisions);
        }
        let ber = if bits == 0 { 0.0 } else { errors as f64 / bits as f64 };
        let t = self.trials.len();
        let std_error = if t >= 2 {
            let bers: Vec<f64> = self.trials.values().map(|r| r.ber).collect();
            let mean = bers.iter().sum::<f64>() / t as f64;
            let var = bers.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
            (var / t as f64).sqrt()
        } else if bits > 0 {
            (ber * (1.0 - ber) / bits as f64).sqrt()
        } else {
            0.0
        };
        let packets = (t * cfg.num_packets) as f64;
        ResultRow {
            protocol: cfg.protocol,
            antennas: cfg.num_antennas,
            relays: cfg.num_relays,
            buffer_capacity: cfg.buffer_capacity,
            snr_db,
            ber,
            bit_errors: errors,
            bits_simulated: bits,
            slot_count: slots,
            mean_delay_slots: if packets > 0.0 { delay as f64 / packets } else { 0.0 },
            std_error,
            trials: t,
            decision_counts: decisions,
            seed: cfg.seed,
        }
    }
}

/// Runs every trial of every cell, up to `jobs` at a time, and returns one
/// row per cell sorted by protocol name then SNR.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<Vec<ResultRow>, SweepError> {
    let cells: Vec<(Protocol, f64)> = spec
        .protocols
        .iter()
        .flat_map(|&p| spec.snr_points.iter().map(move |&s| (p, s)))
        .collect();
    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials_per_point as u64).map(move |t| (c, t)))
        .collect();

    let execute = || {
        tasks
            .par_iter()
            .map(|&(c, trial)| {
                let (protocol, snr_db) = cells[c];
                let cfg = spec.cell_config(protocol, snr_db);
                run_simulation_with(&cfg, RngStream::new(cfg.seed, trial))
                    .map(|r| (c, trial, r))
                    .map_err(|source| SweepError::Cell { protocol, snr_db, trial, source })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let results = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| SweepError::ThreadPool(e.to_string()))?
            .install(execute)?,
        None => execute()?,
    };

    let mut aggregates = vec![CellAggregate::default(); cells.len()];
    for (c, trial, result) in results {
        aggregates[c].add(trial, result);
    }
    let mut rows: Vec<ResultRow> = cells
        .iter()
        .zip(&aggregates)
        .map(|(&(p, s), agg)| agg.finish(&spec.cell_config(p, s), s))
        .collect();
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.protocol.name().cmp(b.protocol.name()).then(a.snr_db.total_cmp(&b.snr_db)));
}

pub const CSV_HEADER: &str = "protocol,M,N,buffer,snr_db,ber,bits,slots,mean_delay,seed";

/// Fixed-point with at least six significant digits; zero prints as
/// `0.000000`.
pub fn format_ber(ber: f64) -> String {
    if ber == 0.0 || !ber.is_finite() {
        return format!("{ber:.6}");
    }
    let decimals = (5 - ber.abs().log10().floor() as i32).max(6) as usize;
    format!("{ber:.decimals$}")
}

pub fn write_csv<W: Write>(rows: &[ResultRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{}",
            r.protocol,
            r.antennas,
            r.relays,
            r.buffer_capacity,
            r.snr_db,
            format_ber(r.ber),
            r.bits_simulated,
            r.slot_count,
            r.mean_delay_slots,
            r.seed
        )?;
    }
    Ok(())
}

/// JSON document: the sweep configuration followed by the result rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepSpec,
    pub rows: Vec<ResultRow>,
}

pub fn write_json<W: Write>(spec: &SweepSpec, rows: &[ResultRow], out: W) -> Result<(), SweepError> {
    let report = SweepReport { config: spec.clone(), rows: rows.to_vec() };
    serde_json::to_writer_pretty(out, &report)?;
    Ok(())
}

pub fn read_json<R: io::Read>(input: R) -> Result<SweepReport, SweepError> {
    Ok(serde_json::from_reader(input)?)
}

/// Writes rows in `format` to `path`, or to stdout when `path` is `None`.
pub fn emit(spec: &SweepSpec, rows: &[ResultRow], format: Format, path: Option<&Path>) -> Result<(), SweepError> {
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(rows, &mut buf)?,
        Format::Json => {
            write_json(spec, rows, &mut buf)?;
            buf.push(b'\n');
        }
    }
    match path {
        Some(p) => fs::write(p, buf)?,
        None => io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}
