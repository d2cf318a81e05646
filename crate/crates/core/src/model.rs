//! Domain types shared by the channel, detection, selection and engine
//! modules: the run configuration, channel matrices, packets and relay
//! buffers.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest antenna count accepted. Detection and metric computation
/// enumerate all `2^M` BPSK vectors, so this bounds the work per symbol.
pub const MAX_ANTENNAS: usize = 10;

/// Relay selection protocol driven by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Max-Link with a per-slot switch to direct transmission when the
    /// source-destination metric beats the best relay link.
    SwitchedMaxLink,
    /// Plain Max-Link: always the best available SR or RD link.
    MaxLink,
    /// Conventional MIMO transmission from source to destination only.
    Direct,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::SwitchedMaxLink, Protocol::MaxLink, Protocol::Direct];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::SwitchedMaxLink => "switched-max-link",
            Protocol::MaxLink => "max-link",
            Protocol::Direct => "direct",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown protocol `{0}` (valid: switched-max-link, max-link, direct)")]
pub struct UnknownProtocol(pub String);

impl FromStr for Protocol {
    type Err = UnknownProtocol;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| UnknownProtocol(s.to_string()))
    }
}

/// What the engine does in a slot where the source still has packets but no
/// relay link passes the buffer checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Send the source packets straight to the destination.
    #[default]
    Direct,
    /// Leave the slot unused.
    Idle,
}

impl FromStr for Fallback {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "direct" => Ok(Fallback::Direct),
            "idle" => Ok(Fallback::Idle),
            other => Err(format!("unknown fallback `{other}` (valid: direct, idle)")),
        }
    }
}

/// Parameters of a single simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Antennas per node (M).
    pub num_antennas: usize,
    /// Number of relays (N).
    pub num_relays: usize,
    /// Relay buffer size in packets.
    pub buffer_capacity: usize,
    /// Bits (BPSK symbols) per packet (L).
    pub packet_length: usize,
    pub num_packets: usize,
    /// Total source energy per symbol period (Es).
    pub symbol_energy: f64,
    /// Total relay energy per symbol period (Erj).
    pub relay_energy: f64,
    /// Complex noise power per receive sample (N0).
    pub noise_power: f64,
    pub snr_grid: Vec<f64>,
    pub protocol: Protocol,
    pub seed: u64,
    #[serde(default)]
    pub fallback: Fallback,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_antennas: 2,
            num_relays: 10,
            buffer_capacity: 20,
            packet_length: 100,
            num_packets: 10_000,
            symbol_energy: 1.0,
            relay_energy: 1.0,
            noise_power: 1.0,
            snr_grid: (0..=8).map(|i| 2.0 * f64::from(i)).collect(),
            protocol: Protocol::SwitchedMaxLink,
            seed: 0,
            fallback: Fallback::Direct,
        }
    }
}

impl SimConfig {
    /// Sets `Es = N0 * 10^(snr/10)` and keeps the current `Erj / Es` ratio.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        let ratio = self.relay_energy / self.symbol_energy;
        self.symbol_energy = self.noise_power * 10f64.powf(snr_db / 10.0);
        self.relay_energy = self.symbol_energy * ratio;
        self
    }

    /// Checks every invariant and hands the config back untouched.
    pub fn validate(self) -> Result<Self, ConfigError> {
        validate_config(self)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("{antennas} antennas exceeds the exhaustive-search limit of {MAX_ANTENNAS}")]
    TooManyAntennas { antennas: usize },
    #[error("num_packets ({packets}) must be a multiple of the antenna count ({antennas})")]
    PacketsNotMultiple { packets: usize, antennas: usize },
    #[error("buffer capacity ({capacity}) is smaller than the antenna count ({antennas})")]
    CapacityTooSmall { capacity: usize, antennas: usize },
    #[error("{name} must be a positive finite number, got {value}")]
    NonPositiveEnergy { name: &'static str, value: f64 },
}

pub fn validate_config(cfg: SimConfig) -> Result<SimConfig, ConfigError> {
    for (name, value) in [
        ("num_antennas", cfg.num_antennas),
        ("num_relays", cfg.num_relays),
        ("buffer_capacity", cfg.buffer_capacity),
        ("packet_length", cfg.packet_length),
        ("num_packets", cfg.num_packets),
    ] {
        if value == 0 {
            return Err(ConfigError::Zero(name));
        }
    }
    if cfg.num_antennas > MAX_ANTENNAS {
        return Err(ConfigError::TooManyAntennas { antennas: cfg.num_antennas });
    }
    if !cfg.num_packets.is_multiple_of(cfg.num_antennas) {
        return Err(ConfigError::PacketsNotMultiple {
            packets: cfg.num_packets,
            antennas: cfg.num_antennas,
        });
    }
    if cfg.buffer_capacity < cfg.num_antennas {
        return Err(ConfigError::CapacityTooSmall {
            capacity: cfg.buffer_capacity,
            antennas: cfg.num_antennas,
        });
    }
    for (name, value) in [
        ("symbol_energy", cfg.symbol_energy),
        ("relay_energy", cfg.relay_energy),
        ("noise_power", cfg.noise_power),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ConfigError::NonPositiveEnergy { name, value });
        }
    }
    Ok(cfg)
}

/// Square complex channel matrix, row-major. Row `r` holds the gains from
/// every transmit antenna to receive antenna `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl ChannelMatrix {
    /// Builds a `dim x dim` matrix from row-major entries.
    ///
    /// # Panics
    ///
    /// Panics if `entries.len() != dim * dim`.
    pub fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Self {
        assert_eq!(entries.len(), dim * dim, "channel matrix must be square");
        ChannelMatrix { dim, entries }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let entries = rows
            .iter()
            .flat_map(|row| {
                assert_eq!(row.len(), dim, "channel matrix must be square");
                row.iter().map(|&v| Complex64::new(v, 0.0))
            })
            .collect();
        ChannelMatrix { dim, entries }
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        ChannelMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    /// Computes `H * x` for a real-valued vector `x`.
    pub fn mul_real(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.dim);
        self.entries
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(h, &v)| h * v).sum())
            .collect()
    }

    /// Left-multiplies by `other`, returning `other * self`.
    pub fn left_mul(&self, other: &ChannelMatrix) -> ChannelMatrix {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                entries[r * n + c] = (0..n).map(|k| other.get(r, k) * self.get(k, c)).sum();
            }
        }
        ChannelMatrix { dim: n, entries }
    }

    /// Computes `self * v` for a complex vector.
    pub fn mul_complex(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        self.entries
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(h, x)| h * x).sum())
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> ChannelMatrix {
        ChannelMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|h| h * factor).collect(),
        }
    }
}

/// All link matrices in effect during one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_sd: ChannelMatrix,
    pub h_sr: Vec<ChannelMatrix>,
    pub h_rd: Vec<ChannelMatrix>,
    pub slot_index: u64,
}

/// A block of `L` source bits. `seq_id` plays the role of the order field in
/// the packet preamble and is never counted in the BER.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub seq_id: u64,
    pub bits: Vec<u8>,
}

impl Packet {
    pub fn new(seq_id: u64, bits: Vec<u8>) -> Self {
        Packet { seq_id, bits }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufferError {
    #[error("buffer overflow: {len} stored + {incoming} incoming exceeds capacity {capacity}")]
    Overflow { len: usize, incoming: usize, capacity: usize },
    #[error("buffer underflow: requested {requested}, holding {len}")]
    Underflow { requested: usize, len: usize },
}

/// Fixed-capacity FIFO of decoded packets held by one relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayBuffer {
    queue: VecDeque<Packet>,
    capacity: usize,
}

impl RelayBuffer {
    pub fn new(capacity: usize) -> Self {
        RelayBuffer { queue: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn free(&self) -> usize {
        self.capacity - self.queue.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }

    /// Appends `pkts` in order. Nothing is stored if they do not all fit.
    pub fn push(&mut self, pkts: Vec<Packet>) -> Result<(), BufferError> {
        if self.queue.len() + pkts.len() > self.capacity {
            return Err(BufferError::Overflow {
                len: self.queue.len(),
                incoming: pkts.len(),
                capacity: self.capacity,
            });
        }
        self.queue.extend(pkts);
        Ok(())
    }

    /// Removes and returns the `count` oldest packets.
    pub fn pop(&mut self, count: usize) -> Result<Vec<Packet>, BufferError> {
        if count > self.queue.len() {
            return Err(BufferError::Underflow { requested: count, len: self.queue.len() });
        }
        Ok(self.queue.drain(..count).collect())
    }
}

/// Slot mode chosen by the selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotMode {
    Direct,
    /// Source transmits to relay `k` (0-based), which stores the packets.
    RelayRx(usize),
    /// Relay `j` (0-based) forwards its oldest packets to the destination.
    RelayTx(usize),
    /// Nothing transmitted; only reachable with [`Fallback::Idle`].
    Idle,
}

/// Outcome of selection together with the metrics behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    pub mode: SlotMode,
    pub d_min_sd: f64,
    /// Best relay metric; zero when no relay link was available.
    pub d_max_min: f64,
    /// SR metrics for relays `0..N` followed by RD metrics for relays `0..N`.
    pub per_link_metrics: Vec<f64>,
}
