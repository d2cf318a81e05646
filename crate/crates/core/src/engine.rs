//! The slot-by-slot protocol loop.
//!
//! Every slot draws a fresh channel set, scores all links, picks one mode and
//! moves exactly `M` packets over exactly one link set: source to
//! destination, source to one relay, or one relay to the destination. Antenna
//! `p` carries packet `p` for the whole slot, and each of the `L` symbol
//! periods is detected independently under the same channels.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{add_noise, draw_channel_set, NoiseModel, RngStream, SimRng};
use crate::detection::{bits_to_index, index_to_bits, CandidateImages, DetectionError, ScaledLink};
use crate::model::{
    BufferError, ChannelMatrix, ConfigError, Packet, RelayBuffer, SimConfig, SlotDecision, SlotMode,
};
use crate::selection::{choose_mode, compute_link_metrics, select_max_link, AvailabilityMask, SelectionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error("simulation finished: no packets left to move")]
    Finished,
    #[error("expected {expected} packets of {len} bits, got {got_packets} packets")]
    BadPacketBlock { expected: usize, len: usize, got_packets: usize },
    #[error("run stalled after {slots} slots with {undelivered} packets undelivered")]
    Stalled { slots: u64, undelivered: usize },
}

impl From<SelectionError> for EngineError {
    fn from(err: SelectionError) -> Self {
        match err {
            SelectionError::NoAction => EngineError::Finished,
        }
    }
}

/// Sends `M` packets over one MIMO link and ML-detects them at the receiver.
fn transmit_block<R: Rng + ?Sized>(
    pkts: &[Packet],
    link: &ScaledLink,
    noise: &NoiseModel,
    len: usize,
    rng: &mut R,
) -> Result<Vec<Packet>, EngineError> {
    let m = link.dim();
    if pkts.len() != m || pkts.iter().any(|p| p.bits.len() != len) {
        return Err(EngineError::BadPacketBlock { expected: m, len, got_packets: pkts.len() });
    }
    let images = CandidateImages::new(link)?;
    let mut decoded: Vec<Vec<u8>> = vec![Vec::with_capacity(len); m];
    for t in 0..len {
        let sent = bits_to_index(pkts.iter().map(|p| p.bits[t]));
        let y = add_noise(&images.points()[sent], noise, rng);
        let detected = images.nearest(&y)?;
        for (out, bit) in decoded.iter_mut().zip(index_to_bits(detected, m)) {
            out.push(bit);
        }
    }
    Ok(pkts.iter().zip(decoded).map(|(p, bits)| Packet::new(p.seq_id, bits)).collect())
}

fn amplitude(energy: f64, m: usize) -> f64 {
    (energy / m as f64).sqrt()
}

/// Source to destination at `sqrt(2Es/M)` per antenna.
pub fn transmit_direct<R: Rng + ?Sized>(
    pkts: &[Packet],
    h_sd: &ChannelMatrix,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Packet>, EngineError> {
    let link = ScaledLink::new(h_sd.clone(), amplitude(2.0 * cfg.symbol_energy, cfg.num_antennas))?;
    transmit_block(pkts, &link, &NoiseModel::new(cfg.noise_power), cfg.packet_length, rng)
}

/// Source to relay at `sqrt(Es/M)` per antenna. Returns what the relay
/// decoded, errors included.
pub fn transmit_source_to_relay<R: Rng + ?Sized>(
    pkts: &[Packet],
    h_sr: &ChannelMatrix,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Packet>, EngineError> {
    let link = ScaledLink::new(h_sr.clone(), amplitude(cfg.symbol_energy, cfg.num_antennas))?;
    transmit_block(pkts, &link, &NoiseModel::new(cfg.noise_power), cfg.packet_length, rng)
}

/// Relay to destination at `sqrt(Erj/M)` per antenna.
pub fn transmit_relay_to_destination<R: Rng + ?Sized>(
    pkts: &[Packet],
    h_rd: &ChannelMatrix,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<Packet>, EngineError> {
    let link = ScaledLink::new(h_rd.clone(), amplitude(cfg.relay_energy, cfg.num_antennas))?;
    transmit_block(pkts, &link, &NoiseModel::new(cfg.noise_power), cfg.packet_length, rng)
}

/// Everything that changes while a run progresses.
#[derive(Debug, Clone)]
pub struct NetworkState {
    antennas: usize,
    originals: Vec<Vec<u8>>,
    source_queue: VecDeque<Packet>,
    buffers: Vec<RelayBuffer>,
    delivered: BTreeMap<u64, Vec<u8>>,
    sent_slot: Vec<Option<u64>>,
    delay_sum: u64,
    bit_errors: u64,
    slot_count: u64,
    log: Vec<SlotDecision>,
}

/// What one slot did.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub decision: SlotDecision,
    /// Empty only for idle slots.
    pub moved_seq_ids: Vec<u64>,
    /// Errors in packets delivered this slot.
    pub bit_errors_added: u64,
}

impl NetworkState {
    /// Fresh network with `num_packets` random source packets.
    pub fn new<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Self {
        let originals: Vec<Vec<u8>> = (0..cfg.num_packets)
            .map(|_| (0..cfg.packet_length).map(|_| rng.random_range(0..=1u8)).collect())
            .collect();
        Self::with_packets(cfg, originals)
    }

    /// Fresh network sending the given payloads; packet `i` gets `seq_id = i`.
    pub fn with_packets(cfg: &SimConfig, originals: Vec<Vec<u8>>) -> Self {
        let source_queue = originals
            .iter()
            .enumerate()
            .map(|(i, bits)| Packet::new(i as u64, bits.clone()))
            .collect();
        NetworkState {
            antennas: cfg.num_antennas,
            sent_slot: vec![None; originals.len()],
            originals,
            source_queue,
            buffers: (0..cfg.num_relays).map(|_| RelayBuffer::new(cfg.buffer_capacity)).collect(),
            delivered: BTreeMap::new(),
            delay_sum: 0,
            bit_errors: 0,
            slot_count: 0,
            log: Vec::new(),
        }
    }

    pub fn source_remaining(&self) -> usize {
        self.source_queue.len()
    }

    pub fn buffers(&self) -> &[RelayBuffer] {
        &self.buffers
    }

    pub fn delivered(&self) -> &BTreeMap<u64, Vec<u8>> {
        &self.delivered
    }

    pub fn originals(&self) -> &[Vec<u8>] {
        &self.originals
    }

    pub fn slot_count(&self) -> u64 {
        self.slot_count
    }

    pub fn bit_errors(&self) -> u64 {
        self.bit_errors
    }

    pub fn decision_log(&self) -> &[SlotDecision] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.delivered.len() == self.originals.len()
    }

    /// Source queue, relay buffers and delivered set partition all packets.
    pub fn is_conserved(&self) -> bool {
        let buffered: usize = self.buffers.iter().map(RelayBuffer::len).sum();
        self.source_queue.len() + buffered + self.delivered.len() == self.originals.len()
    }

    fn take_from_source(&mut self) -> Vec<Packet> {
        let pkts: Vec<Packet> = self.source_queue.drain(..self.antennas).collect();
        for p in &pkts {
            self.sent_slot[p.seq_id as usize] = Some(self.slot_count);
        }
        pkts
    }

    fn deliver(&mut self, pkts: Vec<Packet>) -> u64 {
        let mut errors = 0;
        for p in pkts {
            let id = p.seq_id as usize;
            let wrong = self.originals[id].iter().zip(&p.bits).filter(|(a, b)| a != b).count() as u64;
            errors += wrong;
            let sent = self.sent_slot[id].expect("delivered packet was never sent");
            self.delay_sum += self.slot_count - sent;
            self.delivered.insert(p.seq_id, p.bits);
        }
        self.bit_errors += errors;
        errors
    }

    /// Runs one slot. Returns [`EngineError::Finished`] once nothing is left
    /// to move.
    pub fn run_slot(&mut self, cfg: &SimConfig, rng: &mut SimRng) -> Result<SlotOutcome, EngineError> {
        let m = cfg.num_antennas;
        let channels = draw_channel_set(rng, m, cfg.num_relays, self.slot_count);
        let metrics = compute_link_metrics(&channels, cfg)?;
        let mask = AvailabilityMask::from_buffers(&self.buffers, m, self.source_queue.len());
        let choice = select_max_link(&metrics, &mask);
        let decision = choose_mode(cfg.protocol, cfg.fallback, &metrics, choice, mask.source_has_data)?;

        let (moved_seq_ids, bit_errors_added) = match decision.mode {
            SlotMode::Direct => {
                let pkts = self.take_from_source();
                let decoded = transmit_direct(&pkts, &channels.h_sd, cfg, rng)?;
                let ids = decoded.iter().map(|p| p.seq_id).collect();
                (ids, self.deliver(decoded))
            }
            SlotMode::RelayRx(k) => {
                let pkts = self.take_from_source();
                let decoded = transmit_source_to_relay(&pkts, &channels.h_sr[k], cfg, rng)?;
                let ids = decoded.iter().map(|p| p.seq_id).collect();
                self.buffers[k].push(decoded)?;
                (ids, 0)
            }
            SlotMode::RelayTx(j) => {
                let pkts = self.buffers[j].pop(m)?;
                let decoded = transmit_relay_to_destination(&pkts, &channels.h_rd[j], cfg, rng)?;
                let ids = decoded.iter().map(|p| p.seq_id).collect();
                (ids, self.deliver(decoded))
            }
            SlotMode::Idle => (Vec::new(), 0),
        };

        self.slot_count += 1;
        self.log.push(decision.clone());
        debug_assert!(self.is_conserved(), "packet conservation violated at slot {}", self.slot_count);
        Ok(SlotOutcome { decision, moved_seq_ids, bit_errors_added })
    }

    #[cfg(test)]
    pub(crate) fn buffers_mut(&mut self) -> &mut [RelayBuffer] {
        &mut self.buffers
    }
}

/// Slot counts per mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub direct: u64,
    pub relay_rx: u64,
    pub relay_tx: u64,
    pub idle: u64,
}

impl DecisionCounts {
    pub fn record(&mut self, mode: SlotMode) {
        match mode {
            SlotMode::Direct => self.direct += 1,
            SlotMode::RelayRx(_) => self.relay_rx += 1,
            SlotMode::RelayTx(_) => self.relay_tx += 1,
            SlotMode::Idle => self.idle += 1,
        }
    }

    pub fn merge(&mut self, other: &DecisionCounts) {
        self.direct += other.direct;
        self.relay_rx += other.relay_rx;
        self.relay_tx += other.relay_tx;
        self.idle += other.idle;
    }

    pub fn total(&self) -> u64 {
        self.direct + self.relay_rx + self.relay_tx + self.idle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub slot_count: u64,
    /// Sum over packets of (delivery slot - first transmission slot).
    pub delay_sum: u64,
    pub mean_delay_slots: f64,
    pub decisions: DecisionCounts,
}

/// Runs until every packet reaches the destination, drawing all randomness
/// from stream 0 of `cfg.seed`.
pub fn run_simulation(cfg: &SimConfig) -> Result<RunResult, EngineError> {
    run_simulation_with(cfg, RngStream::new(cfg.seed, 0))
}

pub fn run_simulation_with(cfg: &SimConfig, stream: RngStream) -> Result<RunResult, EngineError> {
    let cfg = cfg.clone().validate()?;
    let mut rng = stream.rng();
    let mut state = NetworkState::new(&cfg, &mut rng);
    let mut decisions = DecisionCounts::default();
    // Every packet needs at most two hops and every active slot moves M of them.
    let slot_limit = (2 * cfg.num_packets / cfg.num_antennas) as u64;

    while !state.is_finished() {
        if state.slot_count() >= slot_limit {
            return Err(EngineError::Stalled {
                slots: state.slot_count(),
                undelivered: cfg.num_packets - state.delivered().len(),
            });
        }
        let outcome = state.run_slot(&cfg, &mut rng)?;
        decisions.record(outcome.decision.mode);
    }

    let bits = (cfg.num_packets * cfg.packet_length) as u64;
    Ok(RunResult {
        bit_errors: state.bit_errors(),
        bits,
        ber: state.bit_errors() as f64 / bits as f64,
        slot_count: state.slot_count(),
        delay_sum: state.delay_sum,
        mean_delay_slots: state.delay_sum as f64 / cfg.num_packets as f64,
        decisions,
    })
}
