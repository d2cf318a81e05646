//! Max-min distance link metrics and the per-slot mode decision.
//!
//! Each link is scored by the smallest squared distance between any two
//! noise-free receive points `scale*H*x_l` and `scale*H*x_n`: the pair most
//! likely to be confused by the ML detector. The selector picks the relay
//! link whose score is largest, subject to buffer state, and in switched
//! mode falls back to direct transmission when the source-destination score
//! is at least as good.

use thiserror::Error;

use crate::detection::{CandidateImages, DetectionError, ScaledLink};
use crate::model::{ChannelSet, Fallback, Protocol, RelayBuffer, SimConfig, SlotDecision, SlotMode};

/// Minimum pairwise distances for every link in a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMetrics {
    pub d_min_sr: Vec<f64>,
    pub d_min_rd: Vec<f64>,
    pub d_min_sd: f64,
}

impl LinkMetrics {
    /// SR metrics followed by RD metrics.
    pub fn per_link(&self) -> Vec<f64> {
        self.d_min_sr.iter().chain(&self.d_min_rd).copied().collect()
    }

    pub fn scaled(&self, factor: f64) -> LinkMetrics {
        LinkMetrics {
            d_min_sr: self.d_min_sr.iter().map(|d| d * factor).collect(),
            d_min_rd: self.d_min_rd.iter().map(|d| d * factor).collect(),
            d_min_sd: self.d_min_sd * factor,
        }
    }
}

/// Which relay links may be used this slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityMask {
    /// Relay has room for `M` more packets.
    pub sr_ok: Vec<bool>,
    /// Relay holds at least `M` packets.
    pub rd_ok: Vec<bool>,
    /// Source still has at least `M` packets to send.
    pub source_has_data: bool,
}

impl AvailabilityMask {
    pub fn from_buffers(buffers: &[RelayBuffer], m: usize, source_remaining: usize) -> Self {
        AvailabilityMask {
            sr_ok: buffers.iter().map(|b| b.free() >= m).collect(),
            rd_ok: buffers.iter().map(|b| b.len() >= m).collect(),
            source_has_data: source_remaining >= m,
        }
    }

    pub fn all(n: usize) -> Self {
        AvailabilityMask { sr_ok: vec![true; n], rd_ok: vec![true; n], source_has_data: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Reception,
    Transmission,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayChoice {
    /// 0-based relay index.
    pub relay: usize,
    pub direction: Direction,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("no action possible: source exhausted and every relay buffer is empty")]
    NoAction,
}

/// Smallest `|scale*H*(x_l - x_n)|^2` over every unordered pair of distinct
/// BPSK candidates.
pub fn pair_min_distance(link: &ScaledLink) -> Result<f64, DetectionError> {
    Ok(min_pair_distance(&CandidateImages::new(link)?))
}

pub(crate) fn min_pair_distance(images: &CandidateImages) -> f64 {
    let points = images.points();
    let mut best = f64::INFINITY;
    for (l, pl) in points.iter().enumerate() {
        for pn in &points[l + 1..] {
            let d: f64 = pl.iter().zip(pn).map(|(a, b)| (a - b).norm_sqr()).sum();
            best = best.min(d);
        }
    }
    best
}

/// Scores every link of the slot with the energies in `cfg`: `Es/M` on SR
/// links, `Erj/M` on RD links and `2Es/M` on the direct link.
pub fn compute_link_metrics(channels: &ChannelSet, cfg: &SimConfig) -> Result<LinkMetrics, DetectionError> {
    let m = cfg.num_antennas as f64;
    let sr_scale = (cfg.symbol_energy / m).sqrt();
    let rd_scale = (cfg.relay_energy / m).sqrt();
    let sd_scale = (2.0 * cfg.symbol_energy / m).sqrt();
    let score = |h: &crate::model::ChannelMatrix, scale: f64| pair_min_distance(&ScaledLink::new(h.clone(), scale)?);
    Ok(LinkMetrics {
        d_min_sr: channels.h_sr.iter().map(|h| score(h, sr_scale)).collect::<Result<_, _>>()?,
        d_min_rd: channels.h_rd.iter().map(|h| score(h, rd_scale)).collect::<Result<_, _>>()?,
        d_min_sd: score(&channels.h_sd, sd_scale)?,
    })
}

/// Best relay link among those the mask allows. SR links are only eligible
/// while the source has data. Ties go to SR over RD, then to the lower relay
/// index.
pub fn select_max_link(metrics: &LinkMetrics, mask: &AvailabilityMask) -> Option<RelayChoice> {
    let rx = metrics
        .d_min_sr
        .iter()
        .zip(&mask.sr_ok)
        .enumerate()
        .filter(|_| mask.source_has_data)
        .filter(|(_, (_, &ok))| ok)
        .map(|(relay, (&metric, _))| RelayChoice { relay, direction: Direction::Reception, metric });
    let tx = metrics
        .d_min_rd
        .iter()
        .zip(&mask.rd_ok)
        .enumerate()
        .filter(|(_, (_, &ok))| ok)
        .map(|(relay, (&metric, _))| RelayChoice { relay, direction: Direction::Transmission, metric });

    rx.chain(tx).fold(None, |best: Option<RelayChoice>, cand| match best {
        Some(b) if cand.metric <= b.metric => Some(b),
        _ => Some(cand),
    })
}

/// Turns metrics and the relay choice into this slot's decision.
///
/// * `direct`: always direct while the source has data.
/// * `switched-max-link`: direct when `d_min_sd >= d_max_min`, relay otherwise.
/// * `max-link`: relay whenever one is available.
///
/// With no usable relay link but source data left, `fallback` decides
/// between a direct transmission and an idle slot. Once the source is
/// exhausted only relay transmissions remain, and with none available the
/// run is over.
pub fn choose_mode(
    protocol: Protocol,
    fallback: Fallback,
    metrics: &LinkMetrics,
    choice: Option<RelayChoice>,
    source_has_data: bool,
) -> Result<SlotDecision, SelectionError> {
    let choice = if protocol == Protocol::Direct { None } else { choice };
    let decision = |mode, d_max_min| SlotDecision {
        mode,
        d_min_sd: metrics.d_min_sd,
        d_max_min,
        per_link_metrics: metrics.per_link(),
    };

    match choice {
        None if !source_has_data => Err(SelectionError::NoAction),
        None if protocol == Protocol::Direct => Ok(decision(SlotMode::Direct, 0.0)),
        None => Ok(match fallback {
            Fallback::Direct => decision(SlotMode::Direct, 0.0),
            Fallback::Idle => decision(SlotMode::Idle, 0.0),
        }),
        Some(c) => {
            let direct = protocol == Protocol::SwitchedMaxLink && source_has_data && metrics.d_min_sd >= c.metric;
            let mode = if direct {
                SlotMode::Direct
            } else {
                match c.direction {
                    Direction::Reception => SlotMode::RelayRx(c.relay),
                    Direction::Transmission => SlotMode::RelayTx(c.relay),
                }
            };
            Ok(decision(mode, c.metric))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel_set, draw_matrix, RngStream};
    use crate::model::ChannelMatrix;
    use crate::testutil::random_unitary;
    use proptest::prelude::*;

    fn metrics(sr: &[f64], rd: &[f64], sd: f64) -> LinkMetrics {
        LinkMetrics { d_min_sr: sr.to_vec(), d_min_rd: rd.to_vec(), d_min_sd: sd }
    }

    fn assert_close(got: &LinkMetrics, want: &LinkMetrics) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(got.d_min_sd, want.d_min_sd), "{got:?} vs {want:?}");
        for (a, b) in got.per_link().iter().zip(want.per_link()) {
            assert!(close(*a, b), "{got:?} vs {want:?}");
        }
    }

    fn link(h: ChannelMatrix, scale: f64) -> ScaledLink {
        ScaledLink::new(h, scale).unwrap()
    }

    #[test]
    fn scalar_link_distance() {
        assert_eq!(pair_min_distance(&link(ChannelMatrix::identity(1), 1.0)).unwrap(), 4.0);
    }

    #[test]
    fn identity_two_by_two_distance() {
        assert_eq!(pair_min_distance(&link(ChannelMatrix::identity(2), 1.0)).unwrap(), 4.0);
    }

    #[test]
    fn weak_second_antenna_sets_distance() {
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.5]]);
        assert_eq!(pair_min_distance(&link(h, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn distance_guard() {
        let h = ChannelMatrix::identity(11);
        assert_eq!(pair_min_distance(&link(h, 1.0)), Err(DetectionError::TooManyAntennas(11)));
    }

    fn identity_set(m: usize, n: usize) -> ChannelSet {
        ChannelSet {
            h_sd: ChannelMatrix::identity(m),
            h_sr: vec![ChannelMatrix::identity(m); n],
            h_rd: vec![ChannelMatrix::identity(m); n],
            slot_index: 0,
        }
    }

    #[test]
    fn link_metrics_for_identity_channels() {
        let cfg = SimConfig { num_antennas: 1, num_relays: 1, symbol_energy: 1.0, relay_energy: 1.0, ..SimConfig::default() };
        let got = compute_link_metrics(&identity_set(1, 1), &cfg).unwrap();
        assert_close(&got, &metrics(&[4.0], &[4.0], 8.0));
        assert_eq!(got.per_link().len(), 2);
    }

    #[test]
    fn link_metrics_scale_with_energy_and_ignore_rotations() {
        let mut rng = RngStream::new(8, 0).rng();
        let cfg = SimConfig { num_antennas: 2, num_relays: 3, symbol_energy: 1.7, relay_energy: 1.7, ..SimConfig::default() };
        let set = draw_channel_set(&mut rng, 2, 3, 0);
        let base = compute_link_metrics(&set, &cfg).unwrap();

        let doubled = SimConfig { symbol_energy: 3.4, relay_energy: 3.4, ..cfg.clone() };
        let got = compute_link_metrics(&set, &doubled).unwrap();
        for (a, b) in got.per_link().iter().zip(base.per_link()) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * b);
        }
        assert!((got.d_min_sd - 2.0 * base.d_min_sd).abs() <= 1e-12 * base.d_min_sd);

        let q = random_unitary(&mut rng, 2);
        let rotated = ChannelSet {
            h_sd: set.h_sd.left_mul(&q),
            h_sr: set.h_sr.iter().map(|h| h.left_mul(&q)).collect(),
            h_rd: set.h_rd.iter().map(|h| h.left_mul(&q)).collect(),
            slot_index: 0,
        };
        let got = compute_link_metrics(&rotated, &cfg).unwrap();
        for (a, b) in got.per_link().iter().zip(base.per_link()) {
            assert!((a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn uses_relay_energy_on_rd_links() {
        let cfg = SimConfig { num_antennas: 1, num_relays: 1, symbol_energy: 1.0, relay_energy: 3.0, ..SimConfig::default() };
        let got = compute_link_metrics(&identity_set(1, 1), &cfg).unwrap();
        assert_close(&got, &metrics(&[4.0], &[12.0], 8.0));
    }

    /// `s^2 * min |H e|^2` over nonzero `e` in `{-2, 0, 2}^M`, one of each
    /// `+-e` pair: the first nonzero entry is taken positive.
    fn difference_oracle(h: &ChannelMatrix, scale: f64) -> f64 {
        let m = h.dim();
        let mut best = f64::INFINITY;
        for code in 1..3usize.pow(m as u32) {
            let e: Vec<f64> = (0..m).map(|p| [0.0, 2.0, -2.0][(code / 3usize.pow(p as u32)) % 3]).collect();
            if e.iter().find(|&&v| v != 0.0).is_some_and(|&v| v < 0.0) {
                continue;
            }
            best = best.min(h.mul_real(&e).iter().map(|v| v.norm_sqr()).sum::<f64>());
        }
        best * scale * scale
    }

    /// Same scan restricted to `e` in `{0, 2}^M`.
    fn positive_pattern_bound(h: &ChannelMatrix, scale: f64) -> f64 {
        let m = h.dim();
        (1usize..1 << m)
            .map(|mask| {
                let e: Vec<f64> = (0..m).map(|p| if mask & (1 << p) != 0 { 2.0 } else { 0.0 }).collect();
                h.mul_real(&e).iter().map(|v| v.norm_sqr()).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            * scale
            * scale
    }

    #[test]
    fn positive_patterns_miss_mixed_sign_differences() {
        // Columns nearly equal: x = [+1, -1] vs [-1, +1] gives a tiny distance
        // that {0, 2}^M cannot see.
        let h = ChannelMatrix::from_real_rows(&[&[1.0, 0.9], &[0.5, 0.6]]);
        let pairwise = pair_min_distance(&link(h.clone(), 1.0)).unwrap();
        assert!((pairwise - difference_oracle(&h, 1.0)).abs() < 1e-12);
        assert!((pairwise - 0.08).abs() < 1e-12);
        assert!(positive_pattern_bound(&h, 1.0) > 1.0);

        let mut rng = RngStream::new(32, 0).rng();
        for m in 1..=3 {
            for _ in 0..50 {
                let h = draw_matrix(&mut rng, m);
                let exact = pair_min_distance(&link(h.clone(), 1.0)).unwrap();
                assert!(positive_pattern_bound(&h, 1.0) >= exact * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn pairwise_matches_difference_oracle() {
        let mut rng = RngStream::new(31, 0).rng();
        for m in 1..=4 {
            for _ in 0..50 {
                let h = draw_matrix(&mut rng, m);
                let want = difference_oracle(&h, 0.8);
                let got = pair_min_distance(&link(h, 0.8)).unwrap();
                assert!((got - want).abs() <= 1e-12 * want, "m={m} got={got} want={want}");
            }
        }
    }

    #[test]
    fn picks_best_available_link() {
        let met = metrics(&[2.0, 5.0], &[1.0, 3.0], 0.0);
        let got = select_max_link(&met, &AvailabilityMask::all(2)).unwrap();
        assert_eq!(got, RelayChoice { relay: 1, direction: Direction::Reception, metric: 5.0 });

        let mask = AvailabilityMask { sr_ok: vec![true, false], rd_ok: vec![true, true], source_has_data: true };
        let got = select_max_link(&met, &mask).unwrap();
        assert_eq!(got, RelayChoice { relay: 1, direction: Direction::Transmission, metric: 3.0 });
    }

    #[test]
    fn nothing_available() {
        let met = metrics(&[2.0, 5.0], &[1.0, 3.0], 0.0);
        let mask = AvailabilityMask { sr_ok: vec![true, true], rd_ok: vec![false, false], source_has_data: false };
        assert_eq!(select_max_link(&met, &mask), None);
    }

    #[test]
    fn ties_prefer_reception_then_lower_index() {
        let met = metrics(&[3.0, 3.0], &[3.0, 3.0], 0.0);
        let got = select_max_link(&met, &AvailabilityMask::all(2)).unwrap();
        assert_eq!((got.relay, got.direction), (0, Direction::Reception));
        let mask = AvailabilityMask { sr_ok: vec![false, false], rd_ok: vec![true, true], source_has_data: true };
        let got = select_max_link(&met, &mask).unwrap();
        assert_eq!((got.relay, got.direction), (0, Direction::Transmission));
    }

    fn rx(relay: usize, metric: f64) -> Option<RelayChoice> {
        Some(RelayChoice { relay, direction: Direction::Reception, metric })
    }

    #[test]
    fn switched_mode_comparison() {
        let p = Protocol::SwitchedMaxLink;
        let f = Fallback::Direct;
        let d = choose_mode(p, f, &metrics(&[], &[], 6.0), rx(2, 5.0), true).unwrap();
        assert_eq!(d.mode, SlotMode::Direct);
        let d = choose_mode(p, f, &metrics(&[], &[], 4.0), rx(2, 5.0), true).unwrap();
        assert_eq!(d.mode, SlotMode::RelayRx(2));
        assert_eq!(d.d_max_min, 5.0);
        let d = choose_mode(p, f, &metrics(&[], &[], 5.0), rx(2, 5.0), true).unwrap();
        assert_eq!(d.mode, SlotMode::Direct);
    }

    #[test]
    fn max_link_never_switches_while_a_relay_is_available() {
        let d = choose_mode(Protocol::MaxLink, Fallback::Direct, &metrics(&[], &[], 100.0), rx(0, 1.0), true).unwrap();
        assert_eq!(d.mode, SlotMode::RelayRx(0));
    }

    #[test]
    fn direct_protocol_always_direct() {
        let d = choose_mode(Protocol::Direct, Fallback::Direct, &metrics(&[9.0], &[9.0], 1.0), rx(0, 9.0), true).unwrap();
        assert_eq!(d.mode, SlotMode::Direct);
        assert_eq!(
            choose_mode(Protocol::Direct, Fallback::Direct, &metrics(&[], &[], 1.0), None, false),
            Err(SelectionError::NoAction)
        );
    }

    #[test]
    fn fallback_when_no_relay_available() {
        let met = metrics(&[], &[], 1.0);
        let d = choose_mode(Protocol::MaxLink, Fallback::Direct, &met, None, true).unwrap();
        assert_eq!(d.mode, SlotMode::Direct);
        let d = choose_mode(Protocol::MaxLink, Fallback::Idle, &met, None, true).unwrap();
        assert_eq!(d.mode, SlotMode::Idle);
        assert_eq!(
            choose_mode(Protocol::SwitchedMaxLink, Fallback::Direct, &met, None, false),
            Err(SelectionError::NoAction)
        );
    }

    #[test]
    fn drain_never_goes_direct() {
        let tx = Some(RelayChoice { relay: 1, direction: Direction::Transmission, metric: 1.0 });
        let d = choose_mode(Protocol::SwitchedMaxLink, Fallback::Direct, &metrics(&[], &[], 50.0), tx, false).unwrap();
        assert_eq!(d.mode, SlotMode::RelayTx(1));
    }

    fn arb_case() -> impl Strategy<Value = (LinkMetrics, AvailabilityMask)> {
        (1usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..100.0, n),
                prop::collection::vec(0.0f64..100.0, n),
                0.0f64..100.0,
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
                any::<bool>(),
            )
                .prop_map(|(sr, rd, sd, sr_ok, rd_ok, src)| {
                    (metrics(&sr, &rd, sd), AvailabilityMask { sr_ok, rd_ok, source_has_data: src })
                })
        })
    }

    proptest! {
        #[test]
        fn masked_argmax_dominates((met, mask) in arb_case()) {
            let eligible: Vec<f64> = met.d_min_sr.iter().zip(&mask.sr_ok)
                .filter(|(_, &ok)| ok && mask.source_has_data)
                .map(|(&d, _)| d)
                .chain(met.d_min_rd.iter().zip(&mask.rd_ok).filter(|(_, &ok)| ok).map(|(&d, _)| d))
                .collect();
            match select_max_link(&met, &mask) {
                None => prop_assert!(eligible.is_empty()),
                Some(c) => {
                    prop_assert!(eligible.iter().all(|&d| c.metric >= d));
                    match c.direction {
                        Direction::Reception => prop_assert!(mask.sr_ok[c.relay] && mask.source_has_data),
                        Direction::Transmission => prop_assert!(mask.rd_ok[c.relay]),
                    }
                }
            }
        }

        #[test]
        fn enlarging_mask_never_lowers_best((met, mask) in arb_case(), flip in 0usize..12) {
            let mut bigger = mask.clone();
            let n = bigger.sr_ok.len();
            match flip % 3 {
                0 => bigger.sr_ok[flip % n] = true,
                1 => bigger.rd_ok[flip % n] = true,
                _ => bigger.source_has_data = true,
            }
            let small = select_max_link(&met, &mask).map_or(0.0, |c| c.metric);
            let large = select_max_link(&met, &bigger).map_or(0.0, |c| c.metric);
            prop_assert!(large >= small);
        }

        #[test]
        fn decision_is_scale_equivariant((met, mask) in arb_case(), k in 0.01f64..100.0) {
            let scaled = met.scaled(k);
            let a = select_max_link(&met, &mask);
            let b = select_max_link(&scaled, &mask);
            prop_assert_eq!(a.map(|c| (c.relay, c.direction)), b.map(|c| (c.relay, c.direction)));
            for p in Protocol::ALL {
                let da = choose_mode(p, Fallback::Direct, &met, a, mask.source_has_data).map(|d| d.mode);
                let db = choose_mode(p, Fallback::Direct, &scaled, b, mask.source_has_data).map(|d| d.mode);
                prop_assert_eq!(da, db);
            }
        }
    }
}
