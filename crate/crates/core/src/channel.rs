//! Seeded Rayleigh block fading and complex AWGN.
//!
//! Every link gain is circularly-symmetric complex Gaussian with unit
//! variance (1/2 per real dimension). Noise uses the same convention: total
//! complex variance `N0`, `N0/2` per real dimension, so `SNR = Es / N0`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{ChannelMatrix, ChannelSet};

/// Generator used for every random draw in a run.
pub type SimRng = ChaCha8Rng;

/// Identifies one reproducible random sequence. Runs with the same
/// `(seed, stream_id)` see exactly the same channels, noise and bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    pub fn rng(&self) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Additive white complex Gaussian noise with total power `n0` per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub n0: f64,
}

impl NoiseModel {
    pub fn new(n0: f64) -> Self {
        NoiseModel { n0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        complex_gaussian(rng, self.n0)
    }
}

/// One draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// Unit-power Rayleigh `m x m` matrix.
pub fn draw_matrix<R: Rng + ?Sized>(rng: &mut R, m: usize) -> ChannelMatrix {
    let entries = (0..m * m).map(|_| complex_gaussian(rng, 1.0)).collect();
    ChannelMatrix::from_row_major(m, entries)
}

/// Fresh, independent SD, SR and RD matrices for one slot.
pub fn draw_channel_set<R: Rng + ?Sized>(rng: &mut R, m: usize, n: usize, slot_index: u64) -> ChannelSet {
    let h_sd = draw_matrix(rng, m);
    let h_sr = (0..n).map(|_| draw_matrix(rng, m)).collect();
    let h_rd = (0..n).map(|_| draw_matrix(rng, m)).collect();
    ChannelSet { h_sd, h_sr, h_rd, slot_index }
}

/// Returns `clean + w` with `w` drawn i.i.d. from `CN(0, n0)`. With `n0 == 0`
/// the input comes back unchanged and no randomness is consumed.
pub fn add_noise<R: Rng + ?Sized>(clean: &[Complex64], noise: &NoiseModel, rng: &mut R) -> Vec<Complex64> {
    if noise.n0 == 0.0 {
        return clean.to_vec();
    }
    clean.iter().map(|&c| c + noise.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLES: usize = 100_000;

    fn entry_stream(rng: &mut SimRng) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(SAMPLES);
        let mut slot = 0;
        while out.len() < SAMPLES {
            let set = draw_channel_set(rng, 2, 3, slot);
            out.extend_from_slice(set.h_sd.entries());
            for h in set.h_sr.iter().chain(&set.h_rd) {
                out.extend_from_slice(h.entries());
            }
            slot += 1;
        }
        out.truncate(SAMPLES);
        out
    }

    #[test]
    fn channel_entries_are_zero_mean() {
        let entries = entry_stream(&mut RngStream::new(11, 0).rng());
        let mean: Complex64 = entries.iter().sum::<Complex64>() / SAMPLES as f64;
        assert!(mean.norm() < 0.02, "mean magnitude {}", mean.norm());
    }

    #[test]
    fn channel_real_part_has_half_variance() {
        let entries = entry_stream(&mut RngStream::new(12, 0).rng());
        let n = SAMPLES as f64;
        let mean = entries.iter().map(|c| c.re).sum::<f64>() / n;
        let var = entries.iter().map(|c| (c.re - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.48..=0.52).contains(&var), "variance {var}");
    }

    #[test]
    fn same_stream_reproduces_channels() {
        let a = draw_channel_set(&mut RngStream::new(5, 3).rng(), 3, 4, 0);
        let b = draw_channel_set(&mut RngStream::new(5, 3).rng(), 3, 4, 0);
        assert_eq!(a, b);
        let c = draw_channel_set(&mut RngStream::new(5, 4).rng(), 3, 4, 0);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_is_identity() {
        let clean = vec![Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5)];
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(add_noise(&clean, &NoiseModel::new(0.0), &mut rng), clean);
    }

    #[test]
    fn unit_noise_power() {
        let mut rng = RngStream::new(2, 0).rng();
        let zeros = vec![Complex64::new(0.0, 0.0); SAMPLES];
        let w = add_noise(&zeros, &NoiseModel::new(1.0), &mut rng);
        let n = SAMPLES as f64;
        let mean: Complex64 = w.iter().sum::<Complex64>() / n;
        let power = w.iter().map(|c| (c - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        assert!(mean.norm() < 0.02, "mean magnitude {}", mean.norm());
        assert!((0.97..=1.03).contains(&power), "power {power}");
    }

    #[test]
    fn distinct_links_are_uncorrelated() {
        let mut rng = RngStream::new(99, 0).rng();
        let slots = 10_000;
        let mut sd = Vec::with_capacity(slots);
        let mut sr = Vec::with_capacity(slots);
        let mut rd = Vec::with_capacity(slots);
        for i in 0..slots {
            let set = draw_channel_set(&mut rng, 1, 2, i as u64);
            sd.push(set.h_sd.get(0, 0));
            sr.push(set.h_sr[1].get(0, 0));
            rd.push(set.h_rd[0].get(0, 0));
        }
        let corr = |a: &[Complex64], b: &[Complex64]| {
            let num: Complex64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
            let ea: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            let eb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
            num.norm() / (ea * eb).sqrt()
        };
        assert!(corr(&sd, &sr) < 0.05);
        assert!(corr(&sd, &rd) < 0.05);
        assert!(corr(&sr, &rd) < 0.05);
    }
}
