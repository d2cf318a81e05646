//! BPSK mapping and exhaustive maximum-likelihood MIMO detection.
//!
//! Candidates are indexed by integer: candidate `b` carries bit
//! `(b >> (M - 1 - p)) & 1` on antenna `p`, so antenna 0 is the most
//! significant bit and the list is in lexicographic bit order. Bit 0 maps to
//! symbol -1 and bit 1 to +1.

use std::ops::Deref;

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{ChannelMatrix, MAX_ANTENNAS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} antennas exceeds the exhaustive-search limit of {MAX_ANTENNAS}")]
    TooManyAntennas(usize),
    #[error("`{0}` is not a BPSK symbol")]
    NonAlphabet(i8),
    #[error("`{0}` is not a bit")]
    NotABit(u8),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// BPSK symbols sent in one symbol period, one per antenna.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolVector(Vec<i8>);

impl SymbolVector {
    pub fn new(entries: Vec<i8>) -> Result<Self, DetectionError> {
        match entries.iter().find(|&&s| s != 1 && s != -1) {
            Some(&bad) => Err(DetectionError::NonAlphabet(bad)),
            None => Ok(SymbolVector(entries)),
        }
    }

    /// Candidate number `index` among the `2^m` vectors.
    pub fn from_index(index: usize, m: usize) -> Self {
        SymbolVector((0..m).map(|p| if (index >> (m - 1 - p)) & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&s| f64::from(s)).collect()
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }
}

impl Deref for SymbolVector {
    type Target = [i8];

    fn deref(&self) -> &[i8] {
        &self.0
    }
}

/// A channel matrix with its amplitude factor, e.g. `sqrt(Es/M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLink {
    pub h: ChannelMatrix,
    pub scale: f64,
}

impl ScaledLink {
    pub fn new(h: ChannelMatrix, scale: f64) -> Result<Self, DetectionError> {
        if scale.is_nan() || scale <= 0.0 {
            return Err(DetectionError::NonPositiveScale(scale));
        }
        Ok(ScaledLink { h, scale })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

pub fn modulate(bits: &[u8]) -> Result<SymbolVector, DetectionError> {
    bits.iter()
        .map(|&b| match b {
            0 => Ok(-1),
            1 => Ok(1),
            other => Err(DetectionError::NotABit(other)),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(SymbolVector)
}

pub fn demap(symbols: &[i8]) -> Result<Vec<u8>, DetectionError> {
    symbols
        .iter()
        .map(|&s| match s {
            -1 => Ok(0),
            1 => Ok(1),
            other => Err(DetectionError::NonAlphabet(other)),
        })
        .collect()
}

fn check_antennas(m: usize) -> Result<(), DetectionError> {
    if m > MAX_ANTENNAS {
        Err(DetectionError::TooManyAntennas(m))
    } else {
        Ok(())
    }
}

/// All `2^M` BPSK vectors in lexicographic bit order.
pub fn enumerate_candidates(m: usize) -> Result<Vec<SymbolVector>, DetectionError> {
    check_antennas(m)?;
    Ok((0..1usize << m).map(|b| SymbolVector::from_index(b, m)).collect())
}

/// Noise-free receive points `scale * H * x` for every candidate `x`.
///
/// Under block fading these are fixed for a whole packet, so they are built
/// once per slot and shared by detection and the distance metric.
#[derive(Debug, Clone)]
pub struct CandidateImages {
    dim: usize,
    points: Vec<Vec<Complex64>>,
}

impl CandidateImages {
    pub fn new(link: &ScaledLink) -> Result<Self, DetectionError> {
        let m = link.dim();
        check_antennas(m)?;
        let scaled = link.h.scaled(link.scale);
        let points = (0..1usize << m)
            .map(|b| scaled.mul_real(&SymbolVector::from_index(b, m).to_f64()))
            .collect();
        Ok(CandidateImages { dim: m, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<Complex64>] {
        &self.points
    }

    /// Index of the candidate closest to `y`; ties go to the lower index.
    pub fn nearest(&self, y: &[Complex64]) -> Result<usize, DetectionError> {
        if y.len() != self.dim {
            return Err(DetectionError::DimensionMismatch { expected: self.dim, got: y.len() });
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (idx, point) in self.points.iter().enumerate() {
            let dist: f64 = y.iter().zip(point).map(|(a, b)| (a - b).norm_sqr()).sum();
            if dist < best_dist {
                best_dist = dist;
                best = idx;
            }
        }
        Ok(best)
    }
}

/// Bits carried by candidate `index`, antenna 0 first.
pub fn index_to_bits(index: usize, m: usize) -> impl Iterator<Item = u8> {
    (0..m).map(move |p| ((index >> (m - 1 - p)) & 1) as u8)
}

/// Maps bits (antenna 0 first) to the candidate index.
pub fn bits_to_index(bits: impl IntoIterator<Item = u8>) -> usize {
    bits.into_iter().fold(0, |acc, b| (acc << 1) | usize::from(b & 1))
}

/// Exhaustive ML detection: the candidate minimising `|y - scale*H*x|^2`.
pub fn ml_detect(y: &[Complex64], link: &ScaledLink) -> Result<SymbolVector, DetectionError> {
    let images = CandidateImages::new(link)?;
    let idx = images.nearest(y)?;
    Ok(SymbolVector::from_index(idx, link.dim()))
}
