//! Square QAM with Gray labeling.
//!
//! A `2^M`-point constellation is the product of two `2^(M/2)`-level
//! amplitude ladders. The first `M/2` label bits Gray-code the in-phase
//! level and the last `M/2` the quadrature level. Points are indexed by
//! their label value, so index 0 (the all-zero label) is the reference
//! symbol every LLR is measured against.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    bits_per_symbol: usize,
    points: Vec<Complex64>,
}

impl Constellation {
    /// Builds unit-energy square QAM with `bits_per_symbol` bits (even, 2..=8).
    pub fn new(bits_per_symbol: usize) -> Result<Self> {
        if bits_per_symbol % 2 != 0 || !(2..=8).contains(&bits_per_symbol) {
            return Err(Error::invalid(format!(
                "bits per symbol must be even and in 2..=8, got {bits_per_symbol}"
            )));
        }
        let half = bits_per_symbol / 2;
        let levels = 1usize << half;
        // Average energy per axis of {±1, ±3, ...} is (L^2 - 1) / 3.
        let scale = (2.0 * ((levels * levels - 1) as f64) / 3.0).sqrt().recip();
        let mut amplitude_of_gray = vec![0.0; levels];
        for l in 0..levels {
            amplitude_of_gray[l ^ (l >> 1)] = (2 * l) as f64 - (levels - 1) as f64;
        }
        let points = (0..1usize << bits_per_symbol)
            .map(|label| {
                let gi = label >> half;
                let gq = label & (levels - 1);
                Complex64::new(amplitude_of_gray[gi] * scale, amplitude_of_gray[gq] * scale)
            })
            .collect();
        Ok(Self {
            bits_per_symbol,
            points,
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    /// Number of points, `|A| = 2^M`.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Index of the reference symbol (all-zero label).
    pub fn reference_index(&self) -> usize {
        0
    }

    /// Bit `m` (MSB first) of the label of point `index`.
    pub fn label_bit(&self, index: usize, m: usize) -> u8 {
        ((index >> (self.bits_per_symbol - 1 - m)) & 1) as u8
    }

    pub fn label(&self, index: usize) -> Vec<u8> {
        (0..self.bits_per_symbol).map(|m| self.label_bit(index, m)).collect()
    }

    /// Point index whose label equals `bits` (MSB first).
    pub fn index_of_label(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// Maps `M * N_t` bits onto `N_t` symbols.
pub fn modulate(bits: &[u8], c: &Constellation) -> Result<Vec<Complex64>> {
    let m = c.bits_per_symbol();
    if bits.len() % m != 0 {
        return Err(Error::invalid(format!(
            "{} bits is not a multiple of {m} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(m)
        .map(|chunk| c.point(c.index_of_label(chunk)))
        .collect())
}

/// Sign decisions on per-symbol bit LLRs: positive means 1, zero or negative means 0.
pub fn hard_bits_from_llrs(llrs: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(llrs.iter().map(Vec::len).sum());
    for r in llrs {
        for &v in r {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite LLR {v}")));
            }
            out.push(u8::from(v > 0.0));
        }
    }
    Ok(out)
}
