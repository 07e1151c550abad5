//! Rayleigh flat fading, AWGN and the Eb/N0 convention.
//!
//! `sigma2` is always the noise variance per real dimension; a complex noise
//! sample has total variance `2 * sigma2`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::modem::{modulate, Constellation};
use crate::numerics::{sample_complex_gaussian, ComplexMatrix, ComplexVector, RandomStream};

/// One channel use.
#[derive(Clone, Debug)]
pub struct ChannelInstance {
    pub h: ComplexMatrix,
    pub bits: Vec<u8>,
    pub s: ComplexVector,
    pub y: ComplexVector,
    pub sigma2: f64,
}

impl ChannelInstance {
    /// Draws bits, channel and noise from `rng`, in that order.
    pub fn generate(
        rng: &mut RandomStream,
        nr: usize,
        nt: usize,
        c: &Constellation,
        sigma2: f64,
    ) -> Result<Self> {
        let bits: Vec<u8> = (0..c.bits_per_symbol() * nt).map(|_| rng.next_bit()).collect();
        let s = modulate(&bits, c)?;
        let h = sample_channel(rng, nr, nt)?;
        let y = transmit(&h, &s, sigma2, rng)?;
        Ok(Self {
            h,
            bits,
            s,
            y,
            sigma2,
        })
    }

    pub fn nr(&self) -> usize {
        self.h.rows()
    }

    pub fn nt(&self) -> usize {
        self.h.cols()
    }
}

/// i.i.d. CN(0, 1) entries (variance 1/2 per real dimension).
pub fn sample_channel(rng: &mut RandomStream, nr: usize, nt: usize) -> Result<ComplexMatrix> {
    if nr == 0 || nt == 0 {
        return Err(Error::invalid(format!("antenna counts must be >= 1, got {nr}x{nt}")));
    }
    let data = (0..nr * nt).map(|_| sample_complex_gaussian(rng, 0.5)).collect();
    ComplexMatrix::new(nr, nt, data)
}

/// Noise variance per real dimension for a given Eb/N0.
///
/// With unit-energy symbols and unit-power fading, the array receives
/// `N_r * N_t` energy per use for `M * N_t` bits, so `Eb = N_r / M`.
/// Taking `N0 = 2 sigma2` gives `sigma2 = N_r / (2 M 10^(Eb/N0 / 10))`.
/// `N_t` cancels out and is accepted only to keep call sites explicit.
pub fn noise_variance_from_ebn0(ebn0_db: f64, bits_per_symbol: usize, nt: usize, nr: usize) -> f64 {
    debug_assert!(bits_per_symbol * nt >= 1);
    nr as f64 / (2.0 * bits_per_symbol as f64 * 10f64.powf(ebn0_db / 10.0))
}

/// `y = H s + n`.
pub fn transmit(
    h: &ComplexMatrix,
    s: &[Complex64],
    sigma2: f64,
    rng: &mut RandomStream,
) -> Result<ComplexVector> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::invalid(format!("sigma2 must be finite and >= 0, got {sigma2}")));
    }
    let mut y = h.mul_vec(s)?;
    for yi in &mut y {
        *yi += sample_complex_gaussian(rng, sigma2);
    }
    Ok(y)
}
