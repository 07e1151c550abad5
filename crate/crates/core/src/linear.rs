//! Exhaustive max-log MAP and LMMSE detection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bp::{
    accumulate_residuals, bit_llrs, checked_search_size, marginal_maxima, validate_observation,
    ProductTable, DEFAULT_ENUMERATION_CAP,
};
use crate::error::{Error, Result};
use crate::metrics::OpTally;
use crate::modem::Constellation;
use crate::numerics::{gram_regularized, Cholesky, ComplexMatrix, ComplexVector};

/// Soft output of a detector: `M` bit LLRs per transmit symbol plus sign decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitLlrOutput {
    pub r: Vec<Vec<f64>>,
    pub hard_bits: Vec<u8>,
}

impl BitLlrOutput {
    /// Applies the sign rule (positive means 1, ties to 0).
    pub fn from_llrs(r: Vec<Vec<f64>>) -> Self {
        let hard_bits = r.iter().flatten().map(|&v| u8::from(v > 0.0)).collect();
        Self { r, hard_bits }
    }

    pub fn all_finite(&self) -> bool {
        self.r.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimate {
    pub s_hat: ComplexVector,
    /// Diagonal of `(H^H H + sigma2 I)^-1`.
    pub k_diag: Vec<f64>,
}

/// Max-log MAP over all `|A|^Nt` candidate vectors.
pub fn map_detect(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
) -> Result<BitLlrOutput> {
    map_detect_with(y, h, sigma2, c, DEFAULT_ENUMERATION_CAP, &mut OpTally::disabled())
}

pub fn map_detect_with(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
    cap: usize,
    tally: &mut OpTally,
) -> Result<BitLlrOutput> {
    validate_observation(y, h, sigma2)?;
    let (nr, nt, q) = (h.rows(), h.cols(), c.size());
    let n = checked_search_size(q, nt, cap)?;
    let scale = 0.5 / sigma2;
    tally.real_products(1);
    let pt = ProductTable::new(h, c);
    let mut metric = vec![0.0; n];
    for (i, &yi) in y.iter().enumerate() {
        accumulate_residuals(pt.row(i), yi, nt, q, -scale, &mut metric);
    }
    tally.complex_products((n * nt * nr) as u64);
    tally.additions((n * nr * 4) as u64);

    let zeros = vec![0.0; nt * q];
    let mut maxima = vec![f64::NEG_INFINITY; nt * q];
    marginal_maxima(&metric, &zeros, nt, q, &mut maxima);
    tally.comparisons((2 * n) as u64);
    let per_symbol: Vec<Vec<f64>> = maxima.chunks(q).map(<[f64]>::to_vec).collect();
    Ok(bit_llrs(&per_symbol, c))
}

/// `s_hat = (H^H H + sigma2 I)^-1 H^H y` and the diagonal of that inverse.
pub fn lmmse_estimate(y: &[Complex64], h: &ComplexMatrix, sigma2: f64) -> Result<LinearEstimate> {
    lmmse_estimate_with(y, h, sigma2, &mut OpTally::disabled())
}

pub fn lmmse_estimate_with(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    tally: &mut OpTally,
) -> Result<LinearEstimate> {
    validate_observation(y, h, sigma2)?;
    let (nr, nt) = (h.rows(), h.cols());
    let a = gram_regularized(h, sigma2)?;
    let chol = Cholesky::factor(&a)?;
    let mut s_hat = h.conj_transpose_mul_vec(y)?;
    chol.solve_in_place(&mut s_hat);
    let mut k_diag = Vec::with_capacity(nt);
    let mut col = vec![Complex64::new(0.0, 0.0); nt];
    for p in 0..nt {
        col.fill(Complex64::new(0.0, 0.0));
        col[p] = Complex64::new(1.0, 0.0);
        chol.solve_in_place(&mut col);
        k_diag.push(col[p].re);
    }
    tally.complex_products((nr * nt * (nt + 1) / 2 + nr * nt + nt * nt * nt / 6 + (nt + 1) * nt * nt) as u64);
    tally.additions((nr * nt * (nt + 1) / 2 + nr * nt + (nt + 1) * nt * nt) as u64);
    Ok(LinearEstimate { s_hat, k_diag })
}

/// Nearest-point slicing of the LMMSE estimate (ties to the lowest index).
pub fn lmmse_hard_detect(est: &LinearEstimate, c: &Constellation) -> Vec<u8> {
    est.s_hat.iter().flat_map(|&z| c.label(c.nearest(z))).collect()
}

/// Pseudo-prior symbol LLRs,
/// `alpha_j(k) = (|mu_0 - s_hat_j|^2 - |mu_k - s_hat_j|^2) / (2 K_jj)`.
pub fn lmmse_prior_llrs(est: &LinearEstimate, c: &Constellation) -> Result<Vec<Vec<f64>>> {
    let reference = c.point(c.reference_index());
    est.s_hat
        .iter()
        .zip(&est.k_diag)
        .enumerate()
        .map(|(j, (&z, &kjj))| {
            if !(kjj > 0.0 && kjj.is_finite()) {
                return Err(Error::NumericalFailure {
                    pivot: j,
                    reason: format!("error variance {kjj:e} is not positive"),
                });
            }
            let d0 = (reference - z).norm_sqr();
            let inv = 0.5 / kjj;
            let mut v: Vec<f64> = c.points().iter().map(|mu| (d0 - (mu - z).norm_sqr()) * inv).collect();
            v[c.reference_index()] = 0.0;
            Ok(v)
        })
        .collect()
}
