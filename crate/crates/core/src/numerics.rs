//! Complex matrices, Hermitian positive-definite solves and Gaussian sampling.
//!
//! Everything here is double precision. The only factorization is a dense
//! Cholesky (`A = L L^H`), which covers every system the detectors solve:
//! the regularized Gram matrix `H^H H + sigma2 I` is Hermitian positive
//! definite whenever `sigma2 > 0`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column vector of complex samples.
pub type ComplexVector = Vec<Complex64>;

/// Relative pivot tolerance of the Cholesky factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Dense complex matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    /// Builds a matrix from row-major entries. All entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid(format!("matrix entry {pos} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> ComplexVector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Result<ComplexVector> {
        if x.len() != self.cols {
            return Err(Error::invalid(format!(
                "vector of length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `H^H x` without materializing the transpose.
    pub fn conj_transpose_mul_vec(&self, x: &[Complex64]) -> Result<ComplexVector> {
        if x.len() != self.rows {
            return Err(Error::invalid(format!(
                "vector of length {} does not match {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, h) in out.iter_mut().zip(self.row(i)) {
                *o += h.conj() * xi;
            }
        }
        Ok(out)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::invalid("shape mismatch in subtraction"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Returns `H^H H + sigma2 I`.
///
/// The upper triangle is computed and mirrored, so the result is exactly
/// Hermitian and its diagonal exactly real.
pub fn gram_regularized(h: &ComplexMatrix, sigma2: f64) -> Result<ComplexMatrix> {
    if h.is_empty() {
        return Err(Error::invalid("channel matrix is empty"));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::invalid(format!("sigma2 must be finite and >= 0, got {sigma2}")));
    }
    let n = h.cols();
    let mut a = ComplexMatrix::zeros(n, n);
    for p in 0..n {
        let diag: f64 = (0..h.rows()).map(|i| h[(i, p)].norm_sqr()).sum();
        a[(p, p)] = Complex64::new(diag + sigma2, 0.0);
        for q in p + 1..n {
            let v: Complex64 = (0..h.rows()).map(|i| h[(i, p)].conj() * h[(i, q)]).sum();
            a[(p, q)] = v;
            a[(q, p)] = v.conj();
        }
    }
    Ok(a)
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<Complex64>,
}

impl Cholesky {
    /// Factors `A = L L^H`.
    ///
    /// Fails with [`Error::NumericalFailure`] when a pivot is at or below
    /// [`PIVOT_TOLERANCE`] times the largest diagonal magnitude.
    pub fn factor(a: &ComplexMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::invalid(format!("matrix is {}x{}, not square", n, a.cols())));
        }
        let max_diag = (0..n).map(|p| a[(p, p)].norm()).fold(0.0, f64::max);
        let tol = PIVOT_TOLERANCE * max_diag;
        let mut l = vec![Complex64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > tol) {
                return Err(Error::NumericalFailure {
                    pivot: j,
                    reason: format!("pivot {d:e} not above tolerance {tol:e}"),
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = Complex64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        // L z = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
        // L^H x = z
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i].conj() * b[k];
            }
            b[i] = s / self.l[i * n + i].re;
        }
    }
}

/// Solves `A X = B` for Hermitian positive-definite `A` via Cholesky.
pub fn hermitian_solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if b.rows() != a.rows() {
        return Err(Error::invalid(format!(
            "right-hand side has {} rows, system has {}",
            b.rows(),
            a.rows()
        )));
    }
    let chol = Cholesky::factor(a)?;
    let mut x = ComplexMatrix::zeros(b.rows(), b.cols());
    let mut col = vec![Complex64::new(0.0, 0.0); b.rows()];
    for j in 0..b.cols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = b[(i, j)];
        }
        chol.solve_in_place(&mut col);
        for (i, c) in col.iter().enumerate() {
            x[(i, j)] = *c;
        }
    }
    Ok(x)
}

/// Seeded pseudo-random stream owned by a single worker.
///
/// Trial streams are derived by counter from `(seed, point, trial)` so any
/// trial can be replayed independently of how work was scheduled.
#[derive(Clone, Debug)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for one trial of one noise point.
    pub fn for_trial(master_seed: u64, point_index: u64, trial_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        // 24 bits of point index, 40 bits of trial index.
        rng.set_stream((point_index << 40) | (trial_index & ((1 << 40) - 1)));
        Self { rng }
    }

    pub fn next_bit(&mut self) -> u8 {
        u8::from(self.rng.gen::<bool>())
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen()
    }
}

/// Circularly-symmetric complex Gaussian with the given variance per real dimension.
pub fn sample_complex_gaussian(rng: &mut RandomStream, var_per_real_dim: f64) -> Complex64 {
    let sd = var_per_real_dim.sqrt();
    let re = rng.standard_normal();
    let im = rng.standard_normal();
    Complex64::new(sd * re, sd * im)
}
