//! Max-log belief propagation on the fully connected MIMO factor graph.
//!
//! Factor node `i` observes `y_i`; symbol node `j` carries `s_j`. Messages
//! are LLR vectors against the reference symbol, so component 0 of every
//! `alpha`, `beta` and `gamma` vector is exactly zero.
//!
//! Original BP evaluates, for every factor node, the residual
//! `|y_i - h_i s|^2` of all `|A|^Nt` candidate vectors once per channel use
//! and reuses that table across iterations. Each iteration then needs one
//! pass over the table per factor node to get every `beta_ij` at once.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linear::BitLlrOutput;
use crate::metrics::OpTally;
use crate::modem::Constellation;
use crate::numerics::ComplexMatrix;

/// Default cap on `|A|^Nt` for the exhaustive detectors.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 24;

/// `h_ij * mu_k` for every edge and constellation point.
#[derive(Clone, Debug)]
pub struct ProductTable {
    nr: usize,
    nt: usize,
    q: usize,
    data: Vec<Complex64>,
}

impl ProductTable {
    pub fn new(h: &ComplexMatrix, c: &Constellation) -> Self {
        let (nr, nt, q) = (h.rows(), h.cols(), c.size());
        let mut data = Vec::with_capacity(nr * nt * q);
        for i in 0..nr {
            for j in 0..nt {
                let hij = h[(i, j)];
                data.extend(c.points().iter().map(|mu| hij * mu));
            }
        }
        Self { nr, nt, q, data }
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn constellation_size(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[(i * self.nt + j) * self.q + k]
    }

    /// All products of factor node `i`, laid out `[j][k]`.
    #[inline]
    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.nt * self.q..(i + 1) * self.nt * self.q]
    }
}

/// `alpha` (symbol to factor) and `beta` (factor to symbol) messages.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageGrid {
    nr: usize,
    nt: usize,
    q: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl MessageGrid {
    /// All-zero messages (uniform priors).
    pub fn uniform(nr: usize, nt: usize, q: usize) -> Self {
        Self {
            nr,
            nt,
            q,
            alpha: vec![0.0; nt * nr * q],
            beta: vec![0.0; nr * nt * q],
        }
    }

    /// Replicates one prior LLR vector per symbol onto all of its outgoing edges.
    pub fn from_prior(nr: usize, prior: &[Vec<f64>]) -> Result<Self> {
        let nt = prior.len();
        let q = prior.first().map_or(0, Vec::len);
        if prior.iter().any(|p| p.len() != q) {
            return Err(Error::invalid("prior vectors differ in length"));
        }
        let mut grid = Self::uniform(nr, nt, q);
        for (j, p) in prior.iter().enumerate() {
            for i in 0..nr {
                grid.alpha_mut(j, i).copy_from_slice(p);
            }
        }
        Ok(grid)
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn constellation_size(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn alpha(&self, j: usize, i: usize) -> &[f64] {
        let o = (j * self.nr + i) * self.q;
        &self.alpha[o..o + self.q]
    }

    #[inline]
    pub fn alpha_mut(&mut self, j: usize, i: usize) -> &mut [f64] {
        let o = (j * self.nr + i) * self.q;
        &mut self.alpha[o..o + self.q]
    }

    #[inline]
    pub fn beta(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.nt + j) * self.q;
        &self.beta[o..o + self.q]
    }

    #[inline]
    pub fn beta_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.nt + j) * self.q;
        &mut self.beta[o..o + self.q]
    }

    /// Incoming `alpha_ti` of factor node `i`, laid out `[t][k]`.
    pub(crate) fn gather_alpha_into(&self, i: usize, out: &mut [f64]) {
        for t in 0..self.nt {
            out[t * self.q..(t + 1) * self.q].copy_from_slice(self.alpha(t, i));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|v| v.is_finite())
    }

    pub fn reference_is_zero(&self) -> bool {
        self.alpha.chunks(self.q).chain(self.beta.chunks(self.q)).all(|m| m[0] == 0.0)
    }
}

pub(crate) fn validate_observation(y: &[Complex64], h: &ComplexMatrix, sigma2: f64) -> Result<()> {
    if h.is_empty() {
        return Err(Error::invalid("channel matrix is empty"));
    }
    if y.len() != h.rows() {
        return Err(Error::invalid(format!(
            "received vector has {} entries, channel has {} rows",
            y.len(),
            h.rows()
        )));
    }
    if y.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::invalid("received vector is not finite"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be finite and > 0, got {sigma2}")));
    }
    Ok(())
}

pub(crate) fn checked_search_size(q: usize, nt: usize, cap: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..nt {
        n = n
            .checked_mul(q)
            .filter(|&n| n <= cap)
            .ok_or_else(|| {
                Error::UnsupportedScale(format!(
                    "|A|^Nt = {q}^{nt} exceeds the enumeration cap of {cap}"
                ))
            })?;
    }
    Ok(n)
}

/// Fills `out[s] += weight * |y_i - h_i s|^2` for every candidate index `s`
/// (digit `t` of `s` in base `|A|` is the index of `s_t`, most significant first).
pub(crate) fn accumulate_residuals(
    row: &[Complex64],
    y_i: Complex64,
    nt: usize,
    q: usize,
    weight: f64,
    out: &mut [f64],
) {
    fn rec(
        level: usize,
        prefix: usize,
        residual: Complex64,
        row: &[Complex64],
        nt: usize,
        q: usize,
        weight: f64,
        out: &mut [f64],
    ) {
        let products = &row[level * q..(level + 1) * q];
        if level + 1 == nt {
            let dst = &mut out[prefix * q..(prefix + 1) * q];
            for (o, p) in dst.iter_mut().zip(products) {
                *o += weight * (residual - p).norm_sqr();
            }
        } else {
            for (k, p) in products.iter().enumerate() {
                rec(level + 1, prefix * q + k, residual - p, row, nt, q, weight, out);
            }
        }
    }
    rec(0, 0, y_i, row, nt, q, weight, out);
}

/// `out[t][k] = max over s with s_t = k of values[s] + sum_t priors[t][s_t]`.
///
/// `out` must be pre-filled with `-inf`. Returns the overall maximum.
pub(crate) fn marginal_maxima(
    values: &[f64],
    priors: &[f64],
    nt: usize,
    q: usize,
    out: &mut [f64],
) -> f64 {
    assert!(values.len() >= q.pow(nt as u32) && priors.len() >= nt * q && out.len() >= nt * q);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { scan_avx2(0, 0, 0.0, values, priors, nt, q, out) };
    }
    // SAFETY: no target features are enabled on this copy.
    unsafe { scan_generic(0, 0, 0.0, values, priors, nt, q, out) }
}

/// Innermost digit: one contiguous block of `q` candidates.
#[inline(always)]
fn scan_leaf(vals: &[f64], pr: &[f64], acc: f64, dst: &mut [f64]) -> f64 {
    let q = vals.len();
    let mut block = f64::NEG_INFINITY;
    let mut lanes = [f64::NEG_INFINITY; 4];
    let chunks = dst.chunks_exact_mut(4).zip(vals.chunks_exact(4)).zip(pr.chunks_exact(4));
    for ((o, v), p) in chunks {
        for l in 0..4 {
            let m = v[l] + acc + p[l];
            o[l] = if m > o[l] { m } else { o[l] };
            lanes[l] = if m > lanes[l] { m } else { lanes[l] };
        }
    }
    for k in q - q % 4..q {
        let m = vals[k] + acc + pr[k];
        dst[k] = if m > dst[k] { m } else { dst[k] };
        block = if m > block { m } else { block };
    }
    for l in lanes {
        block = if l > block { l } else { block };
    }
    block
}

macro_rules! scan_fn {
    ($name:ident $(, #[$attr:meta])?) => {
        #[allow(clippy::too_many_arguments)]
        $(#[$attr])?
        unsafe fn $name(
            level: usize,
            prefix: usize,
            acc: f64,
            values: &[f64],
            priors: &[f64],
            nt: usize,
            q: usize,
            out: &mut [f64],
        ) -> f64 {
            let pr = &priors[level * q..(level + 1) * q];
            if level + 1 == nt {
                return scan_leaf(
                    &values[prefix * q..(prefix + 1) * q],
                    pr,
                    acc,
                    &mut out[level * q..(level + 1) * q],
                );
            }
            let mut block = f64::NEG_INFINITY;
            for (k, p) in pr.iter().enumerate() {
                let b = $name(level + 1, prefix * q + k, acc + p, values, priors, nt, q, out);
                let o = &mut out[level * q + k];
                *o = if b > *o { b } else { *o };
                block = if b > block { b } else { block };
            }
            block
        }
    };
}

scan_fn!(scan_generic);
#[cfg(target_arch = "x86_64")]
scan_fn!(scan_avx2, #[target_feature(enable = "avx2")]);

/// Same maxima as [`marginal_maxima`] for a single factor node, with the
/// metric `-scale |y_i - h_i s|^2` rebuilt from the products on the fly.
///
/// `re` and `im` hold the products of the node laid out `[t][k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn residual_marginal_maxima(
    re: &[f64],
    im: &[f64],
    y_i: Complex64,
    scale: f64,
    priors: &[f64],
    nt: usize,
    q: usize,
    out: &mut [f64],
) -> f64 {
    assert!(re.len() >= nt * q && im.len() >= nt * q && priors.len() >= nt * q && out.len() >= nt * q);
    let ctx = ResidualScan { re, im, scale, priors, nt, q };
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { residual_scan_avx2(&ctx, 0, y_i.re, y_i.im, 0.0, out) };
    }
    // SAFETY: no target features are enabled on this copy.
    unsafe { residual_scan_generic(&ctx, 0, y_i.re, y_i.im, 0.0, out) }
}

struct ResidualScan<'a> {
    re: &'a [f64],
    im: &'a [f64],
    scale: f64,
    priors: &'a [f64],
    nt: usize,
    q: usize,
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn residual_leaf(re: &[f64], im: &[f64], rr: f64, ri: f64, scale: f64, pr: &[f64], acc: f64, dst: &mut [f64]) -> f64 {
    let q = re.len();
    let mut block = f64::NEG_INFINITY;
    let mut lanes = [f64::NEG_INFINITY; 4];
    let chunks = dst
        .chunks_exact_mut(4)
        .zip(re.chunks_exact(4))
        .zip(im.chunks_exact(4))
        .zip(pr.chunks_exact(4));
    for (((o, a), b), p) in chunks {
        for l in 0..4 {
            let dr = rr - a[l];
            let di = ri - b[l];
            let m = (acc + p[l]) - scale * (dr * dr + di * di);
            o[l] = if m > o[l] { m } else { o[l] };
            lanes[l] = if m > lanes[l] { m } else { lanes[l] };
        }
    }
    for k in q - q % 4..q {
        let dr = rr - re[k];
        let di = ri - im[k];
        let m = (acc + pr[k]) - scale * (dr * dr + di * di);
        dst[k] = if m > dst[k] { m } else { dst[k] };
        block = if m > block { m } else { block };
    }
    for l in lanes {
        block = if l > block { l } else { block };
    }
    block
}

/// AVX2 version of [`residual_leaf`]; same arithmetic order, no fused operations.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn residual_leaf_avx2(
    re: &[f64],
    im: &[f64],
    rr: f64,
    ri: f64,
    scale: f64,
    pr: &[f64],
    acc: f64,
    dst: &mut [f64],
) -> f64 {
    use std::arch::x86_64::*;
    let q = re.len();
    if q % 4 != 0 || im.len() != q || pr.len() != q || dst.len() != q {
        return residual_leaf(re, im, rr, ri, scale, pr, acc, dst);
    }
    let (vr, vi, vs, va) = (_mm256_set1_pd(rr), _mm256_set1_pd(ri), _mm256_set1_pd(scale), _mm256_set1_pd(acc));
    let mut lanes = _mm256_set1_pd(f64::NEG_INFINITY);
    let mut c = 0;
    while c < q {
        let dr = _mm256_sub_pd(vr, _mm256_loadu_pd(re.as_ptr().add(c)));
        let di = _mm256_sub_pd(vi, _mm256_loadu_pd(im.as_ptr().add(c)));
        let d2 = _mm256_add_pd(_mm256_mul_pd(dr, dr), _mm256_mul_pd(di, di));
        let base = _mm256_add_pd(va, _mm256_loadu_pd(pr.as_ptr().add(c)));
        let m = _mm256_sub_pd(base, _mm256_mul_pd(vs, d2));
        let o = dst.as_mut_ptr().add(c);
        _mm256_storeu_pd(o, _mm256_max_pd(m, _mm256_loadu_pd(o)));
        lanes = _mm256_max_pd(m, lanes);
        c += 4;
    }
    let mut buf = [0.0; 4];
    _mm256_storeu_pd(buf.as_mut_ptr(), lanes);
    buf.into_iter().fold(f64::NEG_INFINITY, |b, l| if l > b { l } else { b })
}

macro_rules! residual_scan_fn {
    ($name:ident, $leaf:ident $(, #[$attr:meta])?) => {
        $(#[$attr])?
        unsafe fn $name(ctx: &ResidualScan<'_>, level: usize, rr: f64, ri: f64, acc: f64, out: &mut [f64]) -> f64 {
            let q = ctx.q;
            let span = level * q..(level + 1) * q;
            let pr = &ctx.priors[span.clone()];
            if level + 1 == ctx.nt {
                return $leaf(&ctx.re[span.clone()], &ctx.im[span.clone()], rr, ri, ctx.scale, pr, acc, &mut out[span]);
            }
            let mut block = f64::NEG_INFINITY;
            for k in 0..q {
                let b = $name(ctx, level + 1, rr - ctx.re[level * q + k], ri - ctx.im[level * q + k], acc + pr[k], out);
                let o = &mut out[level * q + k];
                *o = if b > *o { b } else { *o };
                block = if b > block { b } else { block };
            }
            block
        }
    };
}

residual_scan_fn!(residual_scan_generic, residual_leaf);
#[cfg(target_arch = "x86_64")]
/// AVX2 scan. The last two digits are fused so the innermost maxima stay
/// in registers across a whole block of `|A|^2` candidates.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn residual_scan_avx2(ctx: &ResidualScan<'_>, level: usize, rr: f64, ri: f64, acc: f64, out: &mut [f64]) -> f64 {
    let q = ctx.q;
    let span = level * q..(level + 1) * q;
    if level + 1 == ctx.nt {
        return residual_leaf_avx2(&ctx.re[span.clone()], &ctx.im[span.clone()], rr, ri, ctx.scale, &ctx.priors[span.clone()], acc, &mut out[span]);
    }
    if level + 2 == ctx.nt {
        match q {
            4 => return residual_pair_avx2::<1>(ctx, level, rr, ri, acc, out),
            16 => return residual_pair_avx2::<4>(ctx, level, rr, ri, acc, out),
            64 => return residual_pair_avx2::<16>(ctx, level, rr, ri, acc, out),
            _ => {}
        }
    }
    let pr = &ctx.priors[span];
    let mut block = f64::NEG_INFINITY;
    for k in 0..q {
        let b = residual_scan_avx2(ctx, level + 1, rr - ctx.re[level * q + k], ri - ctx.im[level * q + k], acc + pr[k], out);
        let o = &mut out[level * q + k];
        *o = if b > *o { b } else { *o };
        block = if b > block { b } else { block };
    }
    block
}

/// Digits `level` and `level + 1` (the last) for `q = 4 C`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn residual_pair_avx2<const C: usize>(
    ctx: &ResidualScan<'_>,
    level: usize,
    rr: f64,
    ri: f64,
    acc: f64,
    out: &mut [f64],
) -> f64 {
    use std::arch::x86_64::*;
    let q = 4 * C;
    let (p0, p1) = (level * q, (level + 1) * q);
    let (re, im, pr) = (&ctx.re[p0..p1 + q], &ctx.im[p0..p1 + q], &ctx.priors[p0..p1 + q]);
    let (out_pen, out_last) = out[p0..p1 + q].split_at_mut(q);
    let zero = _mm256_setzero_pd();
    let (mut lre, mut lim, mut lpr, mut lout) = ([zero; C], [zero; C], [zero; C], [zero; C]);
    for c in 0..C {
        lre[c] = _mm256_loadu_pd(re.as_ptr().add(q + 4 * c));
        lim[c] = _mm256_loadu_pd(im.as_ptr().add(q + 4 * c));
        lpr[c] = _mm256_loadu_pd(pr.as_ptr().add(q + 4 * c));
        lout[c] = _mm256_loadu_pd(out_last.as_ptr().add(4 * c));
    }
    let vs = _mm256_set1_pd(ctx.scale);
    let mut block = f64::NEG_INFINITY;
    for k in 0..q {
        let vr = _mm256_set1_pd(rr - re[k]);
        let vi = _mm256_set1_pd(ri - im[k]);
        let va = _mm256_set1_pd(acc + pr[k]);
        let mut lanes = _mm256_set1_pd(f64::NEG_INFINITY);
        for c in 0..C {
            let dr = _mm256_sub_pd(vr, lre[c]);
            let di = _mm256_sub_pd(vi, lim[c]);
            let d2 = _mm256_add_pd(_mm256_mul_pd(dr, dr), _mm256_mul_pd(di, di));
            let m = _mm256_sub_pd(_mm256_add_pd(va, lpr[c]), _mm256_mul_pd(vs, d2));
            lout[c] = _mm256_max_pd(m, lout[c]);
            lanes = _mm256_max_pd(m, lanes);
        }
        let mut buf = [0.0; 4];
        _mm256_storeu_pd(buf.as_mut_ptr(), lanes);
        let b = buf.into_iter().fold(f64::NEG_INFINITY, |b, l| if l > b { l } else { b });
        out_pen[k] = if b > out_pen[k] { b } else { out_pen[k] };
        block = if b > block { b } else { block };
    }
    for c in 0..C {
        _mm256_storeu_pd(out_last.as_mut_ptr().add(4 * c), lout[c]);
    }
    block
}

/// A stream of interferer assignments, one symbol index per transmit antenna.
pub(crate) trait AssignmentSource {
    fn next_assignment(&mut self) -> Option<&[usize]>;
}

/// Odometer over the Cartesian product of per-symbol candidate lists.
///
/// The assignment slice is indexed by symbol; the last list varies fastest.
#[derive(Clone, Debug)]
pub(crate) struct ProductAssignments {
    lists: Vec<Vec<usize>>,
    pos: Vec<usize>,
    current: Vec<usize>,
    fresh: bool,
    done: bool,
}

impl ProductAssignments {
    pub(crate) fn new(lists: Vec<Vec<usize>>) -> Self {
        let current = lists.iter().map(|l| l.first().copied().unwrap_or(0)).collect();
        let done = lists.iter().any(Vec::is_empty);
        let pos = vec![0; lists.len()];
        Self {
            lists,
            pos,
            current,
            fresh: true,
            done,
        }
    }

}

impl ProductAssignments {
    /// Moves to the next assignment; the first call yields the initial one.
    fn advance(&mut self) -> bool {
        if self.done {
            return false;
        }
        if self.fresh {
            self.fresh = false;
            return true;
        }
        for t in (0..self.lists.len()).rev() {
            self.pos[t] += 1;
            if self.pos[t] < self.lists[t].len() {
                self.current[t] = self.lists[t][self.pos[t]];
                return true;
            }
            self.pos[t] = 0;
            self.current[t] = self.lists[t][0];
        }
        self.done = true;
        false
    }
}

impl AssignmentSource for ProductAssignments {
    fn next_assignment(&mut self) -> Option<&[usize]> {
        if self.advance() {
            Some(&self.current)
        } else {
            None
        }
    }
}

/// Scratch state for single-edge `beta` updates over an explicit assignment stream.
pub(crate) struct EdgeKernel<'a> {
    pub(crate) row: &'a [Complex64],
    pub(crate) priors: &'a [f64],
    pub(crate) y_i: Complex64,
    pub(crate) scale: f64,
    pub(crate) q: usize,
}

impl EdgeKernel<'_> {
    /// Maximizes the edge metric over `s_j = mu_k` crossed with every
    /// assignment of the interferers and writes `beta_ij` into `out`.
    /// Returns the number of assignments visited.
    pub(crate) fn beta(&self, j: usize, src: &mut impl AssignmentSource, out: &mut [f64]) -> u64 {
        let q = self.q;
        out.fill(f64::NEG_INFINITY);
        let own = &self.row[j * q..(j + 1) * q];
        let mut visited = 0;
        while let Some(assign) = src.next_assignment() {
            visited += 1;
            let mut partial = Complex64::new(0.0, 0.0);
            let mut prior = 0.0;
            for (t, &k) in assign.iter().enumerate() {
                if t != j {
                    partial += self.row[t * q + k];
                    prior += self.priors[t * q + k];
                }
            }
            let r = self.y_i - partial;
            for (o, p) in out.iter_mut().zip(own) {
                let m = prior - self.scale * (r - p).norm_sqr();
                *o = o.max(m);
            }
        }
        let reference = out[0];
        for o in out.iter_mut() {
            *o -= reference;
        }
        out[0] = 0.0;
        visited
    }
}

/// Literal single-edge update: `beta_ij(k)` maximized over every interferer
/// assignment in `A^(Nt-1)`.
pub fn beta_update_full(
    i: usize,
    j: usize,
    y_i: Complex64,
    pt: &ProductTable,
    alpha_prev: &MessageGrid,
    sigma2: f64,
) -> Vec<f64> {
    let (nt, q) = (pt.nt(), pt.constellation_size());
    let mut priors = vec![0.0; nt * q];
    alpha_prev.gather_alpha_into(i, &mut priors);
    let lists = (0..nt)
        .map(|t| if t == j { vec![0] } else { (0..q).collect() })
        .collect();
    let mut odo = ProductAssignments::new(lists);
    let kernel = EdgeKernel {
        row: pt.row(i),
        priors: &priors,
        y_i,
        scale: 0.5 / sigma2,
        q,
    };
    let mut out = vec![0.0; q];
    kernel.beta(j, &mut odo, &mut out);
    out
}

/// `gamma_j(k) = sum_i beta_ij(k)`.
pub fn symbol_llrs(grid: &MessageGrid) -> Vec<Vec<f64>> {
    let (nr, nt, q) = (grid.nr, grid.nt, grid.q);
    (0..nt)
        .map(|j| {
            let mut g = vec![0.0; q];
            for i in 0..nr {
                for (gk, b) in g.iter_mut().zip(grid.beta(i, j)) {
                    *gk += b;
                }
            }
            g
        })
        .collect()
}

/// `alpha_ji = gamma_j - beta_ij`, the leave-one-out sum of incoming `beta`.
pub fn alpha_update(grid: &mut MessageGrid) {
    let gamma = symbol_llrs(grid);
    let (nr, nt, q) = (grid.nr, grid.nt, grid.q);
    for j in 0..nt {
        for i in 0..nr {
            let o_b = (i * nt + j) * q;
            let o_a = (j * nr + i) * q;
            for k in 0..q {
                grid.alpha[o_a + k] = gamma[j][k] - grid.beta[o_b + k];
            }
        }
    }
}

/// Max-log bit LLRs from symbol LLRs:
/// `r_j(m) = max_{k: bit m = 1} gamma_j(k) - max_{k: bit m = 0} gamma_j(k)`.
pub fn bit_llrs(gamma: &[Vec<f64>], c: &Constellation) -> BitLlrOutput {
    let m_bits = c.bits_per_symbol();
    let llrs = gamma
        .iter()
        .map(|g| {
            (0..m_bits)
                .map(|m| {
                    let (mut one, mut zero) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                    for (k, &v) in g.iter().enumerate() {
                        if c.label_bit(k, m) == 1 {
                            one = one.max(v);
                        } else {
                            zero = zero.max(v);
                        }
                    }
                    one - zero
                })
                .collect()
        })
        .collect();
    BitLlrOutput::from_llrs(llrs)
}

/// Original BP: flooding schedule over the full candidate space, no damping.
pub fn run_original_bp(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
    iterations: usize,
    init: MessageGrid,
    tally: &mut OpTally,
) -> Result<BitLlrOutput> {
    run_original_bp_capped(y, h, sigma2, c, iterations, init, DEFAULT_ENUMERATION_CAP, tally)
}

#[allow(clippy::too_many_arguments)]
pub fn run_original_bp_capped(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
    iterations: usize,
    init: MessageGrid,
    cap: usize,
    tally: &mut OpTally,
) -> Result<BitLlrOutput> {
    validate_observation(y, h, sigma2)?;
    if iterations == 0 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    let (nr, nt, q) = (h.rows(), h.cols(), c.size());
    if init.nr != nr || init.nt != nt || init.q != q {
        return Err(Error::invalid("initial message grid does not match the graph"));
    }
    let n = checked_search_size(q, nt, cap)?;
    let scale = 0.5 / sigma2;
    tally.real_products(1);

    let rows = ExhaustiveRows::new(&ProductTable::new(h, c), y, scale);
    tally.complex_products((n * nt * nr) as u64);
    tally.additions((n * nr * 3) as u64);

    let mut grid = init;
    let mut scratch = RowScratch::new(nt, q);
    for _ in 0..iterations {
        for i in 0..nr {
            rows.update_row(i, &mut grid, &mut scratch);
        }
        tally.additions((n * nr * 2 + 2 * nr * nt * q) as u64);
        tally.comparisons((n * nr * 2) as u64);
        alpha_update(&mut grid);
        tally.additions((2 * nr * nt * q) as u64);
    }
    Ok(bit_llrs(&symbol_llrs(&grid), c))
}

/// Split real and imaginary products per factor node, for the exhaustive row scan.
pub(crate) struct ExhaustiveRows {
    nt: usize,
    q: usize,
    scale: f64,
    y: Vec<Complex64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

pub(crate) struct RowScratch {
    priors: Vec<f64>,
    maxima: Vec<f64>,
}

impl RowScratch {
    pub(crate) fn new(nt: usize, q: usize) -> Self {
        Self {
            priors: vec![0.0; nt * q],
            maxima: vec![0.0; nt * q],
        }
    }
}

impl ExhaustiveRows {
    pub(crate) fn new(pt: &ProductTable, y: &[Complex64], scale: f64) -> Self {
        Self {
            nt: pt.nt(),
            q: pt.constellation_size(),
            scale,
            y: y.to_vec(),
            re: pt.data.iter().map(|z| z.re).collect(),
            im: pt.data.iter().map(|z| z.im).collect(),
        }
    }

    /// Recomputes every `beta_ij` of factor node `i` from the current `alpha`.
    pub(crate) fn update_row(&self, i: usize, grid: &mut MessageGrid, scratch: &mut RowScratch) {
        let (nt, q) = (self.nt, self.q);
        let span = i * nt * q..(i + 1) * nt * q;
        grid.gather_alpha_into(i, &mut scratch.priors);
        scratch.maxima.fill(f64::NEG_INFINITY);
        residual_marginal_maxima(
            &self.re[span.clone()],
            &self.im[span],
            self.y[i],
            self.scale,
            &scratch.priors,
            nt,
            q,
            &mut scratch.maxima,
        );
        for j in 0..nt {
            let m = &scratch.maxima[j * q..(j + 1) * q];
            let a = &scratch.priors[j * q..(j + 1) * q];
            let reference = m[0] - a[0];
            let b = grid.beta_mut(i, j);
            for k in 0..q {
                b[k] = (m[k] - a[k]) - reference;
            }
            b[0] = 0.0;
        }
    }
}

/// Edge-pruned BP: factor node `i` keeps the `d_f` edges with the largest
/// `|h_ij|` (ties to the lower index). Kept interferers are searched over
/// the whole constellation, pruned ones are pinned to the argmax of their
/// current incoming `alpha`, and pruned edges carry no `beta`.
pub fn run_ebrdf_bp(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
    iterations: usize,
    d_f: usize,
    init: MessageGrid,
    tally: &mut OpTally,
) -> Result<BitLlrOutput> {
    validate_observation(y, h, sigma2)?;
    let (nr, nt, q) = (h.rows(), h.cols(), c.size());
    if d_f == 0 || d_f > nt {
        return Err(Error::invalid(format!("d_f must be in 1..={nt}, got {d_f}")));
    }
    if d_f == nt {
        return run_original_bp(y, h, sigma2, c, iterations, init, tally);
    }
    if iterations == 0 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    if init.nr != nr || init.nt != nt || init.q != q {
        return Err(Error::invalid("initial message grid does not match the graph"));
    }
    checked_search_size(q, d_f, DEFAULT_ENUMERATION_CAP)?;
    let scale = 0.5 / sigma2;
    tally.real_products(1);
    let pt = ProductTable::new(h, c);
    tally.complex_products((q.pow(d_f as u32) * d_f * nr) as u64);

    let kept: Vec<Vec<bool>> = (0..nr)
        .map(|i| {
            let mut order: Vec<usize> = (0..nt).collect();
            order.sort_by(|&a, &b| h[(i, b)].norm_sqr().total_cmp(&h[(i, a)].norm_sqr()).then(a.cmp(&b)));
            let mut keep = vec![false; nt];
            for &j in &order[..d_f] {
                keep[j] = true;
            }
            keep
        })
        .collect();

    let mut grid = init;
    let mut priors = vec![0.0; nt * q];
    let mut out = vec![0.0; q];
    for _ in 0..iterations {
        for i in 0..nr {
            grid.gather_alpha_into(i, &mut priors);
            let pinned: Vec<usize> = (0..nt).map(|t| argmax(&priors[t * q..(t + 1) * q])).collect();
            let kernel = EdgeKernel {
                row: pt.row(i),
                priors: &priors,
                y_i: y[i],
                scale,
                q,
            };
            for j in 0..nt {
                if !kept[i][j] {
                    grid.beta_mut(i, j).fill(0.0);
                    continue;
                }
                let lists = (0..nt)
                    .map(|t| {
                        if t == j {
                            vec![0]
                        } else if kept[i][t] {
                            (0..q).collect()
                        } else {
                            vec![pinned[t]]
                        }
                    })
                    .collect();
                let mut odo = ProductAssignments::new(lists);
                let visited = kernel.beta(j, &mut odo, &mut out);
                tally.additions(visited * (q as u64) * 4 + visited * 3 * (nt as u64 - 1));
                tally.comparisons(visited * q as u64);
                grid.beta_mut(i, j).copy_from_slice(&out);
            }
        }
        alpha_update(&mut grid);
        tally.additions((2 * nr * nt * q) as u64);
    }
    Ok(bit_llrs(&symbol_llrs(&grid), c))
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelInstance;
    use crate::linear::map_detect;
    use crate::numerics::RandomStream;

    fn random_grid(rng: &mut RandomStream, nr: usize, nt: usize, q: usize) -> MessageGrid {
        let mut g = MessageGrid::uniform(nr, nt, q);
        for j in 0..nt {
            for i in 0..nr {
                for v in g.alpha_mut(j, i).iter_mut().skip(1) {
                    *v = 2.0 * rng.standard_normal();
                }
            }
        }
        g
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn product_table_entries() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(1);
        let inst = ChannelInstance::generate(&mut rng, 3, 2, &c, 0.1).unwrap();
        let pt = ProductTable::new(&inst.h, &c);
        assert_eq!(pt.len(), 3 * 2 * 16);
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..16 {
                    assert_eq!(pt.get(i, j, k), inst.h[(i, j)] * c.point(k));
                }
            }
        }
    }

    #[test]
    fn prior_is_replicated() {
        let prior = vec![vec![0.0, 1.0, -2.0, 0.5], vec![0.0, -1.0, 3.0, 0.0]];
        let g = MessageGrid::from_prior(5, &prior).unwrap();
        for j in 0..2 {
            for i in 0..5 {
                assert_eq!(g.alpha(j, i), prior[j].as_slice());
            }
        }
        assert!(MessageGrid::from_prior(2, &[vec![0.0; 4], vec![0.0; 3]]).is_err());
    }

    /// Direct evaluation of the edge metric without the product table or
    /// any reuse of partial sums.
    fn brute_beta(
        h: &ComplexMatrix,
        y_i: Complex64,
        i: usize,
        j: usize,
        c: &Constellation,
        grid: &MessageGrid,
        sigma2: f64,
    ) -> Vec<f64> {
        let (nt, q) = (h.cols(), c.size());
        let mut best = vec![f64::NEG_INFINITY; q];
        for s in 0..q.pow(nt as u32) {
            let digits: Vec<usize> = (0..nt).map(|t| (s / q.pow((nt - 1 - t) as u32)) % q).collect();
            let hs: Complex64 = (0..nt).map(|t| h[(i, t)] * c.point(digits[t])).sum();
            let prior: f64 = (0..nt).filter(|&t| t != j).map(|t| grid.alpha(t, i)[digits[t]]).sum();
            let m = -(y_i - hs).norm_sqr() / (2.0 * sigma2) + prior;
            best[digits[j]] = best[digits[j]].max(m);
        }
        best.iter().map(|b| b - best[0]).collect()
    }

    #[test]
    fn full_update_matches_brute_force() {
        let c = Constellation::new(2).unwrap();
        let mut rng = RandomStream::from_seed(2);
        for _ in 0..25 {
            let inst = ChannelInstance::generate(&mut rng, 3, 3, &c, 0.2).unwrap();
            let grid = random_grid(&mut rng, 3, 3, 4);
            let pt = ProductTable::new(&inst.h, &c);
            for i in 0..3 {
                for j in 0..3 {
                    let got = beta_update_full(i, j, inst.y[i], &pt, &grid, 0.2);
                    let want = brute_beta(&inst.h, inst.y[i], i, j, &c, &grid, 0.2);
                    assert_eq!(got[0], 0.0);
                    assert!(got.iter().zip(&want).all(|(a, b)| close(*a, *b)), "{got:?} {want:?}");
                }
            }
        }
    }

    #[test]
    fn row_kernel_matches_single_edge_updates() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(3);
        for _ in 0..10 {
            let inst = ChannelInstance::generate(&mut rng, 4, 3, &c, 0.05).unwrap();
            let mut grid = random_grid(&mut rng, 4, 3, 16);
            let pt = ProductTable::new(&inst.h, &c);
            let rows = ExhaustiveRows::new(&pt, &inst.y, 0.5 / 0.05);
            let mut scratch = RowScratch::new(3, 16);
            for i in 0..4 {
                rows.update_row(i, &mut grid, &mut scratch);
                for j in 0..3 {
                    let want = beta_update_full(i, j, inst.y[i], &pt, &grid, 0.05);
                    assert!(grid.beta(i, j).iter().zip(&want).all(|(a, b)| close(*a, *b)));
                }
            }
            assert!(grid.reference_is_zero() && grid.all_finite());
        }
    }

    #[test]
    fn alpha_is_leave_one_out() {
        let mut rng = RandomStream::from_seed(4);
        let mut g = MessageGrid::uniform(3, 2, 4);
        for i in 0..3 {
            for j in 0..2 {
                for v in g.beta_mut(i, j).iter_mut().skip(1) {
                    *v = rng.standard_normal();
                }
            }
        }
        alpha_update(&mut g);
        for j in 0..2 {
            for i in 0..3 {
                for k in 0..4 {
                    let others: f64 = (0..3).filter(|&p| p != i).map(|p| g.beta(p, j)[k]).sum();
                    assert!((g.alpha(j, i)[k] - others).abs() < 1e-14);
                }
            }
        }
        let mut single = MessageGrid::uniform(1, 2, 4);
        single.beta_mut(0, 1).copy_from_slice(&[0.0, 1.5, -2.0, 7.0]);
        alpha_update(&mut single);
        assert!(single.alpha(0, 0).iter().chain(single.alpha(1, 0)).all(|&v| v == 0.0));
    }

    #[test]
    fn bit_llr_demapping() {
        let c = Constellation::new(2).unwrap();
        let out = bit_llrs(&[vec![0.0, 2.0, -1.0, 0.5]], &c);
        // Bit 0 splits {0,1} from {2,3}; bit 1 splits {0,2} from {1,3}.
        assert_eq!(out.r, vec![vec![0.5 - 2.0, 2.0 - 0.0]]);
        assert_eq!(out.hard_bits, vec![0, 1]);
    }

    #[test]
    fn single_antenna_bp_is_map() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(5);
        for _ in 0..20 {
            let inst = ChannelInstance::generate(&mut rng, 4, 1, &c, 0.1).unwrap();
            let bp = run_original_bp(
                &inst.y,
                &inst.h,
                0.1,
                &c,
                3,
                MessageGrid::uniform(4, 1, 16),
                &mut OpTally::disabled(),
            )
            .unwrap();
            let map = map_detect(&inst.y, &inst.h, 0.1, &c).unwrap();
            assert!(bp.r[0].iter().zip(&map.r[0]).all(|(a, b)| close(*a, *b)));
        }
    }

    #[test]
    fn ebrdf_full_degree_is_original_bp() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(6);
        let inst = ChannelInstance::generate(&mut rng, 4, 3, &c, 0.05).unwrap();
        let init = MessageGrid::uniform(4, 3, 16);
        let mut t = OpTally::disabled();
        let a = run_ebrdf_bp(&inst.y, &inst.h, 0.05, &c, 4, 3, init.clone(), &mut t).unwrap();
        let b = run_original_bp(&inst.y, &inst.h, 0.05, &c, 4, init.clone(), &mut t).unwrap();
        assert_eq!(a, b);
        let pruned = run_ebrdf_bp(&inst.y, &inst.h, 0.05, &c, 4, 2, init.clone(), &mut t).unwrap();
        assert!(pruned.all_finite());
        assert!(run_ebrdf_bp(&inst.y, &inst.h, 0.05, &c, 4, 0, init, &mut t).is_err());
    }

    #[test]
    fn ebrdf_noiseless_identity() {
        let c = Constellation::new(4).unwrap();
        let h = ComplexMatrix::identity(3);
        let bits: Vec<u8> = vec![1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 1, 0];
        let s = crate::modem::modulate(&bits, &c).unwrap();
        let out = run_ebrdf_bp(&s, &h, 1e-3, &c, 3, 1, MessageGrid::uniform(3, 3, 16), &mut OpTally::disabled())
            .unwrap();
        assert_eq!(out.hard_bits, bits);
    }

    #[test]
    fn original_bp_counters() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(7);
        let inst = ChannelInstance::generate(&mut rng, 8, 4, &c, 0.05).unwrap();
        let mut t = OpTally::enabled();
        let a = run_original_bp(&inst.y, &inst.h, 0.05, &c, 2, MessageGrid::uniform(8, 4, 16), &mut t)
            .unwrap();
        assert_eq!(t.snapshot().unwrap().real_multiplications, 8_388_608 + 1);
        let b = run_original_bp(
            &inst.y,
            &inst.h,
            0.05,
            &c,
            2,
            MessageGrid::uniform(8, 4, 16),
            &mut OpTally::disabled(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = Constellation::new(2).unwrap();
        let h = ComplexMatrix::identity(2);
        let y = vec![Complex64::new(0.0, 0.0); 2];
        let g = MessageGrid::uniform(2, 2, 4);
        let mut t = OpTally::disabled();
        assert!(run_original_bp(&y, &h, 0.1, &c, 0, g.clone(), &mut t).is_err());
        assert!(run_original_bp(&y, &h, -1.0, &c, 1, g.clone(), &mut t).is_err());
        assert!(run_original_bp(&y[..1], &h, 0.1, &c, 1, g.clone(), &mut t).is_err());
        assert!(run_original_bp(&y, &h, 0.1, &c, 1, MessageGrid::uniform(2, 2, 16), &mut t).is_err());
        let cap = run_original_bp_capped(&y, &h, 0.1, &c, 1, g, 8, &mut t);
        assert!(matches!(cap, Err(Error::UnsupportedScale(_))));
    }

    #[test]
    fn odometer_order() {
        let mut o = ProductAssignments::new(vec![vec![0, 1], vec![5], vec![2, 3]]);
        let mut got = Vec::new();
        while let Some(a) = o.next_assignment() {
            got.push(a.to_vec());
        }
        assert_eq!(got, vec![vec![0, 5, 2], vec![0, 5, 3], vec![1, 5, 2], vec![1, 5, 3]]);
        assert!(ProductAssignments::new(vec![vec![], vec![1]]).next_assignment().is_none());
    }
}
