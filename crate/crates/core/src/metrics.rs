//! Operation counting and closed-form complexity.
//!
//! Multiplications follow the reuse convention of the complexity analysis:
//! a candidate's `h_i s` is charged when first formed and reused for free in
//! later iterations, and one complex product costs four real ones. Divisions
//! by `2 sigma2` are folded into one precomputed reciprocal per use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub real_multiplications: u64,
    pub additions: u64,
    pub comparisons: u64,
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.real_multiplications += rhs.real_multiplications;
        self.additions += rhs.additions;
        self.comparisons += rhs.comparisons;
    }
}

/// Per-run counter handle. A disabled tally ignores every charge.
#[derive(Clone, Debug, Default)]
pub struct OpTally {
    counters: Option<OpCounters>,
}

impl OpTally {
    pub fn enabled() -> Self {
        Self {
            counters: Some(OpCounters::default()),
        }
    }

    pub fn disabled() -> Self {
        Self { counters: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.counters.is_some()
    }

    pub fn snapshot(&self) -> Result<OpCounters> {
        self.counters
            .ok_or_else(|| Error::InvalidState("operation counters are not enabled".into()))
    }

    #[inline]
    pub(crate) fn complex_products(&mut self, n: u64) {
        if let Some(c) = &mut self.counters {
            c.real_multiplications += 4 * n;
        }
    }

    #[inline]
    pub(crate) fn real_products(&mut self, n: u64) {
        if let Some(c) = &mut self.counters {
            c.real_multiplications += n;
        }
    }

    #[inline]
    pub(crate) fn additions(&mut self, n: u64) {
        if let Some(c) = &mut self.counters {
            c.additions += n;
        }
    }

    #[inline]
    pub(crate) fn comparisons(&mut self, n: u64) {
        if let Some(c) = &mut self.counters {
            c.comparisons += n;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    OriginalBp,
    Bsp,
    Map,
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Closed-form real multiplications per channel use.
///
/// * Original BP and MAP: `4 |A|^Nt Nt Nr`
/// * BsP `B(d_m, d_f)`: `4 |A| C(Nt-1, d_f-1) d_m^(d_f-1) Nt Nr`, without the
///   LMMSE initialization. `d_m` and `d_f` are clamped to `|A|` and `Nt`.
///
/// Saturates at `u128::MAX`.
pub fn predicted_multiplications(
    algorithm: Algorithm,
    nr: usize,
    nt: usize,
    bits_per_symbol: usize,
    d_m: usize,
    d_f: usize,
) -> u128 {
    let q = 1u128 << bits_per_symbol;
    let edges = (nr * nt) as u128;
    match algorithm {
        Algorithm::OriginalBp | Algorithm::Map => {
            let mut vectors: u128 = 1;
            for _ in 0..nt {
                vectors = vectors.saturating_mul(q);
            }
            vectors.saturating_mul(4).saturating_mul(edges)
        }
        Algorithm::Bsp => {
            let d_m = (d_m.max(1) as u128).min(q);
            let d_f = d_f.clamp(1, nt.max(1));
            let mut set = binomial(nt - 1, d_f - 1);
            for _ in 0..d_f - 1 {
                set = set.saturating_mul(d_m);
            }
            (4 * q).saturating_mul(set).saturating_mul(edges)
        }
    }
}
