//! Belief-selective propagation.
//!
//! Each factor node keeps only the `d_m` most likely values of every
//! incoming message and searches interferers along `d_f - 1` chosen edges;
//! the remaining interferers are pinned to their single most likely value.
//! `B(|A|, N_t)` recovers Original BP exactly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bp::{
    alpha_update, bit_llrs, symbol_llrs, validate_observation, AssignmentSource, EdgeKernel,
    MessageGrid, ProductTable,
};
use crate::error::{Error, Result};
use crate::linear::{lmmse_estimate_with, lmmse_prior_llrs, BitLlrOutput};
use crate::metrics::{binomial, OpTally};
use crate::modem::Constellation;
use crate::numerics::ComplexMatrix;

/// The `d_m` largest entries of one message as `(symbol index, llr)`,
/// largest first, ties to the lower index.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedMessage {
    pub entries: Vec<(usize, f64)>,
}

impl TruncatedMessage {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> usize {
        self.entries[0].0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Uniform,
    Lmmse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BspConfig {
    pub d_m: usize,
    pub d_f: usize,
    pub iterations: usize,
    pub init_mode: InitMode,
}

impl BspConfig {
    pub fn new(d_m: usize, d_f: usize, iterations: usize, init_mode: InitMode) -> Result<Self> {
        let mut problems = Vec::new();
        if d_m == 0 {
            problems.push("d_m must be >= 1");
        }
        if d_f == 0 {
            problems.push("d_f must be >= 1");
        }
        if iterations == 0 {
            problems.push("iteration count must be >= 1");
        }
        if !problems.is_empty() {
            return Err(Error::invalid(problems.join("; ")));
        }
        Ok(Self {
            d_m,
            d_f,
            iterations,
            init_mode,
        })
    }

    /// Clamps `d_m` to `|A|` and `d_f` to `N_t`, warning when either changes.
    pub fn clamped(&self, q: usize, nt: usize) -> Self {
        let mut cfg = *self;
        if cfg.d_m > q {
            log::warn!("d_m = {} exceeds |A| = {q}; clamping", cfg.d_m);
            cfg.d_m = q;
        }
        if cfg.d_f > nt {
            log::warn!("d_f = {} exceeds N_t = {nt}; clamping", cfg.d_f);
            cfg.d_f = nt;
        }
        cfg
    }
}

pub fn truncate_alpha(alpha: &[f64], d_m: usize) -> TruncatedMessage {
    let keep = d_m.min(alpha.len());
    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(keep + 1);
    for (k, &v) in alpha.iter().enumerate() {
        if entries.len() == keep && entries.last().is_none_or(|e| !(v > e.1)) {
            continue;
        }
        // Equal values stay behind earlier (lower) indices.
        let at = entries.iter().position(|e| v > e.1).unwrap_or(entries.len());
        entries.insert(at, (k, v));
        entries.truncate(keep);
    }
    TruncatedMessage { entries }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Fresh,
    Running,
    Done,
}

/// The configuration set `B(d_m, d_f)` seen from edge `(i, j)`.
///
/// Every `(d_f - 1)`-subset of the interferers is taken in lexicographic
/// order; chosen interferers range over their truncated lists (last chosen
/// varies fastest), the rest sit at their top entry. Assignments are indexed
/// by symbol and slot `j` holds 0. Duplicates across subsets are emitted as
/// they occur.
pub struct ConfigSet {
    width: usize,
    cand: Vec<usize>,
    lens: Vec<usize>,
    d_f: usize,
    j: usize,
    interferers: Vec<usize>,
    chosen: Vec<usize>,
    pos: Vec<usize>,
    current: Vec<usize>,
    phase: Phase,
}

impl ConfigSet {
    pub fn new(truncated: &[TruncatedMessage], j: usize, d_m: usize, d_f: usize) -> Result<Self> {
        let nt = truncated.len();
        if j >= nt {
            return Err(Error::invalid(format!("symbol {j} out of range for {nt} antennas")));
        }
        if d_f == 0 || d_f > nt || d_m == 0 {
            return Err(Error::invalid(format!("invalid B({d_m}, {d_f}) for {nt} antennas")));
        }
        let width = d_m;
        let mut cand = vec![0; nt * width];
        let mut lens = vec![0; nt];
        for (t, m) in truncated.iter().enumerate() {
            for (slot, k) in cand[t * width..(t + 1) * width].iter_mut().zip(m.indices()) {
                *slot = k;
                lens[t] += 1;
            }
        }
        if lens.iter().enumerate().any(|(t, &l)| t != j && l == 0) {
            return Err(Error::invalid("empty truncated message"));
        }
        let mut set = Self {
            width,
            cand,
            lens,
            d_f,
            j,
            interferers: Vec::with_capacity(nt),
            chosen: Vec::with_capacity(d_f),
            pos: Vec::with_capacity(d_f),
            current: vec![0; nt],
            phase: Phase::Fresh,
        };
        set.rebind(j);
        Ok(set)
    }

    /// Restarts the stream for edge `(i, j)` with the same truncated messages.
    pub fn rebind(&mut self, j: usize) {
        let nt = self.lens.len();
        assert!(j < nt, "symbol {j} out of range for {nt} antennas");
        self.j = j;
        self.interferers.clear();
        self.interferers.extend((0..nt).filter(|&t| t != j));
        self.chosen.clear();
        self.chosen.extend(0..self.d_f - 1);
        self.pos.clear();
        self.pos.resize(self.d_f - 1, 0);
        for t in 0..nt {
            self.current[t] = if t == j { 0 } else { self.cand[t * self.width] };
        }
        self.phase = Phase::Fresh;
    }

    /// Number of assignments the stream emits, `C(N_t - 1, d_f - 1) d_m^(d_f - 1)`,
    /// when every truncated list holds `d_m` entries.
    pub fn cardinality(nt: usize, d_m: usize, d_f: usize) -> u128 {
        binomial(nt - 1, d_f - 1) * (d_m as u128).pow(d_f as u32 - 1)
    }

    fn advance(&mut self) -> bool {
        for p in (0..self.chosen.len()).rev() {
            let t = self.interferers[self.chosen[p]];
            self.pos[p] += 1;
            if self.pos[p] < self.lens[t] {
                self.current[t] = self.cand[t * self.width + self.pos[p]];
                return true;
            }
            self.pos[p] = 0;
            self.current[t] = self.cand[t * self.width];
        }
        false
    }

    fn next_subset(&mut self) -> bool {
        let r = self.chosen.len();
        let n = self.interferers.len();
        let mut p = r;
        while p > 0 {
            p -= 1;
            if self.chosen[p] < n - r + p {
                self.chosen[p] += 1;
                for q in p + 1..r {
                    self.chosen[q] = self.chosen[q - 1] + 1;
                }
                return true;
            }
        }
        false
    }
}

impl AssignmentSource for ConfigSet {
    fn next_assignment(&mut self) -> Option<&[usize]> {
        match self.phase {
            Phase::Fresh => self.phase = Phase::Running,
            Phase::Running => {
                // An exhausted odometer leaves every slot back at its top entry,
                // which is also the first assignment of the next subset.
                if !self.advance() && !self.next_subset() {
                    self.phase = Phase::Done;
                }
            }
            Phase::Done => {}
        }
        (self.phase != Phase::Done).then_some(&self.current[..])
    }
}

impl Iterator for ConfigSet {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.next_assignment().map(<[usize]>::to_vec)
    }
}

/// Streams `B(d_m, d_f)` for edge `(i, j)` from the truncated incoming messages of node `i`.
pub fn enumerate_config_set(
    truncated: &[TruncatedMessage],
    j: usize,
    d_m: usize,
    d_f: usize,
) -> Result<ConfigSet> {
    ConfigSet::new(truncated, j, d_m, d_f)
}

/// One `beta_ij` update over `B(d_m, d_f)`.
///
/// `truncated[t]` is the truncated `alpha_ti`; entry `j` is ignored.
pub fn beta_update_bsp(
    i: usize,
    j: usize,
    y_i: Complex64,
    pt: &ProductTable,
    truncated: &[TruncatedMessage],
    sigma2: f64,
    cfg: &BspConfig,
) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("sigma2 must be finite and > 0, got {sigma2}")));
    }
    let (nt, q) = (pt.nt(), pt.constellation_size());
    if truncated.len() != nt {
        return Err(Error::invalid("one truncated message per antenna is required"));
    }
    let cfg = cfg.clamped(q, nt);
    let mut priors = vec![f64::NEG_INFINITY; nt * q];
    for (t, m) in truncated.iter().enumerate() {
        for &(k, v) in &m.entries {
            priors[t * q + k] = v;
        }
    }
    let kernel = EdgeKernel {
        row: pt.row(i),
        priors: &priors,
        y_i,
        scale: 0.5 / sigma2,
        q,
    };
    let mut set = ConfigSet::new(truncated, j, cfg.d_m, cfg.d_f)?;
    let mut out = vec![0.0; q];
    kernel.beta(j, &mut set, &mut out);
    Ok(out)
}

/// The full detector: initialization, `Q_L` flooding iterations, bit LLRs.
pub fn run_bsp(
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &Constellation,
    cfg: &BspConfig,
    tally: &mut OpTally,
) -> Result<BitLlrOutput> {
    validate_observation(y, h, sigma2)?;
    let (nr, nt, q) = (h.rows(), h.cols(), c.size());
    if cfg.iterations == 0 {
        return Err(Error::invalid("iteration count must be >= 1"));
    }
    let cfg = cfg.clamped(q, nt);
    let mut grid = match cfg.init_mode {
        InitMode::Uniform => MessageGrid::uniform(nr, nt, q),
        InitMode::Lmmse => {
            let est = lmmse_estimate_with(y, h, sigma2, &mut OpTally::disabled())?;
            MessageGrid::from_prior(nr, &lmmse_prior_llrs(&est, c)?)?
        }
    };
    let scale = 0.5 / sigma2;
    tally.real_products(1);
    let pt = ProductTable::new(h, c);
    tally.complex_products((nr * nt * q) as u64);

    let sort_cost = (q * (usize::BITS - q.leading_zeros()) as usize) as u64;
    let mut priors = vec![0.0; nt * q];
    let mut out = vec![0.0; q];
    for iteration in 0..cfg.iterations {
        for i in 0..nr {
            grid.gather_alpha_into(i, &mut priors);
            let truncated: Vec<TruncatedMessage> = (0..nt)
                .map(|t| truncate_alpha(&priors[t * q..(t + 1) * q], cfg.d_m))
                .collect();
            tally.comparisons(nt as u64 * sort_cost);
            let kernel = EdgeKernel {
                row: pt.row(i),
                priors: &priors,
                y_i: y[i],
                scale,
                q,
            };
            let mut set = ConfigSet::new(&truncated, 0, cfg.d_m, cfg.d_f)?;
            for j in 0..nt {
                set.rebind(j);
                let visited = kernel.beta(j, &mut set, &mut out);
                if iteration == 0 {
                    tally.complex_products(q as u64 * visited.saturating_sub(1));
                }
                tally.additions(visited * (q as u64) * 4 + visited * 3 * (nt as u64 - 1) + q as u64);
                tally.comparisons(visited * q as u64);
                grid.beta_mut(i, j).copy_from_slice(&out);
            }
        }
        alpha_update(&mut grid);
        tally.additions((2 * nr * nt * q) as u64);
    }
    Ok(bit_llrs(&symbol_llrs(&grid), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{beta_update_full, run_original_bp};
    use crate::channel::ChannelInstance;
    use crate::numerics::RandomStream;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn msg(v: &[f64], d_m: usize) -> TruncatedMessage {
        truncate_alpha(v, d_m)
    }

    #[test]
    fn truncation_examples() {
        let t = truncate_alpha(&[0.0, 3.0, -1.0, 3.0], 2);
        assert_eq!(t.entries, vec![(1, 3.0), (3, 3.0)]);
        assert_eq!(truncate_alpha(&[0.0, -2.0, 5.0, 1.0], 1).entries, vec![(2, 5.0)]);
    }

    #[test]
    fn truncation_full_matches_naive_sort() {
        let mut rng = RandomStream::from_seed(3);
        for _ in 0..200 {
            let v: Vec<f64> = (0..16).map(|_| (rng.standard_normal() * 2.0).round()).collect();
            let t = truncate_alpha(&v, 99);
            let mut naive: Vec<(usize, f64)> = v.iter().copied().enumerate().collect();
            // Insertion sort keeps equal values in index order.
            for a in 1..naive.len() {
                let mut b = a;
                while b > 0 && naive[b - 1].1 < naive[b].1 {
                    naive.swap(b - 1, b);
                    b -= 1;
                }
            }
            assert_eq!(t.entries, naive);
        }
    }

    #[test]
    fn three_antenna_hand_enumeration() {
        let tr = vec![
            msg(&[0.0, 1.0, 2.0, 3.0], 2),
            msg(&[0.0, 0.0, 0.0, 0.0], 2),
            msg(&[5.0, 4.0, 0.0, 0.0], 2),
        ];
        let got: Vec<Vec<usize>> = enumerate_config_set(&tr, 1, 2, 2).unwrap().collect();
        assert_eq!(got, vec![vec![3, 0, 0], vec![2, 0, 0], vec![3, 0, 0], vec![3, 0, 1]]);
    }

    #[test]
    fn single_assignment_when_either_parameter_is_one() {
        let tr: Vec<_> = (0..4).map(|t| msg(&[t as f64, 1.0, 0.5, 2.0], 4)).collect();
        for (d_m, d_f) in [(1, 1), (1, 4), (4, 1), (3, 1)] {
            let got: Vec<_> = enumerate_config_set(&tr, 2, d_m, d_f).unwrap().collect();
            assert!(got.iter().all(|a| a == &got[0]), "B({d_m},{d_f})");
            let tops: Vec<usize> = tr.iter().map(TruncatedMessage::top).collect();
            for t in [0, 1, 3] {
                assert_eq!(got[0][t], tops[t]);
            }
        }
    }

    #[test]
    fn full_set_is_full_product() {
        let tr: Vec<_> = (0..3).map(|_| msg(&[0.0, 0.0, 0.0, 0.0], 4)).collect();
        let got: BTreeSet<Vec<usize>> = enumerate_config_set(&tr, 0, 4, 3).unwrap().collect();
        assert_eq!(got.len(), 16);
        assert_eq!(ConfigSet::cardinality(3, 4, 3), 16);
    }

    proptest! {
        #[test]
        fn cardinality_matches_formula(nt in 1usize..=6, d_m in 1usize..=4, df_seed in 0usize..6, seed in any::<u64>()) {
            let d_f = df_seed % nt + 1;
            let mut rng = RandomStream::from_seed(seed);
            let tr: Vec<_> = (0..nt)
                .map(|_| msg(&(0..4).map(|_| rng.standard_normal()).collect::<Vec<_>>(), d_m))
                .collect();
            let j = (seed % nt as u64) as usize;
            let n = enumerate_config_set(&tr, j, d_m, d_f).unwrap().count() as u128;
            prop_assert_eq!(n, ConfigSet::cardinality(nt, d_m, d_f));
        }

        #[test]
        fn search_spaces_nest(nt in 2usize..=4, a in 1usize..=4, b in 1usize..=4, fa in 1usize..=4, fb in 1usize..=4, seed in any::<u64>()) {
            let (d_m, d_m2) = (a.min(b), a.max(b));
            let (d_f, d_f2) = (fa.min(fb).min(nt), fa.max(fb).min(nt));
            let mut rng = RandomStream::from_seed(seed);
            let tr: Vec<_> = (0..nt)
                .map(|_| msg(&(0..4).map(|_| rng.standard_normal()).collect::<Vec<_>>(), 4))
                .collect();
            let small: BTreeSet<_> = enumerate_config_set(&tr, 0, d_m, d_f).unwrap().collect();
            let big: BTreeSet<_> = enumerate_config_set(&tr, 0, d_m2, d_f2).unwrap().collect();
            prop_assert!(small.is_subset(&big));
        }
    }

    fn random_grid(rng: &mut RandomStream, nr: usize, nt: usize, q: usize) -> MessageGrid {
        let mut g = MessageGrid::uniform(nr, nt, q);
        for j in 0..nt {
            for i in 0..nr {
                let a = g.alpha_mut(j, i);
                for v in a.iter_mut().skip(1) {
                    *v = 3.0 * rng.standard_normal();
                }
            }
        }
        g
    }

    #[test]
    fn full_configuration_equals_full_update() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(17);
        for _ in 0..20 {
            let inst = ChannelInstance::generate(&mut rng, 4, 3, &c, 0.08).unwrap();
            let grid = random_grid(&mut rng, 4, 3, 16);
            let pt = ProductTable::new(&inst.h, &c);
            let cfg = BspConfig::new(16, 3, 1, InitMode::Uniform).unwrap();
            for i in 0..4 {
                let tr: Vec<_> = (0..3).map(|t| truncate_alpha(grid.alpha(t, i), 16)).collect();
                for j in 0..3 {
                    let a = beta_update_bsp(i, j, inst.y[i], &pt, &tr, 0.08, &cfg).unwrap();
                    let b = beta_update_full(i, j, inst.y[i], &pt, &grid, 0.08);
                    assert_eq!(a[0], 0.0);
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn b11_hand_instance() {
        // QPSK, scale 1, h = [1, 1], y = 1, interferer pinned to index 1.
        let c = Constellation::new(2).unwrap();
        let h = ComplexMatrix::new(1, 2, vec![Complex64::new(1.0, 0.0); 2]).unwrap();
        let pt = ProductTable::new(&h, &c);
        let tr = vec![msg(&[0.0; 4], 1), msg(&[0.0, 2.0, -1.0, 0.5], 1)];
        let cfg = BspConfig::new(1, 1, 1, InitMode::Uniform).unwrap();
        let b = beta_update_bsp(0, 0, Complex64::new(1.0, 0.0), &pt, &tr, 0.5, &cfg).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        let want = [0.0, -2.0, 2.0 + 2.0 * r2, 2.0 * r2];
        for (g, w) in b.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{b:?}");
        }
    }

    fn rel_close(a: &BitLlrOutput, b: &BitLlrOutput) -> bool {
        a.r.iter().flatten().zip(b.r.iter().flatten()).all(|(x, y)| {
            (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0)
        })
    }

    #[test]
    fn full_bsp_equals_original_bp() {
        let c = Constellation::new(2).unwrap();
        let mut rng = RandomStream::from_seed(5);
        for _ in 0..30 {
            let inst = ChannelInstance::generate(&mut rng, 4, 3, &c, 0.3).unwrap();
            let cfg = BspConfig::new(4, 3, 5, InitMode::Uniform).unwrap();
            let a = run_bsp(&inst.y, &inst.h, 0.3, &c, &cfg, &mut OpTally::disabled()).unwrap();
            let b = run_original_bp(
                &inst.y,
                &inst.h,
                0.3,
                &c,
                5,
                MessageGrid::uniform(4, 3, 4),
                &mut OpTally::disabled(),
            )
            .unwrap();
            assert!(rel_close(&a, &b));
        }
    }

    #[test]
    fn degenerate_parameters_collapse() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(6);
        for _ in 0..10 {
            let inst = ChannelInstance::generate(&mut rng, 6, 4, &c, 0.05).unwrap();
            let run = |d_m, d_f| {
                let cfg = BspConfig::new(d_m, d_f, 4, InitMode::Lmmse).unwrap();
                run_bsp(&inst.y, &inst.h, 0.05, &c, &cfg, &mut OpTally::disabled()).unwrap()
            };
            let base = run(1, 1);
            assert_eq!(base, run(3, 1));
            assert_eq!(base, run(1, 4));
        }
    }

    #[test]
    fn counters_follow_closed_form() {
        let c = Constellation::new(4).unwrap();
        let mut rng = RandomStream::from_seed(12);
        let inst = ChannelInstance::generate(&mut rng, 8, 4, &c, 0.05).unwrap();
        for (d_m, d_f, want) in [(1, 1, 2_048u64), (2, 2, 12_288)] {
            let cfg = BspConfig::new(d_m, d_f, 10, InitMode::Lmmse).unwrap();
            let mut t = OpTally::enabled();
            let with = run_bsp(&inst.y, &inst.h, 0.05, &c, &cfg, &mut t).unwrap();
            // One real product for the 1 / (2 sigma2) reciprocal.
            assert_eq!(t.snapshot().unwrap().real_multiplications, want + 1);
            let without = run_bsp(&inst.y, &inst.h, 0.05, &c, &cfg, &mut OpTally::disabled()).unwrap();
            assert_eq!(with, without);
        }
    }

    #[test]
    fn config_validation() {
        assert!(BspConfig::new(0, 0, 0, InitMode::Uniform).is_err());
        let cfg = BspConfig::new(40, 9, 1, InitMode::Uniform).unwrap().clamped(16, 4);
        assert_eq!((cfg.d_m, cfg.d_f), (16, 4));
    }
}
