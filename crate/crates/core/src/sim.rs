//! Monte Carlo BER engine.
//!
//! Every trial draws its own stream from `(seed, point, trial)`, so results
//! depend only on the configuration. Trials run in fixed-size batches and the
//! early-stop check happens between batches, which keeps the stopping point
//! independent of the worker count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bp::{run_ebrdf_bp, run_original_bp_capped, MessageGrid, DEFAULT_ENUMERATION_CAP};
use crate::bsp::{run_bsp, BspConfig, InitMode};
use crate::channel::{noise_variance_from_ebn0, ChannelInstance};
use crate::error::{Error, Result};
use crate::linear::{lmmse_estimate_with, lmmse_hard_detect, lmmse_prior_llrs, map_detect_with};
use crate::metrics::OpTally;
use crate::modem::Constellation;
use crate::numerics::RandomStream;

/// Noise variance handed to detectors when the channel is noiseless.
pub const NOISELESS_SIGMA2_FLOOR: f64 = 1e-12;

/// Trials per early-stop check.
pub const BATCH_SIZE: u64 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorSpec {
    Map,
    Mmse,
    OriginalBp { init: InitMode },
    Bsp { d_m: usize, d_f: usize, init: InitMode },
    Ebrdf { d_f: usize },
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Map => write!(f, "map"),
            Self::Mmse => write!(f, "mmse"),
            Self::OriginalBp { init: InitMode::Uniform } => write!(f, "obp"),
            Self::OriginalBp { init: InitMode::Lmmse } => write!(f, "obp:lmmse"),
            Self::Bsp { d_m, d_f, init: InitMode::Lmmse } => write!(f, "bsp:{d_m}:{d_f}"),
            Self::Bsp { d_m, d_f, init: InitMode::Uniform } => write!(f, "bsp:{d_m}:{d_f}:uniform"),
            Self::Ebrdf { d_f } => write!(f, "ebrdf:{d_f}"),
        }
    }
}

fn parse_init(s: &str) -> Result<InitMode> {
    match s {
        "lmmse" | "mmse" => Ok(InitMode::Lmmse),
        "uniform" | "zero" => Ok(InitMode::Uniform),
        _ => Err(Error::invalid(format!("unknown init mode '{s}' (expected lmmse or uniform)"))),
    }
}

fn parse_count(s: &str, what: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(Error::invalid(format!("{what} must be a positive integer, got '{s}'"))),
    }
}

impl FromStr for DetectorSpec {
    type Err = Error;

    /// `map`, `mmse`, `obp[:init]`, `bsp:<d_m>:<d_f>[:init]`, `ebrdf:<d_f>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["map"] => Ok(Self::Map),
            ["mmse"] => Ok(Self::Mmse),
            ["obp"] => Ok(Self::OriginalBp { init: InitMode::Uniform }),
            ["obp", init] => Ok(Self::OriginalBp { init: parse_init(init)? }),
            ["bsp", dm, df] | ["bsp", dm, df, _] => Ok(Self::Bsp {
                d_m: parse_count(dm, "d_m")?,
                d_f: parse_count(df, "d_f")?,
                init: match parts.get(3) {
                    Some(init) => parse_init(init)?,
                    None => InitMode::Lmmse,
                },
            }),
            ["ebrdf", df] => Ok(Self::Ebrdf { d_f: parse_count(df, "d_f")? }),
            _ => Err(Error::invalid(format!(
                "unknown detector '{s}' (expected map, mmse, obp[:init], bsp:<d_m>:<d_f>[:init] or ebrdf:<d_f>)"
            ))),
        }
    }
}

impl Serialize for DetectorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DetectorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where each sweep point sits on the noise axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePoints {
    EbN0Db(Vec<f64>),
    Sigma2(Vec<f64>),
}

impl NoisePoints {
    pub fn len(&self) -> usize {
        match self {
            Self::EbN0Db(v) | Self::Sigma2(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub nr: usize,
    pub nt: usize,
    pub bits_per_symbol: usize,
    pub noise: NoisePoints,
    pub max_vectors: u64,
    /// Stop a point once every detector has this many bit errors.
    pub target_bit_errors: Option<u64>,
    pub iterations: usize,
    pub detectors: Vec<DetectorSpec>,
    pub master_seed: u64,
    pub workers: usize,
    pub map_cap: usize,
}

impl SimulationConfig {
    /// Defaults for everything but the geometry, noise grid and roster.
    pub fn new(
        nr: usize,
        nt: usize,
        bits_per_symbol: usize,
        noise: NoisePoints,
        detectors: Vec<DetectorSpec>,
    ) -> Self {
        Self {
            nr,
            nt,
            bits_per_symbol,
            noise,
            max_vectors: 100_000,
            target_bit_errors: Some(400),
            iterations: 10,
            detectors,
            master_seed: 1,
            workers: 1,
            map_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Every violated constraint, one per entry.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.nr == 0 {
            v.push("N_r must be >= 1".to_string());
        }
        if self.nt == 0 {
            v.push("N_t must be >= 1".to_string());
        }
        if self.bits_per_symbol % 2 != 0 || !(2..=8).contains(&self.bits_per_symbol) {
            v.push(format!("bits per symbol must be even and in 2..=8, got {}", self.bits_per_symbol));
        }
        if self.noise.is_empty() {
            v.push("at least one noise point is required".to_string());
        }
        match &self.noise {
            NoisePoints::EbN0Db(p) if p.iter().any(|x| x.is_nan() || *x == f64::NEG_INFINITY) => {
                v.push("Eb/N0 points must be numbers".to_string());
            }
            NoisePoints::Sigma2(p) if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) => {
                v.push("sigma2 points must be finite and >= 0".to_string());
            }
            _ => {}
        }
        if self.max_vectors == 0 {
            v.push("vector count must be >= 1".to_string());
        }
        if self.target_bit_errors == Some(0) {
            v.push("target bit errors must be >= 1 when set".to_string());
        }
        if self.iterations == 0 {
            v.push("iteration count must be >= 1".to_string());
        }
        if self.detectors.is_empty() {
            v.push("detector roster is empty".to_string());
        }
        if self.workers == 0 {
            v.push("worker count must be >= 1".to_string());
        }
        for d in &self.detectors {
            if let DetectorSpec::Ebrdf { d_f } = d {
                if *d_f > self.nt {
                    v.push(format!("{d}: d_f exceeds N_t = {}", self.nt));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }

    pub fn sigma2_at(&self, point: usize) -> f64 {
        match &self.noise {
            NoisePoints::EbN0Db(p) => {
                noise_variance_from_ebn0(p[point], self.bits_per_symbol, self.nt, self.nr)
            }
            NoisePoints::Sigma2(p) => p[point],
        }
    }

    pub fn ebn0_at(&self, point: usize) -> Option<f64> {
        match &self.noise {
            NoisePoints::EbN0Db(p) => Some(p[point]),
            NoisePoints::Sigma2(_) => None,
        }
    }
}

/// Error counts of one detector over some number of trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorTally {
    pub vectors: u64,
    pub bit_errors: u64,
    pub symbol_errors: u64,
    pub multiplications: u64,
    pub failures: u64,
}

impl std::ops::AddAssign for ErrorTally {
    fn add_assign(&mut self, o: Self) {
        self.vectors += o.vectors;
        self.bit_errors += o.bit_errors;
        self.symbol_errors += o.symbol_errors;
        self.multiplications += o.multiplications;
        self.failures += o.failures;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRecord {
    pub detector: String,
    pub ebn0_db: Option<f64>,
    pub sigma2: f64,
    pub vectors: u64,
    pub bit_errors: u64,
    pub bits_total: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub symbol_errors: u64,
    pub mults_per_use: f64,
    /// Trials on which the detector itself failed; those trials are not in the counts.
    #[serde(default, skip_serializing)]
    pub failures: u64,
}

/// Runs one detector on one instance; returns hard bits.
pub fn detect(
    spec: &DetectorSpec,
    inst: &ChannelInstance,
    c: &Constellation,
    iterations: usize,
    map_cap: usize,
    tally: &mut OpTally,
) -> Result<Vec<u8>> {
    let sigma2 = if inst.sigma2 > 0.0 { inst.sigma2 } else { NOISELESS_SIGMA2_FLOOR };
    let (y, h) = (&inst.y, &inst.h);
    let (nr, nt, q) = (inst.nr(), inst.nt(), c.size());
    let out = match *spec {
        DetectorSpec::Map => map_detect_with(y, h, sigma2, c, map_cap, tally)?,
        DetectorSpec::Mmse => {
            let est = lmmse_estimate_with(y, h, sigma2, tally)?;
            return Ok(lmmse_hard_detect(&est, c));
        }
        DetectorSpec::OriginalBp { init } => {
            let grid = initial_grid(init, inst, sigma2, c)?;
            run_original_bp_capped(y, h, sigma2, c, iterations, grid, map_cap, tally)?
        }
        DetectorSpec::Bsp { d_m, d_f, init } => {
            let cfg = BspConfig::new(d_m, d_f, iterations, init)?;
            run_bsp(y, h, sigma2, c, &cfg, tally)?
        }
        DetectorSpec::Ebrdf { d_f } => {
            run_ebrdf_bp(y, h, sigma2, c, iterations, d_f, MessageGrid::uniform(nr, nt, q), tally)?
        }
    };
    Ok(out.hard_bits)
}

fn initial_grid(init: InitMode, inst: &ChannelInstance, sigma2: f64, c: &Constellation) -> Result<MessageGrid> {
    match init {
        InitMode::Uniform => Ok(MessageGrid::uniform(inst.nr(), inst.nt(), c.size())),
        InitMode::Lmmse => {
            let est = lmmse_estimate_with(&inst.y, &inst.h, sigma2, &mut OpTally::disabled())?;
            MessageGrid::from_prior(inst.nr(), &lmmse_prior_llrs(&est, c)?)
        }
    }
}

/// Draws one channel use and scores every detector in the roster on it.
pub fn run_trial(config: &SimulationConfig, point: usize, trial: u64) -> Result<Vec<ErrorTally>> {
    if point >= config.noise.len() {
        return Err(Error::invalid(format!("noise point {point} out of range")));
    }
    let c = Constellation::new(config.bits_per_symbol)?;
    run_trial_with(config, &c, point, trial)
}

fn run_trial_with(
    config: &SimulationConfig,
    c: &Constellation,
    point: usize,
    trial: u64,
) -> Result<Vec<ErrorTally>> {
    let mut rng = RandomStream::for_trial(config.master_seed, point as u64, trial);
    let inst = ChannelInstance::generate(&mut rng, config.nr, config.nt, c, config.sigma2_at(point))?;
    let m = config.bits_per_symbol;
    Ok(config
        .detectors
        .iter()
        .map(|spec| {
            let mut tally = OpTally::enabled();
            match detect(spec, &inst, c, config.iterations, config.map_cap, &mut tally) {
                Ok(bits) => {
                    let mut t = ErrorTally {
                        vectors: 1,
                        multiplications: tally.snapshot().map_or(0, |s| s.real_multiplications),
                        ..Default::default()
                    };
                    for (got, want) in bits.chunks(m).zip(inst.bits.chunks(m)) {
                        let wrong = got.iter().zip(want).filter(|(a, b)| a != b).count() as u64;
                        t.bit_errors += wrong;
                        t.symbol_errors += u64::from(wrong > 0);
                    }
                    t
                }
                Err(e) => {
                    log::warn!("{spec} failed on point {point} trial {trial}: {e}");
                    ErrorTally {
                        failures: 1,
                        ..Default::default()
                    }
                }
            }
        })
        .collect())
}

fn add_all(mut a: Vec<ErrorTally>, b: Vec<ErrorTally>) -> Vec<ErrorTally> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// Runs every noise point and returns one record per (detector, point),
/// ordered by point then roster position.
pub fn run_sweep(config: &SimulationConfig) -> Result<Vec<BerRecord>> {
    config.validate()?;
    let c = Constellation::new(config.bits_per_symbol)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let n_det = config.detectors.len();
    let bits_per_vector = (config.bits_per_symbol * config.nt) as u64;
    let mut records = Vec::with_capacity(n_det * config.noise.len());
    for point in 0..config.noise.len() {
        let mut totals = vec![ErrorTally::default(); n_det];
        let mut next = 0u64;
        while next < config.max_vectors {
            let end = (next + BATCH_SIZE).min(config.max_vectors);
            let batch = pool.install(|| {
                (next..end)
                    .into_par_iter()
                    .map(|trial| run_trial_with(config, &c, point, trial))
                    .try_reduce(|| vec![ErrorTally::default(); n_det], |a, b| Ok(add_all(a, b)))
            })?;
            totals = add_all(totals, batch);
            next = end;
            if let Some(target) = config.target_bit_errors {
                if totals.iter().all(|t| t.bit_errors >= target) {
                    break;
                }
            }
        }
        log::info!(
            "point {} ({}) done after {next} vectors",
            point,
            config.ebn0_at(point).map_or_else(|| format!("sigma2 {}", config.sigma2_at(point)), |e| format!("{e} dB"))
        );
        for (spec, t) in config.detectors.iter().zip(&totals) {
            let bits_total = t.vectors * bits_per_vector;
            let (ber, ci_low, ci_high) = if bits_total == 0 {
                (f64::NAN, 0.0, 1.0)
            } else {
                let (lo, hi) = wilson_interval(t.bit_errors, bits_total, 0.95)?;
                (t.bit_errors as f64 / bits_total as f64, lo, hi)
            };
            records.push(BerRecord {
                detector: spec.to_string(),
                ebn0_db: config.ebn0_at(point),
                sigma2: config.sigma2_at(point),
                vectors: t.vectors,
                bit_errors: t.bit_errors,
                bits_total,
                ber,
                ci_low,
                ci_high,
                symbol_errors: t.symbol_errors,
                mults_per_use: if t.vectors == 0 { 0.0 } else { t.multiplications as f64 / t.vectors as f64 },
                failures: t.failures,
            });
        }
    }
    Ok(records)
}

/// Wilson score interval for `errors` successes in `total` trials.
pub fn wilson_interval(errors: u64, total: u64, confidence: f64) -> Result<(f64, f64)> {
    if total == 0 || errors > total {
        return Err(Error::invalid(format!("need 0 <= errors <= total, total >= 1; got {errors}/{total}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence must be in (0, 1), got {confidence}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let n = total as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if errors == 0 { 0.0 } else { (centre - half).clamp(0.0, p) };
    let high = if errors == total { 1.0 } else { (centre + half).clamp(p, 1.0) };
    Ok((low, high))
}
