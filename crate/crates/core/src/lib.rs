//! MIMO soft detection by belief-selective propagation, with reference
//! detectors and a Monte Carlo BER harness.

pub mod bp;
pub mod bsp;
pub mod channel;
pub mod cli;
pub mod error;
pub mod linear;
pub mod metrics;
pub mod modem;
pub mod numerics;
pub mod sim;

pub use bp::{
    alpha_update, beta_update_full, bit_llrs, run_ebrdf_bp, run_original_bp, symbol_llrs,
    MessageGrid, ProductTable,
};
pub use bsp::{
    beta_update_bsp, enumerate_config_set, run_bsp, truncate_alpha, BspConfig, ConfigSet, InitMode,
    TruncatedMessage,
};
pub use channel::{noise_variance_from_ebn0, ChannelInstance};
pub use error::{Error, Result};
pub use linear::{
    lmmse_estimate, lmmse_hard_detect, lmmse_prior_llrs, map_detect, BitLlrOutput, LinearEstimate,
};
pub use metrics::{predicted_multiplications, Algorithm, OpCounters, OpTally};
pub use modem::Constellation;
pub use numerics::{ComplexMatrix, ComplexVector, RandomStream};
pub use sim::{run_sweep, run_trial, wilson_interval, BerRecord, DetectorSpec, NoisePoints, SimulationConfig};
