//! Simulation and decoy-state analysis for polarization-encoding
//! measurement-device-independent QKD with weak coherent pulses.
//!
//! The crate covers the whole chain: a coherent-state model of the optical
//! Bell-state measurement (Monte Carlo and deterministic expectation
//! engines), tally accounting with Gaussian fluctuation envelopes, the
//! two-decoy single-photon yield and error bounds with a linear-program
//! cross-check, the secure key rate, a three-party protocol session, and a
//! parameter optimizer.

pub mod decoy;
pub mod error;
pub mod expected;
pub mod io;
pub mod model;
pub mod montecarlo;
pub mod optics;
pub mod optimizer;
pub mod protocol;
pub mod tally;

pub use error::{Error, Result};
pub use expected::expected_tallies;
pub use model::{
    pair_pulse_counts, validate_config, Basis, Bb84State, CellKey, CellMap, ChannelParams,
    DetectorLayout, DetectorParams, Intensities, IntensityClass, IntensityLabel, PairCounts,
    Polarization, ProtocolConfig,
};
pub use montecarlo::run_monte_carlo;
pub use optics::{CoincidenceClass, ModeAmplitudes, Party, PulseDescriptor};
pub use tally::{fluct_bounds, BoundedRates, FluctuationConfig, RateMatrix, TallyMatrix};
