//! Decoy-state estimation: single-photon bounds, the linear-program
//! cross-check, and the secure key rate.

pub mod bounds;
pub mod lp;
pub mod rate;
pub mod reference;
pub mod yields;

pub use bounds::{
    decoy_bounds_finite, decoy_bounds_infinite, e11_upper_finite, e11_upper_infinite,
    y11_denominator, y11_denominator_mu_nu_squared, y11_lower_finite, y11_lower_infinite,
    y11_lower_infinite_mu_nu_squared, BoundMode, DecoyBounds,
};
pub use lp::{y11_oracle_lp, LpBounds, DEFAULT_CUTOFF};
pub use rate::{binary_entropy, key_rate, p11, KeyRateInputs, KeyRateReport};
pub use reference::reference_rates;
pub use yields::{forward_rates, poisson_pmf, poisson_tail, YieldGrid};

use crate::error::Result;
use crate::model::{pair_pulse_counts, Basis, IntensityLabel, PairCounts, ProtocolConfig};
use crate::tally::{fluct_bounds, BoundedRates, FluctuationConfig, RateMatrix};

pub const DEFAULT_EC_INEFFICIENCY: f64 = 1.16;

/// Fraction of slots in which both senders pick the signal intensity in Z.
pub fn signal_z_fraction(cfg: &ProtocolConfig) -> f64 {
    let p = cfg.intensity_probability(IntensityLabel::Signal) * cfg.basis_probability(Basis::Z);
    p * p
}

/// Full analysis of one rate matrix in both bound modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub bounded: BoundedRates,
    pub infinite: DecoyBounds,
    pub finite: DecoyBounds,
    pub key_infinite: KeyRateReport,
    pub key_finite: KeyRateReport,
}

impl ChainResult {
    pub fn bounds(&self, mode: BoundMode) -> &DecoyBounds {
        match mode {
            BoundMode::InfiniteKey => &self.infinite,
            BoundMode::FiniteNAlpha => &self.finite,
        }
    }

    pub fn key(&self, mode: BoundMode) -> &KeyRateReport {
        match mode {
            BoundMode::InfiniteKey => &self.key_infinite,
            BoundMode::FiniteNAlpha => &self.key_finite,
        }
    }
}

/// Key-rate inputs for `bounds`. A missing e11 bound enters as 1/2, which
/// zeroes the single-photon contribution.
pub fn key_inputs(
    rates: &RateMatrix,
    cfg: &ProtocolConfig,
    bounds: &DecoyBounds,
    f: f64,
) -> Result<KeyRateInputs> {
    let signal = rates.signal_signal(Basis::Z);
    Ok(KeyRateInputs {
        q: signal_z_fraction(cfg),
        p11: p11(cfg.intensities.signal)?,
        y11_z_lower: bounds.y11_z_lower,
        e11_x_upper: bounds.e11_x_upper.unwrap_or(0.5),
        gain_signal: signal.gain,
        qber_signal: signal.qber,
        ec_inefficiency: f,
        total_pulses: cfg.total_pulses,
    })
}

/// Rates → envelopes → bounds in both modes → key rates. Envelope widths
/// use the pulse counts implied by `cfg`.
pub fn analyze(
    rates: &RateMatrix,
    cfg: &ProtocolConfig,
    fluct: &FluctuationConfig,
    f: f64,
) -> Result<ChainResult> {
    analyze_with_counts(rates, &pair_pulse_counts(cfg), cfg, fluct, f)
}

/// [`analyze`] with explicit per-cell pulse counts.
pub fn analyze_with_counts(
    rates: &RateMatrix,
    counts: &PairCounts,
    cfg: &ProtocolConfig,
    fluct: &FluctuationConfig,
    f: f64,
) -> Result<ChainResult> {
    cfg.validate().into_result()?;
    let bounded = fluct_bounds(rates, counts, fluct)?;
    let infinite = decoy_bounds_infinite(rates, &cfg.intensities)?;
    let finite = decoy_bounds_finite(&bounded, &cfg.intensities)?;
    let key_infinite = key_rate(&key_inputs(rates, cfg, &infinite, f)?)?;
    let key_finite = key_rate(&key_inputs(rates, cfg, &finite, f)?)?;
    Ok(ChainResult {
        bounded,
        infinite,
        finite,
        key_infinite,
        key_finite,
    })
}
