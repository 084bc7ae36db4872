//! Deterministic expected gains and QBERs.
//!
//! Only the relative phase between the two pulses affects click statistics,
//! so the phase average reduces to a one-dimensional periodic integral,
//! which a uniform grid resolves to spectral accuracy.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::model::{Bb84State, CellKey, CellMap, ChannelParams, DetectorParams, ProtocolConfig};
use crate::optics::{
    coincidence_probabilities, is_error, CoincidenceClass, OpticalTrain, Party, PulseDescriptor,
};
use crate::tally::{CellRates, RateMatrix};

pub const MIN_QUADRATURE_POINTS: usize = 8;
pub const DEFAULT_QUADRATURE_POINTS: usize = 64;

/// Expected gain and error-gain of one (basis, intensity pair) cell,
/// averaged over the four bit combinations and the relative phase.
fn expected_cell(
    cfg: &ProtocolConfig,
    train: &OpticalTrain,
    key: CellKey,
    points: usize,
) -> CellRates {
    let layout = train.detector().layout;
    let mut gain = 0.0;
    let mut error_gain = 0.0;
    for bit_a in [false, true] {
        for bit_b in [false, true] {
            let b = PulseDescriptor {
                party: Party::Bob,
                intensity: cfg.intensities.class(key.bob),
                state: Bb84State::new(key.basis, bit_b),
                global_phase: 0.0,
            };
            let bob = train.transmit(&b);
            let err_plus = is_error(CoincidenceClass::PsiPlus, key.basis, bit_a, bit_b);
            let err_minus = is_error(CoincidenceClass::PsiMinus, key.basis, bit_a, bit_b);
            for k in 0..points {
                let a = PulseDescriptor {
                    party: Party::Alice,
                    intensity: cfg.intensities.class(key.alice),
                    state: Bb84State::new(key.basis, bit_a),
                    global_phase: TAU * k as f64 / points as f64,
                };
                let p = train.detector_probabilities(&train.transmit(&a), &bob);
                let (plus, minus) = coincidence_probabilities(&p, layout);
                gain += plus + minus;
                if err_plus {
                    error_gain += plus;
                }
                if err_minus {
                    error_gain += minus;
                }
            }
        }
    }
    let norm = 4.0 * points as f64;
    let gain = gain / norm;
    let error_gain = error_gain / norm;
    CellRates {
        gain,
        qber: if gain > 0.0 { error_gain / gain } else { 0.0 },
    }
}

/// Exact (to quadrature accuracy) expected gains and QBERs for all cells.
pub fn expected_tallies(
    cfg: &ProtocolConfig,
    ch: &ChannelParams,
    det: &DetectorParams,
    quadrature_points: usize,
) -> Result<RateMatrix> {
    if quadrature_points < MIN_QUADRATURE_POINTS {
        return Err(Error::param(format!(
            "need at least {MIN_QUADRATURE_POINTS} quadrature points, got {quadrature_points}"
        )));
    }
    cfg.check_sampling()?;
    let train = OpticalTrain::new(ch, det)?;
    RateMatrix::from_cells(CellMap::from_fn(|key| {
        expected_cell(cfg, &train, key, quadrature_points)
    }))
}
