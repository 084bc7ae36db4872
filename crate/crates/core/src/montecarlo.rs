//! Seeded Monte Carlo over pulse-pair slots.
//!
//! Every slot reads a fixed number of words from three ChaCha8 streams
//! (Alice, Bob, measurement node) at a position computed from the slot
//! index, so any slot can be regenerated in isolation and the tallies do
//! not depend on how slots are batched or scheduled across threads.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    Basis, Bb84State, CellKey, ChannelParams, DetectorParams, IntensityLabel, ProtocolConfig,
};
use crate::optics::{detector_uniforms, unit_f64, OpticalTrain, Party, PulseDescriptor};
use crate::tally::TallyMatrix;

/// Stream ids within one seed.
const ALICE_STREAM: u64 = 1;
const BOB_STREAM: u64 = 2;
const NODE_STREAM: u64 = 3;

/// Each slot consumes four `u64` draws (eight 32-bit words) per stream.
const WORDS_PER_SLOT: u128 = 8;

/// Slots per rayon work item.
pub const DEFAULT_BATCH: u64 = 1 << 14;

/// One party's random choices for a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotChoice {
    pub intensity: IntensityLabel,
    pub basis: Basis,
    pub bit: bool,
    pub phase: f64,
}

impl SlotChoice {
    pub fn state(&self) -> Bb84State {
        Bb84State::new(self.basis, self.bit)
    }

    pub fn pulse(&self, party: Party, cfg: &ProtocolConfig) -> PulseDescriptor {
        PulseDescriptor {
            party,
            intensity: cfg.intensities.class(self.intensity),
            state: self.state(),
            global_phase: self.phase,
        }
    }
}

/// A party's or the measurement node's random stream positioned at a slot.
#[derive(Debug, Clone)]
pub struct SlotStream {
    rng: ChaCha8Rng,
}

impl SlotStream {
    fn new(seed: u64, stream: u64, first_slot: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(first_slot as u128 * WORDS_PER_SLOT);
        Self { rng }
    }

    pub fn alice(seed: u64, first_slot: u64) -> Self {
        Self::new(seed, ALICE_STREAM, first_slot)
    }

    pub fn bob(seed: u64, first_slot: u64) -> Self {
        Self::new(seed, BOB_STREAM, first_slot)
    }

    pub fn node(seed: u64, first_slot: u64) -> Self {
        Self::new(seed, NODE_STREAM, first_slot)
    }

    /// Draws (intensity, basis, bit, phase) for the next slot.
    #[inline]
    pub fn choice(&mut self, cfg: &ProtocolConfig) -> SlotChoice {
        let u_int = unit_f64(self.rng.next_u64());
        let u_basis = unit_f64(self.rng.next_u64());
        let u_bit = unit_f64(self.rng.next_u64());
        let u_phase = unit_f64(self.rng.next_u64());
        let p = &cfg.intensity_probabilities;
        let intensity = if u_int < p[0] {
            IntensityLabel::Signal
        } else if u_int < p[0] + p[1] {
            IntensityLabel::Decoy1
        } else {
            IntensityLabel::Decoy2
        };
        SlotChoice {
            intensity,
            basis: if u_basis < cfg.basis_probability_z {
                Basis::Z
            } else {
                Basis::X
            },
            bit: u_bit < 0.5,
            phase: u_phase * TAU,
        }
    }

    /// One uniform per detector for the next slot.
    #[inline]
    pub fn detector_uniforms(&mut self) -> [f64; 4] {
        detector_uniforms(&mut self.rng)
    }
}

/// How slot batches are executed. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

fn run_batch(
    cfg: &ProtocolConfig,
    train: &OpticalTrain,
    seed: u64,
    start: u64,
    end: u64,
) -> TallyMatrix {
    let mut alice = SlotStream::alice(seed, start);
    let mut bob = SlotStream::bob(seed, start);
    let mut node = SlotStream::node(seed, start);
    let mut tally = TallyMatrix::new();
    for _ in start..end {
        let a = alice.choice(cfg);
        let b = bob.choice(cfg);
        let u = node.detector_uniforms();
        let outcome = train.trial(&a.pulse(Party::Alice, cfg), &b.pulse(Party::Bob, cfg), u);
        if a.basis == b.basis {
            tally.record(
                CellKey::new(a.basis, a.intensity, b.intensity),
                outcome.class.is_success(),
                outcome.error,
            );
        }
    }
    tally
}

/// Simulates `n_trials` slots and tallies the basis-matched ones.
pub fn run_monte_carlo(
    cfg: &ProtocolConfig,
    ch: &ChannelParams,
    det: &DetectorParams,
    n_trials: u64,
    seed: u64,
) -> Result<TallyMatrix> {
    run_monte_carlo_with(
        cfg,
        ch,
        det,
        n_trials,
        seed,
        DEFAULT_BATCH,
        Execution::Parallel,
    )
}

/// [`run_monte_carlo`] with explicit batching and execution mode.
pub fn run_monte_carlo_with(
    cfg: &ProtocolConfig,
    ch: &ChannelParams,
    det: &DetectorParams,
    n_trials: u64,
    seed: u64,
    batch: u64,
    execution: Execution,
) -> Result<TallyMatrix> {
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    if batch == 0 {
        return Err(Error::param("batch size must be at least 1"));
    }
    cfg.check_sampling()?;
    let train = OpticalTrain::new(ch, det)?;
    let n_batches = n_trials.div_ceil(batch);
    let bounds = |i: u64| (i * batch, ((i + 1) * batch).min(n_trials));
    let tally = match execution {
        Execution::Sequential => (0..n_batches)
            .map(|i| {
                let (s, e) = bounds(i);
                run_batch(cfg, &train, seed, s, e)
            })
            .sum(),
        Execution::Parallel => (0..n_batches)
            .into_par_iter()
            .map(|i| {
                let (s, e) = bounds(i);
                run_batch(cfg, &train, seed, s, e)
            })
            .reduce(TallyMatrix::new, |a, b| a.merge(&b)),
    };
    Ok(tally)
}
