//! Coherent-state model of the optical train: polarization encoding,
//! misalignment, fiber loss, the 50:50 beam splitter and polarizing beam
//! splitters of the Bell-state measurement, and threshold detectors.
//!
//! Phase-randomized weak coherent pulses stay coherent states through every
//! linear-optical stage, so each detector sees a coherent state of known
//! amplitude. The click statistics of distinct detector modes therefore
//! factorize exactly: given the amplitudes, each detector clicks
//! independently with probability `1 - (1 - p_d) exp(-η |α|²)`.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{
    Basis, Bb84State, ChannelParams, DetectorLayout, DetectorParams, IntensityClass,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    /// Spatial input port at the beam splitter.
    pub fn port(self) -> usize {
        match self {
            Party::Alice => 0,
            Party::Bob => 1,
        }
    }
}

/// One emitted pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseDescriptor {
    pub party: Party,
    pub intensity: IntensityClass,
    pub state: Bb84State,
    /// Global phase in `[0, 2π)`.
    pub global_phase: f64,
}

impl PulseDescriptor {
    pub fn new(
        party: Party,
        intensity: IntensityClass,
        state: Bb84State,
        global_phase: f64,
    ) -> Result<Self> {
        if !(0.0..TAU).contains(&global_phase) {
            return Err(Error::param(format!(
                "global phase {global_phase} outside [0, 2π)"
            )));
        }
        let m = intensity.mean_photon_number;
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::param(format!(
                "mean photon number {m} must be finite and >= 0"
            )));
        }
        Ok(Self {
            party,
            intensity,
            state,
            global_phase,
        })
    }
}

/// Polarization index within a spatial mode.
pub const H: usize = 0;
pub const V: usize = 1;

/// Complex amplitudes of four optical modes, indexed `[spatial][polarization]`.
///
/// Before the beam splitter the spatial index is the input port (0 = Alice,
/// 1 = Bob); after it, the output port (0 = detectors D1x, 1 = D2x).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeAmplitudes {
    pub modes: [[Complex64; 2]; 2],
}

impl ModeAmplitudes {
    pub fn energy(&self) -> f64 {
        self.modes.iter().flatten().map(|a| a.norm_sqr()).sum()
    }

    /// The (H, V) pair of one spatial mode.
    pub fn spatial(&self, port: usize) -> [Complex64; 2] {
        self.modes[port]
    }
}

/// Single-photon detectors behind the two polarizing beam splitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    D1H,
    D1V,
    D2H,
    D2V,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::D1H, Detector::D1V, Detector::D2H, Detector::D2V];

    pub fn index(self) -> usize {
        match self {
            Detector::D1H => 0,
            Detector::D1V => 1,
            Detector::D2H => 2,
            Detector::D2V => 3,
        }
    }

    /// (output port, polarization) feeding this detector.
    pub fn mode(self) -> (usize, usize) {
        match self {
            Detector::D1H => (0, H),
            Detector::D1V => (0, V),
            Detector::D2H => (1, H),
            Detector::D2V => (1, V),
        }
    }

    pub fn is_active(self, layout: DetectorLayout) -> bool {
        match layout {
            DetectorLayout::Full => true,
            DetectorLayout::OnePbs => matches!(self, Detector::D1H | Detector::D1V),
        }
    }
}

/// Bell-state announcement class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoincidenceClass {
    PsiPlus,
    PsiMinus,
    None,
}

impl CoincidenceClass {
    pub fn is_success(self) -> bool {
        !matches!(self, CoincidenceClass::None)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CoincidenceClass::PsiPlus => "psi_plus",
            CoincidenceClass::PsiMinus => "psi_minus",
            CoincidenceClass::None => "none",
        }
    }
}

/// Click flags indexed by [`Detector::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ClickPattern(pub [bool; 4]);

impl ClickPattern {
    pub fn from_detectors(clicked: &[Detector]) -> Self {
        let mut p = [false; 4];
        for d in clicked {
            p[d.index()] = true;
        }
        ClickPattern(p)
    }

    pub fn clicked(&self, d: Detector) -> bool {
        self.0[d.index()]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|c| **c).count()
    }
}

fn jones(state: Bb84State) -> [Complex64; 2] {
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    match (state.basis, state.bit) {
        (Basis::Z, false) => [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        (Basis::Z, true) => [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        (Basis::X, false) => [s, s],
        (Basis::X, true) => [s, -s],
    }
}

/// `sqrt(mean) e^{iφ} jones(state)` placed in the sender's spatial mode.
pub fn encode_pulse(p: &PulseDescriptor) -> ModeAmplitudes {
    let amp = Complex64::from_polar(p.intensity.mean_photon_number.sqrt(), p.global_phase);
    let j = jones(p.state);
    let mut out = ModeAmplitudes::default();
    out.modes[p.party.port()] = [amp * j[H], amp * j[V]];
    out
}

/// Retardance of the H–V axis rotation whose diagonal-basis error is `e_d`:
/// `θ = 2 asin(sqrt(e_d))`, so `|⟨−|U|+⟩|² = sin²(θ/2) = e_d`.
pub fn misalignment_angle(e_d: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&e_d) {
        return Err(Error::param(format!("misalignment {e_d} outside [0, 0.5]")));
    }
    Ok(2.0 * e_d.sqrt().asin())
}

/// Applies `diag(1, e^{iθ})` to every spatial mode's polarization pair.
/// Rectilinear states keep their magnitudes.
pub fn apply_misalignment(m: &ModeAmplitudes, e_d: f64) -> Result<ModeAmplitudes> {
    let phase = Complex64::from_polar(1.0, misalignment_angle(e_d)?);
    let mut out = *m;
    for port in &mut out.modes {
        port[V] *= phase;
    }
    Ok(out)
}

/// Scales every amplitude by `sqrt(η_ch)`.
pub fn apply_loss(m: &ModeAmplitudes, transmittance: f64) -> Result<ModeAmplitudes> {
    if !(transmittance > 0.0 && transmittance <= 1.0) {
        return Err(Error::param(format!(
            "transmittance {transmittance} outside (0, 1]"
        )));
    }
    let s = transmittance.sqrt();
    let mut out = *m;
    out.modes.iter_mut().flatten().for_each(|a| *a *= s);
    Ok(out)
}

/// Symmetric 50:50 beam splitter followed by the two polarizing beam
/// splitters: per polarization, `out1 = (a + i b)/√2`, `out2 = (i a + b)/√2`.
pub fn bsm_output_amplitudes(alice: &ModeAmplitudes, bob: &ModeAmplitudes) -> ModeAmplitudes {
    let i = Complex64::i();
    let mut out = ModeAmplitudes::default();
    for pol in [H, V] {
        let a = alice.modes[0][pol] + bob.modes[0][pol];
        let b = alice.modes[1][pol] + bob.modes[1][pol];
        out.modes[0][pol] = (a + i * b) * FRAC_1_SQRT_2;
        out.modes[1][pol] = (i * a + b) * FRAC_1_SQRT_2;
    }
    out
}

#[inline]
fn click_probability(mean_photons: f64, det: &DetectorParams) -> f64 {
    1.0 - (1.0 - det.dark_count_probability) * (-det.efficiency * mean_photons).exp()
}

/// Per-detector click probability; inactive detectors report 0.
pub fn click_probabilities(out: &ModeAmplitudes, det: &DetectorParams) -> [f64; 4] {
    let mut p = [0.0; 4];
    for d in Detector::ALL {
        if d.is_active(det.layout) {
            let (port, pol) = d.mode();
            p[d.index()] = click_probability(out.modes[port][pol].norm_sqr(), det);
        }
    }
    p
}

/// Exactly two clicks in the same PBS output is ψ+, exactly two across
/// outputs with orthogonal polarizations is ψ−, anything else is no
/// announcement.
pub fn classify_coincidence(c: &ClickPattern, det: &DetectorParams) -> CoincidenceClass {
    let mut c = *c;
    for d in Detector::ALL {
        if !d.is_active(det.layout) {
            c.0[d.index()] = false;
        }
    }
    if c.count() != 2 {
        return CoincidenceClass::None;
    }
    use Detector::*;
    if (c.clicked(D1H) && c.clicked(D1V)) || (c.clicked(D2H) && c.clicked(D2V)) {
        CoincidenceClass::PsiPlus
    } else if (c.clicked(D1H) && c.clicked(D2V)) || (c.clicked(D1V) && c.clicked(D2H)) {
        CoincidenceClass::PsiMinus
    } else {
        CoincidenceClass::None
    }
}

/// QBER convention for a basis-matched announcement: ψ+ is anticorrelated
/// in Z and correlated in X; ψ− is anticorrelated in both.
pub fn is_error(class: CoincidenceClass, basis: Basis, bit_a: bool, bit_b: bool) -> bool {
    match (class, basis) {
        (CoincidenceClass::None, _) => false,
        (CoincidenceClass::PsiPlus, Basis::Z) => bit_a == bit_b,
        (CoincidenceClass::PsiPlus, Basis::X) => bit_a != bit_b,
        (CoincidenceClass::PsiMinus, _) => bit_a == bit_b,
    }
}

/// Probabilities of ψ+ and ψ− given per-detector click probabilities.
pub fn coincidence_probabilities(p: &[f64; 4], layout: DetectorLayout) -> (f64, f64) {
    let [p1h, p1v, p2h, p2v] = *p;
    match layout {
        DetectorLayout::OnePbs => (p1h * p1v, 0.0),
        DetectorLayout::Full => {
            let q = |x: f64| 1.0 - x;
            let plus = p1h * p1v * q(p2h) * q(p2v) + p2h * p2v * q(p1h) * q(p1v);
            let minus = p1h * p2v * q(p1v) * q(p2h) + p1v * p2h * q(p1h) * q(p2v);
            (plus, minus)
        }
    }
}

/// Outcome of one pulse-pair slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub class: CoincidenceClass,
    pub clicks: ClickPattern,
    /// Meaningful only when both parties used the same basis.
    pub error: bool,
}

/// Uniform `[0, 1)` from the top 53 bits of a `u64`.
#[inline]
pub(crate) fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Precomputed channel/detector constants for the per-slot hot path.
#[derive(Debug, Clone, Copy)]
pub struct OpticalTrain {
    amplitude_loss: f64,
    misalignment_phase: Complex64,
    det: DetectorParams,
}

impl OpticalTrain {
    pub fn new(ch: &ChannelParams, det: &DetectorParams) -> Result<Self> {
        ch.validate().into_result()?;
        det.validate().into_result()?;
        let eta = ch.transmittance();
        if !(eta > 0.0) {
            return Err(Error::param("channel transmittance underflows to zero"));
        }
        Ok(Self {
            amplitude_loss: eta.sqrt(),
            misalignment_phase: Complex64::from_polar(1.0, misalignment_angle(ch.misalignment)?),
            det: *det,
        })
    }

    pub fn detector(&self) -> &DetectorParams {
        &self.det
    }

    /// Sender-side stages: misalignment on Alice's side, then fiber loss.
    #[inline]
    pub fn transmit(&self, pulse: &PulseDescriptor) -> ModeAmplitudes {
        let mut m = encode_pulse(pulse);
        let port = pulse.party.port();
        if pulse.party == Party::Alice {
            m.modes[port][V] *= self.misalignment_phase;
        }
        m.modes[port][H] *= self.amplitude_loss;
        m.modes[port][V] *= self.amplitude_loss;
        m
    }

    /// Click probabilities at the four detectors for two arriving pulses.
    #[inline]
    pub fn detector_probabilities(&self, alice: &ModeAmplitudes, bob: &ModeAmplitudes) -> [f64; 4] {
        click_probabilities(&bsm_output_amplitudes(alice, bob), &self.det)
    }

    /// The measurement node's view: amplitudes in, click pattern and class
    /// out, with one uniform per detector.
    #[inline]
    pub fn measure(
        &self,
        alice: &ModeAmplitudes,
        bob: &ModeAmplitudes,
        uniforms: [f64; 4],
    ) -> (ClickPattern, CoincidenceClass) {
        let p = self.detector_probabilities(alice, bob);
        let clicks = ClickPattern(std::array::from_fn(|i| uniforms[i] < p[i]));
        (clicks, classify_coincidence(&clicks, &self.det))
    }

    #[inline]
    pub fn trial(
        &self,
        a: &PulseDescriptor,
        b: &PulseDescriptor,
        uniforms: [f64; 4],
    ) -> TrialOutcome {
        let (clicks, class) = self.measure(&self.transmit(a), &self.transmit(b), uniforms);
        let error = a.state.basis == b.state.basis
            && is_error(class, a.state.basis, a.state.bit, b.state.bit);
        TrialOutcome {
            class,
            clicks,
            error,
        }
    }
}

/// Draws one uniform per detector (four `u64` words) from `rng`.
#[inline]
pub(crate) fn detector_uniforms<R: RngCore + ?Sized>(rng: &mut R) -> [f64; 4] {
    std::array::from_fn(|_| unit_f64(rng.next_u64()))
}

/// encode → misalignment (Alice) → loss → BSM → independent clicks →
/// classification, with the error flag for basis-matched slots.
pub fn simulate_trial<R: RngCore + ?Sized>(
    a: &PulseDescriptor,
    b: &PulseDescriptor,
    ch: &ChannelParams,
    det: &DetectorParams,
    rng: &mut R,
) -> Result<TrialOutcome> {
    if a.party != Party::Alice || b.party != Party::Bob {
        return Err(Error::param(
            "simulate_trial expects Alice's pulse then Bob's",
        ));
    }
    let train = OpticalTrain::new(ch, det)?;
    Ok(train.trial(a, b, detector_uniforms(rng)))
}
