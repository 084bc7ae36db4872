//! Value types shared by every stage: bases and BB84 states, the three
//! intensity classes, source/channel/detector configuration, and the
//! per-(basis, intensity pair) cell bookkeeping.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoding basis. `Z` is rectilinear (H/V), `X` is diagonal (+/−).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            other => Err(Error::Format(format!("unknown basis `{other}`"))),
        }
    }
}

/// The four BB84 polarization labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
    Plus,
    Minus,
}

/// A BB84 state as (basis, bit): H=(Z,0), V=(Z,1), +=(X,0), −=(X,1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bb84State {
    pub basis: Basis,
    pub bit: bool,
}

impl Bb84State {
    pub fn new(basis: Basis, bit: bool) -> Self {
        Self { basis, bit }
    }

    pub fn polarization(self) -> Polarization {
        match (self.basis, self.bit) {
            (Basis::Z, false) => Polarization::H,
            (Basis::Z, true) => Polarization::V,
            (Basis::X, false) => Polarization::Plus,
            (Basis::X, true) => Polarization::Minus,
        }
    }
}

impl From<Polarization> for Bb84State {
    fn from(p: Polarization) -> Self {
        match p {
            Polarization::H => Bb84State::new(Basis::Z, false),
            Polarization::V => Bb84State::new(Basis::Z, true),
            Polarization::Plus => Bb84State::new(Basis::X, false),
            Polarization::Minus => Bb84State::new(Basis::X, true),
        }
    }
}

/// Which of the three source intensities a pulse was prepared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityLabel {
    Signal,
    Decoy1,
    Decoy2,
}

impl IntensityLabel {
    pub const ALL: [IntensityLabel; 3] = [
        IntensityLabel::Signal,
        IntensityLabel::Decoy1,
        IntensityLabel::Decoy2,
    ];

    pub fn index(self) -> usize {
        match self {
            IntensityLabel::Signal => 0,
            IntensityLabel::Decoy1 => 1,
            IntensityLabel::Decoy2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntensityLabel::Signal => "signal",
            IntensityLabel::Decoy1 => "decoy1",
            IntensityLabel::Decoy2 => "decoy2",
        }
    }
}

impl fmt::Display for IntensityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntensityLabel {
    type Err = Error;

    /// Accepts `signal`/`decoy1`/`decoy2` and the short Greek-letter names
    /// `mu`/`nu`/`omega`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "signal" | "mu" => Ok(IntensityLabel::Signal),
            "decoy1" | "nu" => Ok(IntensityLabel::Decoy1),
            "decoy2" | "omega" => Ok(IntensityLabel::Decoy2),
            other => Err(Error::Format(format!("unknown intensity `{other}`"))),
        }
    }
}

/// A labelled intensity with its mean photon number per pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityClass {
    pub label: IntensityLabel,
    pub mean_photon_number: f64,
}

/// Mean photon numbers of the signal state and the two decoys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub signal: f64,
    pub decoy1: f64,
    pub decoy2: f64,
}

impl Intensities {
    pub fn new(signal: f64, decoy1: f64, decoy2: f64) -> Self {
        Self {
            signal,
            decoy1,
            decoy2,
        }
    }

    pub fn mean(&self, label: IntensityLabel) -> f64 {
        match label {
            IntensityLabel::Signal => self.signal,
            IntensityLabel::Decoy1 => self.decoy1,
            IntensityLabel::Decoy2 => self.decoy2,
        }
    }

    pub fn class(&self, label: IntensityLabel) -> IntensityClass {
        IntensityClass {
            label,
            mean_photon_number: self.mean(label),
        }
    }

    /// Checks `signal > decoy1 > decoy2 >= 0`, all finite.
    pub fn check_ordering(&self) -> Result<()> {
        let ok = [self.signal, self.decoy1, self.decoy2]
            .iter()
            .all(|m| m.is_finite())
            && self.signal > self.decoy1
            && self.decoy1 > self.decoy2
            && self.decoy2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::IntensityOrdering {
                signal: self.signal,
                decoy1: self.decoy1,
                decoy2: self.decoy2,
            })
        }
    }
}

impl Default for Intensities {
    fn default() -> Self {
        Self::new(0.3, 0.1, 0.01)
    }
}

/// Parses an `a:b:c` pulse-count ratio into normalized probabilities.
pub fn parse_ratio(ratio: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = ratio
        .split(':')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad ratio component `{p}` in `{ratio}`")))
        })
        .collect::<Result<_>>()?;
    let [a, b, c]: [f64; 3] = parts
        .try_into()
        .map_err(|_| Error::Format(format!("ratio `{ratio}` must have three components")))?;
    let total = a + b + c;
    if !(total > 0.0) || a < 0.0 || b < 0.0 || c < 0.0 || !total.is_finite() {
        return Err(Error::Format(format!(
            "ratio `{ratio}` must be nonnegative with a positive sum"
        )));
    }
    Ok([a / total, b / total, c / total])
}

/// Source-side protocol settings, identical for both senders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub intensities: Intensities,
    /// Probabilities of choosing signal, decoy1, decoy2 (stored normalized).
    pub intensity_probabilities: [f64; 3],
    /// Probability of choosing the Z basis, per party.
    pub basis_probability_z: f64,
    /// Total number of pulse slots N.
    pub total_pulses: u64,
    /// Informational only.
    pub repetition_rate_hz: f64,
}

/// Z-basis probability that makes `p(signal)^2 p(Z)^2` equal the 0.011
/// signal-signal Z fraction of the reference run: sqrt(0.011 / 0.04).
pub const DEFAULT_BASIS_PROBABILITY_Z: f64 = 0.5244;

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            intensities: Intensities::default(),
            intensity_probabilities: [0.2, 0.45, 0.35],
            basis_probability_z: DEFAULT_BASIS_PROBABILITY_Z,
            total_pulses: 169_000_000_000,
            repetition_rate_hz: 5.0e5,
        }
    }
}

impl ProtocolConfig {
    pub fn intensity_probability(&self, label: IntensityLabel) -> f64 {
        self.intensity_probabilities[label.index()]
    }

    pub fn basis_probability(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Z => self.basis_probability_z,
            Basis::X => 1.0 - self.basis_probability_z,
        }
    }

    /// All invariant violations; empty means the config is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let i = &self.intensities;
        if [i.signal, i.decoy1, i.decoy2]
            .iter()
            .any(|m| !m.is_finite())
        {
            violations.push(ConfigViolation::NonFiniteIntensity);
        } else {
            if i.decoy2 < 0.0 || i.decoy1 < 0.0 || i.signal < 0.0 {
                violations.push(ConfigViolation::NegativeIntensity);
            }
            if i.signal <= i.decoy1 {
                violations.push(ConfigViolation::SignalNotAboveDecoy1);
            }
            if i.decoy1 <= i.decoy2 {
                violations.push(ConfigViolation::Decoy1NotAboveDecoy2);
            }
        }
        violations.extend(self.sampling_violations());
        if self.total_pulses == 0 {
            violations.push(ConfigViolation::NoPulses);
        }
        ValidationReport { violations }
    }

    /// The subset of checks needed to draw pulses: probabilities and
    /// nonnegative finite intensities. Intensity ordering is not required.
    pub(crate) fn sampling_violations(&self) -> Vec<ConfigViolation> {
        let mut violations = Vec::new();
        let p = &self.intensity_probabilities;
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            violations.push(ConfigViolation::NegativeProbability);
        } else {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                violations.push(ConfigViolation::ProbabilitiesNotNormalized { sum });
            }
        }
        let pz = self.basis_probability_z;
        if !(pz > 0.0 && pz <= 1.0) {
            violations.push(ConfigViolation::BasisProbabilityOutOfRange(pz));
        }
        violations
    }

    pub(crate) fn check_sampling(&self) -> Result<()> {
        let i = &self.intensities;
        if [i.signal, i.decoy1, i.decoy2]
            .iter()
            .any(|m| !m.is_finite() || *m < 0.0)
        {
            return Err(Error::param("intensities must be finite and nonnegative"));
        }
        match self.sampling_violations().first() {
            None => Ok(()),
            Some(v) => Err(Error::param(v.to_string())),
        }
    }
}

/// One violated configuration invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    NonFiniteIntensity,
    NegativeIntensity,
    SignalNotAboveDecoy1,
    Decoy1NotAboveDecoy2,
    NegativeProbability,
    ProbabilitiesNotNormalized { sum: f64 },
    BasisProbabilityOutOfRange(f64),
    NoPulses,
    FiberLength(f64),
    Attenuation(f64),
    Misalignment(f64),
    DetectorEfficiency(f64),
    DarkCount(f64),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::NonFiniteIntensity => f.write_str("intensities must be finite"),
            ConfigViolation::NegativeIntensity => f.write_str("intensities must be nonnegative"),
            ConfigViolation::SignalNotAboveDecoy1 => f.write_str("signal must exceed decoy1"),
            ConfigViolation::Decoy1NotAboveDecoy2 => f.write_str("decoy1 must exceed decoy2"),
            ConfigViolation::NegativeProbability => {
                f.write_str("intensity probabilities must be finite and nonnegative")
            }
            ConfigViolation::ProbabilitiesNotNormalized { sum } => {
                write!(f, "probabilities must sum to 1 (got {sum})")
            }
            ConfigViolation::BasisProbabilityOutOfRange(p) => {
                write!(f, "basis probability must lie in (0, 1] (got {p})")
            }
            ConfigViolation::NoPulses => f.write_str("total pulse count must be at least 1"),
            ConfigViolation::FiberLength(l) => {
                write!(f, "fiber length must be finite and >= 0 (got {l})")
            }
            ConfigViolation::Attenuation(a) => {
                write!(f, "attenuation must be finite and >= 0 (got {a})")
            }
            ConfigViolation::Misalignment(e) => {
                write!(f, "misalignment must lie in [0, 0.5] (got {e})")
            }
            ConfigViolation::DetectorEfficiency(e) => {
                write!(f, "detector efficiency must lie in [0, 1] (got {e})")
            }
            ConfigViolation::DarkCount(p) => {
                write!(f, "dark count probability must lie in [0, 1) (got {p})")
            }
        }
    }
}

/// Outcome of [`validate_config`]: an empty violation list means ok.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<ConfigViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msg = self
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidParameter(msg))
        }
    }
}

pub fn validate_config(cfg: &ProtocolConfig) -> ValidationReport {
    cfg.validate()
}

/// Fiber link from one sender to the measurement node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Length of each sender's fiber, km.
    pub fiber_length_km: f64,
    /// dB/km.
    pub attenuation_db_per_km: f64,
    /// Misalignment error e_d in [0, 0.5].
    pub misalignment: f64,
}

impl Default for ChannelParams {
    /// 5 km per side of standard 0.2 dB/km fiber, 1% misalignment.
    fn default() -> Self {
        Self {
            fiber_length_km: 5.0,
            attenuation_db_per_km: 0.2,
            misalignment: 0.01,
        }
    }
}

impl ChannelParams {
    /// Power transmittance of one side, `10^(-attenuation * length / 10)`.
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.attenuation_db_per_km * self.fiber_length_km / 10.0)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if !(self.fiber_length_km.is_finite() && self.fiber_length_km >= 0.0) {
            violations.push(ConfigViolation::FiberLength(self.fiber_length_km));
        }
        if !(self.attenuation_db_per_km.is_finite() && self.attenuation_db_per_km >= 0.0) {
            violations.push(ConfigViolation::Attenuation(self.attenuation_db_per_km));
        }
        if !(0.0..=0.5).contains(&self.misalignment) {
            violations.push(ConfigViolation::Misalignment(self.misalignment));
        }
        ValidationReport { violations }
    }
}

/// Which single-photon detectors at the measurement node are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorLayout {
    /// Only D1H and D1V behind one polarizing beam splitter.
    OnePbs,
    /// All four detectors.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// Dark-count probability per detection gate per detector.
    pub dark_count_probability: f64,
    pub layout: DetectorLayout,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.1,
            dark_count_probability: 5e-5,
            layout: DetectorLayout::OnePbs,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if !(0.0..=1.0).contains(&self.efficiency) {
            violations.push(ConfigViolation::DetectorEfficiency(self.efficiency));
        }
        if !(0.0..1.0).contains(&self.dark_count_probability) {
            violations.push(ConfigViolation::DarkCount(self.dark_count_probability));
        }
        ValidationReport { violations }
    }
}

/// One (basis, Alice intensity, Bob intensity) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub basis: Basis,
    pub alice: IntensityLabel,
    pub bob: IntensityLabel,
}

impl CellKey {
    pub const COUNT: usize = 18;

    pub fn new(basis: Basis, alice: IntensityLabel, bob: IntensityLabel) -> Self {
        Self { basis, alice, bob }
    }

    pub fn index(self) -> usize {
        self.basis.index() * 9 + self.alice.index() * 3 + self.bob.index()
    }

    /// All 18 cells, Z before X, Alice's intensity varying slowest.
    pub fn all() -> impl Iterator<Item = CellKey> {
        Basis::ALL.into_iter().flat_map(|basis| {
            IntensityLabel::ALL.into_iter().flat_map(move |alice| {
                IntensityLabel::ALL
                    .into_iter()
                    .map(move |bob| CellKey::new(basis, alice, bob))
            })
        })
    }

    pub fn in_basis(basis: Basis) -> impl Iterator<Item = CellKey> {
        CellKey::all().filter(move |c| c.basis == basis)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{},{}]", self.basis, self.alice, self.bob)
    }
}

/// A value for each of the 18 cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellMap<T>(pub [T; CellKey::COUNT]);

impl<T: Default + Copy> Default for CellMap<T> {
    fn default() -> Self {
        CellMap([T::default(); CellKey::COUNT])
    }
}

impl<T> CellMap<T> {
    pub fn from_fn(mut f: impl FnMut(CellKey) -> T) -> Self {
        let cells: Vec<CellKey> = CellKey::all().collect();
        CellMap(std::array::from_fn(|i| f(cells[i])))
    }

    pub fn try_from_fn<E>(
        mut f: impl FnMut(CellKey) -> std::result::Result<T, E>,
    ) -> std::result::Result<Self, E>
    where
        T: Default + Copy,
    {
        let mut out = CellMap([T::default(); CellKey::COUNT]);
        for key in CellKey::all() {
            out.0[key.index()] = f(key)?;
        }
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellKey, &T)> {
        CellKey::all().zip(self.0.iter())
    }
}

impl<T> Index<CellKey> for CellMap<T> {
    type Output = T;

    fn index(&self, key: CellKey) -> &T {
        &self.0[key.index()]
    }
}

impl<T> IndexMut<CellKey> for CellMap<T> {
    fn index_mut(&mut self, key: CellKey) -> &mut T {
        &mut self.0[key.index()]
    }
}

/// Expected pulse counts N^W_{IA IB} per cell.
pub type PairCounts = CellMap<f64>;

/// Splits the total pulse budget over basis-matched intensity pairs:
/// `N * p(IA) * p(IB) * p(W)^2`.
///
/// Basis-mismatched slots are not represented, so the 18 entries sum to
/// `N * (p(Z)^2 + p(X)^2)` rather than `N`.
pub fn pair_pulse_counts(cfg: &ProtocolConfig) -> PairCounts {
    let n = cfg.total_pulses as f64;
    CellMap::from_fn(|key| {
        let pw = cfg.basis_probability(key.basis);
        n * cfg.intensity_probability(key.alice) * cfg.intensity_probability(key.bob) * pw * pw
    })
}
