//! Detection tallies, the gain/QBER rate view, and the Gaussian
//! statistical-fluctuation envelopes used by the finite-data analysis.

use std::ops::Add;

use crate::error::{Error, Result};
use crate::model::{Basis, CellKey, CellMap, IntensityLabel, PairCounts};

/// Raw counts for one cell.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TallyCell {
    pub sent: u64,
    pub coincidences: u64,
    pub errors: u64,
}

impl TallyCell {
    pub fn new(sent: u64, coincidences: u64, errors: u64) -> Result<Self> {
        if errors > coincidences || coincidences > sent {
            return Err(Error::Table(format!(
                "need errors <= coincidences <= sent, got {errors} / {coincidences} / {sent}"
            )));
        }
        Ok(Self {
            sent,
            coincidences,
            errors,
        })
    }

    pub fn gain(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.coincidences as f64 / self.sent as f64
        }
    }

    /// `None` when there were no coincidences.
    pub fn qber(&self) -> Option<f64> {
        (self.coincidences > 0).then(|| self.errors as f64 / self.coincidences as f64)
    }
}

impl Add for TallyCell {
    type Output = TallyCell;

    fn add(self, rhs: TallyCell) -> TallyCell {
        TallyCell {
            sent: self.sent + rhs.sent,
            coincidences: self.coincidences + rhs.coincidences,
            errors: self.errors + rhs.errors,
        }
    }
}

/// Per-cell counts of sent pulse pairs, successful announcements and
/// bit errors for basis-matched slots.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct TallyMatrix {
    cells: CellMap<TallyCell>,
}

impl TallyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_cells(cells: CellMap<TallyCell>) -> Result<Self> {
        for (_, c) in cells.iter() {
            TallyCell::new(c.sent, c.coincidences, c.errors)?;
        }
        Ok(Self { cells })
    }

    pub fn cell(&self, key: CellKey) -> TallyCell {
        self.cells[key]
    }

    pub fn cells(&self) -> &CellMap<TallyCell> {
        &self.cells
    }

    #[inline]
    pub fn record(&mut self, key: CellKey, coincidence: bool, error: bool) {
        let c = &mut self.cells[key];
        c.sent += 1;
        if coincidence {
            c.coincidences += 1;
            if error {
                c.errors += 1;
            }
        }
    }

    pub fn gain(&self, key: CellKey) -> f64 {
        self.cells[key].gain()
    }

    pub fn qber(&self, key: CellKey) -> Option<f64> {
        self.cells[key].qber()
    }

    pub fn total_sent(&self) -> u64 {
        self.cells.0.iter().map(|c| c.sent).sum()
    }

    pub fn total_coincidences(&self) -> u64 {
        self.cells.0.iter().map(|c| c.coincidences).sum()
    }

    /// Cellwise sum. Associative and commutative; the empty matrix is the
    /// identity.
    pub fn merge(&self, other: &TallyMatrix) -> TallyMatrix {
        TallyMatrix {
            cells: CellMap::from_fn(|k| self.cells[k] + other.cells[k]),
        }
    }

    /// Observed gains and QBERs. Cells without coincidences get QBER 0.
    pub fn rates(&self) -> RateMatrix {
        RateMatrix {
            cells: CellMap::from_fn(|k| {
                let c = self.cells[k];
                CellRates {
                    gain: c.gain(),
                    qber: c.qber().unwrap_or(0.0),
                }
            }),
        }
    }

    /// Sent counts as the per-cell pulse allocation for fluctuation bounds.
    pub fn sent_counts(&self) -> PairCounts {
        CellMap::from_fn(|k| self.cells[k].sent as f64)
    }
}

impl Add for TallyMatrix {
    type Output = TallyMatrix;

    fn add(self, rhs: TallyMatrix) -> TallyMatrix {
        self.merge(&rhs)
    }
}

impl std::iter::Sum for TallyMatrix {
    fn sum<I: Iterator<Item = TallyMatrix>>(iter: I) -> TallyMatrix {
        iter.fold(TallyMatrix::new(), |a, b| a.merge(&b))
    }
}

/// Gain Q and QBER E of one cell.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct CellRates {
    pub gain: f64,
    pub qber: f64,
}

impl CellRates {
    pub fn error_gain(&self) -> f64 {
        self.gain * self.qber
    }
}

/// A 3x3 table for one basis, indexed `[alice][bob]` by
/// [`IntensityLabel::index`].
pub type BasisTable = [[f64; 3]; 3];

/// One 3x3 table per basis.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct Tables {
    pub z: BasisTable,
    pub x: BasisTable,
}

impl Tables {
    pub fn basis(&self, basis: Basis) -> &BasisTable {
        match basis {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    pub fn basis_mut(&mut self, basis: Basis) -> &mut BasisTable {
        match basis {
            Basis::Z => &mut self.z,
            Basis::X => &mut self.x,
        }
    }

    pub fn get(&self, key: CellKey) -> f64 {
        self.basis(key.basis)[key.alice.index()][key.bob.index()]
    }
}

/// Gains and QBERs for all 18 cells: the integer-free view consumed by
/// the decoy analysis.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct RateMatrix {
    cells: CellMap<CellRates>,
}

impl RateMatrix {
    pub fn from_cells(cells: CellMap<CellRates>) -> Result<Self> {
        for (key, c) in cells.iter() {
            check_unit(c.gain, "gain", key)?;
            check_unit(c.qber, "qber", key)?;
        }
        Ok(Self { cells })
    }

    /// Builds the rate view from gain and QBER tables.
    pub fn from_tables(gains: &Tables, qbers: &Tables) -> Result<Self> {
        Self::from_cells(CellMap::from_fn(|k| CellRates {
            gain: gains.get(k),
            qber: qbers.get(k),
        }))
    }

    pub fn to_tables(&self) -> (Tables, Tables) {
        let mut gains = Tables::default();
        let mut qbers = Tables::default();
        for (key, c) in self.cells.iter() {
            gains.basis_mut(key.basis)[key.alice.index()][key.bob.index()] = c.gain;
            qbers.basis_mut(key.basis)[key.alice.index()][key.bob.index()] = c.qber;
        }
        (gains, qbers)
    }

    pub fn cell(&self, key: CellKey) -> CellRates {
        self.cells[key]
    }

    pub fn gain(&self, key: CellKey) -> f64 {
        self.cells[key].gain
    }

    pub fn qber(&self, key: CellKey) -> f64 {
        self.cells[key].qber
    }

    pub fn cells(&self) -> &CellMap<CellRates> {
        &self.cells
    }

    pub fn signal_signal(&self, basis: Basis) -> CellRates {
        self.cells[CellKey::new(basis, IntensityLabel::Signal, IntensityLabel::Signal)]
    }
}

fn check_unit(v: f64, what: &str, key: CellKey) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Table(format!(
            "{what} {v} out of [0, 1] in cell {key}"
        )))
    }
}

/// Settings for the statistical-fluctuation envelopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationConfig {
    /// Number of standard deviations n_α.
    pub n_alpha: f64,
    /// Failure probability associated with `n_alpha`; informational.
    pub epsilon: f64,
}

impl Default for FluctuationConfig {
    fn default() -> Self {
        Self {
            n_alpha: 3.0,
            epsilon: 1e-3,
        }
    }
}

/// Central values and envelopes of Q and E·Q for one cell.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct BoundedCell {
    pub gain: f64,
    pub gain_lower: f64,
    pub gain_upper: f64,
    pub error_gain: f64,
    pub error_gain_lower: f64,
    pub error_gain_upper: f64,
}

impl BoundedCell {
    /// Zero-width envelope around `rates`.
    pub fn exact(rates: CellRates) -> Self {
        let eq = rates.error_gain();
        Self {
            gain: rates.gain,
            gain_lower: rates.gain,
            gain_upper: rates.gain,
            error_gain: eq,
            error_gain_lower: eq,
            error_gain_upper: eq,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct BoundedRates {
    cells: CellMap<BoundedCell>,
}

impl BoundedRates {
    pub fn exact(rates: &RateMatrix) -> Self {
        Self {
            cells: CellMap::from_fn(|k| BoundedCell::exact(rates.cell(k))),
        }
    }

    pub fn from_cells(cells: CellMap<BoundedCell>) -> Self {
        Self { cells }
    }

    pub fn cell(&self, key: CellKey) -> BoundedCell {
        self.cells[key]
    }

    pub fn cells(&self) -> &CellMap<BoundedCell> {
        &self.cells
    }
}

/// Envelope `x (1 ∓ n / sqrt(N x))` of an observed rate `x` over `n_sent`
/// trials. A zero observation gets lower bound 0 and an upper bound of
/// `(1 + n) / N`, the one-count rate inflated by `n`.
fn envelope(x: f64, n_sent: f64, n_alpha: f64) -> (f64, f64) {
    if n_sent <= 0.0 {
        return (0.0, 1.0);
    }
    if x <= 0.0 {
        return (0.0, (1.0 + n_alpha) / n_sent);
    }
    let rel = n_alpha / (n_sent * x).sqrt();
    ((x * (1.0 - rel)).max(0.0), x * (1.0 + rel))
}

/// Gaussian `n_alpha`-standard-deviation envelopes for every cell.
pub fn fluct_bounds(
    rates: &RateMatrix,
    counts: &PairCounts,
    cfg: &FluctuationConfig,
) -> Result<BoundedRates> {
    if !(cfg.n_alpha.is_finite() && cfg.n_alpha >= 0.0) {
        return Err(Error::param(format!(
            "n_alpha must be finite and >= 0, got {}",
            cfg.n_alpha
        )));
    }
    let cells = CellMap::try_from_fn(|key| {
        let n = counts[key];
        if !n.is_finite() || n < 0.0 {
            return Err(Error::param(format!(
                "pulse count for {key} must be finite and >= 0, got {n}"
            )));
        }
        let r = rates.cell(key);
        if n == 0.0 && r.gain > 0.0 {
            return Err(Error::param(format!(
                "cell {key} has a nonzero gain but zero pulses"
            )));
        }
        let (gl, gu) = envelope(r.gain, n, cfg.n_alpha);
        let eq = r.error_gain();
        let (el, eu) = envelope(eq, n, cfg.n_alpha);
        Ok(BoundedCell {
            gain: r.gain,
            gain_lower: gl,
            gain_upper: gu,
            error_gain: eq,
            error_gain_lower: el,
            error_gain_upper: eu,
        })
    })?;
    Ok(BoundedRates { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn zz() -> CellKey {
        CellKey::new(Basis::Z, IntensityLabel::Signal, IntensityLabel::Signal)
    }

    fn arb_tally() -> impl Strategy<Value = TallyMatrix> {
        proptest::collection::vec((0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000), 18).prop_map(
            |v| {
                let mut cells = CellMap::<TallyCell>::default();
                for (i, (a, b, c)) in v.into_iter().enumerate() {
                    let mut s = [a, b, c];
                    s.sort_unstable();
                    cells.0[i] = TallyCell::new(s[2], s[1], s[0]).unwrap();
                }
                TallyMatrix::from_cells(cells).unwrap()
            },
        )
    }

    #[test]
    fn empty_is_merge_identity() {
        let mut t = TallyMatrix::new();
        t.record(zz(), true, false);
        t.record(zz(), true, true);
        t.record(zz(), false, false);
        assert_eq!(t.merge(&TallyMatrix::new()), t);
        assert_eq!(t.cell(zz()), TallyCell::new(3, 2, 1).unwrap());
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(a in arb_tally(), b in arb_tally(), c in arb_tally()) {
            prop_assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
            prop_assert_eq!(a.merge(&b), b.merge(&a));
            let m = a.merge(&b);
            for (_, cell) in m.cells().iter() {
                prop_assert!(cell.errors <= cell.coincidences && cell.coincidences <= cell.sent);
            }
        }

        #[test]
        fn table_round_trip_preserves_rates(v in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 18)) {
            let mut cells = CellMap::<CellRates>::default();
            for (i, (g, e)) in v.into_iter().enumerate() {
                cells.0[i] = CellRates { gain: g, qber: e };
            }
            let r = RateMatrix::from_cells(cells).unwrap();
            let (g, e) = r.to_tables();
            let back = RateMatrix::from_tables(&g, &e).unwrap();
            for key in CellKey::all() {
                prop_assert!((back.gain(key) - r.gain(key)).abs() <= 1e-12);
                prop_assert!((back.qber(key) - r.qber(key)).abs() <= 1e-12);
            }
        }

        #[test]
        fn envelopes_bracket_strictly(q in 1e-9f64..0.5, n in 1e3f64..1e15, na in 0.01f64..10.0) {
            let (lo, hi) = envelope(q, n, na);
            prop_assert!(lo < q && q < hi);
        }
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(TallyCell::new(1, 2, 0).is_err());
        assert!(TallyCell::new(5, 2, 3).is_err());
    }

    #[test]
    fn out_of_range_rates_are_rejected() {
        let mut t = Tables::default();
        t.x[0][0] = 1.5;
        assert!(RateMatrix::from_tables(&Tables::default(), &t).is_err());
        assert!(RateMatrix::from_tables(&Tables::default(), &Tables::default()).is_ok());
    }

    #[test]
    fn envelope_closed_form() {
        // 1e-4 * (1 -+ 3 / sqrt(1e5)) evaluated at high precision.
        let (lo, hi) = envelope(1e-4, 1e9, 3.0);
        assert_relative_eq!(lo, 9.905131670194948e-5, max_relative = 1e-12);
        assert_relative_eq!(hi, 1.0094868329805051e-4, max_relative = 1e-12);
    }

    #[test]
    fn zero_sigma_collapses_envelope() {
        let (lo, hi) = envelope(1e-4, 1e9, 0.0);
        assert_eq!((lo, hi), (1e-4, 1e-4));
    }

    #[test]
    fn envelope_shrinks_with_sqrt_n() {
        let (l1, h1) = envelope(2e-5, 1e10, 3.0);
        let (l2, h2) = envelope(2e-5, 2e10, 3.0);
        assert_relative_eq!((h1 - l1) / (h2 - l2), 2f64.sqrt(), max_relative = 1e-9);
        let (l3, h3) = envelope(2e-5, 1e30, 3.0);
        assert_relative_eq!(l3, 2e-5, max_relative = 1e-9);
        assert_relative_eq!(h3, 2e-5, max_relative = 1e-9);
    }

    #[test]
    fn zero_observation_surrogate() {
        let (lo, hi) = envelope(0.0, 1e6, 3.0);
        assert_eq!(lo, 0.0);
        assert_relative_eq!(hi, 4e-6);
    }

    #[test]
    fn fluct_bounds_rejects_negative_counts() {
        let rates = RateMatrix::default();
        let mut counts = PairCounts::default();
        counts.0[3] = -1.0;
        assert!(fluct_bounds(&rates, &counts, &FluctuationConfig::default()).is_err());
    }

    #[test]
    fn fluct_bounds_of_error_gain() {
        let mut cells = CellMap::<CellRates>::default();
        cells[zz()] = CellRates {
            gain: 1e-4,
            qber: 0.25,
        };
        let rates = RateMatrix::from_cells(cells).unwrap();
        let counts = CellMap::from_fn(|_| 1e9);
        let b = fluct_bounds(&rates, &counts, &FluctuationConfig::default()).unwrap();
        let c = b.cell(zz());
        let rel = 3.0 / (1e9f64 * 2.5e-5).sqrt();
        assert_relative_eq!(
            c.error_gain_lower,
            2.5e-5 * (1.0 - rel),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            c.error_gain_upper,
            2.5e-5 * (1.0 + rel),
            max_relative = 1e-12
        );
    }

    #[test]
    fn all_zero_tables_give_zero_gains() {
        let r = RateMatrix::from_tables(&Tables::default(), &Tables::default()).unwrap();
        assert!(CellKey::all().all(|k| r.gain(k) == 0.0));
    }
}
