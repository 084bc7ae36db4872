//! Analytic two-decoy bounds on the single-photon-pair yield and error rate.
//!
//! With `f(a, b) = e^{a+b} Q_{ab} = Σ a^i b^j / (i! j!) Y_ij`, the second
//! differences
//!
//! ```text
//! D(x) = f(x,x) + f(ω,ω) - f(x,ω) - f(ω,x) = Σ_{i,j≥1} (x^i-ω^i)(x^j-ω^j)/(i! j!) Y_ij
//! ```
//!
//! cancel every vacuum term. The combination
//! `(μ²-ω²)(μ-ω) D(ν) - (ν²-ω²)(ν-ω) D(μ)` has Y11 coefficient
//! `(μ-ω)²(ν-ω)²(μ-ν)`, zero coefficient on Y12/Y21 and nonpositive
//! coefficients on every other yield, which makes the quotient a lower
//! bound on Y11. The error bound uses `D(ν) ≥ (ν-ω)² e11 Y11` on the
//! error-weighted gains.

use crate::error::{Error, Result};
use crate::model::{Basis, CellKey, Intensities, IntensityLabel};
use crate::tally::{BoundedRates, RateMatrix};

use IntensityLabel::{Decoy1 as NU, Decoy2 as OMEGA, Signal as MU};

/// Whether bounds assume exact rates or fluctuation envelopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    InfiniteKey,
    FiniteNAlpha,
}

impl BoundMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundMode::InfiniteKey => "infinite_key",
            BoundMode::FiniteNAlpha => "finite_n_alpha",
        }
    }
}

/// Single-photon bounds used by the key rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyBounds {
    pub y11_z_lower: f64,
    pub y11_x_lower: f64,
    /// `None` when the X-basis yield bound is zero.
    pub e11_x_upper: Option<f64>,
    pub mode: BoundMode,
}

fn weight(i: &Intensities, a: IntensityLabel, b: IntensityLabel) -> f64 {
    (i.mean(a) + i.mean(b)).exp()
}

/// Numerator of the Y11 bound. `lo` supplies values for terms entering
/// with a positive net sign, `hi` for negative ones.
fn y11_numerator(
    i: &Intensities,
    lo: impl Fn(IntensityLabel, IntensityLabel) -> f64,
    hi: impl Fn(IntensityLabel, IntensityLabel) -> f64,
) -> f64 {
    let (mu, nu, om) = (i.signal, i.decoy1, i.decoy2);
    let g = |a, b, v: f64| weight(i, a, b) * v;
    let first = (mu * mu - om * om)
        * (mu - om)
        * (g(NU, NU, lo(NU, NU)) + g(OMEGA, OMEGA, lo(OMEGA, OMEGA))
            - g(NU, OMEGA, hi(NU, OMEGA))
            - g(OMEGA, NU, hi(OMEGA, NU)));
    let second = (nu * nu - om * om)
        * (nu - om)
        * (g(MU, MU, hi(MU, MU)) + g(OMEGA, OMEGA, hi(OMEGA, OMEGA))
            - g(MU, OMEGA, lo(MU, OMEGA))
            - g(OMEGA, MU, lo(OMEGA, MU)));
    first - second
}

/// `(μ-ω)²(ν-ω)²(μ-ν)`, the Y11 coefficient of the numerator.
pub fn y11_denominator(i: &Intensities) -> f64 {
    let (mu, nu, om) = (i.signal, i.decoy1, i.decoy2);
    (mu - om).powi(2) * (nu - om).powi(2) * (mu - nu)
}

/// `(μ-ν)²(ν-ω)²(μ-ν)`: the same expression with `(μ-ω)²` replaced by
/// `(μ-ν)²`. Kept only for comparison; it overstates the bound by
/// `((μ-ω)/(μ-ν))²` and fails the linear-program check.
pub fn y11_denominator_mu_nu_squared(i: &Intensities) -> f64 {
    let (mu, nu, om) = (i.signal, i.decoy1, i.decoy2);
    (mu - nu).powi(2) * (nu - om).powi(2) * (mu - nu)
}

fn cell(basis: Basis, a: IntensityLabel, b: IntensityLabel) -> CellKey {
    CellKey::new(basis, a, b)
}

/// Infinite-key lower bound on Y11 in `basis`, clamped to `[0, 1]`.
pub fn y11_lower_infinite(
    rates: &RateMatrix,
    basis: Basis,
    intensities: &Intensities,
) -> Result<f64> {
    intensities.check_ordering()?;
    let q = |a, b| rates.gain(cell(basis, a, b));
    Ok((y11_numerator(intensities, q, q) / y11_denominator(intensities)).clamp(0.0, 1.0))
}

/// [`y11_lower_infinite`] evaluated with [`y11_denominator_mu_nu_squared`].
pub fn y11_lower_infinite_mu_nu_squared(
    rates: &RateMatrix,
    basis: Basis,
    intensities: &Intensities,
) -> Result<f64> {
    intensities.check_ordering()?;
    let q = |a, b| rates.gain(cell(basis, a, b));
    Ok(
        (y11_numerator(intensities, q, q) / y11_denominator_mu_nu_squared(intensities))
            .clamp(0.0, 1.0),
    )
}

/// Finite-data lower bound on Y11: positively weighted gains take their
/// lower envelope, negatively weighted ones their upper envelope.
pub fn y11_lower_finite(
    bounded: &BoundedRates,
    basis: Basis,
    intensities: &Intensities,
) -> Result<f64> {
    intensities.check_ordering()?;
    let lo = |a, b| bounded.cell(cell(basis, a, b)).gain_lower;
    let hi = |a, b| bounded.cell(cell(basis, a, b)).gain_upper;
    Ok((y11_numerator(intensities, lo, hi) / y11_denominator(intensities)).clamp(0.0, 1.0))
}

fn e11_numerator(
    i: &Intensities,
    hi: impl Fn(IntensityLabel, IntensityLabel) -> f64,
    lo: impl Fn(IntensityLabel, IntensityLabel) -> f64,
) -> f64 {
    weight(i, NU, NU) * hi(NU, NU) + weight(i, OMEGA, OMEGA) * hi(OMEGA, OMEGA)
        - weight(i, NU, OMEGA) * lo(NU, OMEGA)
        - weight(i, OMEGA, NU) * lo(OMEGA, NU)
}

fn e11_quotient(numerator: f64, i: &Intensities, y11_lower: f64) -> Result<f64> {
    let d = (i.decoy1 - i.decoy2).powi(2);
    if !(y11_lower > 0.0) || d == 0.0 {
        return Err(Error::ZeroDenominator("e11 upper bound"));
    }
    Ok((numerator / (d * y11_lower)).clamp(0.0, 1.0))
}

/// Infinite-key upper bound on the X-basis single-photon error rate.
pub fn e11_upper_infinite(
    rates: &RateMatrix,
    intensities: &Intensities,
    y11_x_lower: f64,
) -> Result<f64> {
    intensities.check_ordering()?;
    let eq = |a, b| rates.cell(cell(Basis::X, a, b)).error_gain();
    e11_quotient(e11_numerator(intensities, eq, eq), intensities, y11_x_lower)
}

/// Finite-data upper bound: upper envelopes on positive terms, lower on
/// negative, and the finite Y11 lower bound in the denominator.
pub fn e11_upper_finite(
    bounded: &BoundedRates,
    intensities: &Intensities,
    y11_x_lower_finite: f64,
) -> Result<f64> {
    intensities.check_ordering()?;
    let hi = |a, b| bounded.cell(cell(Basis::X, a, b)).error_gain_upper;
    let lo = |a, b| bounded.cell(cell(Basis::X, a, b)).error_gain_lower;
    e11_quotient(
        e11_numerator(intensities, hi, lo),
        intensities,
        y11_x_lower_finite,
    )
}

pub fn decoy_bounds_infinite(rates: &RateMatrix, intensities: &Intensities) -> Result<DecoyBounds> {
    let y11_z_lower = y11_lower_infinite(rates, Basis::Z, intensities)?;
    let y11_x_lower = y11_lower_infinite(rates, Basis::X, intensities)?;
    let e11_x_upper = optional_e11(e11_upper_infinite(rates, intensities, y11_x_lower))?;
    Ok(DecoyBounds {
        y11_z_lower,
        y11_x_lower,
        e11_x_upper,
        mode: BoundMode::InfiniteKey,
    })
}

pub fn decoy_bounds_finite(
    bounded: &BoundedRates,
    intensities: &Intensities,
) -> Result<DecoyBounds> {
    let y11_z_lower = y11_lower_finite(bounded, Basis::Z, intensities)?;
    let y11_x_lower = y11_lower_finite(bounded, Basis::X, intensities)?;
    let e11_x_upper = optional_e11(e11_upper_finite(bounded, intensities, y11_x_lower))?;
    Ok(DecoyBounds {
        y11_z_lower,
        y11_x_lower,
        e11_x_upper,
        mode: BoundMode::FiniteNAlpha,
    })
}

fn optional_e11(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(e) => Ok(Some(e)),
        Err(Error::ZeroDenominator(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
