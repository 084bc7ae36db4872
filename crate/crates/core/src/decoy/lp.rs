//! Linear-program bounds on Y11 and e11 over all yield grids consistent
//! with the observed gain envelopes.
//!
//! Variables are `Y_ij` and `eY_ij = e_ij Y_ij` for `i, j <= cutoff` with
//! `0 <= eY_ij <= Y_ij <= 1`. For each intensity pair the truncated
//! Poisson sum must satisfy
//!
//! ```text
//! Q^L - tail <= Σ_{i,j<=cutoff} P_ij Y_ij <= Q^U
//! ```
//!
//! where `tail` is the Poisson mass outside the truncated square: photon
//! numbers above the cutoff may contribute anything between 0 and their
//! full weight. The same holds for the error-weighted gains. The optimum
//! is therefore a valid bound for the untruncated problem, and it is the
//! tightest bound any method can extract from the same constraints.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use crate::error::{Error, Result};
use crate::model::{Basis, CellKey, Intensities, IntensityLabel};
use crate::tally::BoundedRates;

use super::yields::{poisson_pmf, poisson_tail};

pub const DEFAULT_CUTOFF: usize = 10;
pub const MIN_CUTOFF: usize = 5;
/// Relative to the largest gain.
const MIN_COLUMN_WEIGHT: f64 = 1e-6;

/// Extremes of Y11 and e11 over the feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpBounds {
    pub y11_min: f64,
    pub y11_max: f64,
    /// Largest feasible `e11 Y11`.
    pub error_yield_max: f64,
    /// `error_yield_max / y11_min`, clamped to 1; 1 when `y11_min` is 0.
    pub e11_max: f64,
}

struct Row {
    coeffs: Vec<f64>,
    lower: f64,
    upper: f64,
}

struct Model {
    rows_gain: Vec<Row>,
    rows_error: Vec<Row>,
    n: usize,
    scale: f64,
}

fn build(bounded: &BoundedRates, basis: Basis, intensities: &Intensities, cutoff: usize) -> Model {
    let n = cutoff + 1;
    let mut weights = Vec::with_capacity(9);
    let mut tails = Vec::with_capacity(9);
    let mut cells = Vec::with_capacity(9);
    for a in IntensityLabel::ALL {
        for b in IntensityLabel::ALL {
            let (ma, mb) = (intensities.mean(a), intensities.mean(b));
            let pa = poisson_pmf(ma, cutoff);
            let pb = poisson_pmf(mb, cutoff);
            let (ta, tb) = (poisson_tail(ma, cutoff), poisson_tail(mb, cutoff));
            weights.push(
                (0..n * n)
                    .map(|k| pa[k / n] * pb[k % n])
                    .collect::<Vec<f64>>(),
            );
            tails.push(ta + tb - ta * tb);
            cells.push(bounded.cell(CellKey::new(basis, a, b)));
        }
    }
    let scale = cells.iter().map(|c| c.gain_upper).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    // A photon-number pair whose largest weight is this small cannot be
    // resolved by the solver. It is dropped from every row, which relaxes
    // the upper rows, and its full weight moves into the tail so the lower
    // rows stay valid.
    for k in 0..n * n {
        if weights.iter().map(|w| w[k]).fold(0.0, f64::max) < MIN_COLUMN_WEIGHT * scale {
            for (w, t) in weights.iter_mut().zip(tails.iter_mut()) {
                *t += w[k];
                w[k] = 0.0;
            }
        }
    }
    let mut rows_gain = Vec::with_capacity(9);
    let mut rows_error = Vec::with_capacity(9);
    for ((coeffs, tail), c) in weights.into_iter().zip(tails).zip(cells) {
        rows_gain.push(Row {
            coeffs: coeffs.clone(),
            lower: c.gain_lower - tail,
            upper: c.gain_upper,
        });
        rows_error.push(Row {
            coeffs,
            lower: c.error_gain_lower - tail,
            upper: c.error_gain_upper,
        });
    }
    Model {
        rows_gain,
        rows_error,
        n,
        scale,
    }
}

/// Largest accepted constraint residual, relative to the row's own
/// right-hand side.
const ROW_TOLERANCE: f64 = 1e-6;
/// Absolute floor of the residual check, in scaled units.
const ABS_TOLERANCE: f64 = 1e-9;

/// Relative width below which a gain window becomes an equality.
const EQUALITY_WIDTH: f64 = 1e-9;

#[derive(Clone, Copy)]
enum Target {
    MinYield,
    MaxYield,
    MaxErrorYield,
}

/// Solves one LP with the simplex method. Yields are split as
/// `Y = eY + cY` (error and correct parts), both nonnegative with sum at
/// most 1. Each photon-number column is stored as `w Y / scale`, where `w`
/// is its largest Poisson weight and `scale` the largest gain, so that
/// coefficients are at most 1 and right-hand sides are of order one;
/// without this the ~1e15 spread of Poisson weights makes the basis
/// numerically singular.
fn solve(model: &Model, target: Target) -> Result<f64> {
    let nn = model.n * model.n;
    let one_one = model.n + 1;
    let ub = 1.0 / model.scale;
    let w: Vec<f64> = (0..nn)
        .map(|k| {
            let m = model
                .rows_gain
                .iter()
                .map(|r| r.coeffs[k])
                .fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();

    let direction = match target {
        Target::MinYield => OptimizationDirection::Minimize,
        _ => OptimizationDirection::Maximize,
    };
    let mut p = Problem::new(direction);
    let obj = 1.0 / w[one_one];
    let err: Vec<Variable> = (0..nn)
        .map(|k| p.add_var(if k == one_one { obj } else { 0.0 }, (0.0, ub * w[k])))
        .collect();
    let correct: Vec<Variable> = (0..nn)
        .map(|k| {
            let in_objective = k == one_one && !matches!(target, Target::MaxErrorYield);
            p.add_var(if in_objective { obj } else { 0.0 }, (0.0, ub * w[k]))
        })
        .collect();
    for k in 0..nn {
        p.add_constraint(
            [(err[k], 1.0), (correct[k], 1.0)],
            ComparisonOp::Le,
            ub * w[k],
        );
    }

    let mut data = Vec::with_capacity(36);
    for (model_rows, with_correct) in [(&model.rows_gain, true), (&model.rows_error, false)] {
        for row in model_rows {
            let lo = row.lower / model.scale;
            let hi = row.upper / model.scale;
            if hi < lo {
                return Err(Error::Infeasible("a gain window is empty".into()));
            }
            let mut terms = Vec::with_capacity(2 * nn);
            for (k, c) in row.coeffs.iter().enumerate().filter(|(_, c)| **c > 0.0) {
                terms.push((err[k], c / w[k]));
                if with_correct {
                    terms.push((correct[k], c / w[k]));
                }
            }
            if hi - lo <= EQUALITY_WIDTH * hi {
                // Two nearly coincident rows make the basis singular.
                let mid = 0.5 * (lo + hi);
                p.add_constraint(terms.as_slice(), ComparisonOp::Eq, mid);
                data.push((terms, mid, mid));
                continue;
            }
            p.add_constraint(terms.as_slice(), ComparisonOp::Le, hi);
            if lo > 0.0 {
                p.add_constraint(terms.as_slice(), ComparisonOp::Ge, lo);
            }
            data.push((terms, lo, hi));
        }
    }

    let sol = p
        .solve()
        .map_err(|e| match e {
            microlp::Error::Infeasible => {
                Error::Infeasible("no yield grid matches the observed envelopes".into())
            }
            other => Error::Solver(other.to_string()),
        })?
        .into_solution()
        .map_err(|_| Error::Solver("solve interrupted".into()))?;
    // The solver's feasibility tolerance is absolute; recheck each window
    // on its own scale.
    for (terms, lo, hi) in &data {
        let ax: f64 = terms.iter().map(|(v, c)| c * sol[*v]).sum();
        let tol = ROW_TOLERANCE * hi.abs() + ABS_TOLERANCE;
        if ax < lo - tol || ax > hi + tol {
            return Err(Error::Infeasible(
                "the observed envelopes admit no yield grid within tolerance".into(),
            ));
        }
    }
    Ok((sol.objective() * model.scale).clamp(0.0, 1.0))
}

/// Bounds on Y11 and e11 in `basis` from the envelopes in `bounded`.
pub fn y11_oracle_lp(
    bounded: &BoundedRates,
    basis: Basis,
    intensities: &Intensities,
    cutoff: usize,
) -> Result<LpBounds> {
    if cutoff < MIN_CUTOFF {
        return Err(Error::param(format!(
            "LP cutoff must be at least {MIN_CUTOFF}, got {cutoff}"
        )));
    }
    let m = intensities;
    if [m.signal, m.decoy1, m.decoy2]
        .iter()
        .any(|x| !x.is_finite() || *x < 0.0)
    {
        return Err(Error::param("intensities must be finite and nonnegative"));
    }
    let model = build(bounded, basis, intensities, cutoff);
    let y11_min = solve(&model, Target::MinYield)?;
    let y11_max = solve(&model, Target::MaxYield)?;
    let error_yield_max = solve(&model, Target::MaxErrorYield)?;
    let e11_max = if y11_min > 0.0 {
        (error_yield_max / y11_min).min(1.0)
    } else {
        1.0
    };
    Ok(LpBounds {
        y11_min,
        y11_max,
        error_yield_max,
        e11_max,
    })
}
