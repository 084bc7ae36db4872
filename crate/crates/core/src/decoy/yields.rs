//! Photon-number-resolved yields and the forward Poisson model that turns
//! them into gains and QBERs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Basis, CellKey, CellMap, Intensities};
use crate::tally::{CellRates, RateMatrix};

/// `Y_ij` and `e_ij Y_ij` for photon numbers `0..=cutoff` on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldGrid {
    cutoff: usize,
    yields: Vec<f64>,
    error_yields: Vec<f64>,
}

impl YieldGrid {
    pub fn new(cutoff: usize, yields: Vec<f64>, error_yields: Vec<f64>) -> Result<Self> {
        let n = (cutoff + 1) * (cutoff + 1);
        if yields.len() != n || error_yields.len() != n {
            return Err(Error::param(format!(
                "yield grid with cutoff {cutoff} needs {n} entries"
            )));
        }
        for (y, ey) in yields.iter().zip(&error_yields) {
            if !(0.0 <= *ey && ey <= y && *y <= 1.0) {
                return Err(Error::param(format!(
                    "need 0 <= eY <= Y <= 1, got eY={ey}, Y={y}"
                )));
            }
        }
        Ok(Self {
            cutoff,
            yields,
            error_yields,
        })
    }

    /// A random grid shaped like a lossy two-sender measurement: small
    /// vacuum-side yields, larger yields when both sides carry photons, and
    /// error rates up to one half.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cutoff: usize) -> Self {
        let scale = 10f64.powf(rng.random_range(-3.0..-0.5));
        let dark = 10f64.powf(rng.random_range(-7.0..-4.0));
        let n = cutoff + 1;
        let mut yields = vec![0.0; n * n];
        let mut error_yields = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let y: f64 = match (i, j) {
                    (0, 0) => dark * dark * rng.random::<f64>(),
                    (0, _) | (_, 0) => dark * rng.random::<f64>() * (1.0 + (i + j) as f64 * scale),
                    _ => (scale * (i * j) as f64 * rng.random_range(0.2..1.0)).min(1.0),
                };
                let e = rng.random_range(0.0..0.5);
                yields[i * n + j] = y;
                error_yields[i * n + j] = e * y;
            }
        }
        Self {
            cutoff,
            yields,
            error_yields,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn yield_at(&self, i: usize, j: usize) -> f64 {
        self.yields[i * (self.cutoff + 1) + j]
    }

    pub fn error_yield_at(&self, i: usize, j: usize) -> f64 {
        self.error_yields[i * (self.cutoff + 1) + j]
    }

    pub fn y11(&self) -> f64 {
        self.yield_at(1, 1)
    }

    pub fn e11(&self) -> Option<f64> {
        let y = self.y11();
        (y > 0.0).then(|| self.error_yield_at(1, 1) / y)
    }

    /// Gain and QBER of one intensity pair, truncated at the cutoff.
    pub fn forward(&self, a: f64, b: f64) -> CellRates {
        let pa = poisson_pmf(a, self.cutoff);
        let pb = poisson_pmf(b, self.cutoff);
        let mut q = 0.0;
        let mut eq = 0.0;
        for i in 0..=self.cutoff {
            for j in 0..=self.cutoff {
                let w = pa[i] * pb[j];
                q += w * self.yield_at(i, j);
                eq += w * self.error_yield_at(i, j);
            }
        }
        CellRates {
            gain: q,
            qber: if q > 0.0 { (eq / q).min(1.0) } else { 0.0 },
        }
    }
}

/// Rates for all 18 cells from one grid per basis.
pub fn forward_rates(z: &YieldGrid, x: &YieldGrid, intensities: &Intensities) -> RateMatrix {
    let cells = CellMap::from_fn(|k: CellKey| {
        let grid = match k.basis {
            Basis::Z => z,
            Basis::X => x,
        };
        grid.forward(intensities.mean(k.alice), intensities.mean(k.bob))
    });
    RateMatrix::from_cells(cells).expect("forward rates lie in [0, 1]")
}

/// `e^{-m} m^k / k!` for `k = 0..=cutoff`.
pub fn poisson_pmf(mean: f64, cutoff: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(cutoff + 1);
    let mut term = (-mean).exp();
    for k in 0..=cutoff {
        p.push(term);
        term *= mean / (k + 1) as f64;
    }
    p
}

/// `P(K > cutoff)` for `K ~ Poisson(mean)`, summed directly over the tail.
pub fn poisson_tail(mean: f64, cutoff: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let mut term = (-mean).exp();
    for k in 0..=cutoff {
        term *= mean / (k + 1) as f64;
    }
    let mut sum = 0.0;
    let mut k = cutoff + 1;
    while term > sum * 1e-17 && k < cutoff + 400 {
        sum += term;
        k += 1;
        term *= mean / k as f64;
    }
    sum
}
