//! Deterministic search over decoy-protocol parameters maximizing the
//! finite-size secure key rate computed from expected tallies.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Deserialize;

use crate::decoy::{analyze, BoundMode, DEFAULT_EC_INEFFICIENCY};
use crate::error::{Error, Result};
use crate::expected::{expected_tallies, DEFAULT_QUADRATURE_POINTS};
use crate::io::sci;
use crate::model::{ChannelParams, DetectorParams, Intensities, ProtocolConfig};
use crate::tally::FluctuationConfig;

/// Smallest usable near-vacuum intensity: finite modulator extinction
/// keeps the weakest decoy away from true vacuum.
pub const MIN_DECOY2: f64 = 0.001;

/// Number of free coordinates of a [`ParameterPoint`].
pub const DIMENSIONS: usize = 6;

pub const COORDINATE_NAMES: [&str; DIMENSIONS] = [
    "signal", "decoy1", "decoy2", "p_signal", "p_decoy1", "basis_z",
];

/// Intensities, intensity probabilities and the Z-basis probability. The
/// weakest decoy's probability is whatever the other two leave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterPoint {
    coords: [f64; DIMENSIONS],
}

impl ParameterPoint {
    pub fn new(
        intensities: Intensities,
        intensity_probabilities: [f64; 3],
        basis_probability_z: f64,
    ) -> Result<Self> {
        let sum: f64 = intensity_probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!(
                "intensity probabilities sum to {sum}, not 1"
            )));
        }
        Self::from_coords([
            intensities.signal,
            intensities.decoy1,
            intensities.decoy2,
            intensity_probabilities[0],
            intensity_probabilities[1],
            basis_probability_z,
        ])
    }

    pub fn from_protocol(cfg: &ProtocolConfig) -> Result<Self> {
        Self::new(
            cfg.intensities,
            cfg.intensity_probabilities,
            cfg.basis_probability_z,
        )
    }

    /// Coordinates in [`COORDINATE_NAMES`] order.
    pub fn from_coords(coords: [f64; DIMENSIONS]) -> Result<Self> {
        let [mu, nu, omega, ps, pd, pz] = coords;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("parameter point has a non-finite coordinate"));
        }
        if !(mu > nu && nu > omega && omega >= MIN_DECOY2) {
            return Err(Error::param(format!(
                "need signal > decoy1 > decoy2 >= {MIN_DECOY2}, got {mu} / {nu} / {omega}"
            )));
        }
        if !(ps > 0.0 && pd > 0.0 && ps + pd < 1.0) {
            return Err(Error::param(format!(
                "intensity probabilities {ps}, {pd}, {} must all be positive",
                1.0 - ps - pd
            )));
        }
        if !(pz > 0.0 && pz < 1.0) {
            return Err(Error::param(format!(
                "Z-basis probability {pz} must lie in (0, 1)"
            )));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> [f64; DIMENSIONS] {
        self.coords
    }

    pub fn intensities(&self) -> Intensities {
        Intensities::new(self.coords[0], self.coords[1], self.coords[2])
    }

    pub fn intensity_probabilities(&self) -> [f64; 3] {
        let [_, _, _, ps, pd, _] = self.coords;
        [ps, pd, 1.0 - ps - pd]
    }

    pub fn basis_probability_z(&self) -> f64 {
        self.coords[5]
    }

    /// `base` with this point's parameters.
    pub fn apply(&self, base: &ProtocolConfig) -> ProtocolConfig {
        ProtocolConfig {
            intensities: self.intensities(),
            intensity_probabilities: self.intensity_probabilities(),
            basis_probability_z: self.basis_probability_z(),
            ..*base
        }
    }
}

/// Closed interval per coordinate. A collapsed interval fixes it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub ranges: [(f64, f64); DIMENSIONS],
}

impl Default for SearchBox {
    /// Every coordinate free over a practical range.
    fn default() -> Self {
        Self {
            ranges: [
                (0.05, 0.8),
                (0.01, 0.4),
                (MIN_DECOY2, 0.05),
                (0.05, 0.9),
                (0.05, 0.9),
                (0.1, 0.9),
            ],
        }
    }
}

impl SearchBox {
    /// The box containing only `p`.
    pub fn point(p: &ParameterPoint) -> Self {
        Self {
            ranges: p.coords.map(|c| (c, c)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in COORDINATE_NAMES.iter().zip(self.ranges) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::param(format!(
                    "empty search range for {name}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        p.coords
            .iter()
            .zip(self.ranges)
            .all(|(c, (lo, hi))| (lo..=hi).contains(c))
    }

    fn clamp(&self, coords: [f64; DIMENSIONS]) -> [f64; DIMENSIONS] {
        let mut out = coords;
        for (c, (lo, hi)) in out.iter_mut().zip(self.ranges) {
            *c = c.clamp(lo, hi);
        }
        out
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    signal: Option<[f64; 2]>,
    decoy1: Option<[f64; 2]>,
    decoy2: Option<[f64; 2]>,
    p_signal: Option<[f64; 2]>,
    p_decoy1: Option<[f64; 2]>,
    basis_z: Option<[f64; 2]>,
}

/// Parses a TOML search box such as `signal = [0.05, 0.8]`. Keys left out
/// are fixed at the corresponding coordinate of `fixed`.
pub fn parse_search_box(text: &str, fixed: &ParameterPoint) -> Result<SearchBox> {
    let raw: RawBox =
        toml::from_str(text).map_err(|e| Error::Format(format!("search box: {}", e.message())))?;
    let given = [
        raw.signal,
        raw.decoy1,
        raw.decoy2,
        raw.p_signal,
        raw.p_decoy1,
        raw.basis_z,
    ];
    let mut ranges = [(0.0, 0.0); DIMENSIONS];
    for ((r, g), c) in ranges.iter_mut().zip(given).zip(fixed.coords) {
        *r = g.map_or((c, c), |[lo, hi]| (lo, hi));
    }
    let b = SearchBox { ranges };
    b.validate()?;
    Ok(b)
}

/// Everything besides the point that determines the rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    /// Supplies total pulses and repetition rate.
    pub base: ProtocolConfig,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub fluctuation: FluctuationConfig,
    pub ec_inefficiency: f64,
    pub quadrature_points: usize,
}

impl EvalContext {
    pub fn new(base: ProtocolConfig, channel: ChannelParams, detector: DetectorParams) -> Self {
        Self {
            base,
            channel,
            detector,
            fluctuation: FluctuationConfig::default(),
            ec_inefficiency: DEFAULT_EC_INEFFICIENCY,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }
}

/// Finite-size key rate at `p`, with expected tallies standing in for
/// observations.
pub fn evaluate_rate(p: &ParameterPoint, ctx: &EvalContext) -> Result<f64> {
    evaluate(p, ctx, BoundMode::FiniteNAlpha)
}

/// Key rate at `p` with the infinite-key bounds.
pub fn evaluate_rate_infinite(p: &ParameterPoint, ctx: &EvalContext) -> Result<f64> {
    evaluate(p, ctx, BoundMode::InfiniteKey)
}

fn evaluate(p: &ParameterPoint, ctx: &EvalContext, mode: BoundMode) -> Result<f64> {
    let cfg = p.apply(&ctx.base);
    let rates = expected_tallies(&cfg, &ctx.channel, &ctx.detector, ctx.quadrature_points)?;
    let chain = analyze(&rates, &cfg, &ctx.fluctuation, ctx.ec_inefficiency)?;
    Ok(chain.key(mode).rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub point: ParameterPoint,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: ParameterPoint,
    pub best_rate: f64,
    /// Every evaluation in the order the search consumed it.
    pub trace: Vec<Evaluation>,
}

/// Grid points tried on each side of the current value per coordinate.
const GRID_HALF_WIDTH: i32 = 2;
/// Initial grid step as a fraction of the coordinate's range.
const INITIAL_STEP: f64 = 0.125;
/// Steps below this fraction of the range end the search.
const MIN_STEP: f64 = 1e-4;

/// Coordinate descent over a refining grid. Each coordinate in turn is
/// moved to the best of `±1..=GRID_HALF_WIDTH` steps around the current
/// value; after a pass without improvement all steps halve. The search
/// starts from `seed` when it lies in the box (otherwise from the box
/// centre, clamped into validity) and never accepts a worse point, so the
/// result is at least as good as a seed inside the box. `budget` caps the
/// number of rate evaluations.
pub fn optimize(
    space: &SearchBox,
    seed: &ParameterPoint,
    ctx: &EvalContext,
    budget: usize,
) -> Result<OptimizationResult> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::param(
            "optimizer budget must be at least one evaluation",
        ));
    }
    let start = if space.contains(seed) {
        *seed
    } else {
        let centre = space.ranges.map(|(lo, hi)| 0.5 * (lo + hi));
        ParameterPoint::from_coords(space.clamp(centre))
            .map_err(|e| Error::param(format!("the search box centre is not a valid point: {e}")))?
    };
    let mut trace = vec![Evaluation {
        point: start,
        rate: evaluate_rate(&start, ctx)?,
    }];
    let mut best = trace[0];
    let mut steps = space.ranges.map(|(lo, hi)| (hi - lo) * INITIAL_STEP);
    let floor = space.ranges.map(|(lo, hi)| (hi - lo) * MIN_STEP);

    'search: loop {
        let mut improved = false;
        for dim in 0..DIMENSIONS {
            if steps[dim] <= floor[dim] || steps[dim] == 0.0 {
                continue;
            }
            let remaining = budget - trace.len();
            if remaining == 0 {
                break 'search;
            }
            let candidates: Vec<ParameterPoint> = candidates(space, &best.point, dim, steps[dim])
                .into_iter()
                .take(remaining)
                .collect();
            let rates: Vec<Result<f64>> = candidates
                .par_iter()
                .map(|p| evaluate_rate(p, ctx))
                .collect();
            for (point, rate) in candidates.into_iter().zip(rates) {
                let e = Evaluation { point, rate: rate? };
                trace.push(e);
                if e.rate > best.rate {
                    best = e;
                    improved = true;
                }
            }
        }
        if !improved {
            let mut any = false;
            for (s, f) in steps.iter_mut().zip(floor) {
                *s *= 0.5;
                any |= *s > f;
            }
            if !any {
                break;
            }
        }
    }
    Ok(OptimizationResult {
        best: best.point,
        best_rate: best.rate,
        trace,
    })
}

fn candidates(
    space: &SearchBox,
    at: &ParameterPoint,
    dim: usize,
    step: f64,
) -> Vec<ParameterPoint> {
    let (lo, hi) = space.ranges[dim];
    let mut out: Vec<ParameterPoint> = Vec::new();
    for k in (-GRID_HALF_WIDTH..=GRID_HALF_WIDTH).filter(|k| *k != 0) {
        let mut c = at.coords;
        c[dim] = (c[dim] + f64::from(k) * step).clamp(lo, hi);
        if c[dim] == at.coords[dim] || out.iter().any(|p| p.coords[dim] == c[dim]) {
            continue;
        }
        if let Ok(p) = ParameterPoint::from_coords(c) {
            out.push(p);
        }
    }
    out
}

/// Finite-size rate at `p` for each total fiber length, split evenly
/// between the two sides.
pub fn rate_vs_distance(
    p: &ParameterPoint,
    ctx: &EvalContext,
    total_km: &[f64],
) -> Result<Vec<(f64, f64)>> {
    total_km
        .par_iter()
        .map(|&d| {
            let mut c = ctx.clone();
            c.channel.fiber_length_km = 0.5 * d;
            c.channel.validate().into_result()?;
            Ok((d, evaluate_rate(p, &c)?))
        })
        .collect()
}

pub const TRACE_HEADER: &str = "index,signal,decoy1,decoy2,p_signal,p_decoy1,p_decoy2,basis_z,rate";
pub const SWEEP_HEADER: &str = "total_km,rate,key_length";

/// One CSV row per evaluation.
pub fn format_trace_csv(r: &OptimizationResult, digest: &str) -> String {
    let mut s = format!("# digest={digest}\n{TRACE_HEADER}\n");
    for (i, e) in r.trace.iter().enumerate() {
        let [mu, nu, om] = [e.point.coords[0], e.point.coords[1], e.point.coords[2]];
        let [ps, pd, pw] = e.point.intensity_probabilities();
        let pz = e.point.basis_probability_z();
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{}",
            sci(mu),
            sci(nu),
            sci(om),
            sci(ps),
            sci(pd),
            sci(pw),
            sci(pz),
            sci(e.rate)
        );
    }
    s
}

pub fn format_sweep_csv(sweep: &[(f64, f64)], total_pulses: u64, digest: &str) -> String {
    let mut s = format!("# digest={digest}\n{SWEEP_HEADER}\n");
    for (d, r) in sweep {
        let _ = writeln!(
            s,
            "{},{},{}",
            sci(*d),
            sci(*r),
            (r * total_pulses as f64).floor() as u64
        );
    }
    s
}
