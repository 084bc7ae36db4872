//! File formats: the TOML run configuration, tally CSVs, the analysis
//! report and the run manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoy::{
    self, lp::DEFAULT_CUTOFF, reference::PUBLISHED, y11_lower_infinite_mu_nu_squared,
    y11_oracle_lp, BoundMode, ChainResult, KeyRateInputs, KeyRateReport, LpBounds,
};
use crate::error::{Error, Result};
use crate::expected::DEFAULT_QUADRATURE_POINTS;
use crate::model::{
    pair_pulse_counts, parse_ratio, Basis, CellKey, CellMap, ChannelParams, DetectorLayout,
    DetectorParams, Intensities, IntensityLabel, PairCounts, ProtocolConfig,
};
use crate::tally::{CellRates, FluctuationConfig, RateMatrix, TallyCell, TallyMatrix};

/// Fixed scientific notation with six significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.5e}")
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a serializable description of every input to a run.
/// `serde_json` maps are ordered, so the encoding is canonical.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("inputs serialize to JSON"))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- config

/// Settings for the analysis stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub n_alpha: f64,
    pub epsilon: f64,
    pub ec_inefficiency: f64,
    pub quadrature_points: usize,
    pub lp_cutoff: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let f = FluctuationConfig::default();
        Self {
            n_alpha: f.n_alpha,
            epsilon: f.epsilon,
            ec_inefficiency: decoy::DEFAULT_EC_INEFFICIENCY,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            lp_cutoff: DEFAULT_CUTOFF,
        }
    }
}

impl AnalysisConfig {
    pub fn fluctuation(&self) -> FluctuationConfig {
        FluctuationConfig {
            n_alpha: self.n_alpha,
            epsilon: self.epsilon,
        }
    }
}

/// Everything a run reads from its configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub analysis: AnalysisConfig,
    /// Whether Bob also flips his bit on X-basis ψ+ announcements.
    pub flip_x_psi_plus: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Count {
    Int(u64),
    Float(f64),
}

impl Count {
    fn get(self, name: &str) -> Result<u64> {
        match self {
            Count::Int(n) => Ok(n),
            Count::Float(x) if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => {
                Ok(x as u64)
            }
            Count::Float(x) => Err(Error::Format(format!(
                "{name} must be a nonnegative integer, got {x}"
            ))),
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawProtocol {
    signal: Option<f64>,
    decoy1: Option<f64>,
    decoy2: Option<f64>,
    intensity_ratio: Option<String>,
    intensity_probabilities: Option<[f64; 3]>,
    basis_probability_z: Option<f64>,
    total_pulses: Option<Count>,
    repetition_rate_hz: Option<f64>,
    flip_x_psi_plus: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawChannel {
    fiber_length_km: Option<f64>,
    attenuation_db_per_km: Option<f64>,
    misalignment: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawDetector {
    efficiency: Option<f64>,
    dark_count_probability: Option<f64>,
    layout: Option<DetectorLayout>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawAnalysis {
    n_alpha: Option<f64>,
    epsilon: Option<f64>,
    ec_inefficiency: Option<f64>,
    quadrature_points: Option<usize>,
    lp_cutoff: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    protocol: RawProtocol,
    channel: RawChannel,
    detector: RawDetector,
    analysis: RawAnalysis,
}

/// Parses and validates a TOML run configuration. Every key is optional
/// and falls back to the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let d = RunConfig::default();
    let p = raw.protocol;
    let intensity_probabilities = match (p.intensity_ratio, p.intensity_probabilities) {
        (Some(_), Some(_)) => return Err(Error::Format(
            "give either protocol.intensity_ratio or protocol.intensity_probabilities, not both"
                .into(),
        )),
        (Some(r), None) => parse_ratio(&r)?,
        (None, Some(v)) => v,
        (None, None) => d.protocol.intensity_probabilities,
    };
    let protocol = ProtocolConfig {
        intensities: Intensities::new(
            p.signal.unwrap_or(d.protocol.intensities.signal),
            p.decoy1.unwrap_or(d.protocol.intensities.decoy1),
            p.decoy2.unwrap_or(d.protocol.intensities.decoy2),
        ),
        intensity_probabilities,
        basis_probability_z: p
            .basis_probability_z
            .unwrap_or(d.protocol.basis_probability_z),
        total_pulses: match p.total_pulses {
            Some(c) => c.get("protocol.total_pulses")?,
            None => d.protocol.total_pulses,
        },
        repetition_rate_hz: p
            .repetition_rate_hz
            .unwrap_or(d.protocol.repetition_rate_hz),
    };
    let channel = ChannelParams {
        fiber_length_km: raw
            .channel
            .fiber_length_km
            .unwrap_or(d.channel.fiber_length_km),
        attenuation_db_per_km: raw
            .channel
            .attenuation_db_per_km
            .unwrap_or(d.channel.attenuation_db_per_km),
        misalignment: raw.channel.misalignment.unwrap_or(d.channel.misalignment),
    };
    let detector = DetectorParams {
        efficiency: raw.detector.efficiency.unwrap_or(d.detector.efficiency),
        dark_count_probability: raw
            .detector
            .dark_count_probability
            .unwrap_or(d.detector.dark_count_probability),
        layout: raw.detector.layout.unwrap_or(d.detector.layout),
    };
    let a = raw.analysis;
    let analysis = AnalysisConfig {
        n_alpha: a.n_alpha.unwrap_or(d.analysis.n_alpha),
        epsilon: a.epsilon.unwrap_or(d.analysis.epsilon),
        ec_inefficiency: a.ec_inefficiency.unwrap_or(d.analysis.ec_inefficiency),
        quadrature_points: a.quadrature_points.unwrap_or(d.analysis.quadrature_points),
        lp_cutoff: a.lp_cutoff.unwrap_or(d.analysis.lp_cutoff),
    };
    let cfg = RunConfig {
        protocol,
        channel,
        detector,
        analysis,
        flip_x_psi_plus: p.flip_x_psi_plus.unwrap_or(false),
    };
    cfg.protocol.validate().into_result()?;
    cfg.channel.validate().into_result()?;
    cfg.detector.validate().into_result()?;
    if !(cfg.analysis.n_alpha.is_finite() && cfg.analysis.n_alpha >= 0.0) {
        return Err(Error::param("analysis.n_alpha must be finite and >= 0"));
    }
    if !(cfg.analysis.ec_inefficiency.is_finite() && cfg.analysis.ec_inefficiency >= 1.0) {
        return Err(Error::param("analysis.ec_inefficiency must be >= 1"));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&read_text(path)?)
}

// ---------------------------------------------------------------- tallies

pub const COUNTS_HEADER: &str = "basis,intensity_a,intensity_b,sent,coincidences,errors";
pub const RATES_HEADER: &str = "basis,intensity_a,intensity_b,gain,qber";
const DIGEST_PREFIX: &str = "# digest=";

/// Contents of a tallies CSV.
#[derive(Debug, Clone, PartialEq)]
pub enum TallyFile {
    Counts(TallyMatrix),
    Rates {
        rates: RateMatrix,
        /// Present when the file carries a `sent` column.
        sent: Option<PairCounts>,
    },
}

impl TallyFile {
    pub fn rates(&self) -> RateMatrix {
        match self {
            TallyFile::Counts(t) => t.rates(),
            TallyFile::Rates { rates, .. } => *rates,
        }
    }

    pub fn sent(&self) -> Option<PairCounts> {
        match self {
            TallyFile::Counts(t) => Some(t.sent_counts()),
            TallyFile::Rates { sent, .. } => *sent,
        }
    }
}

/// The digest recorded in a `# digest=` line, if any.
pub fn embedded_digest(text: &str) -> Option<&str> {
    text.lines()
        .find_map(|l| l.strip_prefix(DIGEST_PREFIX))
        .map(str::trim)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn field(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<&str> {
    rec.get(idx)
        .ok_or_else(|| Error::Format(format!("line {line}: missing field")))
}

fn number<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: u64,
    name: &str,
) -> Result<T> {
    let s = field(rec, idx, line)?;
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse {name} from {s:?}")))
}

/// Parses a tallies CSV in raw-count or rate form. `#` lines are comments.
/// Every one of the 18 cells must appear exactly once.
pub fn parse_tallies_csv(text: &str) -> Result<TallyFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let req =
        |n: &str| column(&headers, n).ok_or_else(|| Error::Format(format!("missing column {n}")));
    let (ib, ia, ibob) = (req("basis")?, req("intensity_a")?, req("intensity_b")?);
    let counts_form = column(&headers, "coincidences").is_some();
    let (c_sent, c_coinc, c_err, c_gain, c_qber) = if counts_form {
        (
            Some(req("sent")?),
            req("coincidences")?,
            req("errors")?,
            0,
            0,
        )
    } else {
        (column(&headers, "sent"), 0, 0, req("gain")?, req("qber")?)
    };

    let mut seen = BTreeSet::new();
    let mut tally = CellMap::<TallyCell>::default();
    let mut rates = CellMap::<CellRates>::default();
    let mut sent = CellMap::<f64>::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let basis: Basis = field(&rec, ib, line)?.parse()?;
        let a: IntensityLabel = field(&rec, ia, line)?.parse()?;
        let b: IntensityLabel = field(&rec, ibob, line)?.parse()?;
        let key = CellKey::new(basis, a, b);
        if !seen.insert(key.index()) {
            return Err(Error::Table(format!("cell {key} appears twice")));
        }
        if counts_form {
            let s = number(&rec, c_sent.unwrap(), line, "sent")?;
            let c = number(&rec, c_coinc, line, "coincidences")?;
            let e = number(&rec, c_err, line, "errors")?;
            tally[key] =
                TallyCell::new(s, c, e).map_err(|e| Error::Table(format!("cell {key}: {e}")))?;
        } else {
            rates[key] = CellRates {
                gain: number(&rec, c_gain, line, "gain")?,
                qber: number(&rec, c_qber, line, "qber")?,
            };
            if let Some(i) = c_sent {
                sent[key] = number(&rec, i, line, "sent")?;
            }
        }
    }
    if seen.len() != CellKey::COUNT {
        let missing: Vec<String> = CellKey::all()
            .filter(|k| !seen.contains(&k.index()))
            .map(|k| k.to_string())
            .collect();
        return Err(Error::Table(format!(
            "missing cells: {}",
            missing.join(", ")
        )));
    }
    if counts_form {
        Ok(TallyFile::Counts(TallyMatrix::from_cells(tally)?))
    } else {
        if sent.iter().any(|(_, s)| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Table("sent counts must be finite and >= 0".into()));
        }
        Ok(TallyFile::Rates {
            rates: RateMatrix::from_cells(rates)?,
            sent: c_sent.map(|_| sent),
        })
    }
}

pub fn load_tallies(path: &Path) -> Result<TallyFile> {
    parse_tallies_csv(&read_text(path)?)
}

fn digest_line(out: &mut String, digest: &str) {
    writeln!(out, "{DIGEST_PREFIX}{digest}").unwrap();
}

pub fn format_counts_csv(t: &TallyMatrix, digest: &str) -> String {
    let mut out = String::new();
    digest_line(&mut out, digest);
    out.push_str(COUNTS_HEADER);
    out.push('\n');
    for key in CellKey::all() {
        let c = t.cell(key);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            key.basis,
            key.alice.as_str(),
            key.bob.as_str(),
            c.sent,
            c.coincidences,
            c.errors
        )
        .unwrap();
    }
    out
}

pub fn format_rates_csv(r: &RateMatrix, digest: &str) -> String {
    let mut out = String::new();
    digest_line(&mut out, digest);
    out.push_str(RATES_HEADER);
    out.push('\n');
    for key in CellKey::all() {
        writeln!(
            out,
            "{},{},{},{},{}",
            key.basis,
            key.alice.as_str(),
            key.bob.as_str(),
            sci(r.gain(key)),
            sci(r.qber(key))
        )
        .unwrap();
    }
    out
}

// ---------------------------------------------------------------- report

/// Where the analysed rates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    Reference,
    Tallies,
}

/// Everything `analyze` writes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub source: RateSource,
    pub n_alpha: f64,
    pub total_pulses: u64,
    pub lp_cutoff: usize,
    /// Key rate from the listed reference-run parameters; reference input only.
    pub listed: Option<KeyRateReport>,
    pub chain: ChainResult,
    /// Y11 lower bounds (Z, X) using the `(μ-ν)²` denominator variant.
    pub y11_mu_nu_squared: (f64, f64),
    /// `None` when no yield grid fits the envelopes.
    pub lp_z: Option<LpBounds>,
    pub lp_x: Option<LpBounds>,
}

fn feasible(r: Result<LpBounds>) -> Result<Option<LpBounds>> {
    match r {
        Ok(b) => Ok(Some(b)),
        Err(Error::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the complete analysis on `rates`. Envelope widths come from
/// `sent` when given, otherwise from the pulse allocation of `protocol`.
pub fn analysis_report(
    rates: &RateMatrix,
    sent: Option<&PairCounts>,
    source: RateSource,
    protocol: &ProtocolConfig,
    analysis: &AnalysisConfig,
) -> Result<AnalysisReport> {
    protocol.validate().into_result()?;
    let counts = match sent {
        Some(s) => *s,
        None => pair_pulse_counts(protocol),
    };
    let i = &protocol.intensities;
    let chain = decoy::analyze_with_counts(
        rates,
        &counts,
        protocol,
        &analysis.fluctuation(),
        analysis.ec_inefficiency,
    )?;
    let listed = match source {
        RateSource::Reference => Some(decoy::key_rate(&KeyRateInputs::reference_run())?),
        RateSource::Tallies => None,
    };
    Ok(AnalysisReport {
        source,
        n_alpha: analysis.n_alpha,
        total_pulses: protocol.total_pulses,
        lp_cutoff: analysis.lp_cutoff,
        listed,
        y11_mu_nu_squared: (
            y11_lower_infinite_mu_nu_squared(rates, Basis::Z, i)?,
            y11_lower_infinite_mu_nu_squared(rates, Basis::X, i)?,
        ),
        lp_z: feasible(y11_oracle_lp(
            &chain.bounded,
            Basis::Z,
            i,
            analysis.lp_cutoff,
        ))?,
        lp_x: feasible(y11_oracle_lp(
            &chain.bounded,
            Basis::X,
            i,
            analysis.lp_cutoff,
        ))?,
        chain,
    })
}

fn kv(out: &mut String, key: &str, v: f64) {
    writeln!(out, "{key} = {}", sci(v)).unwrap();
}

fn key_section(out: &mut String, name: &str, k: &KeyRateReport) {
    writeln!(out, "\n[{name}]").unwrap();
    kv(out, "q", k.q);
    kv(out, "p11", k.p11);
    kv(out, "y11_z_lower", k.y11_z_lower);
    kv(out, "e11_x_upper", k.e11_x_upper);
    kv(out, "gain_signal_z", k.gain_signal);
    kv(out, "qber_signal_z", k.qber_signal);
    kv(out, "ec_inefficiency", k.ec_inefficiency);
    kv(out, "rate", k.rate);
    writeln!(out, "key_length = {}", k.key_length).unwrap();
    writeln!(out, "total_pulses = {}", k.total_pulses).unwrap();
}

/// TOML rendering of an analysis report.
pub fn format_report(r: &AnalysisReport, digest: &str) -> String {
    let mut out = String::new();
    digest_line(&mut out, digest);
    writeln!(
        out,
        "source = \"{}\"",
        match r.source {
            RateSource::Reference => "reference_tables",
            RateSource::Tallies => "tallies",
        }
    )
    .unwrap();
    kv(&mut out, "n_alpha", r.n_alpha);
    writeln!(out, "total_pulses = {}", r.total_pulses).unwrap();
    if let Some(k) = &r.listed {
        key_section(&mut out, "listed_parameters", k);
    }
    for mode in [BoundMode::InfiniteKey, BoundMode::FiniteNAlpha] {
        let b = r.chain.bounds(mode);
        writeln!(out, "\n[bounds.{}]", mode.as_str()).unwrap();
        kv(&mut out, "y11_z_lower", b.y11_z_lower);
        kv(&mut out, "y11_x_lower", b.y11_x_lower);
        match b.e11_x_upper {
            Some(e) => kv(&mut out, "e11_x_upper", e),
            None => writeln!(out, "e11_x_upper = \"undefined\"").unwrap(),
        }
        key_section(
            &mut out,
            &format!("key.{}", mode.as_str()),
            r.chain.key(mode),
        );
    }
    writeln!(out, "\n[bounds.mu_nu_squared_denominator]").unwrap();
    kv(&mut out, "y11_z_lower", r.y11_mu_nu_squared.0);
    kv(&mut out, "y11_x_lower", r.y11_mu_nu_squared.1);
    writeln!(out, "\n[lp]").unwrap();
    writeln!(out, "cutoff = {}", r.lp_cutoff).unwrap();
    match &r.lp_z {
        Some(z) => {
            writeln!(out, "z_status = \"feasible\"").unwrap();
            kv(&mut out, "y11_z_min", z.y11_min);
            kv(&mut out, "y11_z_max", z.y11_max);
        }
        None => writeln!(out, "z_status = \"infeasible\"").unwrap(),
    }
    match &r.lp_x {
        Some(x) => {
            writeln!(out, "x_status = \"feasible\"").unwrap();
            kv(&mut out, "y11_x_min", x.y11_min);
            kv(&mut out, "y11_x_max", x.y11_max);
            kv(&mut out, "e11_x_max", x.e11_max);
        }
        None => writeln!(out, "x_status = \"infeasible\"").unwrap(),
    }
    if r.source == RateSource::Reference {
        writeln!(out, "\n[published]").unwrap();
        kv(&mut out, "y11_z_lower", PUBLISHED.y11_z_lower);
        kv(&mut out, "e11_x_upper", PUBLISHED.e11_x_upper);
        kv(&mut out, "rate", PUBLISHED.rate);
        writeln!(out, "key_length = {}", PUBLISHED.key_length).unwrap();
    }
    out
}

// ---------------------------------------------------------------- manifest

/// Provenance of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over every input that affects the outputs.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn unix_ms() -> u128 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_digest: String,
        seed: Option<u64>,
        started_unix_ms: u128,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_digest,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms,
            finished_unix_ms: unix_ms(),
        }
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        name.into()
    }

    pub fn write(&self, output: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_text(&Self::path_for(output), &(json + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::reference::REFERENCE_TABLES_CSV;

    #[test]
    fn sci_uses_six_significant_digits() {
        assert_eq!(sci(9.72100432552103e-9), "9.72100e-9");
        assert_eq!(sci(0.0), "0.00000e0");
    }

    #[test]
    fn empty_config_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn config_sections_parse() {
        let cfg = parse_config(
            r#"
[protocol]
signal = 0.4
intensity_ratio = "1:1:2"
total_pulses = 1e9
flip_x_psi_plus = true
[channel]
fiber_length_km = 10
[detector]
layout = "full"
[analysis]
n_alpha = 0
"#,
        )
        .unwrap();
        assert_eq!(cfg.protocol.intensities.signal, 0.4);
        assert_eq!(cfg.protocol.intensity_probabilities, [0.25, 0.25, 0.5]);
        assert_eq!(cfg.protocol.total_pulses, 1_000_000_000);
        assert_eq!(cfg.channel.fiber_length_km, 10.0);
        assert_eq!(cfg.detector.layout, DetectorLayout::Full);
        assert_eq!(cfg.analysis.n_alpha, 0.0);
        assert!(cfg.flip_x_psi_plus);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(parse_config("[protocol]\nsignal = 0.05").is_err());
        assert!(parse_config("[protocol]\nbogus = 1").is_err());
        assert!(parse_config(
            "[protocol]\nintensity_ratio = \"1:1:1\"\nintensity_probabilities = [0.2, 0.4, 0.4]"
        )
        .is_err());
        assert!(parse_config("[channel]\nmisalignment = 0.7").is_err());
        assert!(parse_config("not toml [").is_err());
    }

    #[test]
    fn counts_round_trip() {
        let mut t = TallyMatrix::new();
        for (i, key) in CellKey::all().enumerate() {
            for j in 0..(i as u64 + 3) {
                t.record(key, j % 2 == 0, j % 4 == 0);
            }
        }
        let text = format_counts_csv(&t, "abc");
        assert_eq!(embedded_digest(&text), Some("abc"));
        assert_eq!(parse_tallies_csv(&text).unwrap(), TallyFile::Counts(t));
    }

    #[test]
    fn rates_round_trip_to_six_digits() {
        let r = crate::decoy::reference_rates();
        let back = parse_tallies_csv(&format_rates_csv(&r, "x"))
            .unwrap()
            .rates();
        for k in CellKey::all() {
            assert!((back.gain(k) - r.gain(k)).abs() <= 1e-5 * r.gain(k));
        }
    }

    #[test]
    fn table_errors() {
        let bad_e = REFERENCE_TABLES_CSV.replace("0.262", "1.262");
        assert!(matches!(parse_tallies_csv(&bad_e), Err(Error::Table(_))));
        let missing: String = REFERENCE_TABLES_CSV
            .lines()
            .filter(|l| !l.starts_with("X,decoy2,decoy2"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(parse_tallies_csv(&missing), Err(Error::Table(_))));
        let dup = format!("{REFERENCE_TABLES_CSV}Z,signal,signal,1e-5,0.1\n");
        assert!(matches!(parse_tallies_csv(&dup), Err(Error::Table(_))));
        assert!(parse_tallies_csv("basis,intensity_a\nZ,signal\n").is_err());
    }

    #[test]
    fn reference_report_contains_listed_rate() {
        let r = crate::decoy::reference_rates();
        let rep = analysis_report(
            &r,
            None,
            RateSource::Reference,
            &ProtocolConfig::default(),
            &AnalysisConfig::default(),
        )
        .unwrap();
        let text = format_report(&rep, "d");
        assert!(text.contains("rate = 9.72100e-9"), "{text}");
        assert!(text.contains("[published]"));
        toml::from_str::<toml::Table>(&text).unwrap();
    }

    #[test]
    fn zero_n_alpha_makes_modes_coincide() {
        let r = crate::decoy::reference_rates();
        let a = AnalysisConfig {
            n_alpha: 0.0,
            ..AnalysisConfig::default()
        };
        let rep = analysis_report(
            &r,
            None,
            RateSource::Reference,
            &ProtocolConfig::default(),
            &a,
        )
        .unwrap();
        assert_eq!(rep.chain.infinite.y11_z_lower, rep.chain.finite.y11_z_lower);
        assert_eq!(rep.chain.infinite.e11_x_upper, rep.chain.finite.e11_x_upper);
        assert_eq!(rep.chain.key_infinite.rate, rep.chain.key_finite.rate);
        // The measured Z tables admit no exact yield grid.
        assert!(rep.lp_z.is_none());
        assert!(format_report(&rep, "d").contains("z_status = \"infeasible\""));
    }
}
