use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use mdiqkd::decoy::{analyze_with_counts, reference_rates, BoundMode};
use mdiqkd::io::{
    analysis_report, digest_of, format_counts_csv, format_report, load_config, load_tallies,
    read_text, sci, sha256_hex, unix_ms, write_text, RateSource, RunConfig, RunManifest,
};
use mdiqkd::optimizer::{
    evaluate_rate, format_sweep_csv, format_trace_csv, optimize as run_optimizer, parse_search_box,
    rate_vs_distance, EvalContext, ParameterPoint, SearchBox,
};
use mdiqkd::protocol::{
    apply_bit_flip, measure_sifted_qber, run_session, sift, BitFlipRule, SessionConfig, SiftRole,
};
use mdiqkd::{run_monte_carlo, Basis, CellKey, Error, IntensityLabel, Result};

use crate::{AnalyzeArgs, OptimizeArgs, ProtocolArgs, SimulateArgs};

fn config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn finish(
    command: &str,
    digest: String,
    seed: Option<u64>,
    started: u128,
    out: &Path,
) -> Result<()> {
    RunManifest::new(command, digest, seed, started).write(out)
}

#[derive(Serialize)]
struct SimulateInputs<'a> {
    command: &'static str,
    config: &'a RunConfig,
    trials: u64,
    seed: u64,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let started = unix_ms();
    let cfg = config(a.config.as_deref())?;
    let digest = digest_of(&SimulateInputs {
        command: "simulate",
        config: &cfg,
        trials: a.trials,
        seed: a.seed,
    });
    let tally = run_monte_carlo(&cfg.protocol, &cfg.channel, &cfg.detector, a.trials, a.seed)?;
    write_text(&a.out, &format_counts_csv(&tally, &digest))?;
    finish("simulate", digest, Some(a.seed), started, &a.out)
}

#[derive(Serialize)]
struct AnalyzeInputs<'a> {
    command: &'static str,
    config: &'a RunConfig,
    /// "reference" or the SHA-256 of the tallies file.
    tables: String,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let started = unix_ms();
    let mut cfg = config(a.config.as_deref())?;
    if let Some(n) = a.n_alpha {
        if !(n.is_finite() && n >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "--n-alpha must be finite and >= 0, got {n}"
            )));
        }
        cfg.analysis.n_alpha = n;
    }
    if let Some(n) = a.total_pulses {
        cfg.protocol.total_pulses = n;
    }
    let (rates, sent, source, tables) = match &a.tallies {
        Some(path) => {
            let file = load_tallies(path)?;
            let text = read_text(path)?;
            (
                file.rates(),
                file.sent(),
                RateSource::Tallies,
                sha256_hex(text.as_bytes()),
            )
        }
        None => (
            reference_rates(),
            None,
            RateSource::Reference,
            "reference".to_string(),
        ),
    };
    let digest = digest_of(&AnalyzeInputs {
        command: "analyze",
        config: &cfg,
        tables,
    });
    let report = analysis_report(&rates, sent.as_ref(), source, &cfg.protocol, &cfg.analysis)?;
    write_text(&a.out, &format_report(&report, &digest))?;
    finish("analyze", digest, None, started, &a.out)
}

#[derive(Serialize)]
struct ProtocolInputs<'a> {
    command: &'static str,
    session: &'a SessionConfig,
    analysis: &'a mdiqkd::io::AnalysisConfig,
}

fn opt_sci(x: Option<f64>) -> String {
    x.map_or_else(|| "\"undefined\"".to_string(), sci)
}

pub fn protocol(a: &ProtocolArgs) -> Result<()> {
    let started = unix_ms();
    let cfg = config(a.config.as_deref())?;
    let mut session = SessionConfig::new(cfg.protocol, cfg.channel, cfg.detector, a.seed, a.slots);
    session.bit_flip = BitFlipRule {
        flip_x_psi_plus: cfg.flip_x_psi_plus,
    };
    let digest = digest_of(&ProtocolInputs {
        command: "protocol",
        session: &session,
        analysis: &cfg.analysis,
    });
    let (alice, bob, tally) = run_session(&session)?;
    let (key_a, key_b) = sift(&alice, &bob)?;
    let key_b = apply_bit_flip(&key_b, session.bit_flip)?;
    let qber = measure_sifted_qber(&key_a, &key_b)?;

    let mut s = String::new();
    let _ = writeln!(s, "# digest={digest}");
    let _ = writeln!(s, "session_id = \"{}\"", alice.session_id);
    let _ = writeln!(s, "slots = {}", a.slots);
    let _ = writeln!(s, "seed = {}", a.seed);
    let _ = writeln!(s, "announcements = {}", alice.announcements.len());
    let _ = writeln!(s, "sifted_z = {}", key_a.in_basis(Basis::Z).count());
    let _ = writeln!(s, "sifted_x = {}", key_a.in_basis(Basis::X).count());
    let _ = writeln!(s, "raw_key = {}", key_a.with_role(SiftRole::Key).count());
    for basis in [Basis::Z, Basis::X] {
        let k = CellKey::new(basis, IntensityLabel::Signal, IntensityLabel::Signal);
        let _ = writeln!(
            s,
            "qber_{}_signal = {}",
            basis.as_str().to_ascii_lowercase(),
            opt_sci(qber[k].rate())
        );
    }

    // Finite-size analysis of this session's own tallies.
    let mut protocol = session.protocol;
    protocol.total_pulses = a.slots;
    let _ = writeln!(s, "\n[analysis]");
    match analyze_with_counts(
        &tally.rates(),
        &tally.sent_counts(),
        &protocol,
        &cfg.analysis.fluctuation(),
        cfg.analysis.ec_inefficiency,
    ) {
        Ok(chain) => {
            let b = chain.bounds(BoundMode::FiniteNAlpha);
            let k = chain.key(BoundMode::FiniteNAlpha);
            let _ = writeln!(s, "status = \"ok\"");
            let _ = writeln!(s, "y11_z_lower = {}", sci(b.y11_z_lower));
            let _ = writeln!(s, "e11_x_upper = {}", opt_sci(b.e11_x_upper));
            let _ = writeln!(s, "rate = {}", sci(k.rate));
            let _ = writeln!(s, "key_length = {}", k.key_length);
        }
        Err(e @ (Error::InvalidParameter(_) | Error::ZeroDenominator(_))) => {
            let _ = writeln!(s, "status = \"unavailable\"");
            let _ = writeln!(s, "reason = \"{}\"", e.to_string().replace('"', "'"));
        }
        Err(e) => return Err(e),
    }

    print!("{s}");
    if let Some(path) = &a.transcript {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        mdiqkd::protocol::write_transcript(&alice, &bob, &mut w)?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))?;
    }
    if let Some(out) = &a.out {
        write_text(out, &s)?;
        finish("protocol", digest, Some(a.seed), started, out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeInputs<'a> {
    command: &'static str,
    config: &'a RunConfig,
    ranges: [(f64, f64); mdiqkd::optimizer::DIMENSIONS],
    budget: usize,
    sweep: Option<(f64, f64)>,
}

pub fn optimize(a: &OptimizeArgs) -> Result<()> {
    let started = unix_ms();
    let cfg = config(a.config.as_deref())?;
    let point = ParameterPoint::from_protocol(&cfg.protocol)?;
    let space = match &a.search_box {
        Some(p) => parse_search_box(&read_text(p)?, &point)?,
        None => SearchBox::default(),
    };
    let mut ctx = EvalContext::new(cfg.protocol.clone(), cfg.channel, cfg.detector);
    ctx.fluctuation = cfg.analysis.fluctuation();
    ctx.ec_inefficiency = cfg.analysis.ec_inefficiency;
    ctx.quadrature_points = cfg.analysis.quadrature_points;

    if a.sweep {
        if !(a.max_km.is_finite() && a.max_km >= 0.0 && a.step_km.is_finite() && a.step_km > 0.0) {
            return Err(Error::InvalidParameter(
                "sweep needs --max-km >= 0 and --step-km > 0".into(),
            ));
        }
        let digest = digest_of(&OptimizeInputs {
            command: "optimize",
            config: &cfg,
            ranges: space.ranges,
            budget: 0,
            sweep: Some((a.max_km, a.step_km)),
        });
        let n = (a.max_km / a.step_km + 1e-9).floor() as usize;
        let distances: Vec<f64> = (0..=n).map(|k| k as f64 * a.step_km).collect();
        let sweep = rate_vs_distance(&point, &ctx, &distances)?;
        write_text(
            &a.out,
            &format_sweep_csv(&sweep, cfg.protocol.total_pulses, &digest),
        )?;
        return finish("optimize", digest, None, started, &a.out);
    }

    let digest = digest_of(&OptimizeInputs {
        command: "optimize",
        config: &cfg,
        ranges: space.ranges,
        budget: a.budget,
        sweep: None,
    });
    let result = run_optimizer(&space, &point, &ctx, a.budget)?;
    write_text(&a.out, &format_trace_csv(&result, &digest))?;
    finish("optimize", digest.clone(), None, started, &a.out)?;

    let best = result.best;
    let [mu, nu, omega, ..] = best.coords();
    let [ps, pd, pw] = best.intensity_probabilities();
    let mut s = String::new();
    let _ = writeln!(s, "# digest={digest}");
    for (k, v) in [
        ("signal", mu),
        ("decoy1", nu),
        ("decoy2", omega),
        ("p_signal", ps),
        ("p_decoy1", pd),
        ("p_decoy2", pw),
        ("basis_z", best.basis_probability_z()),
        ("rate", result.best_rate),
    ] {
        let _ = writeln!(s, "{k} = {}", sci(v));
    }
    let n = cfg.protocol.total_pulses;
    let _ = writeln!(
        s,
        "key_length = {}",
        (result.best_rate * n as f64).floor() as u64
    );
    let _ = writeln!(s, "configured_rate = {}", sci(evaluate_rate(&point, &ctx)?));
    let _ = writeln!(s, "evaluations = {}", result.trace.len());
    print!("{s}");
    if let Some(path) = &a.report {
        write_text(path, &s)?;
    }
    Ok(())
}
