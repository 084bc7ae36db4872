//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;

use mdiqkd::decoy::bounds::{
    e11_upper_finite, e11_upper_infinite, y11_lower_finite, y11_lower_infinite,
};
use mdiqkd::decoy::reference::PUBLISHED;
use mdiqkd::decoy::{
    analyze, forward_rates, key_rate, reference_rates, y11_oracle_lp, KeyRateInputs, YieldGrid,
    DEFAULT_EC_INEFFICIENCY,
};
use mdiqkd::montecarlo::{run_monte_carlo_with, Execution};
use mdiqkd::optimizer::{
    evaluate_rate, optimize, rate_vs_distance, EvalContext, ParameterPoint, SearchBox,
};
use mdiqkd::protocol::{
    apply_bit_flip, measure_sifted_qber, run_session, run_session_with, sift, BitFlipRule,
    RoundOrder, SessionConfig,
};
use mdiqkd::{
    expected_tallies, fluct_bounds, pair_pulse_counts, run_monte_carlo, Basis, BoundedRates,
    CellKey, ChannelParams, DetectorParams, FluctuationConfig, IntensityLabel, ProtocolConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn key_rate_reproduction() -> Verdict {
    let r = key_rate(&KeyRateInputs::reference_run()).expect("listed inputs are valid");
    let pass = (9.3e-9..=10.3e-9).contains(&r.rate) && (1570..=1740).contains(&r.key_length);
    verdict(
        pass,
        format!(
            "R = {:.5e} (published {:.1e}), L = {} (published {})",
            r.rate, PUBLISHED.rate, r.key_length, PUBLISHED.key_length
        ),
    )
}

fn finite_bound_reproduction() -> Verdict {
    let r = analyze(
        &reference_rates(),
        &ProtocolConfig::default(),
        &FluctuationConfig::default(),
        DEFAULT_EC_INEFFICIENCY,
    )
    .expect("reference chain runs");
    let (yf, yi) = (r.finite.y11_z_lower, r.infinite.y11_z_lower);
    let (Some(ef), Some(ei)) = (r.finite.e11_x_upper, r.infinite.e11_x_upper) else {
        return verdict(false, "e11 bound undefined".into());
    };
    let within = |ours: f64, theirs: f64| ours / theirs <= 2.5 && theirs / ours <= 2.5;
    let directions = yf <= yi && ef >= ei;
    let magnitude = within(yf, PUBLISHED.y11_z_lower) && within(ef, PUBLISHED.e11_x_upper);

    // The report must carry both our values and the published ones.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.toml");
    let status = run(&[
        "analyze",
        "--reference-tables",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    let report_ok = status == Some(0)
        && text.contains("[bounds.finite_n_alpha]")
        && text.contains("[published]")
        && text.contains("y11_z_lower = 4.10000e-4");

    verdict(
        directions && magnitude && report_ok,
        format!(
            "Y11 finite {yf:.4e} <= infinite {yi:.4e} (published {:.2e}); e11 finite {ef:.4} >= infinite {ei:.4} (published {:.3}); report side by side: {report_ok}",
            PUBLISHED.y11_z_lower, PUBLISHED.e11_x_upper
        ),
    )
}

fn bound_validity() -> Verdict {
    let cfg = ProtocolConfig::default();
    let i = cfg.intensities;
    let counts = pair_pulse_counts(&cfg);
    let fluct = FluctuationConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let tol = 1e-9;
    let mut violations = Vec::new();
    let mut y_margin = f64::INFINITY;
    let mut e_margin = f64::INFINITY;
    for n in 0..100 {
        let g = YieldGrid::random(&mut rng, 10);
        let rates = forward_rates(&g, &g, &i);
        let mut check = || -> mdiqkd::Result<()> {
            let bounded = fluct_bounds(&rates, &counts, &fluct)?;
            let exact = BoundedRates::exact(&rates);
            let true_y = g.y11();
            let true_e = g.e11().unwrap_or(0.0);
            for basis in [Basis::Z, Basis::X] {
                let yf = y11_lower_finite(&bounded, basis, &i)?;
                let yi = y11_lower_infinite(&rates, basis, &i)?;
                let lp = y11_oracle_lp(&exact, basis, &i, 10)?;
                y_margin = y_margin.min(true_y - yi);
                if !(yf <= yi && yi <= lp.y11_min + tol && lp.y11_min <= true_y + tol) {
                    violations.push(format!(
                        "grid {n} {basis:?}: Y11 finite {yf:e}, infinite {yi:e}, LP {:e}, true {true_y:e}",
                        lp.y11_min
                    ));
                }
                if basis == Basis::X {
                    let ef = e11_upper_finite(&bounded, &i, yf)?;
                    let ei = e11_upper_infinite(&rates, &i, yi)?;
                    e_margin = e_margin.min(ei - true_e);
                    if !(ef >= ei && ei >= lp.e11_max - tol && lp.e11_max >= true_e - tol) {
                        violations.push(format!(
                            "grid {n}: e11 finite {ef:e}, infinite {ei:e}, LP {:e}, true {true_e:e}",
                            lp.e11_max
                        ));
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = check() {
            violations.push(format!("grid {n}: {e}"));
        }
    }
    verdict(
        violations.is_empty(),
        if violations.is_empty() {
            format!("100 grids, 0 violations; smallest Y11 slack {y_margin:.3e}, smallest e11 slack {e_margin:.3e}")
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    )
}

fn optics_consistency() -> Verdict {
    const TRIALS: u64 = 300_000_000;
    let cfg = ProtocolConfig::default();
    let (ch, det) = (ChannelParams::default(), DetectorParams::default());
    let mc = run_monte_carlo(&cfg, &ch, &det, TRIALS, 20_240_101).expect("simulation runs");
    let ex = expected_tallies(&cfg, &ch, &det, 64).expect("expectation runs");
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for k in CellKey::all() {
        let c = mc.cell(k);
        let n = c.sent as f64;
        let q = ex.gain(k);
        let pe = q * ex.qber(k);
        for (observed, p) in [(c.coincidences, q), (c.errors, pe)] {
            let mean = n * p;
            if mean >= 100.0 {
                let z = (observed as f64 - mean) / (n * p * (1.0 - p)).sqrt();
                worst = worst.max(z.abs());
                compared += 1;
            }
        }
    }
    let ss = |b| CellKey::new(b, IntensityLabel::Signal, IntensityLabel::Signal);
    let (ex_x, ez, qz) = (
        ex.qber(ss(Basis::X)),
        ex.qber(ss(Basis::Z)),
        ex.gain(ss(Basis::Z)),
    );
    let pass = compared > 0
        && worst <= 4.0
        && (0.24..=0.28).contains(&ex_x)
        && (0.005..=0.05).contains(&ez)
        && qz / 0.466e-4 <= 3.0
        && 0.466e-4 / qz <= 3.0;
    verdict(
        pass,
        format!(
            "{TRIALS} trials, {compared} counts with mean >= 100, worst |z| = {worst:.2}; E^X = {ex_x:.4}, E^Z = {ez:.4}, Q^Z = {qz:.3e}"
        ),
    )
}

fn protocol_correctness() -> Verdict {
    // The default channel, and a lossless one with efficient detectors
    // that yields many more sifted bits.
    let quiet = |fiber_length_km: f64, efficiency: f64| {
        let ch = ChannelParams {
            fiber_length_km,
            misalignment: 0.0,
            ..ChannelParams::default()
        };
        let det = DetectorParams {
            efficiency,
            dark_count_probability: 0.0,
            ..DetectorParams::default()
        };
        (ch, det)
    };
    let mut z_bits = 0;
    let (mut z_agree, mut identical, mut matches_mc) = (true, true, true);
    for (seed, (ch, det)) in [(77, quiet(5.0, 0.1)), (78, quiet(0.0, 0.9))] {
        let cfg = SessionConfig::new(ProtocolConfig::default(), ch, det, seed, 1_000_000);
        let (a, b, tally) = run_session(&cfg).expect("session runs");
        let (ka, kb) = sift(&a, &b).expect("views match");
        let kb = apply_bit_flip(&kb, BitFlipRule::default()).expect("outcomes recorded");
        let z: Vec<_> = ka.in_basis(Basis::Z).zip(kb.in_basis(Basis::Z)).collect();
        z_bits += z.len();
        z_agree &= z
            .iter()
            .all(|(x, y)| x.slot_index == y.slot_index && x.bit == y.bit);
        let q = measure_sifted_qber(&ka, &kb).expect("keys aligned");
        identical &= CellKey::all().all(|k| {
            let t = tally.cell(k);
            q[k].retained == t.coincidences
                && q[k].errors == t.errors
                && q[k].rate() == tally.qber(k)
        });
        let mc = run_monte_carlo(
            &cfg.protocol,
            &cfg.channel,
            &cfg.detector,
            cfg.n_slots,
            cfg.seed,
        )
        .expect("simulation runs");
        matches_mc &= mc == tally;
    }
    verdict(
        z_bits > 100 && z_agree && identical && matches_mc,
        format!(
            "2 sessions of 1000000 slots, {z_bits} Z sifted bits all agree: {z_agree}; sifted QBER == tally E in all cells: {identical}; tallies equal the simulator's: {matches_mc}"
        ),
    )
}

fn run(args: &[&str]) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_mdiqkd"))
        .args(args)
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

fn digest_of_manifest(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(mdiqkd::io::RunManifest::path_for(path)).ok()?;
    text.lines()
        .find(|l| l.contains("config_digest"))
        .map(str::to_string)
}

/// Given a thread count: command-line arguments and output file names.
type ArgsAndOutputs<'a> = Box<dyn Fn(&str) -> (Vec<String>, Vec<String>) + 'a>;

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let sim = |t: &str| {
        vec![
            format!("--threads={t}"),
            "simulate".into(),
            "--trials=300000".into(),
            "--seed=9".into(),
            format!("--out={}", p(&format!("sim{t}.csv"))),
        ]
    };
    let commands: Vec<(&str, ArgsAndOutputs)> = vec![
        (
            "simulate",
            Box::new(move |t| (sim(t), vec![format!("sim{t}.csv")])),
        ),
        (
            "analyze reference",
            Box::new(move |t| {
                (
                    vec![
                        format!("--threads={t}"),
                        "analyze".into(),
                        "--paper-tables".into(),
                        format!("--out={}", p(&format!("ref{t}.toml"))),
                    ],
                    vec![format!("ref{t}.toml")],
                )
            }),
        ),
        (
            "analyze tallies",
            Box::new(move |t| {
                (
                    vec![
                        format!("--threads={t}"),
                        "analyze".into(),
                        format!("--tallies={}", p("sim1.csv.1")),
                        format!("--out={}", p(&format!("tal{t}.toml"))),
                    ],
                    vec![format!("tal{t}.toml")],
                )
            }),
        ),
        (
            "protocol",
            Box::new(move |t| {
                (
                    vec![
                        format!("--threads={t}"),
                        "protocol".into(),
                        "--slots=100000".into(),
                        "--seed=4".into(),
                        format!("--out={}", p(&format!("pro{t}.toml"))),
                        format!("--transcript={}", p(&format!("pro{t}.jsonl"))),
                    ],
                    vec![format!("pro{t}.toml"), format!("pro{t}.jsonl")],
                )
            }),
        ),
        (
            "optimize",
            Box::new(move |t| {
                (
                    vec![
                        format!("--threads={t}"),
                        "optimize".into(),
                        "--budget=40".into(),
                        format!("--out={}", p(&format!("opt{t}.csv"))),
                        format!("--report={}", p(&format!("opt{t}.toml"))),
                    ],
                    vec![format!("opt{t}.csv"), format!("opt{t}.toml")],
                )
            }),
        ),
        (
            "optimize sweep",
            Box::new(move |t| {
                (
                    vec![
                        format!("--threads={t}"),
                        "optimize".into(),
                        "--sweep".into(),
                        format!("--out={}", p(&format!("swp{t}.csv"))),
                    ],
                    vec![format!("swp{t}.csv")],
                )
            }),
        ),
    ];
    let mut failures = Vec::new();
    let mut files = 0;
    for (name, make) in &commands {
        let mut outputs = Vec::new();
        // Twice with one thread, once with four.
        for (t, tag) in [("1", "1"), ("1", "1b"), ("4", "4")] {
            let (args, outs) = make(t);
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            if run(&args) != Some(0) {
                failures.push(format!("{name} exited nonzero"));
                continue;
            }
            let mut bytes = Vec::new();
            for o in &outs {
                let path = dir.path().join(o);
                bytes.push((
                    std::fs::read(&path).unwrap_or_default(),
                    digest_of_manifest(&path),
                ));
                // Rename so the second single-thread run does not overwrite.
                let _ = std::fs::rename(&path, dir.path().join(format!("{o}.{tag}")));
            }
            outputs.push(bytes);
        }
        if outputs.len() == 3 {
            files += outputs[0].len();
            if outputs[0] != outputs[1] || outputs[0] != outputs[2] {
                failures.push(format!("{name} outputs differ between runs"));
            }
        }
    }

    // Library-level parallelism and batching.
    let cfg = ProtocolConfig::default();
    let (ch, det) = (ChannelParams::default(), DetectorParams::default());
    let a =
        run_monte_carlo_with(&cfg, &ch, &det, 200_000, 3, 1 << 14, Execution::Parallel).unwrap();
    let b = run_monte_carlo_with(&cfg, &ch, &det, 200_000, 3, 1000, Execution::Sequential).unwrap();
    if a != b {
        failures.push("simulator tallies depend on batching".into());
    }
    let s = SessionConfig::new(cfg, ch, det, 3, 100_000);
    if run_session(&s).unwrap() != run_session_with(&s, RoundOrder::BobFirst, true).unwrap() {
        failures.push("session depends on scheduling".into());
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} commands, {files} output files byte-identical across reruns and 1/4 threads",
                commands.len()
            )
        } else {
            failures.join("; ")
        },
    )
}

fn optimizer_sanity() -> Verdict {
    let ctx = EvalContext::new(
        ProtocolConfig::default(),
        ChannelParams::default(),
        DetectorParams::default(),
    );
    let defaults = ParameterPoint::from_protocol(&ProtocolConfig::default()).unwrap();
    let distances: Vec<f64> = (0..=12).map(|k| 5.0 * f64::from(k)).collect();
    let sweep = rate_vs_distance(&defaults, &ctx, &distances).expect("sweep runs");
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1);
    let r0 = evaluate_rate(&defaults, &ctx).expect("default point evaluates");
    let opt = optimize(&SearchBox::default(), &defaults, &ctx, 300).expect("optimizer runs");
    let [mu, ..] = opt.best.coords();
    verdict(
        monotone && opt.best_rate >= r0 - 1e-12,
        format!(
            "sweep 0-60 km nonincreasing: {monotone} (R(0) = {:.3e}, R(60) = {:.3e}); optimized R = {:.4e} (signal {mu:.3}) >= default R = {r0:.4e}",
            sweep[0].1,
            sweep.last().unwrap().1,
            opt.best_rate
        ),
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check); 7] = [
        ("key-rate reproduction", key_rate_reproduction),
        ("finite-key bound reproduction", finite_bound_reproduction),
        ("bound-validity property suite", bound_validity),
        ("optics-model consistency", optics_consistency),
        ("protocol correctness", protocol_correctness),
        ("determinism", determinism),
        ("optimizer sanity", optimizer_sanity),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v =
            std::panic::catch_unwind(check).unwrap_or_else(|_| verdict(false, "panicked".into()));
        failed += usize::from(!v.pass);
        println!(
            "criterion {}: {} {name} [{:.1}s] {}",
            n + 1,
            if v.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 7 acceptance criteria passed");
}
