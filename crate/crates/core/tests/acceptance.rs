//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Exits nonzero only when `OTAC_ACCEPTANCE_STRICT=1` is set, so trend
//! criteria that the model does not reproduce are reported without breaking
//! `cargo test`. Set `OTAC_ACCEPTANCE_ONLY=3,4` to run a subset.

use std::time::Instant;

use otac_core::analysis::{check_consensus_matrix, VerificationSetup};
use otac_core::config::RunFile;
use otac_core::experiment::{
    energy_report, run_simulation, run_single, sweep, InitMode, IterationView, Observer, Problem, Scheme, SimConfig,
    SimulationResult, SweepAxis,
};
use otac_core::schedule::ScheduleFamily;
use otac_core::suites::{run_suite, Suite, SuiteOptions};
use otac_core::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        detail: detail.into(),
    })
}

fn desk(extra: &str) -> SimConfig {
    RunFile::parse(&format!("preset = \"desk\"\n{extra}"), "desk").expect("desk preset").sim
}

fn c1() -> Result<Outcome> {
    let r = run_suite(Suite::Unbiasedness, &SuiteOptions::default())?;
    outcome(r[0].passed, format!("{} neighbor/B cases within 3 s.e.", r[0].entries.len() / 4))
}

fn c2() -> Result<Outcome> {
    let connected = VerificationSetup::friis(5, 2, 2, 0.0, 7)?;
    let r = check_consensus_matrix(&connected.collect_stats(10_000)?, 1e-2, 1e-12)?;
    let cut = VerificationSetup::disconnected(5, 2, 2, 0.1, 7)?;
    let d = check_consensus_matrix(&cut.collect_stats(10_000)?, 1e-2, 1e-12)?;
    let ok = r.clause_i && r.clause_ii && r.clause_iv && r.epsilon_hat > 0.0 && r.delta_hat.is_finite() && d.epsilon_hat <= 0.0;
    outcome(
        ok,
        format!(
            "connected eps={:.3e} delta={:.3e}; disconnected eps={:.3e}",
            r.epsilon_hat, r.delta_hat, d.epsilon_hat
        ),
    )
}

fn c3() -> Result<Outcome> {
    let r = run_suite(Suite::Equivalence, &SuiteOptions::default())?;
    let diff = r[0]
        .entries
        .iter()
        .find(|(k, _)| k == "max_abs_diff")
        .map_or("?".to_string(), |(_, v)| v.clone());
    outcome(r[0].passed, format!("max abs diff {diff} over 100 traces"))
}

/// Tracks Fejér monotonicity towards the planted point and the worst cost.
struct FejerWatch {
    target: Vec<f64>,
    last: f64,
    increases: u64,
    first_feasible: Option<u64>,
}

impl Observer for FejerWatch {
    fn observe(&mut self, view: &IterationView) {
        let d: f64 = view
            .weights
            .iter()
            .flat_map(|h| h.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f64>()
            .sqrt();
        if d > self.last * (1.0 + 1e-12) + 1e-15 {
            self.increases += 1;
        }
        self.last = d;
        let worst = view.costs.iter().cloned().fold(0.0, f64::max);
        if worst < 1e-3 && self.first_feasible.is_none() {
            self.first_feasible = Some(view.iteration);
        }
    }
}

fn c4() -> Result<Outcome> {
    let mut cfg = desk("iterations = 2000\nruns = 1\n[mobility]\nmean_gap = 0.0\nnoise_var = 0.0\n[schedule]\nzeta_scale = 0.0\n");
    cfg.schemes = vec![Scheme::Cen];
    let (problem, h_star) = Problem::planted(&cfg, 0, false)?;
    let mut watch = FejerWatch {
        target: h_star,
        last: f64::INFINITY,
        increases: 0,
        first_feasible: None,
    };
    run_single(&cfg, Scheme::Cen, &problem, 0, Some(&mut watch))?;
    outcome(
        watch.increases == 0 && watch.first_feasible.is_some(),
        format!(
            "distance increases {}; max cost below 1e-3 from iteration {:?}",
            watch.increases, watch.first_feasible
        ),
    )
}

fn c5() -> Result<Outcome> {
    let mut cfg = SimConfig {
        n_agents: 10,
        iterations: 5000,
        runs: 1,
        log_stride: 5000,
        ..SimConfig::default()
    };
    cfg.model.kernels = 2;
    cfg.model.features = 5;
    cfg.model.init = InitMode::Uniform;
    cfg.channel.snr_db = 0.0;
    cfg.dataset.grid_per_axis = 5;
    let mut ratios = Vec::new();
    for seed in 0..10 {
        cfg.seed = 100 + seed;
        let problem = Problem::build(&cfg, 0, false, None)?;
        let trace = run_single(&cfg, Scheme::OtaC, &problem, 0, None)?;
        let first = trace.rows.first().expect("rows").residual;
        let last = trace.rows.last().expect("rows").residual;
        ratios.push(last / first);
    }
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[4] + ratios[5]);
    outcome(median < 0.1, format!("median residual ratio {median:.4}"))
}

fn fig2() -> Result<SimulationResult> {
    run_simulation(&desk(""))
}

fn c6(res: &SimulationResult) -> Result<Outcome> {
    let f = |s| res.final_nmse(s).unwrap_or(f64::NAN);
    let (cen, ota, dbc, anb, noc) = (f(Scheme::Cen), f(Scheme::OtaC), f(Scheme::Dbc), f(Scheme::Anb), f(Scheme::Noc));
    let checks = [
        ("CEN<OTA-C", cen < ota),
        ("OTA-C<DBC", ota < dbc),
        ("OTA-C<ANB", ota < anb),
        ("ANB<=NOC+1", anb <= noc + 1.0),
        ("NOC-OTA-C>=3", noc - ota >= 3.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "CEN {cen:.2} OTA-C {ota:.2} DBC {dbc:.2} ANB {anb:.2} NOC {noc:.2} dB; unmet: {}",
            if failed.is_empty() { "none".into() } else { failed.join(" ") }
        ),
    )
}

fn c7() -> Result<Outcome> {
    let mut cfg = desk("");
    cfg.schemes = vec![Scheme::OtaC, Scheme::Dbc];
    let t = sweep(SweepAxis::NAgents, &[10.0, 20.0, 30.0, 40.0, 50.0], &cfg)?;
    let ota = t.column(Scheme::OtaC).expect("OTA-C column");
    let dbc = t.column(Scheme::Dbc).expect("DBC column");
    let strictly = ota.windows(2).all(|w| w[1] < w[0]);
    let total = ota[0] - ota[ota.len() - 1];
    let spread = dbc.iter().cloned().fold(f64::MIN, f64::max) - dbc.iter().cloned().fold(f64::MAX, f64::min);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(",");
    outcome(
        strictly && total >= 1.0 && spread < 1.5,
        format!(
            "OTA-C [{}] gain {total:.2} dB; DBC [{}] spread {spread:.2} dB",
            fmt(&ota),
            fmt(&dbc)
        ),
    )
}

fn c8() -> Result<Outcome> {
    let mut cfg = desk("");
    cfg.schemes = vec![Scheme::OtaC, Scheme::Dbc, Scheme::Anb, Scheme::Noc];
    cfg.schedule.family = ScheduleFamily::SnrSweep;
    let snrs = [-40.0, -30.0, -20.0, -10.0, 0.0];
    let t = sweep(SweepAxis::Snr, &snrs, &cfg)?;
    let col = |s| t.column(s).expect("column");
    let (ota, dbc, anb, noc) = (col(Scheme::OtaC), col(Scheme::Dbc), col(Scheme::Anb), col(Scheme::Noc));
    let mut unmet = Vec::new();
    for k in 1..snrs.len() {
        if ota[k] > dbc[k] || ota[k] > anb[k] || ota[k] > noc[k] {
            unmet.push(format!("best@{}", snrs[k]));
        }
    }
    for (name, v) in [("OTA-C", &ota), ("DBC", &dbc), ("ANB", &anb)] {
        if (v[0] - noc[0]).abs() > 1.0 {
            unmet.push(format!("{name}@-40"));
        }
    }
    let rows: Vec<String> = snrs
        .iter()
        .enumerate()
        .map(|(k, s)| format!("{s}: {:.2}/{:.2}/{:.2}/{:.2}", ota[k], dbc[k], anb[k], noc[k]))
        .collect();
    outcome(
        unmet.is_empty(),
        format!(
            "OTA-C/DBC/ANB/NOC {}; unmet: {}",
            rows.join(" "),
            if unmet.is_empty() { "none".into() } else { unmet.join(" ") }
        ),
    )
}

fn c9(res: &SimulationResult) -> Result<Outcome> {
    let sparse = res.log(Scheme::OtaCs).expect("OTA-CS log");
    let dense = res.log(Scheme::OtaC).expect("OTA-C log");
    let e = energy_report(dense, sparse)?;
    let p = &sparse.perturbations;
    let ok = p.checked > 0 && p.violations == 0 && e.savings >= 0.6 && e.nonzero_fraction <= 0.2 && e.nmse_gap_db <= 2.0;
    outcome(
        ok,
        format!(
            "perturbations {} checked, {} violations; savings {:.1}%, nonzero {:.3}, NMSE gap {:.2} dB",
            p.checked,
            p.violations,
            100.0 * e.savings,
            e.nonzero_fraction,
            e.nmse_gap_db
        ),
    )
}

fn c10() -> Result<Outcome> {
    let cfg = desk("runs = 3\niterations = 400\nlog_stride = 50\n");
    let mut outputs = Vec::new();
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        let res = pool.install(|| run_simulation(&cfg))?;
        let mut text = res.nmse_csv();
        for log in &res.logs {
            text.push_str(&log.to_csv());
        }
        outputs.push(text);
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("1/2/4 threads, {} bytes each", outputs[0].len()))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("OTAC_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("OTAC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let want = |k: u32| only.as_ref().is_none_or(|o| o.contains(&k));

    let fig2 = (want(6) || want(9)).then(|| {
        let t = Instant::now();
        let r = fig2();
        println!("desk-scale six-scheme run took {:.1} s", t.elapsed().as_secs_f64());
        r
    });
    let fig2_result = || match fig2.as_ref().expect("computed when needed") {
        Ok(r) => Ok(r),
        Err(e) => Err(otac_core::Error::config(e.to_string())),
    };

    let names = [
        "unbiasedness of the over-the-air estimators",
        "random consensus matrix conditions",
        "elementwise and stacked update equivalence",
        "noiseless CEN Fejer monotonicity and feasibility",
        "OTA-C consensus residual contraction",
        "desk-scale scheme ordering at -20 dB",
        "desk-scale agent-count sweep",
        "desk-scale SNR sweep",
        "OTA-CS perturbation bound and energy savings",
        "determinism across thread counts",
    ];
    let mut passed = 0;
    let mut ran = 0;
    for k in 1..=10u32 {
        if !want(k) {
            continue;
        }
        let t = Instant::now();
        let result = match k {
            1 => c1(),
            2 => c2(),
            3 => c3(),
            4 => c4(),
            5 => c5(),
            6 => fig2_result().and_then(c6),
            7 => c7(),
            8 => c8(),
            9 => fig2_result().and_then(c9),
            _ => c10(),
        };
        ran += 1;
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(o) => {
                passed += usize::from(o.passed);
                println!(
                    "criterion {k:>2} {} {} ({secs:.1} s): {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    names[k as usize - 1],
                    o.detail
                );
            }
            Err(e) => println!("criterion {k:>2} FAIL {} ({secs:.1} s): error: {e}", names[k as usize - 1]),
        }
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if strict && passed < ran {
        std::process::exit(1);
    }
}
