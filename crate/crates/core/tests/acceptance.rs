//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use branching_ode::butcher::{butcher_series, elementary_differential_in, enumerate_trees, extract_butcher, DifferentialContext};
use branching_ode::certification::{
    check_integrability_i, compute_c0, existence_interval_exponential, existence_interval_monomial, solve_lambda0,
    ProblemBounds,
};
use branching_ode::cli::{cmd_solve, parse_config};
use branching_ode::estimator::{
    composition_direct, estimate_q_moment, monte_carlo_solve, monte_carlo_truncated, McConfig, TruncationVariant,
};
use branching_ode::lifetime_densities::{build_exponential, build_piecewise, PlateauVariant};
use branching_ode::progeny_analysis::{
    check_dominance, empirical_progeny, marked_progeny_mean, sample_progeny, yule_pgf, MarkedProgenyParams, ProgenyLaw,
};
use branching_ode::reference_solutions::{solution_oracle, BuiltinProblem, ProblemKind};
use branching_ode::rng::sample_stream;
use branching_ode::branching_tree::{sample_tree, DEFAULT_NODE_CAP};
use branching_ode::Mark;

type Outcome = Result<String, String>;

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn square() -> BuiltinProblem {
    BuiltinProblem::new(ProblemKind::Monomial { n: 2 }, 1.0)
}

fn ac1() -> Outcome {
    let p = square();
    let o = p.derivative_oracle();
    let d = build_exponential(0.5).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for t in [0.02, 0.05, 0.1] {
        let est = monte_carlo_solve(&o, &[1.0], t, &d, &McConfig::new(1_000_000, 11).workers(workers()))
            .map_err(|e| e.to_string())?;
        let exact = 1.0 / (1.0 - t);
        let dev = (est.mean[0] - exact).abs();
        ok &= dev <= 4.0 * est.stderr[0];
        notes.push(format!("t={t}: |err|={dev:.2e} stderr={:.2e}", est.stderr[0]));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok, notes)
}

fn ac2() -> Outcome {
    let p = BuiltinProblem::new(ProblemKind::Exponential, 0.0);
    let o = p.derivative_oracle();
    let d = build_exponential(1.0).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for t in [0.02, 0.05] {
        let est = monte_carlo_solve(&o, &[0.0], t, &d, &McConfig::new(1_000_000, 12).workers(workers()))
            .map_err(|e| e.to_string())?;
        let exact = -(1.0f64 - t).ln();
        let dev = (est.mean[0] - exact).abs();
        ok &= dev <= 4.0 * est.stderr[0];
        notes.push(format!("t={t}: |err|={dev:.2e} stderr={:.2e}", est.stderr[0]));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok, notes)
}

fn ac3() -> Outcome {
    let t = std::f64::consts::LN_2;
    let d = build_exponential(1.0).map_err(|e| e.to_string())?;
    let sizes = sample_progeny(&d, t, Mark::F, &McConfig::new(100_000, 13).workers(workers())).map_err(|e| e.to_string())?;
    let emp = empirical_progeny(&sizes).map_err(|e| e.to_string())?;
    let law = ProgenyLaw::new(1.0, t).map_err(|e| e.to_string())?;
    let tv = emp.tv_distance(&law);
    let mut pgf_err = 0.0f64;
    for z in [-0.9, -0.5, 0.0, 0.3, 0.7, 1.0, 1.3] {
        let mut series = 0.0;
        for m in 0..2000 {
            series += law.pmf(m) * f64::powi(z, m as i32);
        }
        let g = yule_pgf(1.0, t, z).map_err(|e| e.to_string())?;
        pgf_err = pgf_err.max((series - g).abs());
    }
    verdict(tv < 0.02 && pgf_err <= 1e-10, vec![format!("tv={tv:.4}"), format!("pgf-pmf={pgf_err:.1e}")])
}

fn ac4() -> Outcome {
    let build = build_piecewise(1.0, PlateauVariant::C1, 0.5, 2.0, 0.1).map_err(|e| e.to_string())?;
    let sizes = sample_progeny(&build.density, 0.5, Mark::F, &McConfig::new(100_000, 14).workers(workers()))
        .map_err(|e| e.to_string())?;
    let emp = empirical_progeny(&sizes).map_err(|e| e.to_string())?;
    let law = ProgenyLaw::new(2.0, 0.5).map_err(|e| e.to_string())?;
    let report = check_dominance(&emp, &law, 51);
    verdict(
        report.pass,
        vec![format!("worst n={} margin={:.2e}", report.worst.n, report.worst.margin())],
    )
}

fn ac5() -> Outcome {
    // (lambda, t, j, gamma, delta)
    let scaled = [
        (1.0, 0.3, 2, 2.0, 0.4),
        (1.0, 0.5, 1, 2.0, 1.0),
        (2.0, 0.2, 3, 3.0, 0.5),
        (0.5, 1.0, 2, 1.5, 0.8),
        (1.0, 0.1, 4, 2.5, 1.2),
        (1.5, 0.4, 1, 4.0, 0.3),
        (1.0, 0.8, 2, 2.0, 0.6),
    ];
    // (lambda, t, j, gamma, delta, c)
    let constant = [(1.0, 0.3, 2, 3.0, 1.0, 1.2), (1.0, 0.5, 1, 2.0, 1.5, 0.8), (2.0, 0.2, 3, 2.5, 1.0, 1.1)];
    let cfg = McConfig::new(100_000, 15).workers(workers());
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for (lambda, t, j, gamma, delta) in scaled {
        let params = MarkedProgenyParams { lambda, t, j, gamma, delta };
        let p = -(-lambda * t).exp_m1();
        let sigma = move |k: usize| {
            if k == 0 {
                0.9 / (p * gamma * delta)
            } else {
                0.9 * (k as f64 - 2.0 + gamma) * delta
            }
        };
        let r = marked_progeny_mean(&params, &sigma, &cfg).map_err(|e| e.to_string())?;
        let margin = r.bound + 3.0 * r.stderr() - r.mean();
        ok &= margin >= 0.0;
        worst = worst.min(margin / r.bound);
    }
    let mut pgf_dev = 0.0f64;
    for (lambda, t, j, gamma, delta, c) in constant {
        let params = MarkedProgenyParams { lambda, t, j, gamma, delta };
        let r = marked_progeny_mean(&params, &|_| c, &cfg).map_err(|e| e.to_string())?;
        ok &= r.mean() <= r.bound + 3.0 * r.stderr();
        let g = yule_pgf(lambda, t, c).map_err(|e| e.to_string())?;
        let z = (r.mean() - g).abs() / r.stderr();
        ok &= z <= 3.0;
        pgf_dev = pgf_dev.max(z);
    }
    verdict(
        ok,
        vec![format!("min relative margin={worst:.3}"), format!("max pgf deviation={pgf_dev:.2} stderr")],
    )
}

fn ac6() -> Outcome {
    let p = square();
    let o = p.derivative_oracle();
    let ctx = DifferentialContext::new(&o, None, &[1.0]).map_err(|e| e.to_string())?;
    let d = build_exponential(1.0).map_err(|e| e.to_string())?;
    let mut max_dev = 0.0f64;
    let mut structure = true;
    let mut largest = 0;
    for i in 0..10_000u64 {
        let mut rng = sample_stream(16, i);
        let s = sample_tree(&d, 1.5, Mark::F, &mut rng, DEFAULT_NODE_CAP).map_err(|e| e.to_string())?;
        let tau = extract_butcher(&s).map_err(|e| e.to_string())?;
        largest = largest.max(tau.order());
        structure &= tau.satisfies_mark_rule() && tau.order() == s.interior.len() + 1;
        structure &= tau.vertices().iter().all(|v| v.children.len() == v.order);
        let mut seen = vec![false; tau.order()];
        for v in tau.vertices() {
            for &c in &v.children {
                structure &= c < seen.len() && !std::mem::replace(&mut seen[c], true);
            }
        }
        structure &= seen.iter().skip(1).all(|s| *s);
        let a = elementary_differential_in(&tau, &ctx).map_err(|e| e.to_string())?;
        let b = composition_direct(&s, &ctx).map_err(|e| e.to_string())?;
        let scale = a[0].abs().max(b[0].abs());
        if scale > 0.0 {
            max_dev = max_dev.max((a[0] - b[0]).abs() / scale);
        }
    }
    verdict(
        max_dev < 1e-12 && structure,
        vec![format!("max rel dev={max_dev:.1e}"), format!("largest order={largest}")],
    )
}

fn ac7() -> Outcome {
    let p = square();
    let t = 0.05;
    let s = butcher_series(&p.derivative_oracle(), &[1.0], t, 5).map_err(|e| e.to_string())?;
    let err = (s[0] - 1.0 / (1.0 - t)).abs();
    let counts = enumerate_trees(6).map_err(|e| e.to_string())?.counts();
    verdict(
        err <= 2.0 * t.powi(6) && counts == [1, 1, 2, 4, 9, 20],
        vec![format!("series err={err:.2e}"), format!("counts={counts:?}")],
    )
}

fn ac8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut prev = 1.5;
    for q in [1.5, 2.0, 4.0, 8.0] {
        let l = solve_lambda0(q).map_err(|e| e.to_string())?;
        ok &= l > prev && l < std::f64::consts::E;
        prev = l;
        notes.push(format!("λ0({q})={l:.7}"));
    }
    let l64 = solve_lambda0(64.0).map_err(|e| e.to_string())?;
    let near_e = (l64 - std::f64::consts::E).abs() < 0.05;
    ok &= near_e;
    notes.push(format!("λ0(64)={l64:.7} (|e-λ0|={:.4})", std::f64::consts::E - l64));

    let e = std::f64::consts::E;
    let mono = existence_interval_monomial(2, 1.0, 1.0).map_err(|e| e.to_string())?.t_max;
    let mono_ref = 2.0 / 3.0 * (1.0 / (2.0 * e)).min(-(1.0 - 2f64.powi(-6)).ln());
    let expo = existence_interval_exponential(1.0, 1.0).map_err(|e| e.to_string())?.t_max;
    let expo_ref = 2.0 / 3.0 * e.powi(-2).min(-(1.0 - e.powi(-4)).ln());
    ok &= (mono - mono_ref).abs() <= 1e-9 && (expo - expo_ref).abs() <= 1e-9;
    notes.push(format!("T_mono={mono:.10} T_exp={expo:.10}"));
    verdict(ok, notes)
}

fn ac9() -> Outcome {
    let p = square();
    let o = p.derivative_oracle();
    let (lambda, t_max, q) = (0.5, 0.1, 2.0);
    let d = build_exponential(lambda).map_err(|e| e.to_string())?;
    let bounds = ProblemBounds::builtin(&p, 64).map_err(|e| e.to_string())?;
    let c0 = compute_c0(&bounds, &d, t_max).map_err(|e| e.to_string())?;
    let cert = check_integrability_i(c0, lambda, t_max, q).map_err(|e| e.to_string())?;
    let mut ok = cert.verdict.pass();
    let mut notes = vec![format!("C0={c0:.4}")];
    for t in [t_max / 4.0, t_max / 2.0, t_max] {
        let est = estimate_q_moment(&o, None, Mark::F, &[1.0], t, &d, q, &McConfig::new(1_000_000, 19).workers(workers()))
            .map_err(|e| e.to_string())?;
        let bound = cert.bound(t);
        ok &= est.mean[0] <= 1.2 * bound;
        notes.push(format!("t={t}: {:.4} vs {:.4}", est.mean[0], bound));
    }
    verdict(ok, notes)
}

fn ac10() -> Outcome {
    let p = square();
    let o = p.derivative_oracle();
    let sol = solution_oracle(&p).map_err(|e| e.to_string())?;
    let d = build_exponential(0.5).map_err(|e| e.to_string())?;
    let t = 0.1;
    let target = 1.0 / ((1.0 - t) * (1.0 - t));
    let mut ok = true;
    let mut notes = Vec::new();
    for n in 0..=3 {
        let est = monte_carlo_truncated(
            &o,
            None,
            Mark::F,
            &[1.0],
            t,
            &d,
            n,
            &sol,
            TruncationVariant::Plain,
            &McConfig::new(200_000, 20 + n as u64).workers(workers()),
        )
        .map_err(|e| e.to_string())?;
        let z = (est.mean[0] - target).abs() / est.stderr[0];
        ok &= z <= 4.0;
        notes.push(format!("n={n}: {z:.2} stderr"));
    }
    verdict(ok, notes)
}

const DETERMINISM_CONFIG: &str = "
problem.kind = monomial
problem.n = 2
problem.x0 = 1
density.lambda = 0.5
t = 0.02, 0.05, 0.1
n_samples = 50000
seed = 2024
";

fn ac11() -> Outcome {
    let mut cfg = parse_config(DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    cfg.workers = 1;
    let one = cmd_solve(&cfg).map_err(|e| e.to_string())?.primary;
    cfg.workers = 4;
    let four = cmd_solve(&cfg).map_err(|e| e.to_string())?.primary;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.cfg");
    std::fs::write(&config, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for w in ["1", "4"] {
        let out = dir.path().join(format!("w{w}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_branching-ode"))
            .args(["solve", "--config"])
            .arg(&config)
            .args(["--workers", w, "--out"])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("binary exited with {status}"));
        }
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    verdict(
        one == four && files[0] == files[1] && files[0] == one.as_bytes(),
        vec![format!("{} bytes", one.len())],
    )
}

fn verdict(ok: bool, notes: Vec<String>) -> Outcome {
    let text = notes.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("AC1", "monomial Monte Carlo solve", ac1),
        ("AC2", "exponential Monte Carlo solve", ac2),
        ("AC3", "Yule progeny law", ac3),
        ("AC4", "stochastic dominance of the piecewise density", ac4),
        ("AC5", "marked-progeny bound", ac5),
        ("AC6", "Butcher extraction identity", ac6),
        ("AC7", "Butcher series and tree counts", ac7),
        ("AC8", "certification numerics", ac8),
        ("AC9", "L^q moment bound", ac9),
        ("AC10", "truncation consistency", ac10),
        ("AC11", "determinism across worker counts", ac11),
    ];
    let mut failures = 0;
    for (id, title, check) in criteria {
        match check() {
            Ok(notes) => println!("[PASS] {id} {title}: {notes}"),
            Err(notes) => {
                failures += 1;
                println!("[FAIL] {id} {title}: {notes}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
