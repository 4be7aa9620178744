use std::process::Command;

use branching_ode::branching_tree::{sample_tree, DEFAULT_NODE_CAP};
use branching_ode::butcher::{elementary_differential_in, extract_butcher, DifferentialContext};
use branching_ode::estimator::{composition_direct, monte_carlo_solve, McConfig};
use branching_ode::lifetime_densities::build_exponential;
use branching_ode::rng::sample_stream;
use branching_ode::{BuiltinProblem, Mark};

const A: [[f64; 2]; 2] = [[0.3, -1.0], [0.8, -0.2]];

#[test]
fn extraction_matches_direct_composition_in_two_dimensions() {
    let p = BuiltinProblem::linear(A, [1.0, -0.5]);
    let o = p.derivative_oracle();
    let ctx = DifferentialContext::new(&o, None, &p.x0).unwrap();
    let d = build_exponential(1.0).unwrap();
    for i in 0..10_000u64 {
        let mut rng = sample_stream(5, i);
        let s = sample_tree(&d, 1.0, Mark::F, &mut rng, DEFAULT_NODE_CAP).unwrap();
        let tau = extract_butcher(&s).unwrap();
        assert!(tau.satisfies_mark_rule());
        let a = elementary_differential_in(&tau, &ctx).unwrap();
        let b = composition_direct(&s, &ctx).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300), "sample {i}: {x} vs {y}");
        }
    }
}

#[test]
fn rescaled_time_reproduces_the_solution() {
    let t = 0.4;
    let exact = BuiltinProblem::linear(A, [1.0, -0.5]).solution(t).unwrap();
    let d = build_exponential(1.0).unwrap();
    for mu in [0.5, 2.0] {
        let scaled = [[A[0][0] / mu, A[0][1] / mu], [A[1][0] / mu, A[1][1] / mu]];
        let p = BuiltinProblem::linear(scaled, [1.0, -0.5]);
        let est = monte_carlo_solve(&p.derivative_oracle(), &p.x0, mu * t, &d, &McConfig::new(200_000, 8).workers(4))
            .unwrap();
        for k in 0..2 {
            assert!(
                (est.mean[k] - exact[k]).abs() <= 4.0 * est.stderr[k],
                "mu={mu} component {k}: {} vs {}",
                est.mean[k],
                exact[k]
            );
        }
    }
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_branching-ode"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.cfg");
    std::fs::write(
        &good,
        "problem.kind = monomial\nproblem.n = 2\nproblem.x0 = 1\ndensity.lambda = 0.5\nt = 0.1\nq = 2\n",
    )
    .unwrap();
    let out = binary().args(["certify", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("verdict.integrability_I=PASS"));

    let failing = dir.path().join("fail.cfg");
    std::fs::write(&failing, "problem.kind = monomial\nproblem.n = 2\nproblem.x0 = 1\nt = 1\n").unwrap();
    let out = binary().args(["certify", "--config"]).arg(&failing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = binary()
        .args(["certify", "--warn-only", "--config"])
        .arg(&failing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "problem.kind = monomial\nproblem.x0 = 1\nt = 0.1\ndensity.rate = 2\n").unwrap();
    let out = binary().args(["solve", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("density.rate"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "problem.kind = exponential\nproblem.x0 = 0\nt = 0.05\nn_samples = 5000\nseed = 1\n",
    )
    .unwrap();
    let run = |seed: &str| {
        let out = binary().args(["solve", "--seed", seed, "--config"]).arg(&cfg).output().unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("1"), run("1"));
    assert_ne!(run("1"), run("2"));
}
