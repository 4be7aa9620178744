//! Batch front end: configuration parsing and the `solve`, `certify`,
//! `progeny` and `butcher-check` subcommands.
//!
//! A configuration is flat `key = value` text with dotted sections:
//!
//! ```text
//! # f(x) = x^2 from x0 = 1
//! problem.kind = monomial
//! problem.n = 2
//! problem.x0 = 1
//! density.kind = exponential
//! density.lambda = 0.5
//! t = 0.02, 0.05, 0.1
//! n_samples = 100000
//! seed = 7
//! ```
//!
//! Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::branching_tree::{sample_tree, Mark, TreeError, DEFAULT_NODE_CAP};
use crate::butcher::{butcher_series, elementary_differential_in, enumerate_trees, extract_butcher, DifferentialContext};
use crate::certification::{
    certify, existence_interval_exponential, existence_interval_monomial, solve_lambda0, CertificationParams,
    ProblemBounds, DEFAULT_K_MAX,
};
use crate::estimator::{composition_direct, monte_carlo_solve, McConfig};
use crate::lifetime_densities::{build_exponential, build_piecewise, LifetimeDensity, PlateauVariant};
use crate::progeny_analysis::{
    check_dominance, empirical_progeny, histogram_rows, marked_progeny_mean, sample_progeny, MarkedProgenyParams,
    ProgenyLaw, DEFAULT_DOMINANCE_N_MAX,
};
use crate::reference_solutions::{rk4, BuiltinProblem, ProblemKind};
use crate::rng::sample_stream;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

const KNOWN_KEYS: &[&str] = &[
    "problem.kind",
    "problem.n",
    "problem.x0",
    "problem.a",
    "density.kind",
    "density.lambda",
    "density.q",
    "density.variant",
    "density.T",
    "density.epsilon",
    "t",
    "n_samples",
    "seed",
    "node_cap",
    "workers",
    "q",
    "certify.lambda",
    "certify.T",
    "certify.delta",
    "certify.gamma",
    "certify.k_max",
    "certify.require",
    "solve.series_order",
    "solve.rk4_steps",
    "progeny.n_max",
    "progeny.m_max",
    "progeny.j",
    "progeny.gamma",
    "progeny.delta",
    "progeny.sigma_scale",
    "butcher.max_order",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensitySpec {
    Exponential {
        lambda: f64,
    },
    /// Plateau-plus-exponential law dominating the exponential of rate `lambda`.
    Piecewise {
        lambda: f64,
        q: f64,
        variant: PlateauVariant,
        t_end: f64,
        epsilon: f64,
    },
}

impl DensitySpec {
    /// Rate of the dominating exponential law.
    pub fn rate(&self) -> f64 {
        match *self {
            DensitySpec::Exponential { lambda } | DensitySpec::Piecewise { lambda, .. } => lambda,
        }
    }

    pub fn build(&self) -> Result<LifetimeDensity, CliError> {
        match *self {
            DensitySpec::Exponential { lambda } => build_exponential(lambda).map_err(|e| config_err("density", e.to_string())),
            DensitySpec::Piecewise {
                lambda,
                q,
                variant,
                t_end,
                epsilon,
            } => build_piecewise(q, variant, t_end, lambda, epsilon)
                .map(|b| b.density)
                .map_err(|e| config_err("density", e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: BuiltinProblem,
    pub density: DensitySpec,
    pub t: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    pub node_cap: usize,
    pub workers: usize,
    pub q: f64,
    pub cert_lambda: Option<f64>,
    pub cert_t: Option<f64>,
    pub delta: f64,
    pub gamma: f64,
    pub k_max: usize,
    pub require: Vec<String>,
    pub series_order: usize,
    pub rk4_steps: usize,
    pub n_max: usize,
    pub m_max: usize,
    pub progeny_j: usize,
    pub progeny_gamma: f64,
    pub progeny_delta: f64,
    pub sigma_scale: f64,
    pub catalog_order: usize,
}

impl RunConfig {
    pub fn mc(&self) -> McConfig {
        McConfig::new(self.n_samples, self.seed)
            .workers(self.workers)
            .node_cap(self.node_cap)
    }
}

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| config_err(key, "missing"))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| config_err(key, format!("cannot parse `{s}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

/// Parses a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(&format!("line {}", i + 1), "expected `key = value`"));
        };
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_err(key, format!("unknown key (line {})", i + 1)));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(config_err(key, format!("repeated key (line {})", i + 1)));
        }
    }
    let e = Entries(map);

    let x0 = e.list("problem.x0")?.ok_or_else(|| config_err("problem.x0", "missing"))?;
    let kind_name: String = e.required("problem.kind")?;
    let problem = match kind_name.as_str() {
        "monomial" => BuiltinProblem::new(ProblemKind::Monomial { n: e.required("problem.n")? }, scalar(&x0)?),
        "exponential" => BuiltinProblem::new(ProblemKind::Exponential, scalar(&x0)?),
        "x_cos_x" => BuiltinProblem::new(ProblemKind::XCosX, scalar(&x0)?),
        "linear" => {
            let a = e.list("problem.a")?.ok_or_else(|| config_err("problem.a", "missing"))?;
            let (&[a11, a12, a21, a22], &[x1, x2]) = (&a[..], &x0[..]) else {
                return Err(config_err("problem.a", "linear problems need 4 matrix entries and 2 initial values"));
            };
            BuiltinProblem::linear([[a11, a12], [a21, a22]], [x1, x2])
        }
        other => return Err(config_err("problem.kind", format!("unknown problem `{other}`"))),
    };

    let q: f64 = e.parse("q")?.unwrap_or(1.0);
    if !(q >= 1.0) {
        return Err(config_err("q", "must be >= 1"));
    }
    let lambda: f64 = e.parse("density.lambda")?.unwrap_or(1.0);
    let density_kind: String = e.parse("density.kind")?.unwrap_or_else(|| "exponential".into());
    let density = match density_kind.as_str() {
        "exponential" => DensitySpec::Exponential { lambda },
        "piecewise" => {
            let variant = match e.raw("density.variant").unwrap_or("c1") {
                "c1" | "C1" => PlateauVariant::C1,
                "c2" | "C2" => PlateauVariant::C2,
                other => return Err(config_err("density.variant", format!("expected c1 or c2, got `{other}`"))),
            };
            DensitySpec::Piecewise {
                lambda,
                q: e.parse("density.q")?.unwrap_or(q),
                variant,
                t_end: e.required("density.T")?,
                epsilon: e.parse("density.epsilon")?.unwrap_or(0.1),
            }
        }
        other => return Err(config_err("density.kind", format!("unknown density `{other}`"))),
    };

    let t = e.list("t")?.ok_or_else(|| config_err("t", "missing"))?;
    if t.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(config_err("t", "times must be finite and >= 0"));
    }
    let n_samples: usize = e.parse("n_samples")?.unwrap_or(10_000);
    if n_samples == 0 {
        return Err(config_err("n_samples", "must be at least 1"));
    }
    let workers: usize = e.parse("workers")?.unwrap_or(1);
    if workers == 0 {
        return Err(config_err("workers", "must be at least 1"));
    }
    let require = e
        .raw("certify.require")
        .unwrap_or("integrability_I")
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    Ok(RunConfig {
        problem,
        density,
        t,
        n_samples,
        seed: e.parse("seed")?.unwrap_or(0),
        node_cap: e.parse("node_cap")?.unwrap_or(DEFAULT_NODE_CAP),
        workers,
        q,
        cert_lambda: e.parse("certify.lambda")?,
        cert_t: e.parse("certify.T")?,
        delta: e.parse("certify.delta")?.unwrap_or(1.0),
        gamma: e.parse("certify.gamma")?.unwrap_or(2.0),
        k_max: e.parse("certify.k_max")?.unwrap_or(DEFAULT_K_MAX),
        require,
        series_order: e.parse("solve.series_order")?.unwrap_or(5),
        rk4_steps: e.parse("solve.rk4_steps")?.unwrap_or(1000),
        n_max: e.parse("progeny.n_max")?.unwrap_or(DEFAULT_DOMINANCE_N_MAX),
        m_max: e.parse("progeny.m_max")?.unwrap_or(DEFAULT_DOMINANCE_N_MAX),
        progeny_j: e.parse("progeny.j")?.unwrap_or(2),
        progeny_gamma: e.parse("progeny.gamma")?.unwrap_or(2.0),
        progeny_delta: e.parse("progeny.delta")?.unwrap_or(0.4),
        sigma_scale: e.parse("progeny.sigma_scale")?.unwrap_or(0.5),
        catalog_order: e.parse("butcher.max_order")?.unwrap_or(6),
    })
}

fn scalar(x0: &[f64]) -> Result<f64, CliError> {
    match x0 {
        [v] => Ok(*v),
        _ => Err(config_err("problem.x0", "scalar problems take one initial value")),
    }
}

/// Result of one subcommand: the main artifact (CSV or report), diagnostic
/// lines and named verdicts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandOutput {
    pub primary: String,
    pub report: Vec<String>,
    pub verdicts: Vec<(String, bool)>,
}

impl CommandOutput {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|(_, p)| *p)
    }

    fn verdict(&mut self, name: impl Into<String>, pass: bool) {
        let name = name.into();
        self.report
            .push(format!("verdict {name}: {}", if pass { "PASS" } else { "FAIL" }));
        self.verdicts.push((name, pass));
    }
}

/// CSV float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn vector(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

/// One CSV row per requested `t`; vector-valued columns join components with `;`.
pub fn cmd_solve(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let density = cfg.density.build()?;
    let oracle = cfg.problem.derivative_oracle();
    let x0 = &cfg.problem.x0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "t,mc_mean,mc_stderr,closed_form,rk4,butcher_series_order{},n_rejected",
        cfg.series_order
    );
    for &t in &cfg.t {
        let est = monte_carlo_solve(&oracle, x0, t, &density, &cfg.mc()).map_err(run_err)?;
        let closed = if cfg.problem.has_closed_form() {
            vector(&cfg.problem.solution(t).map_err(run_err)?)
        } else {
            String::new()
        };
        let reference = rk4(&cfg.problem, x0, t, cfg.rk4_steps.max(1)).map_err(run_err)?;
        let series = butcher_series(&oracle, x0, t, cfg.series_order).map_err(run_err)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            num(t),
            vector(&est.mean),
            vector(&est.stderr),
            closed,
            vector(&reference),
            vector(&series),
            est.n_rejected
        );
    }
    Ok(CommandOutput {
        primary: out,
        ..Default::default()
    })
}

/// Certificate report, `λ0` table and existence intervals.
pub fn cmd_certify(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let density = cfg.density.build()?;
    let bounds = ProblemBounds::builtin(&cfg.problem, cfg.k_max).map_err(run_err)?;
    let t_max = match cfg.cert_t {
        Some(t) => t,
        None => cfg.t.iter().copied().fold(0.0, f64::max),
    };
    let params = CertificationParams {
        lambda: cfg.cert_lambda.unwrap_or(cfg.density.rate()),
        t_max,
        q: cfg.q,
        delta: cfg.delta,
        gamma: cfg.gamma,
        k_max: cfg.k_max,
    };
    let cert = certify(&bounds, &density, params, cfg.problem.x0[0]).map_err(run_err)?;
    let mut out = CommandOutput {
        primary: format!("problem={}\nx0={}\n", cfg.problem.kind, vector(&cfg.problem.x0)),
        ..Default::default()
    };
    out.primary.push_str(&cert.report());
    for q in [1.5, 2.0, 4.0, 8.0] {
        let l = solve_lambda0(q).map_err(run_err)?;
        let _ = writeln!(out.primary, "lambda0.q{q}={l}");
    }
    let x0 = cfg.problem.x0[0];
    let interval = match cfg.problem.kind {
        ProblemKind::Monomial { n } if n >= 2 && x0 > 0.0 => Some(existence_interval_monomial(n, x0, cfg.q)),
        ProblemKind::Exponential if x0 > 0.0 => Some(existence_interval_exponential(x0, cfg.q)),
        _ => None,
    };
    if let Some(interval) = interval {
        let interval = interval.map_err(run_err)?;
        let _ = writeln!(out.primary, "existence.T_max={}", interval.t_max);
        if let Some(s) = interval.t_max_sharp {
            let _ = writeln!(out.primary, "existence.T_max_sharp={s}");
        }
        let _ = writeln!(out.primary, "existence.blow_up={}", interval.blow_up);
    }
    let verdicts = cert.verdicts();
    for name in &cfg.require {
        let Some((_, v)) = verdicts.iter().find(|(n, _)| n == name) else {
            return Err(config_err("certify.require", format!("unknown verdict `{name}`")));
        };
        out.verdict(name.clone(), v.pass());
    }
    Ok(out)
}

/// Progeny histogram CSV plus dominance and marked-progeny verdicts.
pub fn cmd_progeny(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let density = cfg.density.build()?;
    let t = cfg.t[0];
    let lambda = cfg.density.rate();
    let sizes = sample_progeny(&density, t, Mark::F, &cfg.mc()).map_err(run_err)?;
    let empirical = empirical_progeny(&sizes).map_err(run_err)?;
    let law = ProgenyLaw::new(lambda, t).map_err(run_err)?;
    let mut out = CommandOutput::default();
    out.primary.push_str("m,empirical_pmf,analytic_pmf\n");
    for (m, e, a) in histogram_rows(&empirical, &law, cfg.m_max) {
        let _ = writeln!(out.primary, "{m},{},{}", num(e), num(a));
    }
    if matches!(cfg.density, DensitySpec::Exponential { .. }) {
        let tv = empirical.tv_distance(&law);
        out.report.push(format!("tv_distance={tv}"));
        out.verdict("tv<0.02", tv < 0.02);
    }
    let dominance = check_dominance(&empirical, &law, cfg.n_max);
    out.report.push(format!(
        "dominance worst n={} empirical={} analytic={} band={}",
        dominance.worst.n, dominance.worst.empirical_tail, dominance.worst.analytic_tail, dominance.worst.band
    ));
    out.verdict("dominance", dominance.pass);

    let params = MarkedProgenyParams {
        lambda,
        t,
        j: cfg.progeny_j,
        gamma: cfg.progeny_gamma,
        delta: cfg.progeny_delta,
    };
    let p = -(-lambda * t).exp_m1();
    let (s, g, d) = (cfg.sigma_scale, cfg.progeny_gamma, cfg.progeny_delta);
    let sigma = move |k: usize| {
        if k == 0 {
            s / (p * g * d)
        } else {
            s * (k as f64 - 2.0 + g) * d
        }
    };
    let marked = marked_progeny_mean(&params, &sigma, &cfg.mc()).map_err(run_err)?;
    out.report.push(format!(
        "marked_progeny j={} estimate={} stderr={} bound={}",
        cfg.progeny_j,
        marked.mean(),
        marked.stderr(),
        marked.bound
    ));
    out.verdict("marked_progeny_bound", marked.mean() <= marked.bound + 3.0 * marked.stderr());
    Ok(out)
}

/// Butcher extraction against direct composition, tree catalog counts and
/// truncated-series errors.
pub fn cmd_butcher_check(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let density = cfg.density.build()?;
    let oracle = cfg.problem.derivative_oracle();
    let x0 = &cfg.problem.x0;
    let ctx = DifferentialContext::new(&oracle, None, x0).map_err(run_err)?;
    let t = cfg.t[0];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(run_err)?;
    let results: Vec<Option<(f64, bool)>> = pool.install(|| {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_stream(cfg.seed, i as u64);
                let sample = match sample_tree(&density, t, Mark::F, &mut rng, cfg.node_cap) {
                    Ok(s) => s,
                    Err(TreeError::Explosion { .. }) => return Ok(None),
                    Err(e) => return Err(run_err(e)),
                };
                let tau = extract_butcher(&sample).map_err(run_err)?;
                let invariants = tau.satisfies_mark_rule() && tau.order() == sample.interior.len() + 1;
                let a = elementary_differential_in(&tau, &ctx).map_err(run_err)?;
                let b = composition_direct(&sample, &ctx).map_err(run_err)?;
                Ok(Some((relative_deviation(&a, &b), invariants)))
            })
            .collect::<Result<_, CliError>>()
    })?;
    let rejected = results.iter().filter(|r| r.is_none()).count();
    let accepted: Vec<(f64, bool)> = results.into_iter().flatten().collect();
    let max_dev = accepted.iter().map(|r| r.0).fold(0.0, f64::max);
    let invariants = accepted.iter().all(|r| r.1);

    let mut out = CommandOutput::default();
    let mut p = String::new();
    let _ = writeln!(p, "samples={} rejected={rejected}", cfg.n_samples);
    let _ = writeln!(p, "max_relative_deviation={max_dev:e}");
    let _ = writeln!(p, "mark_rule_and_order={}", if invariants { "PASS" } else { "FAIL" });
    let catalog = enumerate_trees(cfg.catalog_order).map_err(run_err)?;
    for (i, c) in catalog.counts().iter().enumerate() {
        let _ = writeln!(p, "order {}: {c} trees", i + 1);
    }
    if cfg.problem.has_closed_form() {
        let _ = writeln!(p, "series_order,t,series,closed_form,abs_error");
        for order in 1..=cfg.series_order {
            for &s in &cfg.t {
                let series = butcher_series(&oracle, x0, s, order).map_err(run_err)?;
                let exact = cfg.problem.solution(s).map_err(run_err)?;
                let err = series.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let _ = writeln!(p, "{order},{},{},{},{}", num(s), vector(&series), vector(&exact), num(err));
            }
        }
    }
    out.primary = p;
    out.verdict("max_relative_deviation<1e-12", max_dev < 1e-12);
    out.verdict("extracted_tree_invariants", invariants);
    Ok(out)
}

fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Certify,
    Progeny,
    ButcherCheck,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    match command {
        Command::Solve => cmd_solve(cfg),
        Command::Certify => cmd_certify(cfg),
        Command::Progeny => cmd_progeny(cfg),
        Command::ButcherCheck => cmd_butcher_check(cfg),
    }
}
