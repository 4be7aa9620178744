//! Integrability certificates: the constants `C0`, `C1`, `C2`, `σ(k)`, the
//! hypotheses of the bounded-mark and unbounded-mark integrability results,
//! the implied `L^q` bounds, `λ0` and the example existence intervals.
//!
//! Every hypothesis is evaluated as a list of [`Check`]s so a report can show
//! which inequality failed and by how much.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use thiserror::Error;

use crate::lifetime_densities::{plateau_constant, verify_dominance, DensityError, LifetimeDensity, PlateauVariant};
use crate::reference_solutions::BuiltinProblem;
use crate::tensor::{check_order, DerivativeOracle, OracleError};

/// Default number of derivative orders inspected when a supremum over
/// `k >= 0` has no closed form.
pub const DEFAULT_K_MAX: usize = 64;

/// Distance to a threshold below which a check is flagged as marginal.
pub const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("t = {t} reaches the blow-up time {blow_up} of the a priori bound")]
    Horizon { t: f64, blow_up: f64 },
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Less,
    LessEq,
    Greater,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Less => "<",
            Relation::LessEq => "<=",
            Relation::Greater => ">",
        })
    }
}

/// One inequality `lhs <rel> rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub pass: bool,
    pub marginal: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, lhs: f64, relation: Relation, rhs: f64) -> Self {
        let pass = match relation {
            Relation::Less => lhs < rhs,
            Relation::LessEq => lhs <= rhs,
            Relation::Greater => lhs > rhs,
        };
        Self {
            name: name.into(),
            lhs,
            relation,
            rhs,
            pass,
            marginal: (lhs - rhs).abs() <= MARGINAL_TOL,
        }
    }
}

/// Conjunction of checks. `partial` marks a verdict from which some
/// condition had to be left out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verdict {
    pub checks: Vec<Check>,
    pub partial: bool,
}

impl Verdict {
    pub fn new(checks: Vec<Check>) -> Self {
        Self { checks, partial: false }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn marginal(&self) -> bool {
        self.checks.iter().any(|c| c.marginal)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    fn and(mut self, other: &Verdict) -> Verdict {
        self.checks.extend(other.checks.iter().cloned());
        self.partial |= other.partial;
        self
    }

    fn label(&self) -> &'static str {
        match (self.pass(), self.partial) {
            (true, false) => "PASS",
            (true, true) => "PASS(partial)",
            (false, _) => "FAIL",
        }
    }
}

/// `sup_{|x - x0| < r} |∇^m g(x)|`.
pub type BallSup = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Derivative magnitudes at `x0` that feed every constant.
#[derive(Clone)]
pub struct ProblemBounds {
    /// `|∇^k f(x0)|`, max norm, for `k = 0..`.
    pub derivs_f: Vec<f64>,
    pub derivs_g: Vec<f64>,
    /// `sup_k |∇^k f(x0)|`; exact for builtins, otherwise the max over `derivs_f`.
    pub sup_f: f64,
    pub sup_g: f64,
    /// The suprema were taken over finitely many orders only.
    pub truncated: bool,
    pub ball_sup: Option<BallSup>,
}

impl fmt::Debug for ProblemBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemBounds")
            .field("derivs_f", &self.derivs_f)
            .field("derivs_g", &self.derivs_g)
            .field("sup_f", &self.sup_f)
            .field("sup_g", &self.sup_g)
            .field("truncated", &self.truncated)
            .field("ball_sup", &self.ball_sup.is_some())
            .finish()
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &x| m.max(x))
}

impl ProblemBounds {
    /// Bounds from tabulated magnitudes; suprema are taken over the table.
    pub fn from_sequences(derivs_f: Vec<f64>, derivs_g: Vec<f64>) -> Result<Self, CertError> {
        if derivs_f.iter().chain(&derivs_g).any(|v| !(*v >= 0.0)) {
            return Err(CertError::Domain("derivative magnitudes must be non-negative".into()));
        }
        Ok(Self {
            sup_f: max_of(&derivs_f),
            sup_g: max_of(&derivs_g),
            derivs_f,
            derivs_g,
            truncated: true,
            ball_sup: None,
        })
    }

    /// Magnitudes `|∇^k f(x0)|` for `k <= k_max` read from oracles; `g`
    /// defaults to `f`.
    pub fn from_oracles(
        oracle_f: &dyn DerivativeOracle,
        oracle_g: Option<&dyn DerivativeOracle>,
        x0: &[f64],
        k_max: usize,
    ) -> Result<Self, CertError> {
        let table = |o: &dyn DerivativeOracle| -> Result<Vec<f64>, CertError> {
            let top = o.max_order().map_or(k_max, |m| m.min(k_max));
            check_order(o, top)?;
            (0..=top).map(|k| Ok(o.derivative(k, x0)?.max_abs())).collect()
        };
        let f = table(oracle_f)?;
        let g = match oracle_g {
            Some(o) => table(o)?,
            None => f.clone(),
        };
        Self::from_sequences(f, g)
    }

    /// Exact bounds for a builtin problem with `g = f`.
    pub fn builtin(problem: &BuiltinProblem, k_max: usize) -> Result<Self, CertError> {
        let oracle = problem.derivative_oracle();
        let derivs: Vec<f64> = (0..=k_max)
            .map(|k| Ok(oracle.derivative(k, &problem.x0)?.max_abs()))
            .collect::<Result<_, CertError>>()?;
        let sup = problem.sup_derivatives_at_x0();
        let p = problem.clone();
        Ok(Self {
            derivs_g: derivs.clone(),
            derivs_f: derivs,
            sup_f: sup,
            sup_g: sup,
            truncated: false,
            ball_sup: Some(Arc::new(move |r, m| p.ball_sup(r, m))),
        })
    }

    pub fn with_ball_sup(mut self, ball_sup: BallSup) -> Self {
        self.ball_sup = Some(ball_sup);
        self
    }

    /// `σ(k) = max(|∇^k f(x0)|, |∇^k g(x0)|) / F̄(T)` over the tabulated orders.
    pub fn sigma(&self, tail: f64) -> Vec<f64> {
        let n = self.derivs_f.len().max(self.derivs_g.len());
        (0..n)
            .map(|k| {
                let f = self.derivs_f.get(k).copied().unwrap_or(0.0);
                let g = self.derivs_g.get(k).copied().unwrap_or(0.0);
                f.max(g) / tail
            })
            .collect()
    }
}

fn tail_and_inf(density: &LifetimeDensity, t_max: f64) -> Result<(f64, f64), CertError> {
    if !(t_max > 0.0) {
        return Err(CertError::Domain(format!("T must be positive, got {t_max}")));
    }
    let tail = density.tail(t_max)?;
    let rho = density.inf_on_horizon(t_max)?;
    if !(tail > 0.0 && rho > 0.0) {
        return Err(CertError::Domain(format!(
            "need positive tail and infimum on [0, {t_max}], got {tail} and {rho}"
        )));
    }
    Ok((tail, rho))
}

/// `C0 = max(sup_k |∇^k f(x0)|/F̄(T), sup_k |∇^k g(x0)|/F̄(T), 1/ρ_*(T))`.
///
/// An unbounded derivative sequence gives `+∞`.
pub fn compute_c0(bounds: &ProblemBounds, density: &LifetimeDensity, t_max: f64) -> Result<f64, CertError> {
    rescale(1.0, bounds, density, t_max)
}

/// `C0` for the time-rescaled problem `x' = f(x)/μ` on `[0, μT]`.
pub fn rescale(mu: f64, bounds: &ProblemBounds, density: &LifetimeDensity, t_max: f64) -> Result<f64, CertError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(CertError::Domain(format!("mu must be positive, got {mu}")));
    }
    let (tail, rho) = tail_and_inf(density, mu * t_max)?;
    Ok((bounds.sup_f / (mu * tail)).max(bounds.sup_g / tail).max(1.0 / rho))
}

fn check_unit(u: f64) -> Result<(), CertError> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(CertError::Domain(format!("u must lie in (0, 1), got {u}")))
    }
}

/// `C1 = (1 - u^2)^{-1/(2q)}` with `u = e^{-λT}`.
pub fn c1(q: f64, u: f64) -> Result<f64, CertError> {
    check_unit(u)?;
    Ok(plateau_constant(PlateauVariant::C1, q, u))
}

/// `C2 = (sqrt(4 + u^2) - u)^{1/q} / (2^{1/q} (1 - u)^{1/(2q)})` with `u = e^{-λT}`.
pub fn c2(q: f64, u: f64) -> Result<f64, CertError> {
    check_unit(u)?;
    Ok(plateau_constant(PlateauVariant::C2, q, u))
}

fn check_q(q: f64) -> Result<(), CertError> {
    if q >= 1.0 && q.is_finite() {
        Ok(())
    } else {
        Err(CertError::Domain(format!("q must be >= 1, got {q}")))
    }
}

fn check_rate(lambda: f64, t_max: f64) -> Result<f64, CertError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CertError::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(CertError::Domain(format!("T must be positive, got {t_max}")));
    }
    Ok(1.0 - (-lambda * t_max).exp())
}

/// Bounded-mark integrability: `1 < C0 < (1 - e^{-λT})^{-1/(2q)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityI {
    pub c0: f64,
    pub lambda: f64,
    pub t_max: f64,
    pub q: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

impl IntegrabilityI {
    /// `e^{-λt} C0^q / (1 - (1 - e^{-λt}) C0^{2q})`; `+∞` outside the pgf radius.
    pub fn bound(&self, t: f64) -> f64 {
        let u = (-self.lambda * t).exp();
        let cq = self.c0.powf(self.q);
        let den = 1.0 - (1.0 - u) * cq * cq;
        if den > 0.0 {
            u * cq / den
        } else {
            f64::INFINITY
        }
    }
}

pub fn check_integrability_i(c0: f64, lambda: f64, t_max: f64, q: f64) -> Result<IntegrabilityI, CertError> {
    check_q(q)?;
    let p = check_rate(lambda, t_max)?;
    let threshold = p.powf(-1.0 / (2.0 * q));
    let verdict = Verdict::new(vec![
        Check::new("C0 > 1", c0, Relation::Greater, 1.0),
        Check::new("C0 < (1-exp(-lambda T))^(-1/(2q))", c0, Relation::Less, threshold),
    ]);
    Ok(IntegrabilityI {
        c0,
        lambda,
        t_max,
        q,
        threshold,
        verdict,
    })
}

/// `sup_{|x - x0| < T p^{-1/(2q)}} |∇^m g| < p^{-1/(2q)}` for `m <= m_max`,
/// with `p = 1 - e^{-λT}`.
pub fn check_domain(ball_sup: Option<&BallSup>, lambda: f64, t_max: f64, q: f64, m_max: usize) -> Result<Verdict, CertError> {
    let p = check_rate(lambda, t_max)?;
    let level = p.powf(-1.0 / (2.0 * q));
    let radius = t_max * level;
    Ok(match ball_sup {
        None => Verdict {
            checks: Vec::new(),
            partial: true,
        },
        Some(sup) => Verdict::new(
            (0..=m_max)
                .map(|m| Check::new(format!("ball sup |D^{m} g| < level"), sup(radius, m), Relation::Less, level))
                .collect(),
        ),
    })
}

/// Uniform integrability under bounded marks.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformI {
    /// `(sqrt(4 + u^2) - u) / (2 sqrt(1 - u))` with `u = e^{-λT}`.
    pub threshold: f64,
    /// `1 < C0^q < threshold`.
    pub verdict: Verdict,
    /// Ball condition needed for the tilde functional; partial when no ball
    /// supremum is available.
    pub domain: Verdict,
}

impl UniformI {
    pub fn tilde(&self) -> Verdict {
        self.verdict.clone().and(&self.domain)
    }
}

pub fn check_uniform_i(
    c0: f64,
    lambda: f64,
    t_max: f64,
    q: f64,
    ball_sup: Option<&BallSup>,
    m_max: usize,
) -> Result<UniformI, CertError> {
    check_q(q)?;
    check_rate(lambda, t_max)?;
    let u = (-lambda * t_max).exp();
    let threshold = ((4.0 + u * u).sqrt() - u) / (2.0 * (1.0 - u).sqrt());
    let cq = c0.powf(q);
    Ok(UniformI {
        threshold,
        verdict: Verdict::new(vec![
            Check::new("C0^q > 1", cq, Relation::Greater, 1.0),
            Check::new("C0^q < uniform threshold", cq, Relation::Less, threshold),
        ]),
        domain: check_domain(ball_sup, lambda, t_max, q, m_max)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthParams {
    pub lambda: f64,
    pub t_max: f64,
    pub q: f64,
    pub delta: f64,
    pub gamma: f64,
    pub rho_star: f64,
}

impl GrowthParams {
    fn validate(&self, min_gamma: f64) -> Result<f64, CertError> {
        check_q(self.q)?;
        let p = check_rate(self.lambda, self.t_max)?;
        if !(self.delta > 0.0) {
            return Err(CertError::Domain(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.gamma >= min_gamma) {
            return Err(CertError::Domain(format!(
                "gamma must be >= {min_gamma}, got {}",
                self.gamma
            )));
        }
        Ok(p)
    }

    fn rho_check(&self, p: f64) -> Check {
        Check::new(
            "rho_* > (1-exp(-lambda T))^(1/(2q))",
            self.rho_star,
            Relation::Greater,
            p.powf(1.0 / (2.0 * self.q)),
        )
    }
}

/// Unbounded-mark integrability with weights `σ(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityII {
    pub params: GrowthParams,
    pub sigma: Vec<f64>,
    pub verdict: Verdict,
}

impl IntegrabilityII {
    /// `L^q` bound for a tree started from `∇^j f` or `∇^j g`; `+∞` outside
    /// the radius of convergence.
    pub fn bound(&self, j: usize, t: f64) -> f64 {
        let GrowthParams {
            lambda,
            q,
            gamma,
            delta,
            rho_star,
            ..
        } = self.params;
        let (Some(&s0), Some(&sj)) = (self.sigma.first(), self.sigma.get(j)) else {
            return f64::INFINITY;
        };
        let u = (-lambda * t).exp();
        let base = 1.0 - (1.0 - u) * s0.powf(2.0 * q) * gamma * delta;
        let rho_term = 1.0 - (1.0 - u) / rho_star.powf(2.0 * q);
        if !(base > 0.0 && rho_term > 0.0) {
            return f64::INFINITY;
        }
        let exponent = -0.5 - (j as f64 - 1.0) / (2.0 * gamma);
        u * sj.powf(q) * base.powf(exponent) / rho_term.sqrt()
    }
}

pub fn check_integrability_ii(sigma: &[f64], params: GrowthParams) -> Result<IntegrabilityII, CertError> {
    let p = params.validate(2.0)?;
    if sigma.is_empty() {
        return Err(CertError::Domain("sigma sequence is empty".into()));
    }
    let (q, gamma, delta) = (params.q, params.gamma, params.delta);
    let s0 = sigma[0].powf(2.0 * q);
    let mut checks = vec![
        params.rho_check(p),
        Check::new("sigma(0)^(2q) > 1", s0, Relation::Greater, 1.0),
        Check::new("sigma(0)^(2q) < 1/(p gamma delta)", s0, Relation::Less, 1.0 / (p * gamma * delta)),
    ];
    for (k, s) in sigma.iter().enumerate().skip(1) {
        let sk = s.powf(2.0 * q);
        checks.push(Check::new(format!("sigma({k})^(2q) > 1"), sk, Relation::Greater, 1.0));
        checks.push(Check::new(
            format!("sigma({k})^(2q) <= (k-2+gamma) delta"),
            sk,
            Relation::LessEq,
            (k as f64 - 2.0 + gamma) * delta,
        ));
    }
    Ok(IntegrabilityII {
        params,
        sigma: sigma.to_vec(),
        verdict: Verdict {
            checks,
            partial: true,
        },
    })
}

/// Uniform integrability under growing marks.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformII {
    /// Condition on `ρ_*` together with `eq31`.
    pub verdict: Verdict,
    /// The conditions on `σ(0)^q` and `σ(k)^q`, `k >= 1`.
    pub eq31: Verdict,
    /// Explicit sufficient bounds, in the corrected form that implies `eq31`.
    pub remark: Verdict,
    /// The explicit bounds with the exponent sign as printed in the source;
    /// reported for comparison only.
    pub remark_as_printed: Verdict,
    pub domain: Verdict,
}

impl UniformII {
    pub fn tilde(&self) -> Verdict {
        self.verdict.clone().and(&self.domain)
    }
}

/// Right-hand side of the `σ(k)^q` condition for `k >= 1`.
pub fn uniform_ii_threshold(k: usize, sigma0: f64, params: &GrowthParams) -> f64 {
    let GrowthParams {
        lambda,
        t_max,
        q,
        delta,
        gamma,
        rho_star,
    } = *params;
    let p = 1.0 - (-lambda * t_max).exp();
    let r = ((1.0 - p / rho_star.powf(2.0 * q)) / p).sqrt();
    let base = 1.0 - p * sigma0.powf(q) * gamma * delta;
    (lambda * t_max).exp() * r * base.powf(0.5 + (k as f64 - 1.0) / (2.0 * gamma))
}

pub fn check_uniform_ii(
    sigma: &[f64],
    params: GrowthParams,
    ball_sup: Option<&BallSup>,
    m_max: usize,
) -> Result<UniformII, CertError> {
    let p = params.validate(2.0)?;
    if sigma.is_empty() {
        return Err(CertError::Domain("sigma sequence is empty".into()));
    }
    let GrowthParams {
        lambda,
        t_max,
        q,
        delta,
        gamma,
        rho_star,
    } = params;
    let s0 = sigma[0].powf(q);
    let mut eq31 = vec![
        Check::new("sigma(0)^q > 1", s0, Relation::Greater, 1.0),
        Check::new("sigma(0)^q < 1/(p gamma delta)", s0, Relation::Less, 1.0 / (p * gamma * delta)),
    ];
    for (k, s) in sigma.iter().enumerate().skip(1) {
        let sk = s.powf(q);
        eq31.push(Check::new(format!("sigma({k})^q > 1"), sk, Relation::Greater, 1.0));
        eq31.push(Check::new(
            format!("sigma({k})^q < growth threshold"),
            sk,
            Relation::Less,
            uniform_ii_threshold(k, sigma[0], &params),
        ));
    }
    let eq31 = Verdict {
        checks: eq31,
        partial: true,
    };

    let r = (1.0 - p / rho_star.powf(2.0 * q)).sqrt();
    let e = (lambda * t_max).exp();
    let a = e * r / p.sqrt();
    let b = p.sqrt() * gamma * delta * e * r;
    let exponent = |k: usize| 0.5 + (k as f64 - 1.0) / (2.0 * gamma);
    let remark_form = |printed: bool| {
        let mut checks = vec![
            Check::new("sigma(0)^q > 1", s0, Relation::Greater, 1.0),
            Check::new("sigma(0)^q <= A/(1+B)", s0, Relation::LessEq, a / (1.0 + b)),
        ];
        for (k, s) in sigma.iter().enumerate().skip(1) {
            let sk = s.powf(q);
            let sign = if printed { 1.0 } else { -1.0 };
            checks.push(Check::new(format!("sigma({k})^q > 1"), sk, Relation::Greater, 1.0));
            checks.push(Check::new(
                format!("sigma({k})^q <= A (1+B)^(-e_k)"),
                sk,
                Relation::LessEq,
                a * (1.0 + b).powf(sign * exponent(k)),
            ));
        }
        Verdict {
            checks,
            partial: true,
        }
    };
    Ok(UniformII {
        verdict: Verdict::new(vec![params.rho_check(p)]).and(&eq31),
        eq31,
        remark: remark_form(false),
        remark_as_printed: remark_form(true),
        domain: check_domain(ball_sup, lambda, t_max, q, m_max)?,
    })
}

/// Blow-up time `ln(C0^2/(C0^2 - 1))/λ` of the a priori bound.
pub fn a_priori_blow_up(c0: f64, lambda: f64) -> f64 {
    let c2 = c0 * c0;
    if c2 <= 1.0 {
        f64::INFINITY
    } else {
        (c2 / (c2 - 1.0)).ln() / lambda
    }
}

/// `x0 + t/C0 + (1/(λ C0)) log(1/(C0^2 - (C0^2 - 1) e^{λt}))`.
pub fn a_priori_bound(x0: f64, c0: f64, lambda: f64, t: f64) -> Result<f64, CertError> {
    if !(c0 > 0.0 && lambda > 0.0 && t >= 0.0) {
        return Err(CertError::Domain(format!(
            "need C0 > 0, lambda > 0, t >= 0, got {c0}, {lambda}, {t}"
        )));
    }
    let c2 = c0 * c0;
    let arg = c2 - (c2 - 1.0) * (lambda * t).exp();
    if !(arg > 0.0) {
        return Err(CertError::Horizon {
            t,
            blow_up: a_priori_blow_up(c0, lambda),
        });
    }
    Ok(x0 + t / c0 - arg.ln() / (lambda * c0))
}

/// Uniqueness and existence verdicts of a corollary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorollaryVerdicts {
    pub uniqueness: Verdict,
    pub existence: Verdict,
}

/// Uniformly bounded derivatives: `sup_k |∇^k f(x0)| <= F̄(T)/C2(q;T)` with
/// `q > 1`, plus the ball condition on `f` for existence.
pub fn corollary_bounded(
    bounds: &ProblemBounds,
    tail: f64,
    lambda: f64,
    t_max: f64,
    q: f64,
    m_max: usize,
) -> Result<CorollaryVerdicts, CertError> {
    check_rate(lambda, t_max)?;
    let u = (-lambda * t_max).exp();
    let mut uniqueness = Verdict::new(vec![
        Check::new("q > 1", q, Relation::Greater, 1.0),
        Check::new("sup |D^k f(x0)| <= tail/C2", bounds.sup_f, Relation::LessEq, tail / c2(q, u)?),
    ]);
    uniqueness.partial = bounds.truncated;
    let existence = uniqueness
        .clone()
        .and(&check_domain(bounds.ball_sup.as_ref(), lambda, t_max, q, m_max)?);
    Ok(CorollaryVerdicts { uniqueness, existence })
}

/// Growing derivatives: `|f(x0)| < e^{λT}/(2(1 - e^{-λT})δ)^{1/(2q)}` and
/// `|∇^k f(x0)| <= e^{λT}(kδ)^{1/(2q)}` for `k >= 1`.
pub fn corollary_growth(
    bounds: &ProblemBounds,
    lambda: f64,
    t_max: f64,
    q: f64,
    delta: f64,
    m_max: usize,
) -> Result<CorollaryVerdicts, CertError> {
    let p = check_rate(lambda, t_max)?;
    if !(delta > 0.0) {
        return Err(CertError::Domain(format!("delta must be positive, got {delta}")));
    }
    let e = (lambda * t_max).exp();
    let mut checks = vec![Check::new("q > 1", q, Relation::Greater, 1.0)];
    let f0 = bounds.derivs_f.first().copied().unwrap_or(0.0);
    checks.push(Check::new(
        "|f(x0)| < exp(lambda T)/(2 p delta)^(1/(2q))",
        f0,
        Relation::Less,
        e / (2.0 * p * delta).powf(1.0 / (2.0 * q)),
    ));
    for (k, d) in bounds.derivs_f.iter().enumerate().skip(1) {
        checks.push(Check::new(
            format!("|D^{k} f(x0)| <= exp(lambda T)(k delta)^(1/(2q))"),
            *d,
            Relation::LessEq,
            e * (k as f64 * delta).powf(1.0 / (2.0 * q)),
        ));
    }
    let mut uniqueness = Verdict::new(checks);
    uniqueness.partial = true;
    let existence = uniqueness
        .clone()
        .and(&check_domain(bounds.ball_sup.as_ref(), lambda, t_max, q, m_max)?);
    Ok(CorollaryVerdicts { uniqueness, existence })
}

/// Smallest root of `λ e^{-λ/e} C2(e^{-λ/e}; q) = 1` in `(3/2, e)`.
pub fn solve_lambda0(q: f64) -> Result<f64, CertError> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(CertError::Domain(format!("q must be > 1, got {q}")));
    }
    let e = std::f64::consts::E;
    let h = |lambda: f64| {
        let u = (-lambda / e).exp();
        lambda * u * plateau_constant(PlateauVariant::C2, q, u) - 1.0
    };
    let (lo, hi) = (1.5, e);
    let steps = 2000;
    let mut a = lo;
    let mut ha = h(a);
    for i in 1..=steps {
        let b = lo + (hi - lo) * i as f64 / steps as f64;
        let hb = h(b);
        if ha == 0.0 {
            return Ok(a);
        }
        if ha.signum() != hb.signum() {
            return Ok(bisect(h, a, b, 1e-10));
        }
        a = b;
        ha = hb;
    }
    Err(CertError::Numeric(format!("no sign change of the lambda0 equation on (1.5, e) for q = {q}")))
}

fn bisect(h: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ha = h(a);
    while b - a > tol {
        let m = 0.5 * (a + b);
        let hm = h(m);
        if hm == 0.0 {
            return m;
        }
        if hm.signum() == ha.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Admissible horizon of an example problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExistenceInterval {
    /// Bound with `1/λ0` replaced by `2/3`.
    pub t_max: f64,
    /// Bound with the exact `λ0`, when `q > 1`.
    pub t_max_sharp: Option<f64>,
    pub blow_up: f64,
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Horizon for `f(x) = x^n`, `x0 > 0`.
pub fn existence_interval_monomial(n: u32, x0: f64, q: f64) -> Result<ExistenceInterval, CertError> {
    if n < 2 {
        return Err(CertError::Domain(format!("power must be >= 2, got {n}")));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(CertError::Domain(format!("x0 must be positive, got {x0}")));
    }
    check_q(q)?;
    let n0 = (x0.floor() as u32).min(n);
    let ratio = factorial(n) / factorial(n0);
    let a = ratio * x0.powi(n0 as i32);
    let e = std::f64::consts::E;
    let log_term = -(1.0 - ratio.powf(-2.0 * q) * (x0 + 1.0).powf(-2.0 * (n0 + 1) as f64 * q)).ln();
    let rate_term = 1.0 / (e * a);
    interval(rate_term, log_term, q, 1.0 / ((n - 1) as f64 * x0.powi(n as i32 - 1)))
}

/// Horizon for `f(x) = e^x`, `x0 > 0`.
pub fn existence_interval_exponential(x0: f64, q: f64) -> Result<ExistenceInterval, CertError> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(CertError::Domain(format!("x0 must be positive, got {x0}")));
    }
    check_q(q)?;
    let rate_term = (-x0 - 1.0).exp();
    let log_term = -(1.0 - (-(x0 + 1.0) * 2.0 * q).exp()).ln();
    interval(rate_term, log_term, q, (-x0).exp())
}

fn interval(rate_term: f64, log_term: f64, q: f64, blow_up: f64) -> Result<ExistenceInterval, CertError> {
    let m = rate_term.min(log_term);
    let t_max_sharp = if q > 1.0 { Some(m / solve_lambda0(q)?) } else { None };
    Ok(ExistenceInterval {
        t_max: 2.0 / 3.0 * m,
        t_max_sharp,
        blow_up,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationParams {
    /// Rate of the dominating exponential law.
    pub lambda: f64,
    pub t_max: f64,
    pub q: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Orders inspected for `σ(k)` and the ball conditions.
    pub k_max: usize,
}

impl Default for CertificationParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            t_max: 0.1,
            q: 1.0,
            delta: 1.0,
            gamma: 2.0,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Everything [`certify`] computes for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub params: CertificationParams,
    pub x0: f64,
    pub tail: f64,
    pub rho_star: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma: Vec<f64>,
    pub sup_truncated: bool,
    pub dominance: bool,
    pub integrability_i: IntegrabilityI,
    pub uniform_i: UniformI,
    pub integrability_ii: IntegrabilityII,
    pub uniform_ii: UniformII,
    pub bounded: CorollaryVerdicts,
    pub growth: CorollaryVerdicts,
    pub lambda0: Option<f64>,
    /// `(t, L^q bound)` on `[0, T]`.
    pub lq_bound_curve: Vec<(f64, f64)>,
    /// `(t, a priori bound)`; `None` past the bound's blow-up time.
    pub a_priori_curve: Vec<(f64, Option<f64>)>,
}

const CURVE_POINTS: usize = 5;

/// Evaluates every constant, hypothesis and bound for one configuration.
///
/// `x0` is the scalar initial value used by the a priori bound.
pub fn certify(
    bounds: &ProblemBounds,
    density: &LifetimeDensity,
    params: CertificationParams,
    x0: f64,
) -> Result<Certificate, CertError> {
    let CertificationParams {
        lambda,
        t_max,
        q,
        delta,
        gamma,
        k_max,
    } = params;
    let (tail, rho_star) = tail_and_inf(density, t_max)?;
    let c0 = compute_c0(bounds, density, t_max)?;
    let u = (-lambda * t_max).exp();
    let sigma: Vec<f64> = bounds.sigma(tail).into_iter().take(k_max + 1).collect();
    let growth = GrowthParams {
        lambda,
        t_max,
        q,
        delta,
        gamma,
        rho_star,
    };
    let ball = bounds.ball_sup.as_ref();
    let integrability_i = check_integrability_i(c0, lambda, t_max, q)?;
    let mut uniform_i = check_uniform_i(c0, lambda, t_max, q, ball, k_max)?;
    uniform_i.verdict.partial |= bounds.truncated;
    let curve_t = |i: usize| t_max * i as f64 / (CURVE_POINTS - 1) as f64;
    let lq_bound_curve = (0..CURVE_POINTS)
        .map(|i| (curve_t(i), integrability_i.bound(curve_t(i))))
        .collect();
    let a_priori_curve = (0..CURVE_POINTS)
        .map(|i| (curve_t(i), a_priori_bound(x0, c0, lambda, curve_t(i)).ok()))
        .collect();
    Ok(Certificate {
        params,
        x0,
        tail,
        rho_star,
        c0,
        c1: c1(q, u)?,
        c2: c2(q, u)?,
        dominance: verify_dominance(density, lambda, 1001).pass,
        integrability_ii: check_integrability_ii(&sigma, growth)?,
        uniform_ii: check_uniform_ii(&sigma, growth, ball, k_max)?,
        bounded: corollary_bounded(bounds, tail, lambda, t_max, q, k_max)?,
        growth: corollary_growth(bounds, lambda, t_max, q, delta, k_max)?,
        lambda0: if q > 1.0 { Some(solve_lambda0(q)?) } else { None },
        sigma,
        sup_truncated: bounds.truncated,
        integrability_i,
        uniform_i,
        lq_bound_curve,
        a_priori_curve,
    })
}

impl Certificate {
    /// Named verdicts in report order.
    pub fn verdicts(&self) -> Vec<(&'static str, Verdict)> {
        vec![
            ("integrability_I", self.integrability_i.verdict.clone()),
            ("uniform_I", self.uniform_i.verdict.clone()),
            ("uniform_I.tilde", self.uniform_i.tilde()),
            ("integrability_II", self.integrability_ii.verdict.clone()),
            ("uniform_II", self.uniform_ii.verdict.clone()),
            ("uniform_II.tilde", self.uniform_ii.tilde()),
            ("uniform_II.remark", self.uniform_ii.remark.clone()),
            ("uniform_II.remark_as_printed", self.uniform_ii.remark_as_printed.clone()),
            ("corollary_uniqueness", self.bounded.uniqueness.clone()),
            ("corollary_existence", self.bounded.existence.clone()),
            ("corollary_growth_uniqueness", self.growth.uniqueness.clone()),
            ("corollary_growth_existence", self.growth.existence.clone()),
        ]
    }

    /// Flat `key=value` report, one entry per line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let p = &self.params;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("lambda", p.lambda.to_string());
        kv("T", p.t_max.to_string());
        kv("q", p.q.to_string());
        kv("delta", p.delta.to_string());
        kv("gamma", p.gamma.to_string());
        kv("k_max", p.k_max.to_string());
        kv("tail_T", self.tail.to_string());
        kv("rho_star", self.rho_star.to_string());
        kv("C0", self.c0.to_string());
        kv("C1", self.c1.to_string());
        kv("C2", self.c2.to_string());
        kv("sup_truncated", self.sup_truncated.to_string());
        kv("assumption_dominance", pass_label(self.dominance).into());
        for (k, s) in self.sigma.iter().enumerate().take(13) {
            kv(&format!("sigma.{k}"), s.to_string());
        }
        kv("threshold.integrability_I", self.integrability_i.threshold.to_string());
        kv("threshold.uniform_I", self.uniform_i.threshold.to_string());
        match self.lambda0 {
            Some(l) => kv("lambda0", l.to_string()),
            None => kv("lambda0", "undefined(q<=1)".into()),
        }
        for (name, v) in self.verdicts() {
            kv(&format!("verdict.{name}"), v.label().into());
            if v.marginal() {
                kv(&format!("verdict.{name}.marginal"), "true".into());
            }
            if let Some(c) = v.first_failure() {
                kv(
                    &format!("verdict.{name}.failed"),
                    format!("{}: {} {} {}", c.name, c.lhs, c.relation, c.rhs),
                );
            }
        }
        for (i, (t, b)) in self.lq_bound_curve.iter().enumerate() {
            kv(&format!("lq_bound.{i}"), format!("{t} {b}"));
        }
        for (i, (t, b)) in self.a_priori_curve.iter().enumerate() {
            let v = b.map_or_else(|| "blow-up".to_string(), |b| b.to_string());
            kv(&format!("a_priori_bound.{i}"), format!("{t} {v}"));
        }
        kv(
            "a_priori_blow_up",
            a_priori_blow_up(self.c0, p.lambda).to_string(),
        );
        out
    }
}

fn pass_label(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
