//! Builtin nonlinearities with exact derivatives, closed-form solutions and
//! an RK4 reference integrator.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::branching_tree::{Base, Mark};
use crate::tensor::{DerivativeOracle, OracleError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("t = {t} is at or beyond the blow-up time {blow_up}")]
    BlowUp { t: f64, blow_up: f64 },
    #[error("no closed-form solution for {0}")]
    NoClosedForm(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("invalid problem: {0}")]
    Domain(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    /// `f(x) = x^n`
    Monomial { n: u32 },
    /// `f(x) = e^x`
    Exponential,
    /// `f(x) = x cos x`
    XCosX,
    /// `f(x) = A x` on `R^2`
    Linear { a: [[f64; 2]; 2] },
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::Monomial { n } => write!(f, "monomial(n={n})"),
            ProblemKind::Exponential => f.write_str("exponential"),
            ProblemKind::XCosX => f.write_str("x_cos_x"),
            ProblemKind::Linear { .. } => f.write_str("linear"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinProblem {
    pub kind: ProblemKind,
    pub x0: Vec<f64>,
}

impl BuiltinProblem {
    /// Scalar problem; use [`BuiltinProblem::linear`] for the planar system.
    pub fn new(kind: ProblemKind, x0: f64) -> Self {
        Self { kind, x0: vec![x0] }
    }

    pub fn linear(a: [[f64; 2]; 2], x0: [f64; 2]) -> Self {
        Self {
            kind: ProblemKind::Linear { a },
            x0: x0.to_vec(),
        }
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            ProblemKind::Linear { .. } => 2,
            _ => 1,
        }
    }

    pub fn derivative_oracle(&self) -> BuiltinOracle {
        BuiltinOracle { kind: self.kind }
    }

    /// Time at which the exact solution leaves every bounded set.
    pub fn blow_up_time(&self) -> f64 {
        match self.kind {
            ProblemKind::Monomial { n } => monomial_blow_up(n, self.x0[0]),
            ProblemKind::Exponential => (-self.x0[0]).exp(),
            ProblemKind::XCosX | ProblemKind::Linear { .. } => f64::INFINITY,
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self.kind, ProblemKind::XCosX)
    }

    /// Exact solution `x(t)`.
    pub fn solution(&self, t: f64) -> Result<Vec<f64>, ReferenceError> {
        match self.kind {
            ProblemKind::Monomial { n } => Ok(vec![monomial_solution(n, self.x0[0], t)?]),
            ProblemKind::Exponential => Ok(vec![exponential_solution(self.x0[0], t)?]),
            ProblemKind::XCosX => Err(ReferenceError::NoClosedForm(self.kind.to_string())),
            ProblemKind::Linear { a } => {
                let e = expm2(scale2(a, t));
                Ok(mat_vec2(e, [self.x0[0], self.x0[1]]).to_vec())
            }
        }
    }

    /// `sup_{k >= 0} |∇^k f(x0)|` in closed form.
    pub fn sup_derivatives_at_x0(&self) -> f64 {
        let x0 = self.x0[0];
        match self.kind {
            ProblemKind::Monomial { n } => (0..=n as usize)
                .map(|k| monomial_derivative(n, k, x0).abs())
                .fold(0.0, f64::max),
            ProblemKind::Exponential => x0.exp(),
            // grows linearly in k
            ProblemKind::XCosX => f64::INFINITY,
            ProblemKind::Linear { a } => {
                let ax = mat_vec2(a, [self.x0[0], self.x0[1]]);
                let value = ax[0].abs().max(ax[1].abs());
                let entries = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
                value.max(entries)
            }
        }
    }

    /// `sup_{|x - x0| < r} |∇^m f(x)|` (max norms); infinite when unbounded.
    pub fn ball_sup(&self, r: f64, m: usize) -> f64 {
        let x0 = self.x0[0];
        match self.kind {
            ProblemKind::Monomial { n } => {
                if m > n as usize {
                    0.0
                } else {
                    falling(n, m) * (x0.abs() + r).powi((n as usize - m) as i32)
                }
            }
            ProblemKind::Exponential => (x0 + r).exp(),
            // |x cos(..) + m cos(..)| <= |x| + m, attained up to the phase
            ProblemKind::XCosX => x0.abs() + r + m as f64,
            ProblemKind::Linear { a } => match m {
                0 => {
                    let ax = mat_vec2(a, [self.x0[0], self.x0[1]]);
                    (0..2)
                        .map(|i| ax[i].abs() + r * (a[i][0].abs() + a[i][1].abs()))
                        .fold(0.0, f64::max)
                }
                1 => a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs())),
                _ => 0.0,
            },
        }
    }
}

fn falling(n: u32, k: usize) -> f64 {
    (0..k).map(|i| (n as usize - i) as f64).product()
}

fn monomial_derivative(n: u32, k: usize, x: f64) -> f64 {
    if k > n as usize {
        0.0
    } else {
        falling(n, k) * x.powi((n as usize - k) as i32)
    }
}

fn monomial_blow_up(n: u32, x0: f64) -> f64 {
    match n {
        0 | 1 => f64::INFINITY,
        _ => {
            let p = x0.powi(n as i32 - 1);
            if p > 0.0 {
                1.0 / ((n - 1) as f64 * p)
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Solution of `x' = x^n`, `x(0) = x0`:
/// `x(t) = x0 (1 - (n-1) x0^{n-1} t)^{-1/(n-1)}` for `n >= 2`.
pub fn monomial_solution(n: u32, x0: f64, t: f64) -> Result<f64, ReferenceError> {
    match n {
        0 => Ok(x0 + t),
        1 => Ok(x0 * t.exp()),
        _ => {
            let blow_up = monomial_blow_up(n, x0);
            if t >= blow_up {
                return Err(ReferenceError::BlowUp { t, blow_up });
            }
            let m = (n - 1) as f64;
            let base = 1.0 - m * x0.powi(n as i32 - 1) * t;
            Ok(x0 * base.powf(-1.0 / m))
        }
    }
}

/// Solution of `x' = e^x`: `x(t) = -log(e^{-x0} - t)`.
pub fn exponential_solution(x0: f64, t: f64) -> Result<f64, ReferenceError> {
    let blow_up = (-x0).exp();
    if t >= blow_up {
        return Err(ReferenceError::BlowUp { t, blow_up });
    }
    Ok(-(blow_up - t).ln())
}

/// Exact derivative tensors of a builtin nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinOracle {
    kind: ProblemKind,
}

impl DerivativeOracle for BuiltinOracle {
    fn input_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Linear { .. } => 2,
            _ => 1,
        }
    }

    fn output_dim(&self) -> usize {
        self.input_dim()
    }

    fn derivative(&self, order: usize, x: &[f64]) -> Result<Tensor, OracleError> {
        if x.len() != self.input_dim() {
            return Err(OracleError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let s = x[0];
        let k = order as f64;
        Ok(match self.kind {
            ProblemKind::Monomial { n } => Tensor::scalar(order, monomial_derivative(n, order, s)),
            ProblemKind::Exponential => Tensor::scalar(order, s.exp()),
            ProblemKind::XCosX => Tensor::scalar(
                order,
                s * (s + k * FRAC_PI_2).cos() + k * (s + (k - 1.0) * FRAC_PI_2).cos(),
            ),
            ProblemKind::Linear { a } => match order {
                0 => Tensor::new(2, 2, 0, mat_vec2(a, [x[0], x[1]]).to_vec())?,
                1 => Tensor::new(2, 2, 1, vec![a[0][0], a[0][1], a[1][0], a[1][1]])?,
                _ => Tensor::zeros(2, 2, order),
            },
        })
    }
}

fn mat_vec2(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn mat_mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn scale2(a: [[f64; 2]; 2], s: f64) -> [[f64; 2]; 2] {
    a.map(|row| row.map(|v| v * s))
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let norm = a
        .iter()
        .map(|row| row[0].abs() + row[1].abs())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = scale2(a, 0.5f64.powi(squarings));
    let mut sum = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = sum;
    for k in 1..40 {
        term = scale2(mat_mul2(term, b), 1.0 / k as f64);
        sum = [
            [sum[0][0] + term[0][0], sum[0][1] + term[0][1]],
            [sum[1][0] + term[1][0], sum[1][1] + term[1][1]],
        ];
        let size = term.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        if size < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = mat_mul2(sum, sum);
    }
    sum
}

/// Classical fourth-order Runge–Kutta with `steps` equal steps.
pub fn rk4(problem: &BuiltinProblem, x0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>, ReferenceError> {
    if steps == 0 {
        return Err(ReferenceError::Domain("rk4 needs at least one step".into()));
    }
    let oracle = problem.derivative_oracle();
    let f = |x: &[f64]| -> Result<Vec<f64>, ReferenceError> { Ok(oracle.derivative(0, x)?.data().to_vec()) };
    let axpy = |x: &[f64], h: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let h = t / steps as f64;
    let mut x = x0.to_vec();
    for _ in 0..steps {
        let k1 = f(&x)?;
        let k2 = f(&axpy(&x, 0.5 * h, &k1))?;
        let k3 = f(&axpy(&x, 0.5 * h, &k2))?;
        let k4 = f(&axpy(&x, h, &k3))?;
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ReferenceError::Numeric(format!("rk4 overflow before t = {t}")));
        }
    }
    Ok(x)
}

/// Supplies `x_c(s)` for marks `c` along a known solution path.
pub trait SolutionOracle: Send + Sync {
    /// `x_Id(s) = x(s)`.
    fn state(&self, s: f64) -> Result<Vec<f64>, ReferenceError>;

    /// `x_c(s)` as a tensor; for `c = ∇^m h` this is `∇^m h(x(s))`.
    fn mark_value(&self, mark: Mark, s: f64) -> Result<Tensor, ReferenceError>;
}

/// Closed-form path of a builtin problem, optionally with a second
/// nonlinearity `g` whose marks are evaluated along the same path.
#[derive(Clone)]
pub struct ClosedFormSolution {
    problem: BuiltinProblem,
    oracle: BuiltinOracle,
    g: Option<Arc<dyn DerivativeOracle>>,
}

impl ClosedFormSolution {
    pub fn with_g(mut self, g: Arc<dyn DerivativeOracle>) -> Self {
        self.g = Some(g);
        self
    }

    pub fn problem(&self) -> &BuiltinProblem {
        &self.problem
    }
}

impl SolutionOracle for ClosedFormSolution {
    fn state(&self, s: f64) -> Result<Vec<f64>, ReferenceError> {
        self.problem.solution(s)
    }

    fn mark_value(&self, mark: Mark, s: f64) -> Result<Tensor, ReferenceError> {
        let x = self.state(s)?;
        match mark {
            Mark::Identity => Ok(Tensor::new(x.len(), x.len(), 0, x)?),
            Mark::Deriv { base: Base::F, order } => Ok(self.oracle.derivative(order, &x)?),
            Mark::Deriv { base: Base::G, order } => {
                let g = self.g.as_ref().ok_or(OracleError::Missing("g"))?;
                Ok(g.derivative(order, &x)?)
            }
        }
    }
}

/// Reference evaluator of `x_c(s)` for a problem with a closed form.
pub fn solution_oracle(problem: &BuiltinProblem) -> Result<ClosedFormSolution, ReferenceError> {
    if !problem.has_closed_form() {
        return Err(ReferenceError::NoClosedForm(problem.kind.to_string()));
    }
    Ok(ClosedFormSolution {
        problem: problem.clone(),
        oracle: problem.derivative_oracle(),
        g: None,
    })
}
