//! The weighted tree functional and its Monte Carlo averages.

use rayon::prelude::*;
use thiserror::Error;

use crate::branching_tree::{sample_tree, Base, Mark, TreeError, TreeSample};
use crate::butcher::{elementary_differential_in, extract_butcher, ButcherError, DifferentialContext};
use crate::lifetime_densities::{DensityError, LifetimeDensity};
use crate::reference_solutions::{ReferenceError, SolutionOracle};
use crate::rng::{sample_stream, SampleRng};
use crate::tensor::{DerivativeOracle, OracleError};

/// Samples per reduction block. Blocks are reduced in index order, so the
/// result does not depend on the number of workers.
const BLOCK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("density vanishes at lifetime {0}")]
    DensitySupport(f64),
    #[error(
        "{rejected} of {total} samples exceeded the node cap; the integrability \
         conditions probably fail, run `certify` on this configuration"
    )]
    RejectionRate { rejected: usize, total: usize },
    #[error("invalid estimator parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Butcher(#[from] ButcherError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

/// `H_t` on one sample together with its two weight factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalValue {
    pub value: Vec<f64>,
    /// `∏_{boundary} 1 / F̄(t - T_{k⁻})`
    pub boundary_weight: f64,
    /// `∏_{interior} 1 / ρ(t_k)`
    pub interior_weight: f64,
}

fn weights(sample: &TreeSample, density: &LifetimeDensity, max_generation: usize) -> Result<(f64, f64), EstimatorError> {
    let t = sample.horizon;
    let mut boundary = 1.0;
    for b in sample.boundary_branches().filter(|b| b.generation() <= max_generation) {
        boundary /= density.tail(t - b.birth)?;
    }
    let mut interior = 1.0;
    for b in sample.interior_branches().filter(|b| b.generation() <= max_generation) {
        let p = density.pdf(b.lifetime)?;
        if p <= 0.0 {
            return Err(EstimatorError::DensitySupport(b.lifetime));
        }
        interior /= p;
    }
    Ok((boundary, interior))
}

fn weighted(composition: Vec<f64>, boundary_weight: f64, interior_weight: f64) -> FunctionalValue {
    let w = boundary_weight * interior_weight;
    FunctionalValue {
        value: composition.into_iter().map(|v| v * w).collect(),
        boundary_weight,
        interior_weight,
    }
}

/// `H_t` with the composition term taken from the extracted Butcher tree.
pub fn evaluate_functional_in(
    sample: &TreeSample,
    ctx: &DifferentialContext<'_>,
    density: &LifetimeDensity,
) -> Result<FunctionalValue, EstimatorError> {
    let tau = extract_butcher(sample)?;
    let composition = elementary_differential_in(&tau, ctx)?;
    let (b, i) = weights(sample, density, usize::MAX)?;
    Ok(weighted(composition, b, i))
}

pub fn evaluate_functional(
    sample: &TreeSample,
    oracle_f: &dyn DerivativeOracle,
    oracle_g: Option<&dyn DerivativeOracle>,
    x0: &[f64],
    density: &LifetimeDensity,
) -> Result<FunctionalValue, EstimatorError> {
    let ctx = DifferentialContext::new(oracle_f, oracle_g, x0)?;
    evaluate_functional_in(sample, &ctx, density)
}

/// Replacement of generation `n + 1` branches in [`truncated_functional`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationVariant {
    /// Every cut branch contributes `x_{c_k}`.
    Plain,
    /// Cut `f`-class branches contribute `x_{c_k}`, cut `g`-class branches
    /// contribute `c_k(x_Id)`.
    Tilde,
}

struct Truncation<'s> {
    cutoff: usize,
    solution: &'s dyn SolutionOracle,
    variant: TruncationVariant,
}

fn as_args(pending: &[Vec<f64>]) -> Vec<&[f64]> {
    pending.iter().map(Vec::as_slice).collect()
}

/// Boundary-mark composition evaluated by walking the branching tree.
///
/// A branch marked `∇^m c` collects `m` pending arguments: the values of the
/// `(k, 1)` offspring of the chain of `(k, 2)` ancestors that led to it.
fn compose(
    sample: &TreeSample,
    idx: usize,
    mut pending: Vec<Vec<f64>>,
    ctx: &DifferentialContext<'_>,
    cut: Option<&Truncation<'_>>,
) -> Result<Vec<f64>, EstimatorError> {
    let b = &sample.branches[idx];
    if let Some(cut) = cut {
        if b.generation() == cut.cutoff + 1 {
            let s = sample.horizon - b.birth;
            let tensor = match (cut.variant, b.mark) {
                (TruncationVariant::Tilde, Mark::Deriv { base: Base::G, order }) => {
                    let g = ctx.oracle(Base::G).ok_or(OracleError::Missing("g"))?;
                    g.derivative(order, &cut.solution.state(s)?)?
                }
                (_, mark) => cut.solution.mark_value(mark, s)?,
            };
            return Ok(tensor.apply(&as_args(&pending))?);
        }
    }
    if b.death > sample.horizon {
        return match b.mark {
            Mark::Identity => Ok(ctx.x0().to_vec()),
            Mark::Deriv { base, .. } => Ok(ctx.apply(base, &as_args(&pending))?),
        };
    }
    match (b.mark, &b.children[..]) {
        (Mark::Identity, &[child]) => compose(sample, child, pending, ctx, cut),
        (Mark::Deriv { .. }, &[first, second]) => {
            let v = compose(sample, first, Vec::new(), ctx, cut)?;
            pending.push(v);
            compose(sample, second, pending, ctx, cut)
        }
        _ => Err(ButcherError::Structure(format!("branch {} has an invalid offspring set", b.label)).into()),
    }
}

/// Boundary-mark composition `∏ c_k(x0)` computed directly on the tree,
/// without going through a Butcher tree.
pub fn composition_direct(sample: &TreeSample, ctx: &DifferentialContext<'_>) -> Result<Vec<f64>, EstimatorError> {
    compose(sample, 0, Vec::new(), ctx, None)
}

/// Truncated functional: weights and boundary marks over generations `<= n`, with
/// generation `n + 1` branches replaced by reference values `x_{c_k}`
/// evaluated at their remaining time `t - T_{k⁻}`.
pub fn truncated_functional(
    sample: &TreeSample,
    n: usize,
    ctx: &DifferentialContext<'_>,
    density: &LifetimeDensity,
    solution: &dyn SolutionOracle,
    variant: TruncationVariant,
) -> Result<FunctionalValue, EstimatorError> {
    let cut = Truncation {
        cutoff: n,
        solution,
        variant,
    };
    let composition = compose(sample, 0, Vec::new(), ctx, Some(&cut))?;
    let (b, i) = weights(sample, density, n)?;
    Ok(weighted(composition, b, i))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub node_cap: usize,
    pub workers: usize,
}

impl McConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            node_cap: crate::branching_tree::DEFAULT_NODE_CAP,
            workers: 1,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn node_cap(mut self, node_cap: usize) -> Self {
        self.node_cap = node_cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: Vec<f64>,
    /// Per component `sqrt(unbiased variance / accepted)`.
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub n_rejected: usize,
    pub horizon: f64,
}

impl Estimate {
    pub fn accepted(&self) -> usize {
        self.n_samples - self.n_rejected
    }
}

#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    rejected: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            rejected: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.rejected += other.rejected;
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.clone_from(&other.mean);
            self.m2.clone_from(&other.m2);
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }
}

/// Averages `draw` over `cfg.n_samples` independent streams.
///
/// `draw` returns `Ok(None)` for a rejected sample. Each sample `i` uses the
/// stream `(cfg.seed, i)`; fixed-size blocks are accumulated in parallel and
/// merged in block order.
pub fn monte_carlo<F>(cfg: &McConfig, dim: usize, horizon: f64, draw: F) -> Result<Estimate, EstimatorError>
where
    F: Fn(&mut SampleRng) -> Result<Option<Vec<f64>>, EstimatorError> + Sync,
{
    if cfg.n_samples == 0 {
        return Err(EstimatorError::Parameter("n_samples must be at least 1".into()));
    }
    if cfg.workers == 0 {
        return Err(EstimatorError::Parameter("workers must be at least 1".into()));
    }
    let n_blocks = cfg.n_samples.div_ceil(BLOCK);
    let block = |b: usize| -> Result<Moments, EstimatorError> {
        let mut acc = Moments::new(dim);
        let end = ((b + 1) * BLOCK).min(cfg.n_samples);
        for i in b * BLOCK..end {
            let mut rng = sample_stream(cfg.seed, i as u64);
            match draw(&mut rng)? {
                Some(v) => acc.push(&v),
                None => acc.rejected += 1,
            }
        }
        Ok(acc)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| EstimatorError::Parameter(format!("thread pool: {e}")))?;
    let blocks: Vec<Moments> = pool.install(|| (0..n_blocks).into_par_iter().map(block).collect::<Result<_, _>>())?;
    let mut total = Moments::new(dim);
    for b in &blocks {
        total.merge(b);
    }
    if 2 * total.rejected > cfg.n_samples || total.count == 0 {
        return Err(EstimatorError::RejectionRate {
            rejected: total.rejected,
            total: cfg.n_samples,
        });
    }
    let n = total.count as f64;
    let stderr = total
        .m2
        .iter()
        .map(|&s| if total.count > 1 { (s / (n - 1.0) / n).sqrt() } else { 0.0 })
        .collect();
    Ok(Estimate {
        mean: total.mean,
        stderr,
        n_samples: cfg.n_samples,
        n_rejected: total.rejected,
        horizon,
    })
}

fn accept<T>(r: Result<T, TreeError>) -> Result<Option<T>, EstimatorError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(TreeError::Explosion { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Monte Carlo average of `H_t` over trees started from `root_mark`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_functional(
    oracle_f: &dyn DerivativeOracle,
    oracle_g: Option<&dyn DerivativeOracle>,
    root_mark: Mark,
    x0: &[f64],
    t: f64,
    density: &LifetimeDensity,
    cfg: &McConfig,
) -> Result<Estimate, EstimatorError> {
    let ctx = DifferentialContext::new(oracle_f, oracle_g, x0)?;
    let dim = match root_mark {
        Mark::Identity => x0.len(),
        Mark::Deriv { base: Base::F, .. } => oracle_f.output_dim(),
        Mark::Deriv { base: Base::G, .. } => oracle_g.ok_or(OracleError::Missing("g"))?.output_dim(),
    };
    monte_carlo(cfg, dim, t, |rng| {
        let Some(sample) = accept(sample_tree(density, t, root_mark, rng, cfg.node_cap))? else {
            return Ok(None);
        };
        Ok(Some(evaluate_functional_in(&sample, &ctx, density)?.value))
    })
}

/// Estimates `x(t) = E[H_t(B^{0,Id})]`.
pub fn monte_carlo_solve(
    oracle_f: &dyn DerivativeOracle,
    x0: &[f64],
    t: f64,
    density: &LifetimeDensity,
    cfg: &McConfig,
) -> Result<Estimate, EstimatorError> {
    monte_carlo_functional(oracle_f, None, Mark::Identity, x0, t, density, cfg)
}

/// Sample mean of `|H_t|^q` (max norm) as a one-component estimate.
#[allow(clippy::too_many_arguments)]
pub fn estimate_q_moment(
    oracle_f: &dyn DerivativeOracle,
    oracle_g: Option<&dyn DerivativeOracle>,
    root_mark: Mark,
    x0: &[f64],
    t: f64,
    density: &LifetimeDensity,
    q: f64,
    cfg: &McConfig,
) -> Result<Estimate, EstimatorError> {
    if !(q >= 1.0) {
        return Err(EstimatorError::Parameter(format!("moment order q must be >= 1, got {q}")));
    }
    let ctx = DifferentialContext::new(oracle_f, oracle_g, x0)?;
    monte_carlo(cfg, 1, t, |rng| {
        let Some(sample) = accept(sample_tree(density, t, root_mark, rng, cfg.node_cap))? else {
            return Ok(None);
        };
        let h = evaluate_functional_in(&sample, &ctx, density)?.value;
        let norm = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Some(vec![norm.powf(q)]))
    })
}

/// Monte Carlo average of the truncated functional at cutoff `n`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_truncated(
    oracle_f: &dyn DerivativeOracle,
    oracle_g: Option<&dyn DerivativeOracle>,
    root_mark: Mark,
    x0: &[f64],
    t: f64,
    density: &LifetimeDensity,
    n: usize,
    solution: &dyn SolutionOracle,
    variant: TruncationVariant,
    cfg: &McConfig,
) -> Result<Estimate, EstimatorError> {
    let ctx = DifferentialContext::new(oracle_f, oracle_g, x0)?;
    let dim = match root_mark {
        Mark::Deriv { base: Base::G, .. } => oracle_g.ok_or(OracleError::Missing("g"))?.output_dim(),
        _ => oracle_f.output_dim(),
    };
    monte_carlo(cfg, dim, t, |rng| {
        let Some(sample) = accept(sample_tree(density, t, root_mark, rng, cfg.node_cap))? else {
            return Ok(None);
        };
        Ok(Some(truncated_functional(&sample, n, &ctx, density, solution, variant)?.value))
    })
}
