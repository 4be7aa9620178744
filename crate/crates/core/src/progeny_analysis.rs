//! Progeny laws of the dominating Yule chain, empirical progeny histograms,
//! the stochastic dominance check and the marked multiplicative-progeny bound.

use rayon::prelude::*;
use thiserror::Error;

use crate::branching_tree::{sample_marked_yule, sample_tree, Mark, TreeError};
use crate::estimator::{monte_carlo, Estimate, EstimatorError, McConfig};
use crate::lifetime_densities::LifetimeDensity;
use crate::rng::sample_stream;

/// Largest `n` compared by [`check_dominance`] unless told otherwise.
pub const DEFAULT_DOMINANCE_N_MAX: usize = 51;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgenyError {
    #[error("pgf diverges: z = {z} is at or beyond the radius {radius}")]
    Divergent { z: f64, radius: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Law of the total progeny `Ñ_t` of a Yule tree with rate `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgenyLaw {
    pub lambda: f64,
    pub t: f64,
}

impl ProgenyLaw {
    pub fn new(lambda: f64, t: f64) -> Result<Self, ProgenyError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ProgenyError::Parameter(format!("rate must be positive, got {lambda}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(ProgenyError::Parameter(format!("time must be >= 0, got {t}")));
        }
        Ok(Self { lambda, t })
    }

    /// `1 - e^{-λt}`.
    fn split(&self) -> f64 {
        -(-self.lambda * self.t).exp_m1()
    }

    pub fn pmf(&self, m: usize) -> f64 {
        yule_progeny_pmf(self.lambda, self.t, m)
    }

    /// `P(Ñ_t >= n) = (1 - e^{-λt})^{⌈(n-1)/2⌉}`.
    pub fn tail(&self, n: usize) -> f64 {
        if n <= 1 {
            1.0
        } else {
            self.split().powi((n / 2) as i32)
        }
    }

    /// Radius `(1 - e^{-λt})^{-1/2}` of the pgf.
    pub fn radius(&self) -> f64 {
        self.split().powf(-0.5)
    }

    pub fn pgf(&self, z: f64) -> Result<f64, ProgenyError> {
        yule_pgf(self.lambda, self.t, z)
    }
}

/// `e^{-λt}(1 - e^{-λt})^n` at `m = 2n + 1`, zero at even `m`.
pub fn yule_progeny_pmf(lambda: f64, t: f64, m: usize) -> f64 {
    if m % 2 == 0 {
        return 0.0;
    }
    let n = (m / 2) as i32;
    let u = (-lambda * t).exp();
    u * (-(-lambda * t).exp_m1()).powi(n)
}

/// `G_t(z) = z e^{-λt} / (1 - (1 - e^{-λt}) z^2)` for `|z|` below the radius.
pub fn yule_pgf(lambda: f64, t: f64, z: f64) -> Result<f64, ProgenyError> {
    let law = ProgenyLaw::new(lambda, t)?;
    let p = law.split();
    if z.abs() >= law.radius() {
        return Err(ProgenyError::Divergent { z, radius: law.radius() });
    }
    Ok(z * (-lambda * t).exp() / (1.0 - p * z * z))
}

/// Histogram of progeny counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalProgeny {
    /// `counts[m]` samples had exactly `m` branches.
    pub counts: Vec<u64>,
    pub n_samples: u64,
}

impl EmpiricalProgeny {
    pub fn pmf(&self, m: usize) -> f64 {
        self.counts.get(m).map_or(0.0, |&c| c as f64 / self.n_samples as f64)
    }

    /// `P(N >= n)`.
    pub fn tail(&self, n: usize) -> f64 {
        let above: u64 = self.counts.iter().skip(n).sum();
        above as f64 / self.n_samples as f64
    }

    pub fn max_count(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }

    /// Total-variation distance to the Yule law, including the analytic mass
    /// beyond the largest observed count.
    pub fn tv_distance(&self, law: &ProgenyLaw) -> f64 {
        let top = self.max_count();
        let body: f64 = (0..=top).map(|m| (self.pmf(m) - law.pmf(m)).abs()).sum();
        0.5 * (body + law.tail(top + 1))
    }
}

pub fn empirical_progeny(sizes: &[usize]) -> Result<EmpiricalProgeny, ProgenyError> {
    if sizes.is_empty() {
        return Err(ProgenyError::Parameter("need at least one sample".into()));
    }
    let top = sizes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; top + 1];
    for &s in sizes {
        counts[s] += 1;
    }
    Ok(EmpiricalProgeny {
        counts,
        n_samples: sizes.len() as u64,
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ProgenyError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ProgenyError::Parameter(format!("thread pool: {e}")))
}

/// `|K_t|` for `cfg.n_samples` trees; sample `i` uses stream `(seed, i)`.
pub fn sample_progeny(
    density: &LifetimeDensity,
    horizon: f64,
    root_mark: Mark,
    cfg: &McConfig,
) -> Result<Vec<usize>, ProgenyError> {
    pool(cfg.workers)?.install(|| {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_stream(cfg.seed, i as u64);
                Ok(sample_tree(density, horizon, root_mark, &mut rng, cfg.node_cap)?.len())
            })
            .collect()
    })
}

/// Progeny of marked Yule trees started from mark `j`.
pub fn sample_yule_progeny(lambda: f64, t: f64, j: usize, cfg: &McConfig) -> Result<Vec<usize>, ProgenyError> {
    pool(cfg.workers)?.install(|| {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_stream(cfg.seed, i as u64);
                Ok(sample_marked_yule(lambda, t, j, &mut rng, cfg.node_cap)?.total_progeny())
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceRow {
    pub n: usize,
    pub empirical_tail: f64,
    pub analytic_tail: f64,
    /// Three binomial standard errors at the analytic tail probability.
    pub band: f64,
}

impl DominanceRow {
    /// `analytic + band - empirical`; negative means a violation.
    pub fn margin(&self) -> f64 {
        self.analytic_tail + self.band - self.empirical_tail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub pass: bool,
    pub rows: Vec<DominanceRow>,
    pub worst: DominanceRow,
}

/// Pointwise comparison `P(N_t >= n) <= P(Ñ_t >= n) + 3·stderr` for
/// `1 <= n <= n_max`.
pub fn check_dominance(empirical: &EmpiricalProgeny, law: &ProgenyLaw, n_max: usize) -> DominanceReport {
    let samples = empirical.n_samples as f64;
    let rows: Vec<DominanceRow> = (1..=n_max.max(1))
        .map(|n| {
            let analytic = law.tail(n);
            DominanceRow {
                n,
                empirical_tail: empirical.tail(n),
                analytic_tail: analytic,
                band: 3.0 * (analytic * (1.0 - analytic) / samples).sqrt(),
            }
        })
        .collect();
    let worst = *rows
        .iter()
        .min_by(|a, b| a.margin().total_cmp(&b.margin()))
        .expect("at least one row");
    DominanceReport {
        pass: rows.iter().all(|r| r.margin() >= 0.0),
        rows,
        worst,
    }
}

/// `(m, empirical pmf, analytic pmf)` for `m = 0..=m_max`.
pub fn histogram_rows(empirical: &EmpiricalProgeny, law: &ProgenyLaw, m_max: usize) -> Vec<(usize, f64, f64)> {
    (0..=m_max).map(|m| (m, empirical.pmf(m), law.pmf(m))).collect()
}

/// Parameters of the marked-progeny bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkedProgenyParams {
    pub lambda: f64,
    pub t: f64,
    pub j: usize,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedProgenyReport {
    pub estimate: Estimate,
    /// `e^{-λt} σ(j) / (1 - (1 - e^{-λt}) γ δ σ(0))^{1 + (j-1)/γ}`.
    pub bound: f64,
}

impl MarkedProgenyReport {
    pub fn mean(&self) -> f64 {
        self.estimate.mean[0]
    }

    pub fn stderr(&self) -> f64 {
        self.estimate.stderr[0]
    }
}

/// Marks checked against the growth precondition beyond the starting mark.
const PRECONDITION_ORDERS: usize = 64;

pub fn marked_progeny_bound(params: &MarkedProgenyParams, sigma: &dyn Fn(usize) -> f64) -> Result<f64, ProgenyError> {
    let MarkedProgenyParams {
        lambda,
        t,
        j,
        gamma,
        delta,
    } = *params;
    if !(gamma > 1.0) {
        return Err(ProgenyError::Precondition(format!("gamma must exceed 1, got {gamma}")));
    }
    if !(delta > 0.0) {
        return Err(ProgenyError::Precondition(format!("delta must be positive, got {delta}")));
    }
    let law = ProgenyLaw::new(lambda, t)?;
    let p = law.split();
    let s0 = sigma(0);
    if !(s0 >= 0.0 && s0 * p * gamma * delta < 1.0) {
        return Err(ProgenyError::Precondition(format!(
            "sigma(0) = {s0} must lie in [0, 1/((1-exp(-lambda t)) gamma delta))"
        )));
    }
    for k in 1..=j + PRECONDITION_ORDERS {
        let s = sigma(k);
        let cap = (k as f64 - 2.0 + gamma) * delta;
        if !(s >= 0.0 && s < cap) {
            return Err(ProgenyError::Precondition(format!(
                "sigma({k}) = {s} must lie in [0, {cap})"
            )));
        }
    }
    let exponent = 1.0 + (j as f64 - 1.0) / gamma;
    Ok((-lambda * t).exp() * sigma(j) / (1.0 - p * gamma * delta * s0).powf(exponent))
}

/// Monte Carlo estimate of `E_j[∏_k σ(c_k)]` over the marked Yule tree,
/// next to its analytic bound.
pub fn marked_progeny_mean(
    params: &MarkedProgenyParams,
    sigma: &(dyn Fn(usize) -> f64 + Sync),
    cfg: &McConfig,
) -> Result<MarkedProgenyReport, ProgenyError> {
    let bound = marked_progeny_bound(params, sigma)?;
    let MarkedProgenyParams { lambda, t, j, .. } = *params;
    let estimate = monte_carlo(cfg, 1, t, |rng| {
        match sample_marked_yule(lambda, t, j, rng, cfg.node_cap) {
            Ok(tree) => Ok(Some(vec![tree.mark_product(sigma)])),
            Err(TreeError::Explosion { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    })?;
    Ok(MarkedProgenyReport { estimate, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime_densities::{build_exponential, build_piecewise, PlateauVariant};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn pmf_examples() {
        assert!(close(yule_progeny_pmf(1.0, LN2, 1), 0.5, 1e-15));
        assert!(close(yule_progeny_pmf(1.0, LN2, 3), 0.25, 1e-15));
        for m in [0, 2, 4, 10] {
            assert_eq!(yule_progeny_pmf(1.3, 0.7, m), 0.0);
        }
    }

    #[test]
    fn pgf_examples() {
        assert!(close(yule_pgf(1.0, LN2, 1.0).unwrap(), 1.0, 1e-15));
        assert_eq!(yule_pgf(1.0, LN2, 0.0).unwrap(), 0.0);
        assert!(close(yule_pgf(1.0, LN2, 1.2).unwrap(), 0.6 / 0.28, 1e-12));
        assert!(close(yule_pgf(1.0, LN2, 1.2).unwrap(), 2.142857, 1e-6));
        let radius = ProgenyLaw::new(1.0, LN2).unwrap().radius();
        assert!(matches!(yule_pgf(1.0, LN2, radius), Err(ProgenyError::Divergent { .. })));
        assert!(yule_pgf(1.0, LN2, 2.0).is_err());
    }

    #[test]
    fn tail_matches_pmf_sums() {
        let law = ProgenyLaw::new(0.8, 1.1).unwrap();
        for n in 0..30 {
            let direct: f64 = 1.0 - (0..n).map(|m| law.pmf(m)).sum::<f64>();
            assert!(close(law.tail(n), direct, 1e-13), "n={n}");
        }
    }

    #[test]
    fn empirical_point_masses() {
        let e = empirical_progeny(&[5, 5, 5]).unwrap();
        assert_eq!(e.pmf(5), 1.0);
        assert_eq!(e.tail(5), 1.0);
        assert_eq!(e.tail(6), 0.0);
        assert!(empirical_progeny(&[]).is_err());
        let d = build_exponential(1.0).unwrap();
        let sizes = sample_progeny(&d, 0.0, Mark::F, &McConfig::new(50, 3)).unwrap();
        assert!(sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn yule_histogram_matches_law() {
        let cfg = McConfig::new(20_000, 11).workers(2);
        let sizes = sample_yule_progeny(1.0, LN2, 0, &cfg).unwrap();
        let e = empirical_progeny(&sizes).unwrap();
        let law = ProgenyLaw::new(1.0, LN2).unwrap();
        assert!(e.tv_distance(&law) < 0.03);
        let rows = histogram_rows(&e, &law, 10);
        assert!(rows.iter().filter(|r| r.0 % 2 == 0).all(|r| r.1 == 0.0 && r.2 == 0.0));
    }

    #[test]
    fn dominance_self_and_reversed() {
        let law = ProgenyLaw::new(1.0, 0.8).unwrap();
        let cfg = McConfig::new(20_000, 5).workers(2);
        let same = sample_progeny(&build_exponential(1.0).unwrap(), 0.8, Mark::F, &cfg).unwrap();
        let r = check_dominance(&empirical_progeny(&same).unwrap(), &law, DEFAULT_DOMINANCE_N_MAX);
        assert!(r.pass, "{:?}", r.worst);
        let faster = sample_progeny(&build_exponential(2.0).unwrap(), 0.8, Mark::F, &cfg).unwrap();
        let r = check_dominance(&empirical_progeny(&faster).unwrap(), &law, DEFAULT_DOMINANCE_N_MAX);
        assert!(!r.pass);
    }

    #[test]
    fn dominance_for_piecewise_builds() {
        let cfg = McConfig::new(10_000, 9).workers(2);
        for (q, variant, t_end, lambda) in [
            (1.0, PlateauVariant::C1, 0.5, 2.0),
            (2.0, PlateauVariant::C2, 0.2, 2.0),
        ] {
            let b = build_piecewise(q, variant, t_end, lambda, 0.1).unwrap();
            let sizes = sample_progeny(&b.density, t_end, Mark::F, &cfg).unwrap();
            let law = ProgenyLaw::new(lambda, t_end).unwrap();
            let r = check_dominance(&empirical_progeny(&sizes).unwrap(), &law, DEFAULT_DOMINANCE_N_MAX);
            assert!(r.pass, "{:?}", r.worst);
        }
    }

    #[test]
    fn marked_progeny_at_zero_time() {
        let params = MarkedProgenyParams {
            lambda: 1.0,
            t: 0.0,
            j: 3,
            gamma: 2.0,
            delta: 0.4,
        };
        let sigma = |k: usize| 0.1 + 0.05 * k as f64;
        let r = marked_progeny_mean(&params, &sigma, &McConfig::new(100, 1)).unwrap();
        assert!(close(r.mean(), sigma(3), 1e-15));
        assert!(close(r.bound, sigma(3), 1e-15));
    }

    #[test]
    fn marked_progeny_constant_sigma_matches_pgf() {
        let params = MarkedProgenyParams {
            lambda: 1.0,
            t: 0.3,
            j: 2,
            gamma: 3.0,
            delta: 1.0,
        };
        let c = 1.2;
        let r = marked_progeny_mean(&params, &|_| c, &McConfig::new(20_000, 2).workers(2)).unwrap();
        let g = yule_pgf(1.0, 0.3, c).unwrap();
        assert!((r.mean() - g).abs() <= 4.0 * r.stderr());
        assert!(r.mean() <= r.bound + 3.0 * r.stderr());
    }

    #[test]
    fn marked_progeny_preconditions() {
        let params = MarkedProgenyParams {
            lambda: 1.0,
            t: 0.3,
            j: 1,
            gamma: 0.9,
            delta: 1.0,
        };
        assert!(matches!(
            marked_progeny_bound(&params, &|_| 0.5),
            Err(ProgenyError::Precondition(_))
        ));
        let params = MarkedProgenyParams { gamma: 2.0, ..params };
        assert!(marked_progeny_bound(&params, &|_| 5.0).is_err());
        assert!(marked_progeny_bound(&params, &|k| if k == 0 { 0.5 } else { 0.5 * k as f64 }).is_ok());
    }

    #[test]
    fn pmf_normalises() {
        for (lambda, t) in [(1.0, 3.0), (3.0, 1.0), (0.5, 0.1)] {
            let s: f64 = (0..10_000).map(|n| yule_progeny_pmf(lambda, t, 2 * n + 1)).sum();
            assert!(s > 1.0 - 1e-10);
        }
    }

    proptest! {
        #[test]
        fn pgf_equals_pmf_series(lambda in 0.1f64..3.0, t in 0.01f64..1.0, frac in -0.9f64..0.9) {
            let law = ProgenyLaw::new(lambda, t).unwrap();
            let z = frac * law.radius();
            let mut series = 0.0;
            for n in 0..20_000 {
                let m = 2 * n + 1;
                let term = law.pmf(m) * z.powi(m as i32);
                series += term;
                if n > 2 && term.abs() < 1e-20 {
                    break;
                }
            }
            let g = law.pgf(z).unwrap();
            prop_assert!((series - g).abs() <= 1e-10 * g.abs().max(1.0));
        }
    }
}
