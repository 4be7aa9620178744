//! Lifetime densities for branch lifetimes.
//!
//! Two families are supported: the exponential law, and the piecewise law
//! made of a constant plateau on `[0, T]` followed by an exponential tail.
//! The piecewise family is what [`build_piecewise`] produces when the
//! exponential density alone cannot meet the integrability thresholds.

use rand::RngCore;
use thiserror::Error;

use crate::quadrature;
use crate::rng::open_unit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("invalid density parameter: {0}")]
    Parameter(String),
    #[error("horizon {requested} lies beyond the density horizon {horizon}")]
    BeyondHorizon { requested: f64, horizon: f64 },
    #[error("piecewise construction infeasible: {0}")]
    Infeasible(String),
}

/// Selects which of the two certification constants sets the plateau height.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauVariant {
    /// `C1(q;T) = (1 - e^{-2λT})^{-1/(2q)}`
    C1,
    /// `C2(q;T) = (sqrt(4 + e^{-2λT}) - e^{-λT})^{1/q} / (2^{1/q} (1 - e^{-λT})^{1/(2q)})`
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialParams {
    pub lambda: f64,
}

/// Plateau `plateau_height` on `[0, T]`, then `lambda2 * exp(-lambda1 t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseParams {
    pub plateau_height: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub t_end: f64,
    /// Slack below the certification constant; zero when built directly.
    pub epsilon: f64,
}

impl PiecewiseParams {
    /// Tail mass beyond the plateau, `(λ2/λ1) e^{-λ1 T}`.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.t_end * self.plateau_height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityKind {
    Exponential(ExponentialParams),
    Piecewise(PiecewiseParams),
}

/// An immutable lifetime law on `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeDensity {
    kind: DensityKind,
    horizon: f64,
}

impl LifetimeDensity {
    /// Exponential law with rate `lambda` and an unbounded horizon.
    pub fn exponential(lambda: f64) -> Result<Self, DensityError> {
        build_exponential(lambda)
    }

    /// Piecewise law with the given plateau and tail rate; the tail scale
    /// `λ2` is solved from normalisation. Horizon is the plateau end.
    pub fn piecewise(plateau_height: f64, lambda1: f64, t_end: f64) -> Result<Self, DensityError> {
        if !(plateau_height > 0.0 && plateau_height.is_finite()) {
            return Err(DensityError::Parameter(format!(
                "plateau height must be positive, got {plateau_height}"
            )));
        }
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            return Err(DensityError::Parameter(format!("lambda1 must be positive, got {lambda1}")));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(DensityError::Parameter(format!("plateau end must be positive, got {t_end}")));
        }
        let tail_mass = 1.0 - t_end * plateau_height;
        if tail_mass <= 0.0 {
            return Err(DensityError::Parameter(format!(
                "plateau carries mass {} >= 1",
                t_end * plateau_height
            )));
        }
        let lambda2 = lambda1 * tail_mass * (lambda1 * t_end).exp();
        Ok(Self {
            kind: DensityKind::Piecewise(PiecewiseParams {
                plateau_height,
                lambda1,
                lambda2,
                t_end,
                epsilon: 0.0,
            }),
            horizon: t_end,
        })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    /// The horizon `T` on which `ρ_*(T)` is defined.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Returns a copy with a different horizon.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self, DensityError> {
        if !(horizon >= 0.0) {
            return Err(DensityError::Parameter(format!("horizon must be >= 0, got {horizon}")));
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Density value `ρ(t)`; left-continuous at the plateau end.
    pub fn pdf(&self, t: f64) -> Result<f64, DensityError> {
        check_time(t)?;
        Ok(match self.kind {
            DensityKind::Exponential(p) => p.lambda * (-p.lambda * t).exp(),
            DensityKind::Piecewise(p) => {
                if t <= p.t_end {
                    p.plateau_height
                } else {
                    p.lambda1 * p.tail_mass() * (-p.lambda1 * (t - p.t_end)).exp()
                }
            }
        })
    }

    /// Tail `F̄(t) = P(lifetime > t)`.
    pub fn tail(&self, t: f64) -> Result<f64, DensityError> {
        check_time(t)?;
        Ok(match self.kind {
            DensityKind::Exponential(p) => (-p.lambda * t).exp(),
            DensityKind::Piecewise(p) => {
                if t <= p.t_end {
                    (p.t_end - t) * p.plateau_height + p.tail_mass()
                } else {
                    p.tail_mass() * (-p.lambda1 * (t - p.t_end)).exp()
                }
            }
        })
    }

    /// Inverse-transform draw from a uniform `u ∈ (0, 1)`.
    ///
    /// The exponential law inverts the tail (`t = -ln u / λ`); the piecewise
    /// law inverts its CDF.
    pub fn lifetime_from_uniform(&self, u: f64) -> f64 {
        match self.kind {
            DensityKind::Exponential(p) => -u.ln() / p.lambda,
            DensityKind::Piecewise(p) => {
                let plateau_mass = p.t_end * p.plateau_height;
                if u < plateau_mass {
                    u / p.plateau_height
                } else {
                    p.t_end + (p.tail_mass() / (1.0 - u)).ln() / p.lambda1
                }
            }
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lifetime_from_uniform(open_unit(rng))
    }

    /// `ρ_*(T) = inf_{s ∈ [0, T]} ρ(s)`.
    pub fn inf_on_horizon(&self, t_max: f64) -> Result<f64, DensityError> {
        check_time(t_max)?;
        if t_max > self.horizon {
            return Err(DensityError::BeyondHorizon {
                requested: t_max,
                horizon: self.horizon,
            });
        }
        match self.kind {
            // decreasing, so the infimum sits at the right end
            DensityKind::Exponential(_) => self.pdf(t_max),
            DensityKind::Piecewise(p) => {
                if t_max <= p.t_end {
                    Ok(p.plateau_height)
                } else {
                    Ok(p.plateau_height.min(self.pdf(t_max)?))
                }
            }
        }
    }

    /// Mean lifetime.
    pub fn mean(&self) -> f64 {
        match self.kind {
            DensityKind::Exponential(p) => 1.0 / p.lambda,
            DensityKind::Piecewise(p) => {
                let plateau = 0.5 * p.plateau_height * p.t_end * p.t_end;
                plateau + p.tail_mass() * (p.t_end + 1.0 / p.lambda1)
            }
        }
    }

    /// `∫_t^∞ ρ` by adaptive quadrature, split at the plateau end.
    pub fn numeric_tail(&self, t: f64) -> f64 {
        let pdf = |r: f64| self.pdf(r).unwrap_or(0.0);
        let tol = 1e-12;
        match self.kind {
            DensityKind::Piecewise(p) if t < p.t_end => {
                quadrature::integrate(pdf, t, p.t_end, tol)
                    + quadrature::integrate_to_infinity(pdf, p.t_end, tol)
            }
            _ => quadrature::integrate_to_infinity(pdf, t, tol),
        }
    }
}

fn check_time(t: f64) -> Result<(), DensityError> {
    if t < 0.0 || t.is_nan() {
        Err(DensityError::NegativeTime(t))
    } else {
        Ok(())
    }
}

pub fn build_exponential(lambda: f64) -> Result<LifetimeDensity, DensityError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DensityError::Parameter(format!("rate must be positive, got {lambda}")));
    }
    Ok(LifetimeDensity {
        kind: DensityKind::Exponential(ExponentialParams { lambda }),
        horizon: f64::INFINITY,
    })
}

/// `C1(q;T)` and `C2(q;T)` written in terms of `u = e^{-λT}`.
pub fn plateau_constant(variant: PlateauVariant, q: f64, u: f64) -> f64 {
    match variant {
        PlateauVariant::C1 => (1.0 - u * u).powf(-1.0 / (2.0 * q)),
        PlateauVariant::C2 => {
            ((4.0 + u * u).sqrt() - u).powf(1.0 / q)
                / (2f64.powf(1.0 / q) * (1.0 - u).powf(1.0 / (2.0 * q)))
        }
    }
}

/// Result of [`build_piecewise`]: the density and the feasibility margins
/// that were verified while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseBuild {
    pub density: LifetimeDensity,
    /// `C_i(q;T)`.
    pub constant: f64,
    /// `(1 - e^{-λT})(C_i - ε) - T`, non-negative on success.
    pub feasibility_margin: f64,
    /// `(λ2/λ1)e^{-λ1 T} - e^{-λT}`, non-negative on success.
    pub tail_margin: f64,
}

/// Builds the plateau-plus-exponential density with plateau `1/(C_i - ε)`
/// on `[0, T]` that dominates the exponential law of rate `lambda`.
///
/// The tail rate is fixed to `λ1 = λ` and `λ2` is solved from normalisation.
pub fn build_piecewise(
    q: f64,
    variant: PlateauVariant,
    t_end: f64,
    lambda: f64,
    epsilon: f64,
) -> Result<PiecewiseBuild, DensityError> {
    if !(q >= 1.0) {
        return Err(DensityError::Parameter(format!("moment order q must be >= 1, got {q}")));
    }
    if !(t_end > 0.0 && t_end < 1.0) {
        return Err(DensityError::Parameter(format!("T must lie in (0, 1), got {t_end}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DensityError::Parameter(format!("rate must be positive, got {lambda}")));
    }
    if !(epsilon > 0.0) {
        return Err(DensityError::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let u = (-lambda * t_end).exp();
    let constant = plateau_constant(variant, q, u);
    if epsilon >= constant {
        return Err(DensityError::Infeasible(format!(
            "epsilon {epsilon} >= C(q;T) = {constant}, plateau height would be non-positive"
        )));
    }
    let reduced = constant - epsilon;
    let feasibility_margin = (1.0 - u) * reduced - t_end;
    if feasibility_margin < 0.0 {
        return Err(DensityError::Infeasible(format!(
            "T <= (1 - exp(-lambda T)) (C - epsilon) violated: {t_end} > {}",
            (1.0 - u) * reduced
        )));
    }
    let mut density = LifetimeDensity::piecewise(1.0 / reduced, lambda, t_end)?;
    if let DensityKind::Piecewise(p) = &mut density.kind {
        p.epsilon = epsilon;
    }
    let tail_mass = match density.kind {
        DensityKind::Piecewise(p) => p.tail_mass(),
        DensityKind::Exponential(_) => unreachable!(),
    };
    Ok(PiecewiseBuild {
        density,
        constant,
        feasibility_margin,
        tail_margin: tail_mass - u,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceVerdict {
    pub pass: bool,
    /// First grid point where `F̄(r) < e^{-λr}`.
    pub first_violation: Option<f64>,
    pub r_max: f64,
}

/// Checks `F̄(r) >= e^{-λr}` on an equispaced grid of `[0, r_max]`.
///
/// `r_max` is three times the density horizon when finite, otherwise
/// `20/λ`. A relative slack of 1e-12 absorbs rounding at exact equality.
pub fn verify_dominance(density: &LifetimeDensity, lambda: f64, grid_points: usize) -> DominanceVerdict {
    let r_max = if density.horizon().is_finite() && density.horizon() > 0.0 {
        3.0 * density.horizon()
    } else {
        20.0 / lambda
    };
    let n = grid_points.max(2);
    for i in 0..n {
        let r = r_max * i as f64 / (n - 1) as f64;
        let tail = density.tail(r).unwrap_or(0.0);
        let reference = (-lambda * r).exp();
        if tail < reference * (1.0 - 1e-12) {
            return DominanceVerdict {
                pass: false,
                first_violation: Some(r),
                r_max,
            };
        }
    }
    DominanceVerdict {
        pass: true,
        first_violation: None,
        r_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_stream;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn exponential_pdf_values() {
        let d = build_exponential(1.0).unwrap();
        assert_eq!(d.pdf(0.0).unwrap(), 1.0);
        let d2 = build_exponential(2.0).unwrap();
        assert!(close(d2.pdf(0.5).unwrap(), 2.0 * (-1.0f64).exp(), 1e-15));
        assert!(close(d2.pdf(0.5).unwrap(), 0.7357589, 1e-7));
    }

    #[test]
    fn negative_time_is_rejected() {
        let d = build_exponential(1.0).unwrap();
        assert!(matches!(d.pdf(-0.1), Err(DensityError::NegativeTime(_))));
        assert!(matches!(d.tail(-1.0), Err(DensityError::NegativeTime(_))));
    }

    #[test]
    fn exponential_tail_values() {
        let d = build_exponential(1.0).unwrap();
        assert_eq!(d.tail(0.0).unwrap(), 1.0);
        assert!(close(d.tail(2f64.ln()).unwrap(), 0.5, 1e-15));
        assert!(close(d.tail(1.0).unwrap(), (-1.0f64).exp(), 1e-15));
    }

    #[test]
    fn build_exponential_rejects_degenerate_rate() {
        assert!(build_exponential(0.0).is_err());
        assert!(build_exponential(-1.0).is_err());
        assert!(build_exponential(f64::NAN).is_err());
    }

    #[test]
    fn exponential_normalises() {
        let d = build_exponential(3.5).unwrap();
        assert!(close(d.numeric_tail(0.0), 1.0, 1e-10));
    }

    #[test]
    fn piecewise_plateau_and_tail() {
        let d = LifetimeDensity::piecewise(1.25, 1.0, 0.4).unwrap();
        assert_eq!(d.pdf(0.1).unwrap(), 1.25);
        assert_eq!(d.pdf(0.4).unwrap(), 1.25);
        let p = match d.kind() {
            DensityKind::Piecewise(p) => *p,
            _ => unreachable!(),
        };
        let expected = p.lambda2 / p.lambda1 * (-p.lambda1 * p.t_end).exp();
        assert!(close(d.tail(0.4).unwrap(), expected, 1e-14));
        assert!(close(d.numeric_tail(0.0), 1.0, 1e-10));
    }

    #[test]
    fn inverse_cdf_examples() {
        let d = build_exponential(1.0).unwrap();
        assert!(close(d.lifetime_from_uniform((-1.0f64).exp()), 1.0, 1e-15));
        let pw = LifetimeDensity::piecewise(1.25, 1.0, 0.4).unwrap();
        // plateau mass 0.5
        assert!(close(pw.lifetime_from_uniform(0.3), 0.3 / 1.25, 1e-15));
        let t = pw.lifetime_from_uniform(0.8);
        assert!(t > 0.4);
        assert!(close(1.0 - pw.tail(t).unwrap(), 0.8, 1e-12));
    }

    #[test]
    fn exponential_sample_mean() {
        let d = build_exponential(2.0).unwrap();
        let mut rng = sample_stream(11, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        let sigma = 0.5 / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn inf_on_horizon_values() {
        let d = build_exponential(1.0).unwrap();
        assert!(close(d.inf_on_horizon(0.1).unwrap(), 0.9048374, 1e-7));
        let d2 = build_exponential(2.0).unwrap();
        assert_eq!(d2.inf_on_horizon(0.0).unwrap(), 2.0);
        let pw = LifetimeDensity::piecewise(1.25, 1.0, 0.4).unwrap();
        assert_eq!(pw.inf_on_horizon(0.4).unwrap(), 1.25);
        assert!(matches!(pw.inf_on_horizon(0.5), Err(DensityError::BeyondHorizon { .. })));
    }

    #[test]
    fn piecewise_build_normalises_and_dominates() {
        let b = build_piecewise(1.0, PlateauVariant::C1, 0.5, 2.0, 0.1).unwrap();
        assert!(close(b.density.numeric_tail(0.0), 1.0, 1e-10));
        assert!(b.feasibility_margin >= 0.0 && b.tail_margin >= 0.0);
        let t_end = 0.5;
        for i in 0..1000 {
            let r = 3.0 * t_end * i as f64 / 999.0;
            assert!(b.density.tail(r).unwrap() >= (-2.0 * r).exp() * (1.0 - 1e-12));
        }
        assert!(verify_dominance(&b.density, 2.0, 1000).pass);
    }

    #[test]
    fn piecewise_build_errors() {
        let u = (-2.0f64 * 0.5).exp();
        let c = plateau_constant(PlateauVariant::C1, 1.0, u);
        assert!(matches!(
            build_piecewise(1.0, PlateauVariant::C1, 0.5, 2.0, c),
            Err(DensityError::Infeasible(_))
        ));
        assert!(matches!(
            build_piecewise(1.0, PlateauVariant::C1, 0.5, 2.0, c + 1.0),
            Err(DensityError::Infeasible(_))
        ));
        // slack too large for the feasibility inequality
        let err = build_piecewise(1.0, PlateauVariant::C1, 0.5, 2.0, 0.5).unwrap_err();
        assert!(err.to_string().contains("T <= (1 - exp(-lambda T))"));
        assert!(build_piecewise(1.0, PlateauVariant::C2, 1.5, 2.0, 0.1).is_err());
    }

    #[test]
    fn dominance_examples() {
        let e1 = build_exponential(1.0).unwrap();
        let e2 = build_exponential(2.0).unwrap();
        assert!(verify_dominance(&e1, 1.0, 200).pass);
        assert!(verify_dominance(&e1, 2.0, 200).pass);
        let v = verify_dominance(&e2, 1.0, 200);
        assert!(!v.pass);
        assert!(v.first_violation.unwrap() > 0.0);
    }

    #[test]
    fn c2_example() {
        assert!(close(plateau_constant(PlateauVariant::C2, 1.0, 0.9), 2.0446832298, 1e-9));
    }

    fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn sampler_matches_cdf_ks() {
        let pw = build_piecewise(1.0, PlateauVariant::C2, 0.3, 1.5, 0.05).unwrap().density;
        for d in [build_exponential(1.3).unwrap(), pw] {
            let mut rng = sample_stream(5, 1);
            let draws: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
            let ks = ks_statistic(draws, |x| 1.0 - d.tail(x).unwrap());
            assert!(ks < 0.01, "ks {ks}");
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tail_matches_quadrature(lambda in 0.2f64..5.0, t in 0.0f64..3.0) {
                let d = build_exponential(lambda).unwrap();
                prop_assert!((d.tail(t).unwrap() - d.numeric_tail(t)).abs() < 1e-8);
            }

            #[test]
            fn piecewise_tail_matches_quadrature(
                t_end in 0.05f64..0.9, lambda in 0.5f64..4.0, eps in 0.001f64..0.05,
                frac in 0.0f64..3.0, c2 in proptest::bool::ANY,
            ) {
                let variant = if c2 { PlateauVariant::C2 } else { PlateauVariant::C1 };
                if let Ok(b) = build_piecewise(1.0, variant, t_end, lambda, eps) {
                    let t = frac * t_end;
                    prop_assert!((b.density.tail(t).unwrap() - b.density.numeric_tail(t)).abs() < 1e-8);
                    prop_assert!(verify_dominance(&b.density, lambda, 500).pass);
                }
            }

            #[test]
            fn tail_non_increasing(a in 0.0f64..2.0, b in 0.0f64..2.0) {
                let d = LifetimeDensity::piecewise(1.1, 0.8, 0.5).unwrap();
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(d.tail(lo).unwrap() >= d.tail(hi).unwrap());
            }
        }
    }
}
