//! Integrability certificates: the space-time integrals whose finiteness the
//! superposition, regularity and uniqueness arguments rely on, reduced to
//! radial quadrature.

use serde::{Deserialize, Serialize};

use super::{
    gauss_legendre, integrate_composite_gauss, integrate_dyadic_from_zero, integrate_upper_power_singularity,
    integrate_with_breaks, QuadratureResult, Tolerance,
};
use crate::error::{LeibensonError, Result};
use crate::field::CoefficientFrame;
use crate::params::{unit_sphere_area, LeibensonParams};

/// Upper bound on dyadic time panels toward `t = 0`.
const MAX_TIME_PANELS: usize = 400;

/// Finiteness certificates for one parameter set.
///
/// `superposition_rho` and `superposition_grad` are `∫₀^T∫ ρ w` and
/// `∫₀^T∫ |∇ρ| w` for the Barenblatt solution itself (`δ = 0`);
/// `coefficient_bound` and `weighted_gradient_bound` are the dominating
/// integrals of the regularity lemmas for the shifted curve `w_δ`.
/// Members are `None` when the corresponding regime gate fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub t_final: f64,
    pub delta: f64,
    pub tolerance: f64,
    pub superposition_rho: Option<QuadratureResult>,
    pub superposition_grad: Option<QuadratureResult>,
    pub coefficient_bound: Option<QuadratureResult>,
    pub weighted_gradient_bound: Option<QuadratureResult>,
    pub coefficient_bound_cutoffs: Option<CutoffSequence>,
    pub weighted_gradient_cutoffs: Option<CutoffSequence>,
    pub all_finite: bool,
}

/// Which regularity-lemma integrand to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LemmaIntegrand {
    /// `[1 + |x|^{−s} + (R_δ − |x|)^{−1}] w_δ`.
    CoefficientBound,
    /// `f₊^{γ−1}|x|^s + f₊^{1+γ}|x|^{−s}`.
    WeightedGradient,
}

/// Values of a certificate integral with the spatial domain cut back to
/// `[ε_k R_δ(t), (1 − ε_k) R_δ(t)]`, `ε_k = 2^{−k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSequence {
    pub epsilons: Vec<f64>,
    pub values: Vec<f64>,
    /// Geometric rate of the increments `values[k+1] − values[k]`.
    pub tail_ratio: f64,
    /// Sum of the geometric tail added to the last value.
    pub extrapolated_limit: f64,
}

/// Exponents `(e₁, e₂)` with `∫ρw dx ∝ t^{e₁}` and `∫|∇ρ|w dx ∝ t^{e₂}` for
/// the undelayed profile. Both exceed −1 whenever `β > 1`.
pub fn superposition_time_exponents(params: &LeibensonParams) -> (f64, f64) {
    let beta = params.beta();
    (-1.0 + 2.0 / beta, -1.0 + 1.0 / beta)
}

/// Spatial integrals `(∫ ρ w dx, ∫ |∇ρ| w dx)` at absolute time `τ > 0`.
pub fn superposition_inner(
    params: &LeibensonParams,
    tau: f64,
    tol: Tolerance,
) -> (QuadratureResult, QuadratureResult) {
    let frame = CoefficientFrame::new(params, tau);
    let radius = frame.support_radius();
    let omega = unit_sphere_area(params.d());
    let dm1 = params.d() as i32 - 1;
    let p = params.p();
    let rho_w = |r: f64| {
        let w = frame.density(r);
        if w == 0.0 {
            return 0.0;
        }
        omega * frame.point(r).rho * w * r.powi(dm1)
    };
    let grad_w = |r: f64| {
        let w = frame.density(r);
        if w == 0.0 {
            return 0.0;
        }
        omega * frame.rho_radial_derivative(r).abs() * w * r.powi(dm1)
    };
    let mut breaks = Vec::new();
    if p > 2.0 {
        // |∂_r ρ| has a kink where its two terms balance.
        let p_ratio = (p - 2.0) / (p - 1.0);
        let a = params.kappa() * tau.powf(-params.radial_exponent() / params.beta());
        let kink = (p_ratio * params.c_norm() / (2.0 * a)).powf(1.0 / params.radial_exponent());
        breaks.push(kink);
    }
    let first = integrate_with_breaks(rho_w, 0.0, radius, &[], tol);
    let second = integrate_with_breaks(grad_w, 0.0, radius, &breaks, tol);
    (first, second)
}

/// `∫₀^T∫ ρ w dx dt` and `∫₀^T∫ |∇ρ| w dx dt` for the Barenblatt solution
/// started from a point mass. `tol` is relative; the singular endpoint
/// `t = 0` is handled by dyadic panels with a geometric tail estimate.
pub fn certify_superposition(
    params: &LeibensonParams,
    t_final: f64,
    tol: f64,
) -> Result<(QuadratureResult, QuadratureResult)> {
    let regime = params.regime();
    if !regime.superposition_ok {
        return Err(LeibensonError::Regime { predicate: "p > (1+d)/d".into() });
    }
    check_time(t_final)?;
    check_tol(tol)?;
    if t_final == 0.0 {
        return Ok((QuadratureResult::zero(), QuadratureResult::zero()));
    }
    let inner_tol = Tolerance { abs: 0.0, rel: (0.1 * tol).max(1e-12) };
    let rule = gauss_legendre(64);
    let pick = |which: usize| {
        integrate_dyadic_from_zero(
            |t: f64| {
                let (a, b) = superposition_inner(params, t, inner_tol);
                let r = if which == 0 { a } else { b };
                (r.value, r.abs_error_estimate)
            },
            t_final,
            &rule,
            Tolerance::relative(tol),
            MAX_TIME_PANELS,
        )
        .result
    };
    Ok((pick(0), pick(1)))
}

fn check_time(t_final: f64) -> Result<()> {
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(LeibensonError::Domain(format!("T must be >= 0, got {t_final}")));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(LeibensonError::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Spatial integral of a regularity-lemma integrand at absolute time `τ`,
/// restricted to `[lo, hi]·R(τ)` with `0 ≤ lo < hi ≤ 1`.
fn lemma_inner(
    params: &LeibensonParams,
    which: LemmaIntegrand,
    tau: f64,
    lo: f64,
    hi: f64,
    tol: Tolerance,
) -> QuadratureResult {
    let frame = CoefficientFrame::new(params, tau);
    let radius = frame.support_radius();
    let s = params.radial_exponent();
    let gamma = params.gamma();
    let omega = unit_sphere_area(params.d());
    let dm1 = params.d() as i32 - 1;
    let c_norm = params.c_norm();
    let mass_scale = frame.density(0.0) / c_norm.powf(gamma);
    // Written in terms of the gap R − r: since a·R^s = C, the profile is
    // f = C(1 − (1 − gap/R)^s), evaluated without cancellation.
    let integrand = move |r: f64, gap: f64| -> f64 {
        if r <= 0.0 || gap <= 0.0 {
            return 0.0;
        }
        let f = -c_norm * (s * (-gap / radius).ln_1p()).exp_m1();
        if f <= 0.0 {
            return 0.0;
        }
        let rs = r.powf(s);
        let value = match which {
            LemmaIntegrand::CoefficientBound => (1.0 + 1.0 / rs + 1.0 / gap) * mass_scale * f.powf(gamma),
            LemmaIntegrand::WeightedGradient => f.powf(gamma - 1.0) * rs + f.powf(1.0 + gamma) / rs,
        };
        omega * value * r.powi(dm1)
    };
    let by_radius = |r: f64| integrand(r, radius - r);
    let a = lo * radius;
    let b = hi * radius;
    let mid = 0.5 * radius;
    if hi < 1.0 || a >= mid {
        return integrate_with_breaks(by_radius, a, b, &[mid], tol);
    }
    // Near the free boundary both integrands behave like (R − r)^{γ−1}.
    let inner = integrate_with_breaks(by_radius, a, mid, &[], tol);
    let outer = integrate_upper_power_singularity(integrand, mid, radius, gamma, tol);
    inner.combine(outer)
}

/// Dominating integrals of the regularity lemmas for the shifted curve,
/// `(coefficient_bound, weighted_gradient_bound)`. `tol` is relative.
pub fn certify_lemma_bounds(
    params: &LeibensonParams,
    delta: f64,
    t_final: f64,
    tol: f64,
) -> Result<(QuadratureResult, QuadratureResult)> {
    check_lemma_inputs(params, delta, t_final, tol)?;
    let one = |which| lemma_time_integral(params, which, delta, t_final, 0.0, 1.0, tol);
    Ok((one(LemmaIntegrand::CoefficientBound), one(LemmaIntegrand::WeightedGradient)))
}

fn check_lemma_inputs(params: &LeibensonParams, delta: f64, t_final: f64, tol: f64) -> Result<()> {
    if !params.regime().strong_solution_ok {
        return Err(LeibensonError::Regime {
            predicate: "d >= 2, p > d/(d-1), q > (|p-2|+d)/(d(p-1))".into(),
        });
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(LeibensonError::Domain(format!("delta must be > 0, got {delta}")));
    }
    check_time(t_final)?;
    check_tol(tol)
}

fn lemma_time_integral(
    params: &LeibensonParams,
    which: LemmaIntegrand,
    delta: f64,
    t_final: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> QuadratureResult {
    if t_final == 0.0 {
        return QuadratureResult::zero();
    }
    let inner_tol = Tolerance { abs: 0.0, rel: (0.1 * tol).max(1e-12) };
    let rule = gauss_legendre(64);
    let converged = std::cell::Cell::new(true);
    let inner_err = std::cell::Cell::new(0.0f64);
    let mut result = integrate_composite_gauss(
        |t: f64| {
            let r = lemma_inner(params, which, t + delta, lo, hi, inner_tol);
            if !r.is_finite_converged() {
                converged.set(false);
            }
            inner_err.set(inner_err.get().max(r.abs_error_estimate));
            r.value
        },
        0.0,
        t_final,
        &rule,
        Tolerance::relative(tol),
    );
    result.abs_error_estimate += inner_err.get() * t_final;
    result.converged = result.converged && converged.get() && result.abs_error_estimate <= tol * result.value.abs();
    result
}

/// Certificate integral on the nested cutoff domains
/// `[ε_k R_δ(t), (1 − ε_k) R_δ(t)]` for `k = 1..=levels`; a geometric decay
/// of the increments is the numerical meaning of finiteness.
pub fn lemma_cutoff_sequence(
    params: &LeibensonParams,
    which: LemmaIntegrand,
    delta: f64,
    t_final: f64,
    levels: usize,
) -> Result<CutoffSequence> {
    check_lemma_inputs(params, delta, t_final, 1e-10)?;
    if levels < 4 {
        return Err(LeibensonError::Domain("at least 4 cutoff levels are needed".into()));
    }
    if t_final == 0.0 {
        return Err(LeibensonError::Domain("cutoff sequence needs T > 0".into()));
    }
    let rule = gauss_legendre(64);
    let inner_tol = Tolerance { abs: 0.0, rel: 1e-13 };
    let epsilons: Vec<f64> = (1..=levels).map(|k| 0.5f64.powi(k as i32)).collect();
    // A fixed time rule keeps the increments free of time-quadrature noise.
    let values: Vec<f64> = epsilons
        .iter()
        .map(|&eps| {
            rule.composite(
                &|t: f64| lemma_inner(params, which, t + delta, eps, 1.0 - eps, inner_tol).value,
                0.0,
                t_final,
                2,
            )
        })
        .collect();
    let ratio = tail_ratio(&values);
    let last_increment = values[levels - 1] - values[levels - 2];
    let extrapolated_limit = if ratio < 1.0 {
        values[levels - 1] + last_increment * ratio / (1.0 - ratio)
    } else {
        f64::INFINITY
    };
    Ok(CutoffSequence { epsilons, values, tail_ratio: ratio, extrapolated_limit })
}

/// Largest ratio of successive increments over the last three increments of
/// a monotone sequence; `∞` if the increments do not shrink.
pub fn tail_ratio(values: &[f64]) -> f64 {
    if values.len() < 4 {
        return f64::INFINITY;
    }
    let increments: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let n = increments.len();
    let mut worst: f64 = 0.0;
    for k in n - 2..n {
        let (prev, next) = (increments[k - 1], increments[k]);
        if prev == 0.0 {
            if next != 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        worst = worst.max(next / prev);
    }
    worst
}

/// Runs every certificate whose regime gate passes.
pub fn certify_all(params: &LeibensonParams, delta: f64, t_final: f64, tol: f64) -> Result<CertificateReport> {
    check_time(t_final)?;
    check_tol(tol)?;
    let regime = params.regime();
    let (superposition_rho, superposition_grad) = if regime.superposition_ok {
        let (a, b) = certify_superposition(params, t_final, tol)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let strong = regime.strong_solution_ok && delta > 0.0;
    let (coefficient_bound, weighted_gradient_bound) = if strong {
        let (a, b) = certify_lemma_bounds(params, delta, t_final, tol)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let (coefficient_bound_cutoffs, weighted_gradient_cutoffs) = if strong && t_final > 0.0 {
        (
            Some(lemma_cutoff_sequence(params, LemmaIntegrand::CoefficientBound, delta, t_final, 24)?),
            Some(lemma_cutoff_sequence(params, LemmaIntegrand::WeightedGradient, delta, t_final, 24)?),
        )
    } else {
        (None, None)
    };
    let members = [&superposition_rho, &superposition_grad, &coefficient_bound, &weighted_gradient_bound];
    let all_finite = members.iter().any(|m| m.is_some())
        && members.iter().all(|m| m.map_or(true, |r| r.is_finite_converged()));
    Ok(CertificateReport {
        t_final,
        delta,
        tolerance: tol,
        superposition_rho,
        superposition_grad,
        coefficient_bound,
        weighted_gradient_bound,
        coefficient_bound_cutoffs,
        weighted_gradient_cutoffs,
        all_finite,
    })
}
