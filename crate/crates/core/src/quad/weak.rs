//! Weak-form residuals of the Barenblatt curve against radial test
//! functions, in the Leibenson form
//! `∫φw(t₁) − ∫φw(0) + ∫₀^{t₁}∫ |∇w^q|^{p−2}∇w^q·∇φ`
//! and in the Fokker–Planck form
//! `∫φw(t₁) − ∫φw(0) − ∫₀^{t₁}∫ q^{p−1}(ρΔφ + ∇ρ·∇φ) w`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{gauss_legendre, integrate_dyadic_from_zero, integrate_with_breaks, Tolerance};
use crate::error::{LeibensonError, Result};
use crate::field::CoefficientFrame;
use crate::params::{unit_sphere_area, LeibensonParams};

/// A radially symmetric `C²` test function with compact support, given by
/// its profile `φ(r)`.
pub trait RadialTestFunction: Send + Sync + fmt::Debug {
    fn value(&self, r: f64) -> f64;
    fn derivative(&self, r: f64) -> f64;
    fn second_derivative(&self, r: f64) -> f64;
    /// `φ'(r)/r`, which must stay bounded as `r → 0`.
    fn derivative_over_r(&self, r: f64) -> f64 {
        self.derivative(r) / r
    }
    /// Radial interval `[lo, hi]` containing the support.
    fn support(&self) -> (f64, f64);
    /// Radii where the profile is only `C²`; used as quadrature breakpoints.
    fn knots(&self) -> Vec<f64> {
        let (lo, hi) = self.support();
        vec![lo, hi]
    }

    /// `Δφ = φ'' + (d − 1)φ'/r`.
    fn laplacian(&self, d: usize, r: f64) -> f64 {
        self.second_derivative(r) + (d as f64 - 1.0) * self.derivative_over_r(r)
    }
}

/// The shipped family of test functions.
#[derive(Clone)]
pub enum TestFunction {
    Zero,
    /// `(1 − (r/a)²)³₊`.
    Bump { radius: f64 },
    /// `(1 − ((r − c)/h)²)³₊`, vanishing near the origin (`c > h`).
    Annulus { center: f64, half_width: f64 },
    /// Linear combination `Σ cᵢ φᵢ`.
    Sum(Vec<(f64, TestFunction)>),
    Custom(Arc<dyn RadialTestFunction>),
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Zero => write!(f, "Zero"),
            TestFunction::Bump { radius } => write!(f, "Bump(a={radius})"),
            TestFunction::Annulus { center, half_width } => write!(f, "Annulus(c={center}, h={half_width})"),
            TestFunction::Sum(terms) => f.debug_list().entries(terms.iter()).finish(),
            TestFunction::Custom(inner) => write!(f, "Custom({inner:?})"),
        }
    }
}

impl TestFunction {
    pub fn bump(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(LeibensonError::Domain(format!("bump radius must be positive, got {radius}")));
        }
        Ok(TestFunction::Bump { radius })
    }

    pub fn annulus(center: f64, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0 && center > half_width && center.is_finite()) {
            return Err(LeibensonError::Domain(format!(
                "annulus needs 0 < h < c, got c={center}, h={half_width}"
            )));
        }
        Ok(TestFunction::Annulus { center, half_width })
    }

    pub fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// `(1 − v²)³` and its first two derivatives in `v`, zero for `|v| ≥ 1`.
fn cubic_bump(v: f64) -> (f64, f64, f64) {
    if v.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let e = 1.0 - v * v;
    (e * e * e, -6.0 * v * e * e, -6.0 * e * e + 24.0 * v * v * e)
}

impl RadialTestFunction for TestFunction {
    fn value(&self, r: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Bump { radius } => cubic_bump(r / radius).0,
            TestFunction::Annulus { center, half_width } => cubic_bump((r - center) / half_width).0,
            TestFunction::Sum(terms) => terms.iter().map(|(c, t)| c * t.value(r)).sum(),
            TestFunction::Custom(inner) => inner.value(r),
        }
    }

    fn derivative(&self, r: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Bump { radius } => cubic_bump(r / radius).1 / radius,
            TestFunction::Annulus { center, half_width } => cubic_bump((r - center) / half_width).1 / half_width,
            TestFunction::Sum(terms) => terms.iter().map(|(c, t)| c * t.derivative(r)).sum(),
            TestFunction::Custom(inner) => inner.derivative(r),
        }
    }

    fn second_derivative(&self, r: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Bump { radius } => cubic_bump(r / radius).2 / (radius * radius),
            TestFunction::Annulus { center, half_width } => {
                cubic_bump((r - center) / half_width).2 / (half_width * half_width)
            }
            TestFunction::Sum(terms) => terms.iter().map(|(c, t)| c * t.second_derivative(r)).sum(),
            TestFunction::Custom(inner) => inner.second_derivative(r),
        }
    }

    fn derivative_over_r(&self, r: f64) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Bump { radius } => {
                let u = r / radius;
                if u >= 1.0 {
                    return 0.0;
                }
                let e = 1.0 - u * u;
                -6.0 * e * e / (radius * radius)
            }
            TestFunction::Annulus { .. } => {
                if r == 0.0 {
                    0.0
                } else {
                    self.derivative(r) / r
                }
            }
            TestFunction::Sum(terms) => terms.iter().map(|(c, t)| c * t.derivative_over_r(r)).sum(),
            TestFunction::Custom(inner) => inner.derivative_over_r(r),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            TestFunction::Zero => (0.0, 0.0),
            TestFunction::Bump { radius } => (0.0, *radius),
            TestFunction::Annulus { center, half_width } => (center - half_width, center + half_width),
            TestFunction::Sum(terms) => {
                let live: Vec<(f64, f64)> =
                    terms.iter().filter(|(c, _)| *c != 0.0).map(|(_, t)| t.support()).filter(|s| s.1 > s.0).collect();
                if live.is_empty() {
                    return (0.0, 0.0);
                }
                let lo = live.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
                let hi = live.iter().map(|s| s.1).fold(0.0, f64::max);
                (lo, hi)
            }
            TestFunction::Custom(inner) => inner.support(),
        }
    }

    fn knots(&self) -> Vec<f64> {
        match self {
            TestFunction::Zero => Vec::new(),
            TestFunction::Annulus { center, half_width } => vec![center - half_width, *center, center + half_width],
            TestFunction::Sum(terms) => terms.iter().flat_map(|(_, t)| t.knots()).collect(),
            TestFunction::Custom(inner) => inner.knots(),
            TestFunction::Bump { radius } => vec![*radius],
        }
    }
}

/// Reference test functions scaled to the initial support radius:
/// three centred bumps and two annuli.
pub fn shipped_test_functions(params: &LeibensonParams, delta: f64, t1: f64) -> Vec<TestFunction> {
    let frame_time = if delta > 0.0 { delta } else { t1 };
    let r0 = CoefficientFrame::new(params, frame_time).support_radius();
    vec![
        TestFunction::Bump { radius: 2.0 * r0 },
        TestFunction::Bump { radius: r0 },
        TestFunction::Bump { radius: 0.5 * r0 },
        TestFunction::Annulus { center: 0.6 * r0, half_width: 0.3 * r0 },
        TestFunction::Annulus { center: r0, half_width: 0.5 * r0 },
    ]
}

/// Signed residual of one weak formulation with its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub residual: f64,
    /// `∫₀^{t₁} |∫ (flux term) dx| dt`, the natural size of the time term.
    pub scale: f64,
    pub time_integral: f64,
    pub mass_end: f64,
    pub mass_start: f64,
    pub abs_error_estimate: f64,
    pub converged: bool,
}

impl WeakResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual.abs() / self.scale
        } else {
            self.residual.abs()
        }
    }
}

const SPACE_TOL: Tolerance = Tolerance { abs: 1e-300, rel: 1e-13 };
const TIME_TOL: f64 = 1e-12;

fn radial_integral<G: Fn(f64) -> f64>(g: G, hi: f64, phi: &dyn RadialTestFunction) -> (f64, f64, bool) {
    let (lo_phi, hi_phi) = phi.support();
    let hi = hi.min(hi_phi);
    if !(hi > lo_phi) {
        return (0.0, 0.0, true);
    }
    let knots = phi.knots();
    let res = integrate_with_breaks(g, lo_phi, hi, &knots, SPACE_TOL);
    (res.value, res.abs_error_estimate, res.is_finite_converged())
}

/// `∫ φ w(τ) dx`.
fn pairing(params: &LeibensonParams, phi: &dyn RadialTestFunction, tau: f64) -> (f64, f64, bool) {
    let frame = CoefficientFrame::new(params, tau);
    let omega = unit_sphere_area(params.d());
    let dm1 = params.d() as i32 - 1;
    radial_integral(|r| omega * phi.value(r) * frame.density(r) * r.powi(dm1), frame.support_radius(), phi)
}

#[derive(Clone, Copy)]
enum Form {
    Leibenson,
    FokkerPlanck,
}

/// Flux term `∫ (...) dx` at absolute time `τ` entering with a plus sign.
fn flux(params: &LeibensonParams, phi: &dyn RadialTestFunction, tau: f64, form: Form) -> (f64, f64, bool) {
    let frame = CoefficientFrame::new(params, tau);
    let omega = unit_sphere_area(params.d());
    let d = params.d();
    let dm1 = d as i32 - 1;
    let p = params.p();
    let q = params.q();
    let q_factor = params.coefficient_factor();
    match form {
        Form::Leibenson => radial_integral(
            |r| {
                let g = frame.power_radial_derivative(q, r);
                if g == 0.0 {
                    return 0.0;
                }
                omega * g.abs().powf(p - 2.0) * g * phi.derivative(r) * r.powi(dm1)
            },
            frame.support_radius(),
            phi,
        ),
        Form::FokkerPlanck => radial_integral(
            |r| {
                let w = frame.density(r);
                if w == 0.0 || r <= 0.0 {
                    return 0.0;
                }
                let rho = frame.point(r).rho;
                let drho = frame.rho_radial_derivative(r);
                -omega * q_factor * (rho * phi.laplacian(d, r) + drho * phi.derivative(r)) * w * r.powi(dm1)
            },
            frame.support_radius(),
            phi,
        ),
    }
}

fn weak_residual(
    params: &LeibensonParams,
    delta: f64,
    phi: &dyn RadialTestFunction,
    t1: f64,
    form: Form,
) -> Result<WeakResidual> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(LeibensonError::Domain(format!("delta must be >= 0, got {delta}")));
    }
    if !(t1.is_finite() && t1 > 0.0) {
        return Err(LeibensonError::Domain(format!("t1 must be positive, got {t1}")));
    }
    let (mass_end, err_end, ok_end) = pairing(params, phi, t1 + delta);
    // From a point mass the initial pairing is φ at the source.
    let (mass_start, err_start, ok_start) =
        if delta > 0.0 { pairing(params, phi, delta) } else { (phi.value(0.0), 0.0, true) };

    let rule = gauss_legendre(64);
    let inner_ok = std::cell::Cell::new(true);
    let value_at = |t: f64| {
        let (v, e, ok) = flux(params, phi, t + delta, form);
        if !ok {
            inner_ok.set(false);
        }
        (v, e)
    };
    let tol = Tolerance { abs: 1e-300, rel: TIME_TOL };
    let (time_integral, scale, time_err, time_ok) = if delta > 0.0 {
        // The flux loses smoothness in t where the support edge sweeps past a knot of φ.
        let unit_radius = CoefficientFrame::new(params, 1.0).support_radius();
        let breaks: Vec<f64> =
            phi.knots().iter().map(|k| (k / unit_radius).powf(params.beta()) - delta).collect();
        let signed = integrate_with_breaks(|t| value_at(t).0, 0.0, t1, &breaks, tol);
        // The scale only normalizes, so a loose tolerance suffices.
        let loose = Tolerance { abs: 1e-300, rel: 1e-6 };
        let absolute = integrate_with_breaks(|t| value_at(t).0.abs(), 0.0, t1, &breaks, loose);
        (signed.value, absolute.value, signed.abs_error_estimate, signed.converged)
    } else {
        let signed = integrate_dyadic_from_zero(value_at, t1, &rule, tol, 400).result;
        let absolute =
            integrate_dyadic_from_zero(|t| { let (v, e) = value_at(t); (v.abs(), e) }, t1, &rule, tol, 400).result;
        (signed.value, absolute.value, signed.abs_error_estimate, signed.converged)
    };
    let residual = mass_end - mass_start + time_integral;
    Ok(WeakResidual {
        residual,
        scale,
        time_integral,
        mass_end,
        mass_start,
        abs_error_estimate: err_end + err_start + time_err,
        converged: ok_end && ok_start && time_ok && inner_ok.get(),
    })
}

/// Residual of the Leibenson weak formulation for `w_δ` on `[0, t₁]`.
pub fn leibenson_weak_residual(
    params: &LeibensonParams,
    delta: f64,
    phi: &dyn RadialTestFunction,
    t1: f64,
) -> Result<WeakResidual> {
    weak_residual(params, delta, phi, t1, Form::Leibenson)
}

/// Residual of the Fokker–Planck weak formulation with the frozen
/// coefficients `q^{p−1}ρ_δ`, `q^{p−1}∇ρ_δ`.
pub fn fpe_weak_residual(
    params: &LeibensonParams,
    delta: f64,
    phi: &dyn RadialTestFunction,
    t1: f64,
) -> Result<WeakResidual> {
    weak_residual(params, delta, phi, t1, Form::FokkerPlanck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_derivatives_match_differences() {
        let phis = [TestFunction::bump(1.3).unwrap(), TestFunction::annulus(1.0, 0.4).unwrap()];
        for phi in &phis {
            for i in 1..50 {
                let r = 0.03 * i as f64;
                let h = 1e-5;
                if phi.knots().iter().any(|k| (r - k).abs() < 1e-3) {
                    continue;
                }
                let d1 = (phi.value(r + h) - phi.value(r - h)) / (2.0 * h);
                let d2 = (phi.derivative(r + h) - phi.derivative(r - h)) / (2.0 * h);
                assert!((d1 - phi.derivative(r)).abs() < 1e-8 * (1.0 + phi.derivative(r).abs()));
                assert!((d2 - phi.second_derivative(r)).abs() < 1e-7 * (1.0 + phi.second_derivative(r).abs()));
                assert!((phi.derivative_over_r(r) - phi.derivative(r) / r).abs() < 1e-10);
            }
        }
        // Bounded at the origin.
        assert_eq!(TestFunction::bump(2.0).unwrap().derivative_over_r(0.0), -1.5);
        assert!(TestFunction::annulus(0.5, 0.5).is_err());
    }

    #[test]
    fn zero_and_far_test_functions_give_zero() {
        let prm = LeibensonParams::new(2, 3.0, 1.0).unwrap();
        let r = leibenson_weak_residual(&prm, 0.5, &TestFunction::Zero, 0.5).unwrap();
        assert_eq!(r.residual, 0.0);
        let r = fpe_weak_residual(&prm, 0.5, &TestFunction::Zero, 0.5).unwrap();
        assert_eq!(r.residual, 0.0);
        let far = TestFunction::annulus(50.0, 1.0).unwrap();
        let r = fpe_weak_residual(&prm, 0.5, &far, 0.5).unwrap();
        assert_eq!((r.residual, r.scale), (0.0, 0.0));
    }

    #[test]
    fn reference_case_residuals_are_small() {
        let prm = LeibensonParams::new(2, 3.0, 1.0).unwrap();
        let r0 = CoefficientFrame::new(&prm, 0.5).support_radius();
        let phi = TestFunction::bump(2.0 * r0).unwrap();
        let fpe = fpe_weak_residual(&prm, 0.5, &phi, 0.5).unwrap();
        let leib = leibenson_weak_residual(&prm, 0.5, &phi, 0.5).unwrap();
        assert!(fpe.scale > 0.0);
        assert!(fpe.relative() <= 1e-6, "{fpe:?}");
        assert!(leib.relative() <= 1e-6, "{leib:?}");
        assert!((fpe.residual - leib.residual).abs() <= 1e-8 * fpe.scale);
    }

    #[test]
    fn point_mass_start() {
        let prm = LeibensonParams::new(2, 3.0, 1.0).unwrap();
        let phi = TestFunction::bump(3.0).unwrap();
        let fpe = fpe_weak_residual(&prm, 0.0, &phi, 0.5).unwrap();
        assert_eq!(fpe.mass_start, 1.0);
        assert!(fpe.relative() <= 1e-6, "{fpe:?}");
        let leib = leibenson_weak_residual(&prm, 0.0, &phi, 0.5).unwrap();
        assert!(leib.relative() <= 1e-6, "{leib:?}");
    }

    #[test]
    fn invariance_under_far_bumps() {
        let prm = LeibensonParams::new(3, 3.0, 2.0).unwrap();
        let base = TestFunction::bump(3.0).unwrap();
        let plus = TestFunction::Sum(vec![(1.0, base.clone()), (2.5, TestFunction::annulus(40.0, 2.0).unwrap())]);
        let a = fpe_weak_residual(&prm, 0.5, &base, 0.5).unwrap();
        let b = fpe_weak_residual(&prm, 0.5, &plus, 0.5).unwrap();
        assert!((a.residual - b.residual).abs() <= 1e-12 * a.scale.max(1e-300));
    }
}
