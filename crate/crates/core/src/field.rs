//! Closed-form evaluation of the Barenblatt density, its gradient, the
//! frozen coefficients `ρ_δ = |∇w_δ|^{p−2} w_δ^{(p−1)(q−1)}`, `∇ρ_δ`, the
//! classical Hessian of `ρ_δ`, the SDE drift/diffusion, and the radial law
//! used for exact sampling.
//!
//! Two clocks appear here. Methods of the Barenblatt family (`profile_f`,
//! `density_w`, `support_radius`, `grad_w`) take the absolute time `τ > 0`
//! of the profile started from a point mass. Coefficient methods (`rho`,
//! `grad_rho`, `drift`, ...) take the simulation time `t ≥ 0` and evaluate
//! the shifted curve `w_δ(t) = w(t + δ)`.
//!
//! On the free boundary `|x| = R_δ(t)` every coefficient returns its value
//! from outside the support (zero). At the source point `∇ρ_δ = 0` by
//! convention.

use serde::{Deserialize, Serialize};

use crate::error::{LeibensonError, Result};
use crate::params::{unit_sphere_area, LeibensonParams};
use crate::quad::{self, Tolerance};

/// Time-frozen constants of the profile at absolute time `τ`. The particle
/// engine evaluates coefficients through this so the hot loop needs at most
/// one `powf` per particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientFrame {
    tau: f64,
    d: usize,
    c_norm: f64,
    /// `κ τ^{−s/β}`, so that `f = C − a·r^s`.
    a: f64,
    s: f64,
    gamma: f64,
    /// `(p−2)/(p−1)`.
    p_ratio: f64,
    c_rho: f64,
    radius: f64,
    q_factor: f64,
    /// `τ^{−d/β}`.
    mass_scale: f64,
    p_below_two: bool,
    p_is_two: bool,
    /// `4s` when it is a small integer, so `r^s` reduces to square roots.
    quarter_s: Option<i32>,
}

/// Radial coefficients at one point: `drift = multiplier · x`,
/// `diffusion = √(2 q^{p−1} ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCoefficients {
    pub rho: f64,
    pub drift_multiplier: f64,
    pub diffusion: f64,
}

impl PointCoefficients {
    const ZERO: PointCoefficients =
        PointCoefficients { rho: 0.0, drift_multiplier: 0.0, diffusion: 0.0 };
}

impl CoefficientFrame {
    pub fn new(params: &LeibensonParams, tau: f64) -> Self {
        let s = params.radial_exponent();
        let beta = params.beta();
        let p = params.p();
        CoefficientFrame {
            tau,
            d: params.d(),
            c_norm: params.c_norm(),
            a: params.kappa() * tau.powf(-s / beta),
            s,
            gamma: params.gamma(),
            p_ratio: (p - 2.0) / (p - 1.0),
            c_rho: params.c_rho(tau),
            radius: (params.c_norm() / params.kappa()).powf(1.0 / s) * tau.powf(1.0 / beta),
            q_factor: params.coefficient_factor(),
            mass_scale: tau.powf(-(params.d() as f64) / beta),
            p_below_two: p < 2.0,
            p_is_two: p == 2.0,
            quarter_s: {
                let k = (4.0 * s).round();
                (k == 4.0 * s && k <= 64.0).then_some(k as i32)
            },
        }
    }

    /// `r^s`, avoiding `powf` when `s` is a multiple of 1/4.
    #[inline]
    pub fn pow_s(&self, r: f64) -> f64 {
        match self.quarter_s {
            Some(k) => {
                let base = r.powi(k / 4);
                match k % 4 {
                    0 => base,
                    1 => base * r.sqrt().sqrt(),
                    2 => base * r.sqrt(),
                    _ => {
                        let h = r.sqrt();
                        base * h * h.sqrt()
                    }
                }
            }
            None => r.powf(self.s),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn support_radius(&self) -> f64 {
        self.radius
    }

    /// `f(τ, r) = C − κ(τ^{−1/β} r)^{p/(p−1)}`, possibly negative.
    pub fn profile(&self, r: f64) -> f64 {
        self.c_norm - self.a * self.pow_s(r)
    }

    pub fn density(&self, r: f64) -> f64 {
        if r >= self.radius {
            return 0.0;
        }
        let f = self.profile(r);
        if f <= 0.0 {
            0.0
        } else {
            self.mass_scale * f.powf(self.gamma)
        }
    }

    /// Signed radial derivative `∂_r w`; zero outside the support.
    pub fn density_radial_derivative(&self, r: f64) -> Result<f64> {
        if r > self.radius {
            return Ok(0.0);
        }
        let f = self.profile(r);
        if f < 0.0 {
            return Ok(0.0);
        }
        if f == 0.0 || r == self.radius {
            if self.gamma < 1.0 {
                return Err(LeibensonError::Boundary);
            }
            if self.gamma > 1.0 {
                return Ok(0.0);
            }
        }
        let df = -self.a * self.s * r.powf(self.s - 1.0);
        Ok(self.gamma * self.mass_scale * f.max(0.0).powf(self.gamma - 1.0) * df)
    }

    /// `∂_r(w^q)` computed from the closed form, so that no `0·∞` appears
    /// at the free boundary when `q < 1`.
    pub fn power_radial_derivative(&self, q: f64, r: f64) -> f64 {
        if r <= 0.0 || r >= self.radius {
            return 0.0;
        }
        let f = self.profile(r);
        if f <= 0.0 {
            return 0.0;
        }
        let df = -self.a * self.s * r.powf(self.s - 1.0);
        q * self.gamma * self.mass_scale.powf(q) * f.powf(self.gamma * q - 1.0) * df
    }

    /// `ρ_δ` as a function of the radius.
    pub fn rho(&self, r: f64) -> Result<f64> {
        if r >= self.radius {
            return Ok(0.0);
        }
        let f = self.profile(r);
        if f <= 0.0 {
            return Ok(0.0);
        }
        if r == 0.0 {
            return if self.p_below_two {
                Err(LeibensonError::Singularity("rho is unbounded at the source for p < 2".into()))
            } else if self.p_is_two {
                Ok(self.c_rho * f)
            } else {
                Ok(0.0)
            };
        }
        // r^{(p−2)/(p−1)} = r^{2−s}
        Ok(self.c_rho * f * r * r / self.pow_s(r))
    }

    /// Signed radial derivative `∂_r ρ_δ`; zero at the source and outside
    /// the open support ball.
    pub fn rho_radial_derivative(&self, r: f64) -> f64 {
        if r <= 0.0 || r >= self.radius {
            return 0.0;
        }
        let f = self.profile(r);
        if f <= 0.0 {
            return 0.0;
        }
        let rs = self.pow_s(r);
        self.c_rho * (self.p_ratio * f / rs - self.s * self.a) * r
    }

    /// All coefficients at radius `r` from one `powf`. At `r = 0` the drift
    /// vanishes by convention; callers clamp the radius when `p < 2`.
    #[inline]
    pub fn point(&self, r: f64) -> PointCoefficients {
        if r >= self.radius || r < 0.0 {
            return PointCoefficients::ZERO;
        }
        if r == 0.0 {
            if !self.p_is_two {
                return PointCoefficients::ZERO;
            }
            let rho = self.c_rho * self.c_norm;
            return PointCoefficients { rho, drift_multiplier: 0.0, diffusion: (2.0 * self.q_factor * rho).sqrt() };
        }
        let rs = self.pow_s(r);
        let f = self.c_norm - self.a * rs;
        if f <= 0.0 {
            return PointCoefficients::ZERO;
        }
        let rho = self.c_rho * f * r * r / rs;
        let drift_multiplier = self.q_factor * self.c_rho * (self.p_ratio * f / rs - self.s * self.a);
        PointCoefficients { rho, drift_multiplier, diffusion: (2.0 * self.q_factor * rho).sqrt() }
    }

    /// Classical Hessian of `ρ_δ` at the displacement `x` (row-major `d×d`).
    pub fn hessian(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        let r = norm(x);
        if r == 0.0 {
            return Err(LeibensonError::Singularity("Hessian undefined at the source".into()));
        }
        if r == self.radius {
            return Err(LeibensonError::Singularity("Hessian undefined on the free boundary".into()));
        }
        let mut h = vec![0.0; d * d];
        if r > self.radius {
            return Ok(h);
        }
        let f = self.profile(r);
        let rs = self.pow_s(r);
        let radial = -self.a * self.s * self.p_ratio / (r * r) - self.p_ratio * f * self.s / (rs * r * r);
        let diagonal = self.p_ratio * f / rs - self.a * self.s;
        for i in 0..d {
            for j in i..d {
                let mut v = radial * x[i] * x[j];
                if i == j {
                    v += diagonal;
                }
                h[i * d + j] = self.c_rho * v;
                h[j * d + i] = h[i * d + j];
            }
        }
        Ok(h)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Stateless evaluator of the Barenblatt family with time offset `δ` and
/// source point `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEvaluator {
    params: LeibensonParams,
    delta: f64,
    center: Vec<f64>,
}

impl FieldEvaluator {
    pub fn new(params: LeibensonParams, delta: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(LeibensonError::Domain(format!("delta must be >= 0, got {delta}")));
        }
        let center = vec![0.0; params.d()];
        Ok(FieldEvaluator { params, delta, center })
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        if center.len() != self.params.d() {
            return Err(LeibensonError::Domain(format!(
                "center has dimension {}, expected {}",
                center.len(),
                self.params.d()
            )));
        }
        self.center = center;
        Ok(self)
    }

    pub fn params(&self) -> &LeibensonParams {
        &self.params
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    fn displacement(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.params.d(), "point dimension mismatch");
        x.iter().zip(&self.center).map(|(a, b)| a - b).collect()
    }

    fn frame_at(&self, tau: f64) -> Result<CoefficientFrame> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LeibensonError::Domain(format!("time must be positive, got {tau}")));
        }
        Ok(CoefficientFrame::new(&self.params, tau))
    }

    /// Frame of the shifted curve at simulation time `t`.
    pub fn frame(&self, t: f64) -> Result<CoefficientFrame> {
        self.frame_at(t + self.delta)
    }

    pub fn profile_f(&self, tau: f64, x: &[f64]) -> f64 {
        CoefficientFrame::new(&self.params, tau).profile(norm(&self.displacement(x)))
    }

    /// `w^y(τ, x) = τ^{−d/β} [f(τ, x − y)]₊^γ`.
    pub fn density_w(&self, tau: f64, x: &[f64]) -> f64 {
        CoefficientFrame::new(&self.params, tau).density(norm(&self.displacement(x)))
    }

    /// `R(τ) = (C/κ)^{(p−1)/p} τ^{1/β}`.
    pub fn support_radius(&self, tau: f64) -> f64 {
        let p = &self.params;
        (p.c_norm() / p.kappa()).powf(1.0 / p.radial_exponent()) * tau.powf(1.0 / p.beta())
    }

    pub fn grad_w(&self, tau: f64, x: &[f64]) -> Result<Vec<f64>> {
        let frame = self.frame_at(tau)?;
        let dx = self.displacement(x);
        let r = norm(&dx);
        if r == 0.0 {
            return Ok(vec![0.0; dx.len()]);
        }
        let dr = frame.density_radial_derivative(r)?;
        Ok(dx.iter().map(|v| dr * v / r).collect())
    }

    /// `w_δ(t, x) = w(t + δ, x)`.
    pub fn density_delta(&self, t: f64, x: &[f64]) -> f64 {
        self.density_w(t + self.delta, x)
    }

    pub fn support_radius_delta(&self, t: f64) -> f64 {
        self.support_radius(t + self.delta)
    }

    /// `ρ_δ(t, x) = C_ρ(t+δ) f₊(t+δ, x) |x|^{(p−2)/(p−1)}`.
    pub fn rho(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.frame(t)?.rho(norm(&self.displacement(x)))
    }

    pub fn grad_rho(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let frame = self.frame(t)?;
        let dx = self.displacement(x);
        let r = norm(&dx);
        let dr = frame.rho_radial_derivative(r);
        if r == 0.0 {
            return Ok(vec![0.0; dx.len()]);
        }
        Ok(dx.iter().map(|v| dr * v / r).collect())
    }

    /// Absolutely continuous part of `D∇ρ_δ` (row-major `d×d`); the surface
    /// measure carried by the free boundary is not included.
    pub fn hessian_rho_classical(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.frame(t)?.hessian(&self.displacement(x))
    }

    /// `q^{p−1} ∇ρ_δ(t, x)`.
    pub fn drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let q_factor = self.params.coefficient_factor();
        let frame = self.frame(t)?;
        let dx = self.displacement(x);
        // Surface the p < 2 singularity the same way `rho` does.
        frame.rho(norm(&dx))?;
        let grad = self.grad_rho(t, x)?;
        Ok(grad.into_iter().map(|g| q_factor * g).collect())
    }

    /// `√(2 q^{p−1} ρ_δ(t, x))`, the scalar multiplying the identity.
    pub fn diffusion_scalar(&self, t: f64, x: &[f64]) -> Result<f64> {
        let rho = self.rho(t, x)?;
        Ok((2.0 * self.params.coefficient_factor() * rho).sqrt())
    }

    pub fn radial_law(&self, t: f64) -> Result<RadialLaw> {
        RadialLaw::new(&self.params, self.delta, t)
    }

    /// `∫ |x − y|² w_δ(t, x) dx` by radial quadrature.
    pub fn second_moment(&self, t: f64) -> Result<f64> {
        let frame = self.frame(t)?;
        let d = self.params.d() as f64;
        let omega = unit_sphere_area(self.params.d());
        let res = quad::integrate(
            |r: f64| frame.density(r) * r.powf(d + 1.0),
            0.0,
            frame.support_radius(),
            Tolerance { abs: 1e-300, rel: 1e-13 },
        );
        Ok(omega * res.value)
    }
}

/// Number of Chebyshev-spaced nodes of the radial CDF table.
pub const RADIAL_GRID_NODES: usize = 4096;

/// Cumulative radial law of `w_δ(t)` on `[0, R_δ(t)]`, tabulated on
/// Chebyshev nodes and interpolated by monotone cubic Hermite splines with
/// the exact density as slope data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialLaw {
    pub delta: f64,
    pub t: f64,
    radius: f64,
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    slopes: Vec<f64>,
}

impl RadialLaw {
    pub fn new(params: &LeibensonParams, delta: f64, t: f64) -> Result<Self> {
        let tau = t + delta;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LeibensonError::Domain(format!("t + delta must be positive, got {tau}")));
        }
        let frame = CoefficientFrame::new(params, tau);
        let radius = frame.support_radius();
        let omega = unit_sphere_area(params.d());
        let dm1 = params.d() as f64 - 1.0;
        let radial_density = |r: f64| omega * frame.density(r) * r.powf(dm1);
        let n = RADIAL_GRID_NODES;
        let mut nodes: Vec<f64> = (0..n)
            .map(|i| {
                let theta = std::f64::consts::PI * i as f64 / (n - 1) as f64;
                0.5 * radius * (1.0 - theta.cos())
            })
            .collect();
        nodes[0] = 0.0;
        nodes[n - 1] = radius;
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in nodes.windows(2) {
            let piece = quad::integrate(radial_density, w[0], w[1], Tolerance { abs: 1e-17, rel: 1e-12 });
            acc += piece.value;
            cdf.push(acc);
        }
        let mut slopes: Vec<f64> = nodes.iter().map(|&r| radial_density(r)).collect();
        limit_slopes(&nodes, &cdf, &mut slopes);
        Ok(RadialLaw { delta, t, radius, nodes, cdf, slopes })
    }

    pub fn support_radius(&self) -> f64 {
        self.radius
    }

    /// Mass of the tabulated law, i.e. the raw table value at `R_δ(t)`.
    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().expect("non-empty table")
    }

    /// `P(|X| ≤ r)` for `X ~ w_δ(t, x) dx`.
    pub fn cdf(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(LeibensonError::Range(format!("radius must be >= 0, got {r}")));
        }
        Ok(self.cdf_unchecked(r))
    }

    pub(crate) fn cdf_unchecked(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.radius {
            return self.total_mass().min(1.0);
        }
        let k = self.nodes.partition_point(|&x| x <= r).clamp(1, self.nodes.len() - 1) - 1;
        self.hermite(k, r).clamp(0.0, 1.0)
    }

    fn hermite(&self, k: usize, r: f64) -> f64 {
        let (x0, x1) = (self.nodes[k], self.nodes[k + 1]);
        let h = x1 - x0;
        let u = (r - x0) / h;
        let (y0, y1) = (self.cdf[k], self.cdf[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        (2.0 * u3 - 3.0 * u2 + 1.0) * y0
            + (u3 - 2.0 * u2 + u) * m0
            + (-2.0 * u3 + 3.0 * u2) * y1
            + (u3 - u2) * m1
    }

    fn hermite_slope(&self, k: usize, r: f64) -> f64 {
        let (x0, x1) = (self.nodes[k], self.nodes[k + 1]);
        let h = x1 - x0;
        let u = (r - x0) / h;
        let (y0, y1) = (self.cdf[k], self.cdf[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let u2 = u * u;
        ((6.0 * u2 - 6.0 * u) * y0
            + (3.0 * u2 - 4.0 * u + 1.0) * m0
            + (-6.0 * u2 + 6.0 * u) * y1
            + (3.0 * u2 - 2.0 * u) * m1)
            / h
    }

    /// Inverse CDF: the radius `r` with `cdf(r) = u`.
    pub fn sample_radius(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(LeibensonError::Range(format!("u must lie in (0, 1), got {u}")));
        }
        Ok(self.inverse_unchecked(u))
    }

    pub(crate) fn inverse_unchecked(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let k = self.cdf.partition_point(|&c| c <= u);
        if k >= n {
            return self.radius;
        }
        let k = k.max(1) - 1;
        let (mut lo, mut hi) = (self.nodes[k], self.nodes[k + 1]);
        let (c0, c1) = (self.cdf[k], self.cdf[k + 1]);
        // Linear start, then safeguarded Newton on the monotone interpolant.
        let mut r = if c1 > c0 { lo + (hi - lo) * (u - c0) / (c1 - c0) } else { lo };
        for _ in 0..60 {
            let g = self.hermite(k, r) - u;
            if g > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let slope = self.hermite_slope(k, r);
            let mut next = if slope > 0.0 { r - g / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-15 * r.abs().max(f64::MIN_POSITIVE) {
                r = next;
                break;
            }
            r = next;
        }
        r
    }
}

/// Fritsch–Carlson limiter so the Hermite interpolant stays monotone.
fn limit_slopes(x: &[f64], y: &[f64], m: &mut [f64]) {
    for k in 0..x.len() - 1 {
        let secant = (y[k + 1] - y[k]) / (x[k + 1] - x[k]);
        if secant <= 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let alpha = m[k] / secant;
        let beta = m[k + 1] / secant;
        let norm2 = alpha * alpha + beta * beta;
        if norm2 > 9.0 {
            let tau = 3.0 / norm2.sqrt();
            m[k] = tau * alpha * secant;
            m[k + 1] = tau * beta * secant;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::function::beta::beta_reg;

    fn eval(d: usize, p: f64, q: f64, delta: f64) -> FieldEvaluator {
        FieldEvaluator::new(LeibensonParams::new(d, p, q).unwrap(), delta).unwrap()
    }

    fn random_interior(rng: &mut ChaCha8Rng, d: usize, radius: f64, lo: f64, hi: f64) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
            let r = norm(&x);
            if r > lo * radius && r < hi * radius {
                return x;
            }
        }
    }

    #[test]
    fn profile_examples() {
        let e = eval(2, 3.0, 1.0, 0.0);
        let c = e.params().c_norm();
        assert_eq!(e.profile_f(1.0, &[0.0, 0.0]), c);
        let r1 = e.support_radius(1.0);
        assert!(e.profile_f(1.0, &[r1, 0.0]).abs() < 1e-15);
        assert_relative_eq!(e.profile_f(1.0, &[1.0, 0.0]), c - e.params().kappa(), max_relative = 1e-15);
        // The quoted reference values carry about four significant digits.
        assert_relative_eq!(e.profile_f(1.0, &[1.0, 0.0]), 0.34887, max_relative = 1e-4);
        assert_relative_eq!(e.density_w(1.0, &[0.0, 0.0]), c * c, max_relative = 1e-15);
        assert_relative_eq!(e.density_w(1.0, &[0.0, 0.0]), 0.24794, max_relative = 1e-4);
        assert_relative_eq!(r1, 2.2345, max_relative = 5e-5);
        assert_eq!(e.density_w(1.0, &[r1, 0.0]), 0.0);
        assert_eq!(e.density_w(1.0, &[r1 * 1.01, 0.0]), 0.0);
    }

    #[test]
    fn support_radius_scaling_and_shift() {
        let e = eval(3, 3.0, 2.0, 0.7);
        let beta = e.params().beta();
        for &t in &[0.1, 0.5, 2.0, 9.0] {
            assert_relative_eq!(e.support_radius(t) / e.support_radius(1.0), t.powf(1.0 / beta), max_relative = 1e-14);
            assert_eq!(e.support_radius_delta(t), e.support_radius(t + 0.7));
        }
    }

    #[test]
    fn self_similar_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, p, q) in &[(1, 3.0, 1.0), (2, 3.0, 1.0), (3, 1.8, 3.0)] {
            let e = eval(d, p, q, 0.0);
            let beta = e.params().beta();
            for _ in 0..200 {
                let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let t: f64 = rng.random_range(0.05..20.0);
                let scaled: Vec<f64> = x0.iter().map(|v| v * t.powf(1.0 / beta)).collect();
                let lhs = e.density_w(t, &scaled);
                let rhs = t.powf(-(d as f64) / beta) * e.density_w(1.0, &x0);
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300), "{lhs} vs {rhs}");
            }
            let x0 = vec![0.3; d];
            let x4: Vec<f64> = x0.iter().map(|v| v * 4f64.powf(1.0 / beta)).collect();
            assert_relative_eq!(
                e.density_w(4.0, &x4),
                4f64.powf(-(d as f64) / beta) * e.density_w(1.0, &x0),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn translation_covariance_is_exact() {
        let base = eval(2, 3.0, 1.0, 0.5);
        let y = vec![0.25, -1.5];
        let moved = base.clone().with_center(y.clone()).unwrap();
        let x = vec![0.75, -0.5];
        let shifted: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert_eq!(moved.density_w(1.3, &x), base.density_w(1.3, &shifted));
        assert_eq!(moved.rho(0.2, &x).unwrap(), base.rho(0.2, &shifted).unwrap());
        assert_eq!(moved.grad_rho(0.2, &x).unwrap(), base.grad_rho(0.2, &shifted).unwrap());
        assert_eq!(moved.drift(0.2, &x).unwrap(), base.drift(0.2, &shifted).unwrap());
    }

    #[test]
    fn grad_w_edge_cases() {
        let e = eval(2, 3.0, 1.0, 0.0);
        assert_eq!(e.grad_w(1.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let r = e.support_radius(1.0);
        assert_eq!(e.grad_w(1.0, &[2.0 * r, 0.0]).unwrap(), vec![0.0, 0.0]);
        // γ = 2/3 < 1: gradient blows up at the free boundary.
        let e = eval(3, 3.0, 2.0, 0.0);
        assert!(e.params().gamma() < 1.0);
        let r = e.support_radius(1.0);
        let on = [r, 0.0, 0.0];
        if e.profile_f(1.0, &on) == 0.0 {
            assert!(matches!(e.grad_w(1.0, &on), Err(LeibensonError::Boundary)));
        }
    }

    #[test]
    fn grad_w_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(d, p, q) in &[(2, 3.0, 1.0), (2, 2.0, 2.0), (3, 3.0, 2.0), (3, 1.8, 3.0)] {
            let e = eval(d, p, q, 0.0);
            let tau = 1.3;
            let radius = e.support_radius(tau);
            for _ in 0..100 {
                let x = random_interior(&mut rng, d, radius, 0.05, 0.95);
                let g = e.grad_w(tau, &x).unwrap();
                let r = norm(&x);
                // Radial symmetry: parallel to x with non-positive radial component.
                let radial: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / r;
                assert!(radial <= 0.0);
                for i in 0..d {
                    let h = 1e-6 * radius;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (e.density_w(tau, &xp) - e.density_w(tau, &xm)) / (2.0 * h);
                    let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    assert!((fd - g[i]).abs() <= 1e-6 * scale, "d={d} p={p}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn rho_matches_composition_of_evaluators() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(d, p, q) in &[(2, 3.0, 1.0), (2, 2.0, 2.0), (3, 3.0, 2.0), (3, 1.8, 3.0), (2, 4.0, 0.5)] {
            let e = eval(d, p, q, 0.5);
            let t = 0.3;
            let tau = t + e.delta();
            let radius = e.support_radius_delta(t);
            for _ in 0..100 {
                let x = random_interior(&mut rng, d, radius, 0.01, 0.99);
                let rho = e.rho(t, &x).unwrap();
                let gw = norm(&e.grad_w(tau, &x).unwrap());
                let w = e.density_w(tau, &x);
                let oracle = gw.powf(p - 2.0) * w.powf((p - 1.0) * (q - 1.0));
                assert!((rho - oracle).abs() <= 1e-10 * oracle, "{rho} vs {oracle}");
            }
        }
    }

    #[test]
    fn rho_edge_cases() {
        let e = eval(2, 3.0, 1.0, 1.0);
        let r = e.support_radius_delta(0.0);
        assert_eq!(e.rho(0.0, &[r, 0.0]).unwrap(), 0.0);
        assert_eq!(e.rho(0.0, &[0.0, 1.1 * r]).unwrap(), 0.0);
        assert_eq!(e.rho(0.0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(e.grad_rho(0.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(e.grad_rho(0.0, &[1.1 * r, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(e.grad_rho(0.0, &[r, 0.0]).unwrap(), vec![0.0, 0.0]);

        let fast = eval(3, 1.8, 3.0, 1.0);
        assert!(matches!(fast.rho(0.0, &[0.0; 3]), Err(LeibensonError::Singularity(_))));
        assert!(matches!(fast.drift(0.0, &[0.0; 3]), Err(LeibensonError::Singularity(_))));
        assert_eq!(fast.grad_rho(0.0, &[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn grad_rho_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(d, p, q) in &[(2, 3.0, 1.0), (2, 2.0, 2.0), (3, 3.0, 2.0), (3, 1.8, 3.0)] {
            let e = eval(d, p, q, 0.5);
            let t = 0.25;
            let radius = e.support_radius_delta(t);
            for _ in 0..100 {
                let x = random_interior(&mut rng, d, radius, 0.05, 0.95);
                let g = e.grad_rho(t, &x).unwrap();
                let scale = norm(&g);
                for i in 0..d {
                    let h = 1e-6 * radius;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (e.rho(t, &xp).unwrap() - e.rho(t, &xm).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-6 * scale, "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn hessian_symmetric_and_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for &(d, p, q) in &[(2, 3.0, 1.0), (2, 2.0, 2.0), (3, 3.0, 2.0), (3, 1.8, 3.0)] {
            let e = eval(d, p, q, 0.5);
            let t = 0.25;
            let radius = e.support_radius_delta(t);
            for _ in 0..100 {
                let x = random_interior(&mut rng, d, radius, 0.05, 0.95);
                let h = e.hessian_rho_classical(t, &x).unwrap();
                let scale = h.iter().map(|v| v.abs()).fold(0.0, f64::max);
                for i in 0..d {
                    for j in 0..d {
                        assert_eq!(h[i * d + j], h[j * d + i]);
                    }
                    let step = 1e-6 * radius;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += step;
                    xm[i] -= step;
                    let gp = e.grad_rho(t, &xp).unwrap();
                    let gm = e.grad_rho(t, &xm).unwrap();
                    for j in 0..d {
                        let fd = (gp[j] - gm[j]) / (2.0 * step);
                        assert!((fd - h[i * d + j]).abs() <= 1e-5 * scale, "{fd} vs {}", h[i * d + j]);
                    }
                }
            }
            let outside = vec![1.5 * radius; d];
            assert!(e.hessian_rho_classical(t, &outside).unwrap().iter().all(|v| *v == 0.0));
            assert!(e.hessian_rho_classical(t, &vec![0.0; d]).is_err());
        }
    }

    #[test]
    fn drift_and_diffusion_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for &(d, p, q) in &[(2, 3.0, 1.0), (3, 3.0, 2.0), (3, 1.8, 3.0)] {
            let e = eval(d, p, q, 1.0);
            let qf = q.powf(p - 1.0);
            let radius = e.support_radius_delta(0.5);
            for _ in 0..50 {
                let x = random_interior(&mut rng, d, radius, 0.01, 0.99);
                let rho = e.rho(0.5, &x).unwrap();
                let sigma = e.diffusion_scalar(0.5, &x).unwrap();
                assert!((sigma * sigma / 2.0 - qf * rho).abs() <= 1e-15 * qf * rho * 4.0);
                let drift = e.drift(0.5, &x).unwrap();
                let grad = e.grad_rho(0.5, &x).unwrap();
                for i in 0..d {
                    assert_eq!(drift[i], qf * grad[i]);
                }
            }
            let outside = vec![radius; d];
            assert!(e.drift(0.5, &outside).unwrap().iter().all(|v| *v == 0.0));
            assert_eq!(e.diffusion_scalar(0.5, &outside).unwrap(), 0.0);
        }
        // q = 1: drift is exactly ∇ρ.
        let e = eval(2, 3.0, 1.0, 1.0);
        assert_eq!(e.drift(0.0, &[0.4, 0.3]).unwrap(), e.grad_rho(0.0, &[0.4, 0.3]).unwrap());
    }

    #[test]
    fn frame_point_coefficients_agree_with_evaluators() {
        let e = eval(2, 3.0, 1.0, 1.0);
        let frame = e.frame(0.4).unwrap();
        for &r in &[0.1, 0.7, 1.5, 2.2] {
            let x = [r * 0.6, r * 0.8];
            let pc = frame.point(r);
            let drift = e.drift(0.4, &x).unwrap();
            assert_relative_eq!(pc.rho, e.rho(0.4, &x).unwrap(), max_relative = 1e-14);
            assert_relative_eq!(pc.drift_multiplier * x[0], drift[0], max_relative = 1e-13);
            assert_relative_eq!(pc.diffusion, e.diffusion_scalar(0.4, &x).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn chain_rule_for_powers_of_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &(d, p, q) in &[(2, 3.0, 1.0), (2, 2.0, 2.0), (3, 3.0, 2.0), (2, 4.0, 0.5)] {
            let e = eval(d, p, q, 0.0);
            let tau = 0.8;
            let radius = e.support_radius(tau);
            for _ in 0..100 {
                let x = random_interior(&mut rng, d, radius, 0.05, 0.95);
                let w = e.density_w(tau, &x);
                let gw = e.grad_w(tau, &x).unwrap();
                for i in 0..d {
                    let h = 1e-6 * radius;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    // ∇(w^q) by differences of w^q, against q w^{q−1} ∇w.
                    let fd = (e.density_w(tau, &xp).powf(q) - e.density_w(tau, &xm).powf(q)) / (2.0 * h);
                    let chain = q * w.powf(q - 1.0) * gw[i];
                    let scale = q * w.powf(q - 1.0) * norm(&gw);
                    assert!((fd - chain).abs() <= 1e-6 * scale, "{fd} vs {chain}");
                }
            }
        }
    }

    #[test]
    fn exponent_identity_collapses_powers_of_f() {
        for &(p, q) in &[(3.0, 1.0), (2.0, 2.0), (3.0, 2.0), (1.8, 3.0), (4.0, 0.5)] {
            let params = LeibensonParams::new(2, p, q).unwrap();
            let g = params.gamma();
            let e = (g - 1.0) * (p - 2.0) + g * (q - 1.0) * (p - 1.0);
            for &f in &[0.01, 0.3, 0.9] {
                assert_relative_eq!(f64::powf(f, e), f, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn radial_law_against_incomplete_beta() {
        for &(d, p, q, delta, t) in &[(2, 3.0, 1.0, 1.0, 0.0), (3, 3.0, 2.0, 0.5, 0.5), (3, 1.8, 3.0, 1.0, 1.0), (1, 3.0, 1.0, 1.0, 0.0)] {
            let params = LeibensonParams::new(d, p, q).unwrap();
            let law = RadialLaw::new(&params, delta, t).unwrap();
            assert!((law.total_mass() - 1.0).abs() <= 1e-8, "mass {}", law.total_mass());
            assert_eq!(law.cdf(0.0).unwrap(), 0.0);
            let radius = law.support_radius();
            let s = params.radial_exponent();
            let shape_a = d as f64 / s;
            let shape_b = params.gamma() + 1.0;
            for i in 1..200 {
                let r = radius * i as f64 / 200.0;
                // u = κ(τ^{−1/β} r)^s / C maps the law onto Beta(d/s, γ+1).
                let u = params.kappa() * (r * (t + delta).powf(-1.0 / params.beta())).powf(s) / params.c_norm();
                let oracle = beta_reg(shape_a, shape_b, u.min(1.0));
                assert!((law.cdf(r).unwrap() - oracle).abs() < 1e-9, "r={r}");
            }
        }
    }

    #[test]
    fn radial_law_round_trip() {
        let params = LeibensonParams::new(2, 3.0, 1.0).unwrap();
        let law = RadialLaw::new(&params, 1.0, 0.0).unwrap();
        for i in 1..=9 {
            let u = i as f64 / 10.0;
            let r = law.sample_radius(u).unwrap();
            assert!((law.cdf(r).unwrap() - u).abs() <= 1e-7);
            assert!(r <= law.support_radius());
        }
        assert!(law.sample_radius(0.0).is_err());
        assert!(law.sample_radius(1.0).is_err());
        assert!(law.cdf(-1.0).is_err());
    }

    #[test]
    fn mass_is_one_across_times() {
        for &(d, p, q) in &[(1, 2.5, 1.0), (2, 3.0, 1.0), (3, 1.8, 3.0)] {
            let params = LeibensonParams::new(d, p, q).unwrap();
            for &tau in &[0.5, 1.0, 2.0] {
                let frame = CoefficientFrame::new(&params, tau);
                let omega = unit_sphere_area(d);
                let m = quad::integrate_radial(
                    |r: f64| omega * frame.density(r) * r.powi(d as i32 - 1),
                    0.0,
                    frame.support_radius(),
                    1e-10,
                );
                assert!((m.value - 1.0).abs() <= 1e-8);
            }
        }
    }
}
