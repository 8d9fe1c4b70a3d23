//! Model parameters of the Leibenson equation `∂ₜu = Δₚ(u^q)` in the
//! slow-diffusion regime `q(p−1) > 1`, the constants of its Barenblatt
//! profile, and the parameter predicates of the well-posedness results.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{LeibensonError, Result};
use crate::quad;

/// Surface area of the unit sphere `S^{d−1} ⊂ ℝ^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / ln_gamma(half).exp()
}

/// Volume of the unit ball in `ℝ^d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    unit_sphere_area(d) / d as f64
}

/// Validated `(d, p, q)` together with every derived constant of the
/// Barenblatt profile. Immutable after construction.
/// Deserialization re-derives every constant from `(d, p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsTriple")]
pub struct LeibensonParams {
    d: usize,
    p: f64,
    q: f64,
    beta: f64,
    gamma: f64,
    kappa: f64,
    c_norm: f64,
}

#[derive(Deserialize)]
struct ParamsTriple {
    d: usize,
    p: f64,
    q: f64,
}

impl TryFrom<ParamsTriple> for LeibensonParams {
    type Error = LeibensonError;

    fn try_from(t: ParamsTriple) -> Result<Self> {
        derive_constants(t.d, t.p, t.q)
    }
}

impl LeibensonParams {
    /// Validates `(d, p, q)`, derives `β, γ, κ` and solves for the
    /// mass-normalizing constant `C`.
    pub fn new(d: usize, p: f64, q: f64) -> Result<Self> {
        derive_constants(d, p, q)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    /// `β = p + d(q(p−1) − 1)`, the inverse spreading exponent.
    pub fn beta(&self) -> f64 {
        self.beta
    }
    /// `γ = (p−1)/(q(p−1) − 1)`, the profile exponent.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    /// Normalizing constant `C` with `∫ w(t, x) dx = 1`.
    pub fn c_norm(&self) -> f64 {
        self.c_norm
    }

    /// `s = p/(p−1)`, the power of `|x|` inside the profile.
    pub fn radial_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// The factor `q^{p−1}` in front of both SDE coefficients.
    pub fn coefficient_factor(&self) -> f64 {
        self.q.powf(self.p - 1.0)
    }

    /// Time exponent of `C_ρ(τ) = (γκp/(p−1))^{p−2} τ^{e}`.
    pub fn c_rho_time_exponent(&self) -> f64 {
        let (d, p, q, b) = (self.d as f64, self.p, self.q, self.beta);
        -d * (p - 2.0) / b - p * (p - 2.0) / (b * (p - 1.0)) - d * (p - 1.0) * (q - 1.0) / b
    }

    /// `C_ρ(τ)`, the time-dependent prefactor of the closed form of `ρ`.
    pub fn c_rho(&self, tau: f64) -> f64 {
        let base = self.gamma * self.kappa * self.radial_exponent();
        base.powf(self.p - 2.0) * tau.powf(self.c_rho_time_exponent())
    }

    pub fn regime(&self) -> RegimeReport {
        classify_regime(self)
    }
}

/// Derives `β, γ, κ` and `C` for `(d, p, q)`.
pub fn derive_constants(d: usize, p: f64, q: f64) -> Result<LeibensonParams> {
    if d == 0 {
        return Err(LeibensonError::Domain("dimension d must be at least 1".into()));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(LeibensonError::Domain(format!("p must satisfy p > 1, got {p}")));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(LeibensonError::Domain(format!("q must satisfy q > 0, got {q}")));
    }
    let qp = q * (p - 1.0);
    if qp <= 1.0 {
        return Err(LeibensonError::Regime {
            predicate: format!("q(p-1) > 1 (got q(p-1) = {qp})"),
        });
    }
    let df = d as f64;
    let beta = p + df * (qp - 1.0);
    let gamma = (p - 1.0) / (qp - 1.0);
    let kappa = (qp - 1.0) / (p * q) * beta.powf(-1.0 / (p - 1.0));
    let c_norm = normalization_constant(d, p, q, beta, gamma, kappa)?;
    Ok(LeibensonParams { d, p, q, beta, gamma, kappa, c_norm })
}

/// Closed form of `C` from
/// `ω_{d−1} C^{γ+d/s} κ^{−d/s} s^{−1} B(d/s, γ+1) = 1`, `s = p/(p−1)`.
pub fn normalization_constant(
    d: usize,
    p: f64,
    _q: f64,
    _beta: f64,
    gamma: f64,
    kappa: f64,
) -> Result<f64> {
    let s = p / (p - 1.0);
    let a = d as f64 / s;
    let ln_rhs = s.ln() + a * kappa.ln() - unit_sphere_area(d).ln() - ln_beta(a, gamma + 1.0);
    let c = (ln_rhs / (gamma + a)).exp();
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(LeibensonError::Convergence(format!(
            "normalization constant not finite for d={d}, p={p}"
        )))
    }
}

/// Mass `∫ w(t, x) dx` of the profile with a trial constant `c`, by radial quadrature.
pub fn profile_mass(d: usize, p: f64, gamma: f64, kappa: f64, beta: f64, c: f64, t: f64) -> f64 {
    let s = p / (p - 1.0);
    let df = d as f64;
    let scale = t.powf(1.0 / beta);
    let radius = (c / kappa).powf(1.0 / s) * scale;
    let omega = unit_sphere_area(d);
    let g = |r: f64| {
        let f = c - kappa * (r / scale).powf(s);
        if f <= 0.0 {
            0.0
        } else {
            t.powf(-df / beta) * f.powf(gamma) * r.powf(df - 1.0)
        }
    };
    omega * quad::integrate_radial(g, 0.0, radius, 1e-14).value
}

/// Independent route to `C`: bracketing root solve of `∫ w(t,·) − 1 = 0`
/// with the mass computed by adaptive quadrature.
pub fn normalization_constant_by_quadrature(params: &LeibensonParams, t: f64) -> Result<f64> {
    let (d, p, gamma, kappa, beta) = (params.d, params.p, params.gamma, params.kappa, params.beta);
    let mass = |c: f64| profile_mass(d, p, gamma, kappa, beta, c, t) - 1.0;
    let (mut lo, mut hi) = (1e-3, 1.0);
    let mut tries = 0;
    while mass(lo) > 0.0 {
        lo *= 0.1;
        tries += 1;
        if tries > 60 {
            return Err(LeibensonError::Convergence("cannot bracket C from below".into()));
        }
    }
    while mass(hi) < 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 120 {
            return Err(LeibensonError::Convergence("cannot bracket C from above".into()));
        }
    }
    // The mass is a power of c, so bisect in log space.
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mass(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which of the existence, Markov, strong-solution and uniqueness results
/// apply to a parameter triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// `q(p−1) > 1`: the compactly supported Barenblatt profile exists.
    pub barenblatt_ok: bool,
    /// Additionally `p > (1+d)/d`: marginals are realised by a weak SDE solution.
    pub superposition_ok: bool,
    /// `d ≥ 2`, `p > d/(d−1)`, and for `p < 2` also `q(p−1) > (2−p+d)/d`.
    pub markov_ok: bool,
    /// `d ≥ 2`, `p > d/(d−1)`, `q > (|p−2|+d)/(d(p−1))`.
    pub strong_solution_ok: bool,
    /// `d ≥ 2`, `p > 2` and `q(p−1) < 1 + d(p−1)²`.
    pub uniqueness_i_ok: bool,
    /// Same predicate as `strong_solution_ok`.
    pub uniqueness_ii_ok: bool,
}

impl RegimeReport {
    pub const FLAG_NAMES: [&'static str; 6] = [
        "barenblatt_ok",
        "superposition_ok",
        "markov_ok",
        "strong_solution_ok",
        "uniqueness_i_ok",
        "uniqueness_ii_ok",
    ];

    /// Evaluates every predicate on a raw triple; no tolerance is applied to
    /// the strict inequalities.
    pub fn classify(d: usize, p: f64, q: f64) -> Self {
        let df = d as f64;
        let qp = q * (p - 1.0);
        let barenblatt_ok = d >= 1 && p > 1.0 && q > 0.0 && qp > 1.0;
        let superposition_ok = barenblatt_ok && p > (1.0 + df) / df;
        let multi_d = d >= 2 && p > df / (df - 1.0);
        let markov_ok = barenblatt_ok && multi_d && (p >= 2.0 || qp > (2.0 - p + df) / df);
        let strong = barenblatt_ok && multi_d && q > ((p - 2.0).abs() + df) / (df * (p - 1.0));
        let uniqueness_i_ok =
            barenblatt_ok && d >= 2 && p > 2.0 && qp < 1.0 + df * (p - 1.0) * (p - 1.0);
        RegimeReport {
            barenblatt_ok,
            superposition_ok,
            markov_ok,
            strong_solution_ok: strong,
            uniqueness_i_ok,
            uniqueness_ii_ok: strong,
        }
    }

    pub fn flags(&self) -> [bool; 6] {
        [
            self.barenblatt_ok,
            self.superposition_ok,
            self.markov_ok,
            self.strong_solution_ok,
            self.uniqueness_i_ok,
            self.uniqueness_ii_ok,
        ]
    }
}

pub fn classify_regime(params: &LeibensonParams) -> RegimeReport {
    RegimeReport::classify(params.d, params.p, params.q)
}
