//! Adaptive quadrature on finite intervals, composite Gauss–Legendre time
//! integration, integrability certificates and weak-form residuals.

mod certificates;
mod gauss;
mod weak;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

pub use certificates::{
    certify_all, certify_lemma_bounds, certify_superposition, lemma_cutoff_sequence,
    superposition_inner, superposition_time_exponents, tail_ratio, CertificateReport,
    CutoffSequence, LemmaIntegrand,
};
pub use gauss::{gauss_legendre, GaussRule};
pub use weak::{
    fpe_weak_residual, leibenson_weak_residual, shipped_test_functions, RadialTestFunction,
    TestFunction, WeakResidual,
};

/// Outcome of a numerical integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub subdivisions: usize,
    pub converged: bool,
}

impl QuadratureResult {
    pub fn zero() -> Self {
        QuadratureResult { value: 0.0, abs_error_estimate: 0.0, subdivisions: 0, converged: true }
    }

    pub fn is_finite_converged(&self) -> bool {
        self.converged && self.value.is_finite() && self.abs_error_estimate.is_finite()
    }

    /// Sum of two independent pieces.
    pub fn combine(self, other: QuadratureResult) -> QuadratureResult {
        QuadratureResult {
            value: self.value + other.value,
            abs_error_estimate: self.abs_error_estimate + other.abs_error_estimate,
            subdivisions: self.subdivisions + other.subdivisions,
            converged: self.converged && other.converged,
        }
    }
}

/// Mixed absolute/relative stopping criterion: stop once the error estimate
/// is below `max(abs, rel·|I|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn absolute(abs: f64) -> Self {
        Tolerance { abs, rel: 0.0 }
    }
    pub fn relative(rel: f64) -> Self {
        Tolerance { abs: 0.0, rel }
    }
    fn bound(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

pub(crate) const MAX_SUBDIVISIONS: usize = 4000;

/// Number of dyadic pre-split points placed toward each endpoint.
const ENDPOINT_DYADIC_LEVELS: usize = 6;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

/// 21-point Gauss–Kronrod rule on `[a, b]`; returns (Kronrod value, error estimate).
fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    // A node that rounds onto an endpoint would sample an endpoint
    // singularity; its true weight is below float resolution.
    let eval = |x: f64| if x > a && x < b { f(x) } else { 0.0 };
    let fc = eval(center);
    let mut res_g = 0.0;
    let mut res_k = fc * WGK[10];
    let mut res_abs = (fc * WGK[10]).abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval(center - dx);
        let f2 = eval(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let err = rescale_error((res_k - res_g) * h, res_abs * h, res_asc * h);
    (res_k * half, err)
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]` with
/// optional interior breakpoints. The initial partition is refined
/// dyadically toward both endpoints so that integrable endpoint power
/// singularities are resolved by the bisection loop. Never panics;
/// failure to reach `tol` is reported through `converged`.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> QuadratureResult {
    if !(a < b) {
        return QuadratureResult::zero();
    }
    let mut points = vec![a, b];
    let width = b - a;
    for k in 1..=ENDPOINT_DYADIC_LEVELS {
        let h = width * 0.5f64.powi(k as i32 + 1);
        points.push(a + h);
        points.push(b - h);
    }
    points.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    points.sort_by(|x, y| x.total_cmp(y));
    points.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    // Segments that can no longer be bisected in floating point.
    let mut frozen_err = 0.0;
    let mut frozen_value = 0.0;
    for w in points.windows(2) {
        let (value, error) = gk21(&f, w[0], w[1]);
        total += value;
        total_err += error;
        heap.push(Segment { a: w[0], b: w[1], value, error });
    }
    let mut subdivisions = heap.len();
    while total_err > tol.bound(total) && subdivisions < MAX_SUBDIVISIONS {
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b)
            || (seg.b - seg.a) <= 4.0 * f64::EPSILON * seg.a.abs().max(seg.b.abs())
        {
            frozen_err += seg.error;
            frozen_value += seg.value;
            total_err = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
            if heap.is_empty() {
                break;
            }
            continue;
        }
        let (v1, e1) = gk21(&f, seg.a, mid);
        let (v2, e2) = gk21(&f, mid, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
        subdivisions += 1;
        if subdivisions % 64 == 0 {
            // Re-sum to shed accumulated cancellation in the running totals.
            total = heap.iter().map(|s| s.value).sum::<f64>() + frozen_value;
            total_err = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
        }
    }
    total = heap.iter().map(|s| s.value).sum::<f64>() + frozen_value;
    total_err = heap.iter().map(|s| s.error).sum::<f64>() + frozen_err;
    let converged = total.is_finite() && total_err.is_finite() && total_err <= tol.bound(total);
    QuadratureResult { value: total, abs_error_estimate: total_err, subdivisions, converged }
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> QuadratureResult {
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Adaptive integral of a radial integrand `g(r)` over `(r0, r1)` to absolute
/// tolerance `tol`.
pub fn integrate_radial<F: Fn(f64) -> f64>(g: F, r0: f64, r1: f64, tol: f64) -> QuadratureResult {
    integrate(g, r0, r1, Tolerance::absolute(tol))
}

/// Integral over `[a, b]` of a function with an integrable singularity
/// `(b − r)^{exponent − 1}` at the upper endpoint, `exponent > 0`. The
/// substitution `b − r = u^{1/exponent}` absorbs the singular factor so the
/// transformed integrand is bounded. The integrand receives both `r` and the
/// exact gap `b − r`, which cannot be recovered from `r` without
/// cancellation.
pub fn integrate_upper_power_singularity<F: Fn(f64, f64) -> f64>(
    g: F,
    a: f64,
    b: f64,
    exponent: f64,
    tol: Tolerance,
) -> QuadratureResult {
    if !(a < b) {
        return QuadratureResult::zero();
    }
    let inv = 1.0 / exponent;
    let u_max = (b - a).powf(exponent);
    let h = move |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let gap = u.powf(inv);
        g(b - gap, gap) * inv * u.powf(inv - 1.0)
    };
    integrate(h, 0.0, u_max, tol)
}

/// Composite `n`-point Gauss–Legendre integration with panel doubling until
/// two successive estimates agree to `tol`. Suited to smooth integrands.
pub fn integrate_composite_gauss<F: Fn(f64) -> f64>(
    g: F,
    a: f64,
    b: f64,
    rule: &GaussRule,
    tol: Tolerance,
) -> QuadratureResult {
    if !(a < b) {
        return QuadratureResult::zero();
    }
    let mut panels = 1usize;
    let mut previous = rule.composite(&g, a, b, panels);
    loop {
        panels *= 2;
        let current = rule.composite(&g, a, b, panels);
        let err = (current - previous).abs();
        if err <= tol.bound(current) || panels >= 256 {
            let converged = current.is_finite() && err <= tol.bound(current);
            return QuadratureResult {
                value: current,
                abs_error_estimate: err,
                subdivisions: panels,
                converged,
            };
        }
        previous = current;
    }
}

/// Result of a time integral over `(0, T]` on the dyadic panels
/// `[T·2^{−k−1}, T·2^{−k}]`, together with the partial sums on the cutoffs
/// `ε_k = T·2^{−k}`.
#[derive(Debug, Clone)]
pub struct DyadicIntegral {
    pub result: QuadratureResult,
    pub partial_sums: Vec<f64>,
}

/// Integrates `g` over `(0, T]` where `g` may blow up like a power `t^e`,
/// `e > −1`, as `t → 0`. Panels are added toward zero until the geometric
/// tail estimate drops below a quarter of `tol`.
pub fn integrate_dyadic_from_zero<F: Fn(f64) -> (f64, f64)>(
    g: F,
    t_final: f64,
    rule: &GaussRule,
    tol: Tolerance,
    max_panels: usize,
) -> DyadicIntegral {
    let coarse = gauss_legendre(rule.len() / 2);
    let mut partial_sums = Vec::new();
    let mut sum = 0.0;
    let mut err = 0.0;
    let mut last_panel: Option<f64> = None;
    let mut tail = f64::INFINITY;
    let mut panels = 0;
    let mut hi = t_final;
    while panels < max_panels && hi > 0.0 {
        let lo = 0.5 * hi;
        let (fine, fine_err) = rule.integrate_pair(&g, lo, hi);
        let (rough, _) = coarse.integrate_pair(&g, lo, hi);
        if !(fine.is_finite() && rough.is_finite()) {
            tail = f64::INFINITY;
            break;
        }
        let panel_err = (fine - rough).abs() + fine_err;
        sum += fine;
        err += panel_err;
        partial_sums.push(sum);
        panels += 1;
        if let Some(prev) = last_panel {
            let ratio = if prev != 0.0 { (fine / prev).abs() } else { 0.0 };
            tail = if ratio < 1.0 { fine.abs() * ratio / (1.0 - ratio) } else { f64::INFINITY };
            if panels >= 4 && tail <= 0.25 * tol.bound(sum) {
                break;
            }
        }
        if fine == 0.0 && last_panel == Some(0.0) {
            tail = 0.0;
            break;
        }
        last_panel = Some(fine);
        hi = lo;
    }
    let total_err = err + tail;
    let converged = sum.is_finite() && total_err <= tol.bound(sum);
    DyadicIntegral {
        result: QuadratureResult {
            value: sum,
            abs_error_estimate: total_err,
            subdivisions: panels,
            converged,
        },
        partial_sums,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn monomial_radial_weight() {
        for d in 1..=4 {
            let r = integrate_radial(|r: f64| r.powi(d - 1), 0.0, 1.0, 1e-12);
            assert!(r.converged);
            assert!((r.value - 1.0 / d as f64).abs() <= 1e-12);
            assert!(r.abs_error_estimate <= 1e-12);
        }
    }

    #[test]
    fn boundary_power_singularity() {
        // Floating-point resolution near r = 1 caps how far bisection can
        // chase (1 − r)^{γ−1}; strong singularities go through the
        // substitution below instead.
        for &gamma in &[2.0 / 3.0, 1.0, 2.0] {
            let r = integrate_radial(|r: f64| (1.0 - r).powf(gamma - 1.0), 0.0, 1.0, 1e-8);
            assert!(r.converged, "gamma={gamma}: {r:?}");
            assert!((r.value - 1.0 / gamma).abs() <= 1e-8, "gamma={gamma}: {r:?}");
        }
        for &gamma in &[0.3, 2.0 / 3.0] {
            let r = integrate_upper_power_singularity(
                |_, gap: f64| gap.powf(gamma - 1.0),
                0.0,
                1.0,
                gamma,
                Tolerance::absolute(1e-12),
            );
            assert!(r.converged, "gamma={gamma}: {r:?}");
            assert!((r.value - 1.0 / gamma).abs() <= 1e-12, "gamma={gamma}: {r:?}");
        }
    }

    #[test]
    fn origin_power_singularity() {
        // r^{−s + d − 1} with s = p/(p−1) and p > d/(d−1).
        for &(d, p) in &[(2usize, 3.0f64), (3, 1.8), (3, 3.0), (2, 2.5)] {
            let s = p / (p - 1.0);
            let expo = -s + d as f64 - 1.0;
            let exact = 1.0 / (d as f64 - s);
            let r = integrate_radial(|r: f64| r.powf(expo), 0.0, 1.0, 1e-10);
            assert!(r.converged, "{d} {p}: {r:?}");
            assert!((r.value - exact).abs() <= 1e-10, "{d} {p}: {r:?} vs {exact}");
        }
    }

    #[test]
    fn unattainable_tolerance_reported() {
        let r = integrate_radial(|r: f64| r.sqrt(), 0.0, 1.0, 1e-30);
        assert!(!r.converged);
        assert_relative_eq!(r.value, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn substitution_for_boundary_singularity() {
        let gamma = 0.4;
        let r = integrate_upper_power_singularity(
            |r: f64, gap: f64| gap.powf(gamma - 1.0) * r,
            0.5,
            1.0,
            gamma,
            Tolerance::absolute(1e-13),
        );
        // ∫_{1/2}^1 (1−r)^{γ−1} r dr = h^γ/γ − h^{γ+1}/(γ+1), h = 1/2.
        let h: f64 = 0.5;
        let exact = h.powf(gamma) / gamma - h.powf(gamma + 1.0) / (gamma + 1.0);
        assert!(r.converged);
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn breakpoints_handle_kinks() {
        let r = integrate_with_breaks(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[0.3], Tolerance::absolute(1e-14));
        assert!(r.converged);
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn dyadic_time_integral_of_power_law() {
        let rule = gauss_legendre(64);
        for &e in &[-0.8, -0.5, 0.0, 1.5] {
            let out = integrate_dyadic_from_zero(
                |t: f64| (t.powf(e), 0.0),
                2.0,
                &rule,
                Tolerance::absolute(1e-9),
                2000,
            );
            let exact = 2f64.powf(e + 1.0) / (e + 1.0);
            assert!(out.result.converged, "e={e}: {:?}", out.result);
            assert!((out.result.value - exact).abs() <= 1e-9, "e={e}: {:?}", out.result);
            assert!(out.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn composite_gauss_smooth() {
        let rule = gauss_legendre(64);
        let r = integrate_composite_gauss(|t: f64| t.exp(), 0.0, 3.0, &rule, Tolerance::absolute(1e-13));
        assert!(r.converged);
        assert_relative_eq!(r.value, 3f64.exp() - 1.0, max_relative = 1e-14);
    }
}
