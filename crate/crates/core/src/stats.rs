//! Comparison of particle ensembles with the analytic law `w_δ(t, x) dx`
//! and the machine-readable verification report.
//!
//! The law is radial, so every test here works with `|X − y|` only: the
//! one-dimensional Kolmogorov–Smirnov distance against the exact radial
//! CDF, the mass outside the (slackened) support ball, and the second
//! moment.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LeibensonError, Result};
use crate::field::{FieldEvaluator, RadialLaw};
use crate::quad::CertificateReport;
use crate::rng::StreamDomain;
use crate::sde::{sample_ensemble, simulate, simulate_from, ParticleEnsemble, SDEConfig};

pub const REPORT_SCHEMA: &str = "leibenson-report/1";

/// 1% quantile of the Kolmogorov distribution, `P(√N·D > 1.63) ≈ 0.01`.
pub const KOLMOGOROV_99: f64 = 1.63;

/// `1.63/√n`, the 1% critical value of the KS statistic.
pub fn ks_noise_floor(n: usize) -> f64 {
    KOLMOGOROV_99 / (n as f64).sqrt()
}

fn radii_about(ensemble: &ParticleEnsemble, center: &[f64]) -> Result<Vec<f64>> {
    if ensemble.is_empty() {
        return Err(LeibensonError::EmptyEnsemble);
    }
    if center.len() != ensemble.d {
        return Err(LeibensonError::Domain("field and ensemble dimensions differ".into()));
    }
    Ok(ensemble
        .positions
        .par_chunks_exact(ensemble.d)
        .map(|x| x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect())
}

fn check_time(ensemble: &ParticleEnsemble, t: f64) -> Result<()> {
    if (ensemble.time - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(LeibensonError::Domain(format!(
            "ensemble is at t = {}, statistic requested at t = {t}",
            ensemble.time
        )));
    }
    Ok(())
}

/// KS distance of an unsorted sample of radii from a tabulated law.
pub fn ks_statistic(mut radii: Vec<f64>, law: &RadialLaw) -> Result<f64> {
    if radii.is_empty() {
        return Err(LeibensonError::EmptyEnsemble);
    }
    if radii.iter().any(|r| !r.is_finite()) {
        return Err(LeibensonError::Domain("non-finite radius in sample".into()));
    }
    radii.par_sort_unstable_by(f64::total_cmp);
    let n = radii.len() as f64;
    let d = radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let f = law.cdf_unchecked(r);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .reduce(|| 0.0, f64::max);
    Ok(d.clamp(0.0, 1.0))
}

/// `sup |F_emp − F|` of the radial distribution of `ensemble` about the
/// source point against `w_δ(t)`.
pub fn ks_radial(ensemble: &ParticleEnsemble, field: &FieldEvaluator, t: f64) -> Result<f64> {
    check_time(ensemble, t)?;
    let radii = radii_about(ensemble, field.center())?;
    ks_statistic(radii, &field.radial_law(t)?)
}

/// Fraction of particles with `|X − y| > R_δ(t)(1 + slack)` at the
/// ensemble's time.
pub fn support_violation(ensemble: &ParticleEnsemble, field: &FieldEvaluator, slack: f64) -> Result<f64> {
    if !(slack >= 0.0) {
        return Err(LeibensonError::Domain(format!("slack must be >= 0, got {slack}")));
    }
    let limit = field.support_radius_delta(ensemble.time) * (1.0 + slack);
    let radii = radii_about(ensemble, field.center())?;
    let outside = radii.par_iter().filter(|&&r| !(r <= limit)).count();
    Ok(outside as f64 / radii.len() as f64)
}

/// Empirical and exact `E|X − y|²` with the Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment {
    pub empirical: f64,
    pub exact: f64,
    pub standard_error: f64,
}

impl SecondMoment {
    pub fn rel_err(&self) -> f64 {
        (self.empirical - self.exact).abs() / self.exact
    }
}

pub fn second_moment(ensemble: &ParticleEnsemble, field: &FieldEvaluator) -> Result<SecondMoment> {
    let radii = radii_about(ensemble, field.center())?;
    let n = radii.len() as f64;
    // Fixed-order sums keep the result independent of the thread count.
    let (s1, s2) = radii.iter().fold((0.0, 0.0), |(a, b), r| {
        let m = r * r;
        (a + m, b + m * m)
    });
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok(SecondMoment {
        empirical: mean,
        exact: field.second_moment(ensemble.time)?,
        standard_error: (var / n).sqrt(),
    })
}

pub fn moment2_rel_err(ensemble: &ParticleEnsemble, field: &FieldEvaluator) -> Result<f64> {
    Ok(second_moment(ensemble, field)?.rel_err())
}

/// Pass/fail limits. Defaults are the acceptance values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub ks: f64,
    pub support_violation: f64,
    pub support_slack: f64,
    pub moment2: f64,
    /// Whether non-finite certificates fail the report.
    pub require_certificates: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { ks: 0.01, support_violation: 0.005, support_slack: 0.05, moment2: 0.02, require_certificates: true }
    }
}

impl Thresholds {
    pub const KEYS: [&'static str; 5] = ["ks", "support-violation", "support-slack", "moment2", "require-certificates"];

    /// Overrides defaults from `key=value` pairs using [`Self::KEYS`].
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut t = Thresholds::default();
        for (key, value) in pairs {
            let number = || {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| LeibensonError::Format(format!("threshold {key} = {value:?} is not a number >= 0")))
            };
            match key.as_str() {
                "ks" => t.ks = number()?,
                "support-violation" => t.support_violation = number()?,
                "support-slack" => t.support_slack = number()?,
                "moment2" => t.moment2 = number()?,
                "require-certificates" => {
                    t.require_certificates = value
                        .parse()
                        .map_err(|_| LeibensonError::Format(format!("{key} must be true or false")))?
                }
                _ => return Err(LeibensonError::Format(format!("unknown threshold key {key:?}"))),
            }
        }
        Ok(t)
    }

    fn limit(&self, name: &str) -> f64 {
        match name {
            "ks" => self.ks,
            "support_violation" => self.support_violation,
            "moment2" => self.moment2,
            "require_certificates" if self.require_certificates => 1.0,
            _ => f64::NAN,
        }
    }
}

/// Statistics of one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub t: f64,
    pub n_particles: usize,
    pub ks_radial: f64,
    pub ks_noise_floor: f64,
    pub support_violation_fraction: f64,
    pub moment2_rel_err: f64,
    pub moment2: SecondMoment,
}

pub fn snapshot_stats(ensemble: &ParticleEnsemble, field: &FieldEvaluator, slack: f64) -> Result<SnapshotStats> {
    let m2 = second_moment(ensemble, field)?;
    Ok(SnapshotStats {
        t: ensemble.time,
        n_particles: ensemble.len(),
        ks_radial: ks_radial(ensemble, field, ensemble.time)?,
        ks_noise_floor: ks_noise_floor(ensemble.len()),
        support_violation_fraction: support_violation(ensemble, field, slack)?,
        moment2_rel_err: m2.rel_err(),
        moment2: m2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// One named check. `threshold` names the member of
/// [`VerificationReport::thresholds`] it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: f64,
    pub threshold: String,
    pub limit: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Verdict {
    fn at_most(value: f64, threshold: &str, limit: f64) -> Self {
        Verdict { value, threshold: threshold.into(), limit, comparison: Comparison::AtMost, pass: value <= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema: String,
    /// Radius-only KS: the law is radial, so the 1-d radial CDF is exact.
    pub ks_method: String,
    pub config: serde_json::Value,
    /// SHA-256 of the snapshot data the report was computed from.
    pub snapshot_sha256: Option<String>,
    pub snapshots: Vec<SnapshotStats>,
    pub certificates: Option<CertificateReport>,
    pub thresholds: Thresholds,
    pub verdicts: BTreeMap<String, Verdict>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn build(
        config: serde_json::Value,
        field: &FieldEvaluator,
        snapshots: &[ParticleEnsemble],
        certificates: Option<CertificateReport>,
        thresholds: Thresholds,
    ) -> Result<Self> {
        let stats = snapshots
            .iter()
            .map(|e| snapshot_stats(e, field, thresholds.support_slack))
            .collect::<Result<Vec<_>>>()?;
        let mut verdicts = BTreeMap::new();
        for (i, s) in stats.iter().enumerate() {
            for (name, value) in [
                ("ks", s.ks_radial),
                ("support_violation", s.support_violation_fraction),
                ("moment2", s.moment2_rel_err),
            ] {
                verdicts.insert(format!("snapshot_{i}.{name}"), Verdict::at_most(value, name, thresholds.limit(name)));
            }
        }
        if thresholds.require_certificates {
            if let Some(c) = &certificates {
                let value = if c.all_finite { 1.0 } else { 0.0 };
                verdicts.insert(
                    "certificates.all_finite".into(),
                    Verdict {
                        value,
                        threshold: "require_certificates".into(),
                        limit: 1.0,
                        comparison: Comparison::AtLeast,
                        pass: c.all_finite,
                    },
                );
            }
        }
        let passed = verdicts.values().all(|v| v.pass);
        Ok(VerificationReport {
            schema: REPORT_SCHEMA.into(),
            ks_method: "radial".into(),
            config,
            snapshot_sha256: None,
            snapshots: stats,
            certificates,
            thresholds,
            verdicts,
            passed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: VerificationReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(LeibensonError::Format(format!("unsupported report schema {:?}", report.schema)));
        }
        Ok(report)
    }

    /// One row per snapshot.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("t,n_particles,ks_radial,support_violation_fraction,moment2_rel_err\n");
        for s in &self.snapshots {
            out.push_str(&format!(
                "{:.16e},{},{:.16e},{:.16e},{:.16e}\n",
                s.t, s.n_particles, s.ks_radial, s.support_violation_fraction, s.moment2_rel_err
            ));
        }
        out
    }
}

/// Seed of the continuation after a restart, decorrelated from `seed`.
pub fn restart_seed(seed: u64) -> u64 {
    // splitmix64 finalizer of a domain-tagged seed
    let mut z = seed ^ 0x5245_5354_4152_5400;
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Terminal ensemble of the restarted run: `N` particles sampled exactly
/// from `w_δ(t_mid)` (rounded to the step grid) and evolved to `t_final`
/// with fresh streams.
pub fn restarted_terminal(config: &SDEConfig, t_mid: f64) -> Result<ParticleEnsemble> {
    config.validate()?;
    if !(t_mid >= 0.0 && t_mid < config.t_final) {
        return Err(LeibensonError::Domain(format!("t_mid must lie in [0, t_final), got {t_mid}")));
    }
    let step = ((t_mid / config.dt).round() as u64).min(config.n_steps());
    let seed = restart_seed(config.seed);
    let mut restart = sample_ensemble(
        &config.params,
        config.delta,
        config.time_of(step),
        config.n_particles,
        seed,
        StreamDomain::Restart,
    )?;
    restart.step = step;
    let mut continued = config.clone();
    continued.seed = seed;
    continued.snap_times = vec![config.t_final];
    simulate_from(restart, &continued)?.pop().ok_or(LeibensonError::EmptyEnsemble)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRestart {
    pub ks_direct: f64,
    pub ks_restarted: f64,
    /// `2·1.63/√N`.
    pub tolerance: f64,
}

impl FlowRestart {
    pub fn agrees(&self) -> bool {
        (self.ks_direct - self.ks_restarted).abs() <= self.tolerance
    }
}

/// Terminal KS of a direct run and of a run restarted from the exact law
/// at `t_mid`. The positions of the restarted run before `t_mid` are
/// discarded by construction, so that leg is not simulated.
pub fn flow_restart_check(config: &SDEConfig, t_mid: f64) -> Result<FlowRestart> {
    let mut direct = config.clone();
    direct.snap_times = vec![config.t_final];
    let terminal = simulate(&direct)?.pop().ok_or(LeibensonError::EmptyEnsemble)?;
    flow_restart_against(config, t_mid, &terminal)
}

/// As [`flow_restart_check`] with an already simulated terminal ensemble.
pub fn flow_restart_against(config: &SDEConfig, t_mid: f64, direct_terminal: &ParticleEnsemble) -> Result<FlowRestart> {
    let field = FieldEvaluator::new(config.params, config.delta)?;
    let restarted = restarted_terminal(config, t_mid)?;
    Ok(FlowRestart {
        ks_direct: ks_radial(direct_terminal, &field, direct_terminal.time)?,
        ks_restarted: ks_radial(&restarted, &field, restarted.time)?,
        tolerance: 2.0 * ks_noise_floor(config.n_particles),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LeibensonParams;

    fn field() -> FieldEvaluator {
        FieldEvaluator::new(LeibensonParams::new(2, 3.0, 1.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn ks_of_exact_samples_is_within_kolmogorov_quantile() {
        let f = field();
        let n = 100_000;
        let e = sample_ensemble(f.params(), 1.0, 0.0, n, 3, StreamDomain::Init).unwrap();
        let ks = ks_radial(&e, &f, 0.0).unwrap();
        assert!(ks <= ks_noise_floor(n), "ks = {ks}");
        assert!(ks_radial(&e, &f, 0.5).is_err());
    }

    #[test]
    fn ks_is_one_for_collapsed_ensemble_and_order_invariant() {
        let f = field();
        let e = ParticleEnsemble { time: 0.0, step: 0, d: 2, positions: vec![0.0; 20], stream_ids: (0..10).collect() };
        assert_eq!(ks_radial(&e, &f, 0.0).unwrap(), 1.0);
        let s = sample_ensemble(f.params(), 1.0, 0.0, 500, 9, StreamDomain::Init).unwrap();
        let mut rev = s.clone();
        rev.positions = s.positions.chunks(2).rev().flatten().copied().collect();
        assert_eq!(ks_radial(&s, &f, 0.0).unwrap(), ks_radial(&rev, &f, 0.0).unwrap());
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        let f = field();
        let e = ParticleEnsemble { time: 0.0, step: 0, d: 2, positions: vec![], stream_ids: vec![] };
        assert!(matches!(ks_radial(&e, &f, 0.0), Err(LeibensonError::EmptyEnsemble)));
        assert!(matches!(support_violation(&e, &f, 0.0), Err(LeibensonError::EmptyEnsemble)));
        assert!(matches!(moment2_rel_err(&e, &f), Err(LeibensonError::EmptyEnsemble)));
    }

    #[test]
    fn support_violation_of_initial_ensemble_and_monotonicity() {
        let f = field();
        let e = sample_ensemble(f.params(), 1.0, 0.0, 20_000, 5, StreamDomain::Init).unwrap();
        assert_eq!(support_violation(&e, &f, 0.0).unwrap(), 0.0);
        let mut pushed = e.clone();
        for (k, x) in pushed.positions.chunks_mut(2).enumerate() {
            let scale = 1.0 + 0.1 * (k % 7) as f64 / 6.0;
            x.iter_mut().for_each(|v| *v *= scale);
        }
        let mut prev = 1.0;
        for slack in [0.0, 0.01, 0.03, 0.05, 0.1, 0.2] {
            let v = support_violation(&pushed, &f, slack).unwrap();
            assert!(v <= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        assert!(support_violation(&e, &f, -0.1).is_err());
    }

    #[test]
    fn exact_sampler_second_moment_within_three_standard_errors() {
        let f = field();
        let e = sample_ensemble(f.params(), 1.0, 0.0, 100_000, 17, StreamDomain::Init).unwrap();
        let m = second_moment(&e, &f).unwrap();
        assert!((m.empirical - m.exact).abs() <= 3.0 * m.standard_error, "{m:?}");
    }

    #[test]
    fn report_round_trips_and_verdicts_reference_thresholds() {
        let f = field();
        let e = sample_ensemble(f.params(), 1.0, 0.0, 5_000, 1, StreamDomain::Init).unwrap();
        let report =
            VerificationReport::build(serde_json::json!({"seed": 1}), &f, &[e.clone()], None, Thresholds::default())
                .unwrap();
        let text = report.to_json().unwrap();
        let back = VerificationReport::from_json(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.to_json().unwrap(), text);
        for v in report.verdicts.values() {
            assert!(!report.thresholds.limit(&v.threshold).is_nan());
        }
        let strict = Thresholds { ks: 1e-6, ..Thresholds::default() };
        let failing = VerificationReport::build(serde_json::Value::Null, &f, &[e], None, strict).unwrap();
        assert!(!failing.passed);
        assert_eq!(report.summary_csv().lines().count(), 2);
    }

    #[test]
    fn thresholds_parse_and_reject_unknown_keys() {
        let pairs = vec![("ks".to_string(), "0.02".to_string()), ("moment2".to_string(), "0.1".to_string())];
        let t = Thresholds::from_pairs(&pairs).unwrap();
        assert_eq!(t.ks, 0.02);
        assert_eq!(t.support_violation, 0.005);
        assert!(Thresholds::from_pairs(&[("kss".into(), "1".into())]).is_err());
        assert!(Thresholds::from_pairs(&[("ks".into(), "-1".into())]).is_err());
    }

    #[test]
    fn restart_at_zero_is_an_independent_replica() {
        let params = LeibensonParams::new(2, 3.0, 1.0).unwrap();
        let mut config = SDEConfig::new(params, 1.0, 0.05, 1e-3, 20_000, 4);
        config.snap_times = vec![0.05];
        let check = flow_restart_check(&config, 0.0).unwrap();
        assert!(check.agrees(), "{check:?}");
        assert_eq!(flow_restart_check(&config, 0.0).unwrap(), check);
        assert!(flow_restart_check(&config, 0.05).is_err());
        assert_ne!(restart_seed(4), 4);
    }
}
