//! Euler–Maruyama simulation of the linearized McKean–Vlasov SDE
//! `dX = q^{p−1}∇ρ_δ(t, X) dt + √(2 q^{p−1} ρ_δ(t, X)) dW`
//! as a particle ensemble.
//!
//! Every Gaussian increment is addressed by `(seed, particle, step)`, so the
//! output is bit-identical for any thread count and coupled runs share noise
//! exactly.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LeibensonError, Result};
use crate::field::{CoefficientFrame, RadialLaw};
use crate::params::LeibensonParams;
use crate::rng::{open_unit, PhiloxStream, StreamDomain};

/// Largest supported dimension of the particle engine.
pub const MAX_DIM: usize = 16;

/// Relative size of the default origin clamp, `ε₀ = 1e−8·R_δ(0)`.
pub const DEFAULT_ORIGIN_CLAMP_FACTOR: f64 = 1e-8;

/// Particles beyond this multiple of `R_δ(t_final)` signal a step size
/// that is too large.
pub const BLOWUP_FACTOR: f64 = 10.0;

/// Minimum number of particles handed to one rayon task.
const PARALLEL_GRAIN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SDEConfig {
    pub params: LeibensonParams,
    pub delta: f64,
    pub t_final: f64,
    pub dt: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub snap_times: Vec<f64>,
    /// `ε₀`; `None` selects `1e−8·R_δ(0)`. Only used when `p < 2`.
    pub origin_clamp: Option<f64>,
    /// Replace the Brownian increments by zero (deterministic ODE flow).
    #[serde(default)]
    pub zero_noise: bool,
}

/// A requested snapshot time moved onto the step grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapRounding {
    pub requested: f64,
    pub actual: f64,
    pub step: u64,
}

impl SDEConfig {
    pub fn new(params: LeibensonParams, delta: f64, t_final: f64, dt: f64, n_particles: usize, seed: u64) -> Self {
        SDEConfig {
            params,
            delta,
            t_final,
            dt,
            n_particles,
            seed,
            snap_times: vec![t_final],
            origin_clamp: None,
            zero_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let domain = |msg: String| Err(LeibensonError::Domain(msg));
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return domain(format!("delta must be > 0 for simulation, got {}", self.delta));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return domain(format!("t_final must be >= 0, got {}", self.t_final));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return domain(format!("dt must be > 0, got {}", self.dt));
        }
        if self.t_final > 0.0 && self.dt > self.t_final {
            return domain(format!("dt = {} exceeds t_final = {}", self.dt, self.t_final));
        }
        if self.n_particles == 0 {
            return domain("at least one particle is required".into());
        }
        if self.n_particles as u64 >= 1 << 32 {
            return domain("at most 2^32 - 1 particles are supported".into());
        }
        if self.params.d() > MAX_DIM {
            return domain(format!("the particle engine supports d <= {MAX_DIM}"));
        }
        if (self.t_final / self.dt).round() >= (1u64 << 32) as f64 {
            return domain("too many time steps".into());
        }
        if let Some(eps) = self.origin_clamp {
            if !(eps.is_finite() && eps > 0.0) {
                return domain(format!("origin clamp must be > 0, got {eps}"));
            }
        }
        let mut previous = f64::NEG_INFINITY;
        for &t in &self.snap_times {
            if !(t >= 0.0 && t <= self.t_final) {
                return domain(format!("snapshot time {t} outside [0, {}]", self.t_final));
            }
            if t < previous {
                return domain("snapshot times must be sorted".into());
            }
            previous = t;
        }
        self.snap_rounding()?;
        Ok(())
    }

    /// Number of Euler steps, `round(t_final / dt)`.
    pub fn n_steps(&self) -> u64 {
        (self.t_final / self.dt).round() as u64
    }

    /// Time after `step` steps.
    pub fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }

    pub fn snap_rounding(&self) -> Result<Vec<SnapRounding>> {
        let n_steps = self.n_steps();
        let mut out: Vec<SnapRounding> = Vec::with_capacity(self.snap_times.len());
        for &requested in &self.snap_times {
            let step = ((requested / self.dt).round() as u64).min(n_steps);
            if out.last().is_some_and(|prev| prev.step == step) {
                return Err(LeibensonError::Domain(format!(
                    "snapshot times collide on the dt grid at step {step}"
                )));
            }
            out.push(SnapRounding { requested, actual: self.time_of(step), step });
        }
        Ok(out)
    }

    pub fn origin_clamp_value(&self) -> f64 {
        self.origin_clamp.unwrap_or_else(|| {
            DEFAULT_ORIGIN_CLAMP_FACTOR * CoefficientFrame::new(&self.params, self.delta).support_radius()
        })
    }

    pub fn blowup_radius(&self) -> f64 {
        BLOWUP_FACTOR * CoefficientFrame::new(&self.params, self.t_final + self.delta).support_radius()
    }
}

/// `N` particles in ℝ^d at a common time, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub time: f64,
    pub step: u64,
    pub d: usize,
    pub positions: Vec<f64>,
    /// RNG stream identity of each particle.
    pub stream_ids: Vec<u64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.stream_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stream_ids.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn radii(&self) -> Vec<f64> {
        self.positions.chunks_exact(self.d).map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// Draws `n` particles exactly from `w_δ(t)` with streams of `domain`.
pub fn sample_ensemble(
    params: &LeibensonParams,
    delta: f64,
    t: f64,
    n: usize,
    seed: u64,
    domain: StreamDomain,
) -> Result<ParticleEnsemble> {
    let law = RadialLaw::new(params, delta, t)?;
    let d = params.d();
    let mut positions = vec![0.0; n * d];
    positions.par_chunks_mut(d).with_min_len(PARALLEL_GRAIN).enumerate().for_each(|(i, x)| {
        let mut rng = PhiloxStream::new(seed, i as u64, 0, domain);
        let r = law.inverse_unchecked(open_unit(&mut rng));
        loop {
            let mut norm2: f64 = 0.0;
            for v in x.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
                norm2 += *v * *v;
            }
            if norm2 > 0.0 {
                let scale = r / norm2.sqrt();
                x.iter_mut().for_each(|v| *v *= scale);
                break;
            }
        }
    });
    Ok(ParticleEnsemble { time: t, step: 0, d, positions, stream_ids: (0..n as u64).collect() })
}

/// Initial ensemble, exactly distributed as `w(δ, x) dx`.
pub fn init_ensemble(config: &SDEConfig) -> Result<ParticleEnsemble> {
    config.validate()?;
    sample_ensemble(&config.params, config.delta, 0.0, config.n_particles, config.seed, StreamDomain::Init)
}

/// Per-step constants shared by every particle.
#[derive(Debug, Clone, Copy)]
struct StepKernel {
    frame: CoefficientFrame,
    dt: f64,
    sqrt_dt: f64,
    clamp: Option<f64>,
    seed: u64,
    step: u64,
    zero_noise: bool,
}

impl StepKernel {
    fn new(config: &SDEConfig, step: u64) -> Self {
        let t = config.time_of(step);
        StepKernel {
            frame: CoefficientFrame::new(&config.params, t + config.delta),
            dt: config.dt,
            sqrt_dt: config.dt.sqrt(),
            clamp: (config.params.p() < 2.0).then(|| config.origin_clamp_value()),
            seed: config.seed,
            step,
            zero_noise: config.zero_noise,
        }
    }

    #[inline]
    fn noise(&self, stream_id: u64, z: &mut [f64]) {
        if self.zero_noise {
            z.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let mut rng = PhiloxStream::new(self.seed, stream_id, self.step, StreamDomain::Step);
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    /// Advances one particle in place given its Gaussian vector and returns
    /// its new squared radius.
    #[inline]
    fn advance(&self, x: &mut [f64], z: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        // Below the clamp radius the coefficients are read at ε₀ along the
        // same direction; at the exact source the drift is zero.
        let (eval_r, drift_scale) = match self.clamp {
            Some(eps) if r < eps => (eps, if r > 0.0 { eps / r } else { 0.0 }),
            _ => (r, 1.0),
        };
        let c = self.frame.point(eval_r);
        if c.diffusion == 0.0 && c.drift_multiplier == 0.0 {
            return r2;
        }
        let drift = c.drift_multiplier * drift_scale * self.dt;
        let noise = c.diffusion * self.sqrt_dt;
        let mut out = 0.0;
        for (v, zj) in x.iter_mut().zip(z) {
            *v += drift * *v + noise * zj;
            out += *v * *v;
        }
        out
    }
}

fn out_of_bounds(r2: f64, limit: f64) -> bool {
    !(r2.is_finite() && r2 <= limit * limit)
}

fn check_positions(positions: &[f64], d: usize, limit: f64, time: f64) -> Result<()> {
    let bad = positions
        .par_chunks(d)
        .with_min_len(PARALLEL_GRAIN)
        .position_first(|x| out_of_bounds(x.iter().map(|v| v * v).sum(), limit));
    match bad {
        None => Ok(()),
        Some(i) => Err(LeibensonError::NumericalBlowup {
            time,
            detail: format!("particle {i} left the ball of radius {limit:.6e}; reduce dt"),
        }),
    }
}

fn advance_ensemble(ensemble: &mut ParticleEnsemble, config: &SDEConfig) -> Result<()> {
    let kernel = StepKernel::new(config, ensemble.step);
    let d = ensemble.d;
    let limit = config.blowup_radius();
    let any_bad = ensemble
        .positions
        .par_chunks_mut(d)
        .with_min_len(PARALLEL_GRAIN)
        .zip(ensemble.stream_ids.par_iter())
        .map(|(x, &id)| {
            let mut z = [0.0; MAX_DIM];
            kernel.noise(id, &mut z[..d]);
            out_of_bounds(kernel.advance(x, &z[..d]), limit)
        })
        .reduce(|| false, |a, b| a || b);
    ensemble.step += 1;
    ensemble.time = config.time_of(ensemble.step);
    if any_bad {
        // Slow path only to name the first offending particle.
        check_positions(&ensemble.positions, d, limit, ensemble.time)?;
    }
    Ok(())
}

/// One Euler–Maruyama step of `dt`.
pub fn step(ensemble: &mut ParticleEnsemble, config: &SDEConfig) -> Result<()> {
    config.validate()?;
    if ensemble.d != config.params.d() {
        return Err(LeibensonError::Domain("ensemble dimension does not match the configuration".into()));
    }
    if ensemble.time + config.dt > config.t_final + 0.5 * config.dt {
        return Err(LeibensonError::Domain(format!(
            "stepping past t_final: t = {} + dt = {} > {}",
            ensemble.time, config.dt, config.t_final
        )));
    }
    advance_ensemble(ensemble, config)
}

/// Runs from `ensemble` (at some grid step) to `t_final`, collecting the
/// configured snapshots that lie at or after its step.
pub fn simulate_from(mut ensemble: ParticleEnsemble, config: &SDEConfig) -> Result<Vec<ParticleEnsemble>> {
    config.validate()?;
    let rounding = config.snap_rounding()?;
    let n_steps = config.n_steps();
    let mut snapshots = Vec::with_capacity(rounding.len());
    let mut next = rounding.iter().position(|s| s.step >= ensemble.step).unwrap_or(rounding.len());
    loop {
        while next < rounding.len() && rounding[next].step == ensemble.step {
            snapshots.push(ensemble.clone());
            next += 1;
        }
        if ensemble.step >= n_steps || next >= rounding.len() {
            break;
        }
        advance_ensemble(&mut ensemble, config)?;
    }
    Ok(snapshots)
}

/// Full run from the exact initial law; one ensemble per snapshot time.
pub fn simulate(config: &SDEConfig) -> Result<Vec<ParticleEnsemble>> {
    simulate_from(init_ensemble(config)?, config)
}

/// Log-distance functional of two solutions driven by identical noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostic {
    pub times: Vec<f64>,
    /// Mean of `ln(1 + |X − Y|²/ε²)`.
    pub log_distance: Vec<f64>,
    pub median_distance: Vec<f64>,
    pub epsilon: f64,
    pub offset_norm: f64,
    /// Whether `X` and `Y` were bitwise equal at every recorded time.
    pub identical: bool,
}

fn coupling_row(x: &ParticleEnsemble, y: &ParticleEnsemble, epsilon: f64) -> (f64, f64, bool) {
    let d = x.d;
    let dist2: Vec<f64> = x
        .positions
        .par_chunks(d)
        .zip(y.positions.par_chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .collect();
    let log_mean = dist2.iter().map(|s| (s / (epsilon * epsilon)).ln_1p()).sum::<f64>() / dist2.len() as f64;
    let mut dist: Vec<f64> = dist2.iter().map(|s| s.sqrt()).collect();
    dist.sort_by(|a, b| a.total_cmp(b));
    let n = dist.len();
    let median = if n % 2 == 1 { dist[n / 2] } else { 0.5 * (dist[n / 2 - 1] + dist[n / 2]) };
    (log_mean, median, x.positions == y.positions)
}

/// Simulates `X` from the exact initial law and `Y = X + offset` with the
/// same Brownian increments, recording the log-distance functional at time 0,
/// every snapshot time and `t_final`.
pub fn simulate_coupled(config: &SDEConfig, offset: &[f64], epsilon: f64) -> Result<CouplingDiagnostic> {
    config.validate()?;
    let d = config.params.d();
    if offset.len() != d {
        return Err(LeibensonError::Domain(format!("offset has dimension {}, expected {d}", offset.len())));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(LeibensonError::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let offset_norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = init_ensemble(config)?;
    let mut y = x.clone();
    for chunk in y.positions.chunks_exact_mut(d) {
        for (v, o) in chunk.iter_mut().zip(offset) {
            *v += o;
        }
    }
    let n_steps = config.n_steps();
    let mut record: Vec<u64> = config.snap_rounding()?.iter().map(|s| s.step).collect();
    record.push(0);
    record.push(n_steps);
    record.sort_unstable();
    record.dedup();

    let mut diag = CouplingDiagnostic {
        times: Vec::new(),
        log_distance: Vec::new(),
        median_distance: Vec::new(),
        epsilon,
        offset_norm,
        identical: true,
    };
    let limit = config.blowup_radius();
    let mut next = 0;
    loop {
        if next < record.len() && record[next] == x.step {
            let (log_mean, median, same) = coupling_row(&x, &y, epsilon);
            diag.times.push(x.time);
            diag.log_distance.push(log_mean);
            diag.median_distance.push(median);
            diag.identical &= same;
            next += 1;
        }
        if x.step >= n_steps {
            break;
        }
        let kernel = StepKernel::new(config, x.step);
        let any_bad = x
            .positions
            .par_chunks_mut(d)
            .with_min_len(PARALLEL_GRAIN)
            .zip(y.positions.par_chunks_mut(d))
            .zip(x.stream_ids.par_iter())
            .map(|((a, b), &id)| {
                let mut z = [0.0; MAX_DIM];
                kernel.noise(id, &mut z[..d]);
                let ra = kernel.advance(a, &z[..d]);
                let rb = kernel.advance(b, &z[..d]);
                out_of_bounds(ra, limit) || out_of_bounds(rb, limit)
            })
            .reduce(|| false, |a, b| a || b);
        x.step += 1;
        x.time = config.time_of(x.step);
        y.step = x.step;
        y.time = x.time;
        if any_bad {
            check_positions(&x.positions, d, limit, x.time)?;
            check_positions(&y.positions, d, limit, y.time)?;
        }
    }
    Ok(diag)
}
