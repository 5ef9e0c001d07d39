//! Model-based reverse diffusion over control sequences.
//!
//! The diffusion variable is the control sequence in normalized coordinates:
//! each control entry is mapped to `z ∈ [−1, 1]` through the control box, so
//! one noise schedule fits every system. States are always re-derived by
//! rolling out the dynamics. The score at each reverse step is estimated by
//! self-normalized importance sampling against an unnormalized target density
//! (see [`TrajectoryTarget`]).

mod csv;
mod target;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

pub use self::csv::{trajectory_rows, write_trajectory_csv, TrajectoryRow};
pub use target::{
    log_target_density, sample_trajectory, Guidance, GuidanceConfig, GuidedTarget, QuadraticCost, SafetyMode, StageCost,
    TrajectorySample,
};

/// Cumulative noise levels `ᾱ_0 = 1 > ᾱ_1 > … > ᾱ_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

/// Sigmoid schedule parameters: `ᾱ_i = σ(s − (s − e)·i/N) / σ(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub logit_start: f64,
    pub logit_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 50,
            logit_start: 7.0,
            logit_end: -5.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl NoiseSchedule {
    pub fn sigmoid(cfg: &ScheduleConfig) -> Result<Self> {
        if cfg.steps == 0 {
            return Err(Error::config("sampler.schedule.steps", "must be >= 1"));
        }
        if !(cfg.logit_start > cfg.logit_end) || !cfg.logit_start.is_finite() || !cfg.logit_end.is_finite() {
            return Err(Error::config("sampler.schedule.logit_start", "must be finite and exceed logit_end"));
        }
        let n = cfg.steps as f64;
        let top = sigmoid(cfg.logit_start);
        let alpha_bar = (0..=cfg.steps)
            .map(|i| sigmoid(cfg.logit_start - (cfg.logit_start - cfg.logit_end) * i as f64 / n) / top)
            .collect();
        Self::from_alpha_bar(alpha_bar)
    }

    /// Explicit levels; `alpha_bar[0]` must be 1 and the rest strictly decreasing in (0, 1).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 || alpha_bar[0] != 1.0 {
            return Err(Error::config("sampler.schedule", "alpha_bar must start at 1 and have N >= 1 steps"));
        }
        for w in alpha_bar.windows(2) {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(Error::config("sampler.schedule", "alpha_bar must be strictly decreasing and positive"));
            }
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    /// Number of diffusion steps `N`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    /// `α_i = ᾱ_i / ᾱ_{i−1}` for `i ≥ 1`.
    pub fn alpha(&self, i: usize) -> f64 {
        assert!(i >= 1, "alpha is defined for i >= 1");
        self.alpha_bar[i] / self.alpha_bar[i - 1]
    }
}

/// Sampler hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Monte-Carlo candidates per reverse step (`Q`).
    pub num_candidates: usize,
    /// Planning horizon `T` in integration steps.
    pub horizon: usize,
    pub schedule: ScheduleConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_candidates: 256,
            horizon: 5,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 {
            return Err(Error::config("sampler.num_candidates", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("sampler.horizon", "must be >= 1"));
        }
        NoiseSchedule::sigmoid(&self.schedule).map(|_| ())
    }
}

/// An unnormalized log density over a flat vector of normalized controls.
pub trait TrajectoryTarget: Sync {
    type Scratch: Send;

    /// Length of the flat control vector (`T·m`).
    fn dim(&self) -> usize;

    fn scratch(&self) -> Self::Scratch;

    /// Projects a candidate onto the feasible set in place.
    fn project(&self, _z: &mut [f64]) {}

    /// Log density up to a constant. `Ok(−∞)` is a legitimate zero density;
    /// `Err` marks a candidate that could not be evaluated.
    fn log_density(&self, z: &[f64], scratch: &mut Self::Scratch) -> Result<f64>;
}

/// `√ᾱ_i·U⁰ + √(1−ᾱ_i)·ζ` with the given noise `ζ`.
pub fn forward_corrupt_with(u0: &[f64], i: usize, schedule: &NoiseSchedule, noise: &[f64]) -> Vec<f64> {
    let ab = schedule.alpha_bar(i);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    u0.iter().zip(noise).map(|(u, z)| a * u + b * z).collect()
}

/// Forward corruption `U^i ~ N(√ᾱ_i·U⁰, (1−ᾱ_i)·I)`.
pub fn forward_corrupt(u0: &[f64], i: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..u0.len()).map(|_| rng.sample(StandardNormal)).collect();
    forward_corrupt_with(u0, i, schedule, &noise)
}

/// Result of one Monte-Carlo posterior-mean estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorEstimate {
    pub mean: Vec<f64>,
    /// `1 / Σ w_q²` of the normalized weights.
    pub ess: f64,
    /// Every candidate had zero density; `mean` is the unweighted candidate mean.
    pub fallback: bool,
    /// Candidates whose density could not be evaluated.
    pub failed: usize,
}

/// Estimates `E[U⁰ | U^i]` under the target by importance sampling `q`
/// candidates from `N(U^i/√ᾱ_i, (1−ᾱ_i)/ᾱ_i·I)`, projected onto the feasible set.
///
/// Candidate `k` draws from substream `key.child(k)`.
pub fn estimate_posterior_mean<P: TrajectoryTarget>(
    target: &P,
    u_i: &[f64],
    i: usize,
    schedule: &NoiseSchedule,
    q: usize,
    key: StreamKey,
) -> Result<PosteriorEstimate> {
    if q == 0 {
        return Err(Error::Contract("posterior mean needs at least one candidate".into()));
    }
    if i == 0 || i > schedule.steps() {
        return Err(Error::Contract(format!("diffusion step {i} outside 1..={}", schedule.steps())));
    }
    let d = target.dim();
    crate::error::check_dim("diffused controls", d, u_i.len())?;
    let ab = schedule.alpha_bar(i);
    let scale = 1.0 / ab.sqrt();
    let spread = ((1.0 - ab) / ab).sqrt();

    let candidates: Vec<(Vec<f64>, Option<f64>)> = (0..q)
        .into_par_iter()
        .map_init(
            || target.scratch(),
            |scratch, k| {
                let mut rng = key.child(k as u64).rng();
                let mut c: Vec<f64> = u_i
                    .iter()
                    .map(|u| u * scale + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                target.project(&mut c);
                let lw = match target.log_density(&c, scratch) {
                    Ok(v) if !v.is_nan() && v != f64::INFINITY => Some(v),
                    _ => None,
                };
                (c, lw)
            },
        )
        .collect();

    let failed = candidates.iter().filter(|(_, lw)| lw.is_none()).count();
    let logw: Vec<f64> = candidates.iter().map(|(_, lw)| lw.unwrap_or(f64::NEG_INFINITY)).collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mean = vec![0.0; d];
    if max == f64::NEG_INFINITY {
        for (c, _) in &candidates {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= q as f64);
        return Ok(PosteriorEstimate {
            mean,
            ess: 0.0,
            fallback: true,
            failed,
        });
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut sq = 0.0;
    for ((c, _), wk) in candidates.iter().zip(&w) {
        let wk = wk / total;
        sq += wk * wk;
        if wk != 0.0 {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += wk * v;
            }
        }
    }
    Ok(PosteriorEstimate {
        mean,
        ess: 1.0 / sq,
        fallback: false,
        failed,
    })
}

/// Monte-Carlo score `−(U^i − √ᾱ_i·mean) / (1 − ᾱ_i)` followed by the reverse
/// update `U^{i−1} = (U^i + (1 − α_i)·score) / √α_i`.
pub fn reverse_step(u_i: &[f64], i: usize, posterior_mean: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let ab = schedule.alpha_bar(i);
    let a = schedule.alpha(i);
    let sab = ab.sqrt();
    let sa = a.sqrt();
    u_i.iter()
        .zip(posterior_mean)
        .map(|(u, m)| {
            let score = -(u - sab * m) / (1.0 - ab);
            (u + (1.0 - a) * score) / sa
        })
        .collect()
}

/// Per-run sampler diagnostics, indexed by diffusion step from `N` down to 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerDiagnostics {
    pub ess: Vec<f64>,
    pub fallback: Vec<bool>,
    pub failed: Vec<usize>,
}

impl SamplerDiagnostics {
    pub fn fallback_steps(&self) -> usize {
        self.fallback.iter().filter(|f| **f).count()
    }
}

/// Runs the full reverse chain from `U^N ~ N(0, I)`; returns projected `U⁰`.
pub fn sample_controls<P: TrajectoryTarget>(
    target: &P,
    schedule: &NoiseSchedule,
    num_candidates: usize,
    key: StreamKey,
) -> Result<(Vec<f64>, SamplerDiagnostics)> {
    let mut rng = key.child(0).rng();
    let mut u: Vec<f64> = (0..target.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let mut diag = SamplerDiagnostics::default();
    for i in (1..=schedule.steps()).rev() {
        let est = estimate_posterior_mean(target, &u, i, schedule, num_candidates, key.child(i as u64))?;
        u = reverse_step(&u, i, &est.mean, schedule);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reverse diffusion iterate"));
        }
        diag.ess.push(est.ess);
        diag.fallback.push(est.fallback);
        diag.failed.push(est.failed);
    }
    target.project(&mut u);
    Ok((u, diag))
}
