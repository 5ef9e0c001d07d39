//! The certificate-guided Gibbs target over control sequences.

use serde::{Deserialize, Serialize};

use super::{sample_controls, NoiseSchedule, SamplerConfig, SamplerDiagnostics, TrajectoryTarget};
use crate::clbf::{Certificate, CertificateConfig};
use crate::dynamics::{rollout_at, rollout_flat, ControlVector, IntegratorConfig, StateVector, StepScratch, SystemSpec};
use crate::error::{check_dim, Error, Result};
use crate::rng::StreamKey;

/// Running cost `q(x, u)`.
pub trait StageCost: Send + Sync {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;
}

impl<F: Fn(&[f64], &[f64]) -> f64 + Send + Sync> StageCost for F {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self(x, u)
    }
}

/// `‖x − x⋆‖² + w·‖u − u_ref‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost {
    pub goal: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub control_weight: f64,
}

impl QuadraticCost {
    /// Tracks the goal, penalizing deviation from the equilibrium control.
    pub fn for_system(sys: &SystemSpec, control_weight: f64) -> Self {
        QuadraticCost {
            goal: sys.goal.0.clone(),
            u_ref: sys.u_eq.0.clone(),
            control_weight,
        }
    }
}

impl StageCost for QuadraticCost {
    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let dx: f64 = x.iter().zip(&self.goal).map(|(a, b)| (a - b) * (a - b)).sum();
        let du: f64 = u.iter().zip(&self.u_ref).map(|(a, b)| (a - b) * (a - b)).sum();
        dx + self.control_weight * du
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyMode {
    /// Zero density as soon as any `V(x_t) > c`.
    Indicator,
    /// Quadratic penalty `Σ([V(x_t) − c]⁺)² / safety_temp`.
    Soft,
}

/// Temperatures and switches of the target density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Cost temperature `γ`.
    pub gamma: f64,
    /// Nominal-tracking temperature `γ1`, used only with `nominal`.
    pub gamma1: f64,
    /// Stability temperature `γ2`.
    pub gamma2: f64,
    pub safety_mode: SafetyMode,
    /// Soft-safety temperature; defaults to `gamma2`.
    pub safety_temp: Option<f64>,
    /// `T×m` nominal control sequence. When set it replaces the running cost.
    pub nominal: Option<Vec<Vec<f64>>>,
    /// With guidance off only the cost shapes the target.
    pub use_clbf_guidance: bool,
    /// Control weight of the default running cost.
    pub control_weight: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            gamma: 0.5,
            gamma1: 1.0,
            gamma2: 0.1,
            safety_mode: SafetyMode::Soft,
            safety_temp: None,
            nominal: None,
            use_clbf_guidance: true,
            control_weight: 0.01,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("guidance.gamma", self.gamma),
            ("guidance.gamma1", self.gamma1),
            ("guidance.gamma2", self.gamma2),
            ("guidance.safety_temp", self.safety_temp()),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, "temperatures must be finite and > 0"));
            }
        }
        if !(self.control_weight >= 0.0) {
            return Err(Error::config("guidance.control_weight", "must be >= 0"));
        }
        Ok(())
    }

    pub fn safety_temp(&self) -> f64 {
        self.safety_temp.unwrap_or(self.gamma2)
    }
}

/// Everything the target density depends on besides the initial state.
#[derive(Clone, Copy)]
pub struct Guidance<'a> {
    pub sys: &'a SystemSpec,
    pub cert: &'a dyn Certificate,
    pub ccfg: &'a CertificateConfig,
    pub gcfg: &'a GuidanceConfig,
    pub integ: &'a IntegratorConfig,
    pub cost: &'a dyn StageCost,
}

/// A control sequence together with the states it produces from `x0`.
///
/// States are only ever produced by rolling out the controls, so they cannot
/// go stale.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    x0: StateVector,
    t0: f64,
    dt: f64,
    controls: Vec<ControlVector>,
    states: Vec<StateVector>,
}

impl TrajectorySample {
    /// Rolls out `controls` (clamped to the control box) from `x0` at time `t0`.
    pub fn from_controls(
        sys: &SystemSpec,
        x0: StateVector,
        t0: f64,
        controls: Vec<ControlVector>,
        integ: &IntegratorConfig,
    ) -> Result<Self> {
        let r = rollout_at(sys, t0, &x0, &controls, integ)?;
        Ok(TrajectorySample {
            x0,
            t0,
            dt: integ.dt,
            controls: r.controls,
            states: r.states,
        })
    }

    pub fn x0(&self) -> &StateVector {
        &self.x0
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Time at which `controls()[t]` is applied.
    pub fn time(&self, t: usize) -> f64 {
        self.t0 + t as f64 * self.dt
    }

    pub fn controls(&self) -> &[ControlVector] {
        &self.controls
    }

    /// `states()[t]` is the state after applying `controls()[t]`.
    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// `x_0, x_1, …, x_T`.
    pub fn all_states(&self) -> impl Iterator<Item = &StateVector> {
        std::iter::once(&self.x0).chain(self.states.iter())
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().unwrap_or(&self.x0)
    }
}

pub struct GuidedScratch {
    u: Vec<f64>,
    states: Vec<f64>,
    step: StepScratch,
    f: Vec<f64>,
}

impl Guidance<'_> {
    fn scratch(&self, horizon: usize) -> GuidedScratch {
        let (n, m) = (self.sys.n(), self.sys.m());
        GuidedScratch {
            u: vec![0.0; horizon * m],
            states: vec![0.0; horizon * n],
            step: StepScratch::new(n),
            f: vec![0.0; n],
        }
    }

    fn validate(&self, horizon: usize) -> Result<()> {
        self.gcfg.validate()?;
        self.ccfg.validate()?;
        self.integ.validate()?;
        check_dim("certificate input", self.sys.n(), self.cert.input_dim())?;
        if let Some(nominal) = &self.gcfg.nominal {
            check_dim("nominal horizon", horizon, nominal.len())?;
            for row in nominal {
                check_dim("nominal control", self.sys.m(), row.len())?;
            }
        }
        Ok(())
    }

    /// Log density of physical controls `u` (`T×m`, already in bounds);
    /// `scratch.states` receives the rollout.
    fn log_density_flat(&self, x0: &[f64], t0: f64, scratch: &mut GuidedScratch) -> Result<f64> {
        let GuidedScratch { u, states, step, f } = scratch;
        let model = self.sys.model.as_ref();
        let (n, m) = (self.sys.n(), self.sys.m());
        let horizon = u.len() / m.max(1);
        if let Err(index) = rollout_flat(model, t0, x0, u, self.integ, step, states) {
            return Err(Error::IntegrationBlowup {
                index,
                state: Vec::new(),
            });
        }

        let mut logp = 0.0;
        match &self.gcfg.nominal {
            Some(nominal) => {
                let mut sq = 0.0;
                for (t, row) in nominal.iter().enumerate() {
                    for (j, target) in row.iter().enumerate() {
                        let d = u[t * m + j] - target;
                        sq += d * d;
                    }
                }
                logp -= sq / self.gcfg.gamma1;
            }
            None => {
                let mut total = 0.0;
                for t in 0..horizon {
                    total += self.cost.cost(&states[t * n..(t + 1) * n], &u[t * m..(t + 1) * m]);
                }
                if !total.is_finite() {
                    return Err(Error::Evaluation("non-finite running cost"));
                }
                logp -= total / self.gcfg.gamma;
            }
        }
        if !self.gcfg.use_clbf_guidance {
            return Ok(logp);
        }

        let c = self.ccfg.c;
        let lambda = self.ccfg.lambda;
        let mut stability = 0.0;
        let mut excess = 0.0;
        let mut unsafe_hit = false;
        let mut safety = |v: f64| {
            if v > c {
                unsafe_hit = true;
                excess += (v - c) * (v - c);
            }
        };
        for t in 0..horizon {
            let prev = if t == 0 { x0 } else { &states[(t - 1) * n..t * n] };
            model.eval(t0 + t as f64 * self.integ.dt, prev, &u[t * m..(t + 1) * m], f);
            let (v, lie) = self.cert.value_and_directional_at(prev, f);
            if !v.is_finite() || !lie.is_finite() {
                return Err(Error::Evaluation("non-finite certificate value"));
            }
            if t > 0 {
                safety(v);
            }
            let hinge = lie + lambda * v;
            if hinge > 0.0 {
                stability += hinge * hinge;
            }
        }
        if horizon > 0 {
            let v = self.cert.value_at(&states[(horizon - 1) * n..horizon * n]);
            if !v.is_finite() {
                return Err(Error::Evaluation("non-finite certificate value"));
            }
            safety(v);
        }
        logp -= stability / self.gcfg.gamma2;
        match self.gcfg.safety_mode {
            SafetyMode::Indicator if unsafe_hit => return Ok(f64::NEG_INFINITY),
            SafetyMode::Indicator => {}
            SafetyMode::Soft => logp -= excess / self.gcfg.safety_temp(),
        }
        Ok(logp)
    }

    /// Target over normalized controls for one planning problem.
    pub fn target(&self, x0: &StateVector, t0: f64, horizon: usize) -> Result<GuidedTarget<'_>> {
        check_dim("state", self.sys.n(), x0.len())?;
        if !x0.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        self.validate(horizon)?;
        let center = self
            .sys
            .control_lo
            .iter()
            .zip(&self.sys.control_hi)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect();
        let half = self
            .sys
            .control_lo
            .iter()
            .zip(&self.sys.control_hi)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect();
        Ok(GuidedTarget {
            guidance: *self,
            x0: x0.0.clone(),
            t0,
            horizon,
            center,
            half,
        })
    }
}

/// The guided density as a function of normalized controls `z ∈ [−1, 1]^{T·m}`.
pub struct GuidedTarget<'a> {
    guidance: Guidance<'a>,
    x0: Vec<f64>,
    t0: f64,
    horizon: usize,
    center: Vec<f64>,
    half: Vec<f64>,
}

impl GuidedTarget<'_> {
    /// Physical controls for normalized `z`.
    pub fn to_controls(&self, z: &[f64]) -> Vec<ControlVector> {
        let m = self.center.len();
        z.chunks(m.max(1))
            .map(|row| {
                ControlVector(
                    row.iter()
                        .zip(self.center.iter().zip(&self.half))
                        .map(|(z, (c, h))| c + h * z.clamp(-1.0, 1.0))
                        .collect(),
                )
            })
            .collect()
    }
}

impl TrajectoryTarget for GuidedTarget<'_> {
    type Scratch = GuidedScratch;

    fn dim(&self) -> usize {
        self.horizon * self.center.len()
    }

    fn scratch(&self) -> GuidedScratch {
        self.guidance.scratch(self.horizon)
    }

    fn project(&self, z: &mut [f64]) {
        for v in z {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    fn log_density(&self, z: &[f64], scratch: &mut GuidedScratch) -> Result<f64> {
        let m = self.center.len();
        for (k, (u, z)) in scratch.u.iter_mut().zip(z).enumerate() {
            let j = k % m;
            *u = self.center[j] + self.half[j] * z;
        }
        self.guidance.log_density_flat(&self.x0, self.t0, scratch)
    }
}

/// Log target density of a trajectory, with states re-derived from its controls.
pub fn log_target_density(guidance: &Guidance<'_>, sample: &TrajectorySample) -> Result<f64> {
    let horizon = sample.horizon();
    guidance.validate(horizon)?;
    let mut scratch = guidance.scratch(horizon);
    for (row, u) in scratch.u.chunks_mut(guidance.sys.m().max(1)).zip(sample.controls()) {
        row.copy_from_slice(u);
        guidance.sys.clamp_control(row);
    }
    guidance.log_density_flat(sample.x0(), sample.t0(), &mut scratch)
}

/// Plans a `scfg.horizon`-step control sequence from `x0` with the guided
/// reverse diffusion sampler.
pub fn sample_trajectory(
    guidance: &Guidance<'_>,
    scfg: &SamplerConfig,
    x0: &StateVector,
    t0: f64,
    key: StreamKey,
) -> Result<(TrajectorySample, SamplerDiagnostics)> {
    scfg.validate()?;
    let schedule = NoiseSchedule::sigmoid(&scfg.schedule)?;
    let target = guidance.target(x0, t0, scfg.horizon)?;
    let (z, diag) = sample_controls(&target, &schedule, scfg.num_candidates, key)?;
    let controls = target.to_controls(&z);
    let sample = TrajectorySample::from_controls(guidance.sys, x0.clone(), t0, controls, guidance.integ)?;
    Ok((sample, diag))
}
