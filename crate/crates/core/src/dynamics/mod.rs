//! Benchmark dynamical systems, time integration and set membership.
//!
//! A [`SystemSpec`] bundles a [`SystemModel`] (the vector field plus its
//! safe/unsafe predicates) with the control bounds, goal, equilibrium control
//! and the state-space boxes used for sampling initial states and auditing.
//! Built-in systems are configured from constants files (see [`constants`]).

pub mod constants;
pub mod systems;

use std::fmt;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
pub use constants::Constants;

/// A point in state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

/// A control input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlVector(pub Vec<f64>);

macro_rules! vector_newtype {
    ($name:ident) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                $name(values)
            }

            pub fn zeros(len: usize) -> Self {
                $name(vec![0.0; len])
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                $name(values)
            }
        }

        impl From<&[f64]> for $name {
            fn from(values: &[f64]) -> Self {
                $name(values.to_vec())
            }
        }
    };
}

vector_newtype!(StateVector);
vector_newtype!(ControlVector);

/// Outcome of testing a state against the safe/unsafe descriptors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateClass {
    Safe,
    Unsafe,
    /// Buffer band between the safe and unsafe descriptors.
    Neither,
}

/// Vector field and set predicates of one system.
///
/// Implementations write into caller-provided buffers so the sampler's inner
/// loop does not allocate.
pub trait SystemModel: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Writes `f(t, x, u)` into `xdot`. Only time-varying references use `t`.
    fn eval(&self, t: f64, x: &[f64], u: &[f64], xdot: &mut [f64]);

    fn is_control_affine(&self) -> bool {
        true
    }

    /// Writes the drift `f0(x)` and the row-major `n×m` input matrix `g(x)`.
    fn affine_parts(&self, t: f64, x: &[f64], drift: &mut [f64], input: &mut [f64]) -> Result<()> {
        let _ = (t, x, drift, input);
        Err(Error::UnsupportedStructure(
            "system dynamics are not control-affine".into(),
        ))
    }

    fn is_safe(&self, x: &[f64]) -> bool;
    fn is_unsafe(&self, x: &[f64]) -> bool;
}

/// A fully specified benchmark system.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub model: Arc<dyn SystemModel>,
    pub control_lo: Vec<f64>,
    pub control_hi: Vec<f64>,
    pub goal: StateVector,
    /// Control that holds the goal in equilibrium.
    pub u_eq: ControlVector,
    /// State-space box `𝒳` used for uniform auditing and contour bounds.
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    /// Initial-state box for training trajectories.
    pub init_lo: Vec<f64>,
    pub init_hi: Vec<f64>,
    /// Initial-state box for evaluation rollouts.
    pub eval_init_lo: Vec<f64>,
    pub eval_init_hi: Vec<f64>,
    /// Every constant the system was built from.
    pub constants: Constants,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("control_lo", &self.control_lo)
            .field("control_hi", &self.control_hi)
            .field("goal", &self.goal)
            .finish()
    }
}

impl SystemSpec {
    /// Loads one of the built-in systems with its bundled constants.
    pub fn builtin(name: &str) -> Result<Self> {
        let constants = constants::builtin_constants(name)?;
        Self::from_constants(name, constants)
    }

    /// Loads a built-in model, reading its constants from `path`.
    pub fn from_constants_file(name: &str, path: &Path) -> Result<Self> {
        let constants = Constants::from_file(path)?;
        Self::from_constants(name, constants)
    }

    pub fn from_constants(name: &str, constants: Constants) -> Result<Self> {
        let model = systems::build_model(name, &constants)?;
        Self::with_model(name, model, constants)
    }

    /// Assembles a spec around an arbitrary model. The common keys (`control_lo`,
    /// `control_hi`, `goal`, `u_eq`, `domain_lo`, `domain_hi`, and optionally the
    /// `init_*`/`eval_init_*` boxes) are read from `constants`.
    pub fn with_model(name: &str, model: Arc<dyn SystemModel>, constants: Constants) -> Result<Self> {
        let n = model.state_dim();
        let m = model.control_dim();
        let vec_of = |key: &str, len: usize| -> Result<Vec<f64>> {
            let v = constants.list(key)?;
            if v.len() != len {
                return Err(Error::config(
                    key,
                    format!("expected {len} entries, found {}", v.len()),
                ));
            }
            Ok(v)
        };
        let control_lo = vec_of("control_lo", m)?;
        let control_hi = vec_of("control_hi", m)?;
        let goal = StateVector(vec_of("goal", n)?);
        let u_eq = ControlVector(vec_of("u_eq", m)?);
        let domain_lo = vec_of("domain_lo", n)?;
        let domain_hi = vec_of("domain_hi", n)?;
        let init_lo = if constants.contains("init_lo") { vec_of("init_lo", n)? } else { domain_lo.clone() };
        let init_hi = if constants.contains("init_hi") { vec_of("init_hi", n)? } else { domain_hi.clone() };
        let eval_init_lo = if constants.contains("eval_init_lo") { vec_of("eval_init_lo", n)? } else { init_lo.clone() };
        let eval_init_hi = if constants.contains("eval_init_hi") { vec_of("eval_init_hi", n)? } else { init_hi.clone() };
        let spec = SystemSpec {
            name: name.to_string(),
            model,
            control_lo,
            control_hi,
            goal,
            u_eq,
            domain_lo,
            domain_hi,
            init_lo,
            init_hi,
            eval_init_lo,
            eval_init_hi,
            constants,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (i, (lo, hi)) in self.control_lo.iter().zip(&self.control_hi).enumerate() {
            if !(lo < hi) {
                return Err(Error::config(
                    "control_lo",
                    format!("control_lo[{i}] = {lo} is not below control_hi[{i}] = {hi}"),
                ));
            }
        }
        for (key, lo, hi) in [
            ("domain_lo", &self.domain_lo, &self.domain_hi),
            ("init_lo", &self.init_lo, &self.init_hi),
            ("eval_init_lo", &self.eval_init_lo, &self.eval_init_hi),
        ] {
            if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
                return Err(Error::config(key, "lower corner exceeds upper corner"));
            }
        }
        if !self.model.is_safe(&self.goal) || self.model.is_unsafe(&self.goal) {
            return Err(Error::config("goal", "goal state is not in the safe set"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.model.state_dim()
    }

    pub fn m(&self) -> usize {
        self.model.control_dim()
    }

    pub fn is_control_affine(&self) -> bool {
        self.model.is_control_affine()
    }

    /// Clamps `u` into the control box in place; returns whether anything moved.
    pub fn clamp_control(&self, u: &mut [f64]) -> bool {
        let mut clamped = false;
        for ((v, lo), hi) in u.iter_mut().zip(&self.control_lo).zip(&self.control_hi) {
            let c = v.clamp(*lo, *hi);
            if c != *v {
                clamped = true;
                *v = c;
            }
        }
        clamped
    }

    /// `ẋ = f(x, u)` at time zero.
    pub fn eval_dynamics(&self, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
        self.eval_dynamics_at(0.0, x, u)
    }

    /// `ẋ = f(t, x, u)`; `t` only matters for systems tracking a time-varying reference.
    pub fn eval_dynamics_at(&self, t: f64, x: &StateVector, u: &ControlVector) -> Result<StateVector> {
        check_dim("state", self.n(), x.len())?;
        check_dim("control", self.m(), u.len())?;
        if !x.is_finite() {
            return Err(Error::NonFinite("state"));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("control"));
        }
        let mut out = vec![0.0; self.n()];
        self.model.eval(t, x, u, &mut out);
        Ok(StateVector(out))
    }

    /// Drift and input matrix of a control-affine system.
    pub fn eval_affine_parts(&self, x: &StateVector) -> Result<(StateVector, DMatrix<f64>)> {
        self.eval_affine_parts_at(0.0, x)
    }

    pub fn eval_affine_parts_at(&self, t: f64, x: &StateVector) -> Result<(StateVector, DMatrix<f64>)> {
        check_dim("state", self.n(), x.len())?;
        if !x.is_finite() {
            return Err(Error::NonFinite("state"));
        }
        let (n, m) = (self.n(), self.m());
        let mut drift = vec![0.0; n];
        let mut input = vec![0.0; n * m];
        self.model.affine_parts(t, x, &mut drift, &mut input)?;
        Ok((StateVector(drift), DMatrix::from_row_slice(n, m, &input)))
    }

    pub fn classify_state(&self, x: &StateVector) -> Result<StateClass> {
        check_dim("state", self.n(), x.len())?;
        Ok(self.classify_slice(x))
    }

    pub(crate) fn classify_slice(&self, x: &[f64]) -> StateClass {
        if self.model.is_unsafe(x) {
            StateClass::Unsafe
        } else if self.model.is_safe(x) {
            StateClass::Safe
        } else {
            StateClass::Neither
        }
    }
}

/// Discretization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Step length in seconds.
    pub dt: f64,
    pub scheme: Scheme,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: 0.1,
            scheme: Scheme::Rk4,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("integrator.dt", "must be a positive finite number"));
        }
        Ok(())
    }
}

/// Reusable buffers for allocation-free stepping.
#[derive(Debug, Clone)]
pub struct StepScratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(n: usize) -> Self {
        StepScratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One integration step from `x` at time `t`, writing into `next`. Returns
/// false if the result is not finite.
pub(crate) fn step_into(
    model: &dyn SystemModel,
    t: f64,
    x: &[f64],
    u: &[f64],
    cfg: &IntegratorConfig,
    scratch: &mut StepScratch,
    next: &mut [f64],
) -> bool {
    let dt = cfg.dt;
    match cfg.scheme {
        Scheme::Euler => {
            model.eval(t, x, u, &mut scratch.k1);
            for i in 0..x.len() {
                next[i] = x[i] + dt * scratch.k1[i];
            }
        }
        Scheme::Rk4 => {
            let StepScratch { k1, k2, k3, k4, tmp } = scratch;
            model.eval(t, x, u, k1);
            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            model.eval(t + 0.5 * dt, tmp, u, k2);
            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            model.eval(t + 0.5 * dt, tmp, u, k3);
            for i in 0..x.len() {
                tmp[i] = x[i] + dt * k3[i];
            }
            model.eval(t + dt, tmp, u, k4);
            for i in 0..x.len() {
                next[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    next.iter().all(|v| v.is_finite())
}

/// Advances `x` by one step with `u` held constant.
pub fn step(sys: &SystemSpec, x: &StateVector, u: &ControlVector, cfg: &IntegratorConfig) -> Result<StateVector> {
    step_at(sys, 0.0, x, u, cfg)
}

pub fn step_at(
    sys: &SystemSpec,
    t: f64,
    x: &StateVector,
    u: &ControlVector,
    cfg: &IntegratorConfig,
) -> Result<StateVector> {
    cfg.validate()?;
    check_dim("state", sys.n(), x.len())?;
    check_dim("control", sys.m(), u.len())?;
    if !x.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite("step input"));
    }
    let mut scratch = StepScratch::new(sys.n());
    let mut next = vec![0.0; sys.n()];
    if !step_into(sys.model.as_ref(), t, x, u, cfg, &mut scratch, &mut next) {
        return Err(Error::IntegrationBlowup {
            index: 0,
            state: next,
        });
    }
    Ok(StateVector(next))
}

/// Result of a rollout: `states[t]` is the state after applying `controls[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<StateVector>,
    /// Controls actually applied (after clamping).
    pub controls: Vec<ControlVector>,
    /// Per-step flag: whether the requested control was clamped.
    pub clamped: Vec<bool>,
}

/// Rolls out `controls` from `x0`, clamping each control into the bounds.
pub fn rollout(
    sys: &SystemSpec,
    x0: &StateVector,
    controls: &[ControlVector],
    cfg: &IntegratorConfig,
) -> Result<Rollout> {
    rollout_at(sys, 0.0, x0, controls, cfg)
}

pub fn rollout_at(
    sys: &SystemSpec,
    t0: f64,
    x0: &StateVector,
    controls: &[ControlVector],
    cfg: &IntegratorConfig,
) -> Result<Rollout> {
    cfg.validate()?;
    check_dim("state", sys.n(), x0.len())?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial state"));
    }
    let n = sys.n();
    let mut scratch = StepScratch::new(n);
    let mut states = Vec::with_capacity(controls.len());
    let mut applied = Vec::with_capacity(controls.len());
    let mut clamped = Vec::with_capacity(controls.len());
    let mut x = x0.0.clone();
    let mut next = vec![0.0; n];
    for (index, u) in controls.iter().enumerate() {
        check_dim("control", sys.m(), u.len())?;
        if !u.is_finite() {
            return Err(Error::NonFinite("control"));
        }
        let mut u = u.0.clone();
        clamped.push(sys.clamp_control(&mut u));
        let t = t0 + index as f64 * cfg.dt;
        if !step_into(sys.model.as_ref(), t, &x, &u, cfg, &mut scratch, &mut next) {
            return Err(Error::IntegrationBlowup {
                index,
                state: x.clone(),
            });
        }
        x.copy_from_slice(&next);
        states.push(StateVector(x.clone()));
        applied.push(ControlVector(u));
    }
    Ok(Rollout {
        states,
        controls: applied,
        clamped,
    })
}

/// Allocation-free rollout of already-clamped controls laid out `T×m` row-major
/// into `states` (`T×n`). On blowup returns the failing step index.
pub(crate) fn rollout_flat(
    model: &dyn SystemModel,
    t0: f64,
    x0: &[f64],
    controls: &[f64],
    cfg: &IntegratorConfig,
    scratch: &mut StepScratch,
    states: &mut [f64],
) -> std::result::Result<(), usize> {
    let n = model.state_dim();
    let m = model.control_dim();
    let horizon = if m == 0 { states.len() / n.max(1) } else { controls.len() / m };
    for t in 0..horizon {
        let (done, rest) = states.split_at_mut(t * n);
        let prev: &[f64] = if t == 0 { x0 } else { &done[(t - 1) * n..] };
        let u = &controls[t * m..(t + 1) * m];
        let time = t0 + t as f64 * cfg.dt;
        if !step_into(model, time, prev, u, cfg, scratch, &mut rest[..n]) {
            return Err(t);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn pendulum() -> SystemSpec {
        SystemSpec::builtin("pendulum").unwrap()
    }

    #[test]
    fn pendulum_equilibrium_is_fixed() {
        let sys = pendulum();
        let xdot = sys
            .eval_dynamics(&StateVector::zeros(2), &ControlVector::zeros(1))
            .unwrap();
        assert_eq!(xdot.0, vec![0.0, 0.0]);
    }

    #[test]
    fn pendulum_torque_enters_with_unit_inertia() {
        let sys = pendulum();
        let xdot = sys
            .eval_dynamics(&StateVector::zeros(2), &ControlVector(vec![2.0]))
            .unwrap();
        assert_eq!(xdot.0, vec![0.0, 2.0]);
    }

    #[test]
    fn pendulum_gravity_at_thirty_degrees() {
        let sys = pendulum();
        let xdot = sys
            .eval_dynamics(&StateVector(vec![PI / 6.0, 0.0]), &ControlVector(vec![0.0]))
            .unwrap();
        assert_abs_diff_eq!(xdot[0], 0.0);
        assert_abs_diff_eq!(xdot[1], -4.905, epsilon = 1e-12);
    }

    #[test]
    fn pendulum_affine_parts() {
        let sys = pendulum();
        let (drift, g) = sys.eval_affine_parts(&StateVector::zeros(2)).unwrap();
        assert_eq!(drift.0, vec![0.0, 0.0]);
        assert_eq!(g.shape(), (2, 1));
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 0)], 1.0);
    }

    #[test]
    fn lander_input_matrix_is_inverse_mass_block() {
        let sys = SystemSpec::builtin("neural_lander").unwrap();
        let mass = sys.constants.scalar("mass").unwrap();
        let (_, g) = sys.eval_affine_parts(&StateVector(vec![0.3, -0.2, 0.5, 0.1, 0.0, -0.4])).unwrap();
        for r in 0..6 {
            for c in 0..3 {
                let expected = if r >= 3 && r - 3 == c { 1.0 / mass } else { 0.0 };
                assert_eq!(g[(r, c)], expected, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn nonaffine_system_rejects_affine_split() {
        let sys = SystemSpec::builtin("nonaffine_pendulum").unwrap();
        let err = sys.eval_affine_parts(&StateVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedStructure(_)));
    }

    #[test]
    fn dimension_and_domain_errors() {
        let sys = pendulum();
        assert!(matches!(
            sys.eval_dynamics(&StateVector::zeros(3), &ControlVector::zeros(1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            sys.eval_dynamics(&StateVector(vec![f64::NAN, 0.0]), &ControlVector::zeros(1)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn euler_step_matches_hand_update() {
        let sys = pendulum();
        let cfg = IntegratorConfig { dt: 0.1, scheme: Scheme::Euler };
        let next = step(&sys, &StateVector::zeros(2), &ControlVector(vec![1.0]), &cfg).unwrap();
        assert_abs_diff_eq!(next[0], 0.0);
        assert_abs_diff_eq!(next[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn equilibrium_is_fixed_under_both_schemes() {
        let sys = pendulum();
        for scheme in [Scheme::Euler, Scheme::Rk4] {
            let cfg = IntegratorConfig { dt: 0.1, scheme };
            let next = step(&sys, &StateVector::zeros(2), &ControlVector::zeros(1), &cfg).unwrap();
            assert_eq!(next.0, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn step_rejects_nonpositive_dt() {
        let sys = pendulum();
        let cfg = IntegratorConfig { dt: 0.0, scheme: Scheme::Euler };
        assert!(step(&sys, &StateVector::zeros(2), &ControlVector::zeros(1), &cfg).is_err());
    }

    /// Max state error of 1 s of RK4 against explicit Euler with `substeps`
    /// per coarse step, written out directly.
    fn rk4_vs_fine_euler(x0: [f64; 2], u: f64, substeps: usize) -> f64 {
        let sys = pendulum();
        let coarse = IntegratorConfig { dt: 0.1, scheme: Scheme::Rk4 };
        let rk4 = rollout(&sys, &StateVector(x0.to_vec()), &vec![ControlVector(vec![u]); 10], &coarse).unwrap();
        let h = 0.1 / substeps as f64;
        let (mut th, mut om) = (x0[0], x0[1]);
        let mut max_err = 0.0_f64;
        for k in 0..10 {
            for _ in 0..substeps {
                let dom = -9.81 * th.sin() + u;
                th += h * om;
                om += h * dom;
            }
            let s = &rk4.states[k];
            max_err = max_err.max((s[0] - th).abs()).max((s[1] - om).abs());
        }
        max_err
    }

    #[test]
    fn rk4_matches_fine_euler_reference() {
        let err = rk4_vs_fine_euler([0.1, 0.0], 0.0, 1000);
        assert!(err <= 1e-4, "max error {err}");
        let err = rk4_vs_fine_euler([0.0, 0.0], 1.0, 1000);
        assert!(err <= 1e-4, "max error {err}");
    }

    #[test]
    fn rollout_of_zero_controls_stays_at_equilibrium() {
        let sys = pendulum();
        let out = rollout(&sys, &StateVector::zeros(2), &vec![ControlVector::zeros(1); 6], &IntegratorConfig::default()).unwrap();
        assert!(out.states.iter().all(|s| s.0 == vec![0.0, 0.0]));
    }

    #[test]
    fn single_step_rollout_is_step() {
        let sys = pendulum();
        let cfg = IntegratorConfig { dt: 0.1, scheme: Scheme::Euler };
        let x0 = StateVector(vec![0.2, 0.1]);
        let u = ControlVector(vec![0.5]);
        let r = rollout(&sys, &x0, std::slice::from_ref(&u), &cfg).unwrap();
        assert_eq!(r.states[0], step(&sys, &x0, &u, &cfg).unwrap());
    }

    #[test]
    fn five_step_euler_rollout_matches_manual_iteration() {
        let sys = pendulum();
        let cfg = IntegratorConfig { dt: 0.1, scheme: Scheme::Euler };
        let r = rollout(&sys, &StateVector::zeros(2), &vec![ControlVector(vec![1.0]); 5], &cfg).unwrap();
        // theta_{k+1} = theta_k + 0.1 omega_k ; omega_{k+1} = omega_k + 0.1 (-9.81 sin theta_k + 1)
        let expected = [
            (0.0, 0.1),
            (0.01, 0.2),
            (0.03, 0.2 + 0.1 * (1.0 - 9.81 * 0.01_f64.sin())),
        ];
        for (k, (th, om)) in expected.iter().enumerate() {
            assert_abs_diff_eq!(r.states[k][0], *th, epsilon = 1e-14);
            assert_abs_diff_eq!(r.states[k][1], *om, epsilon = 1e-14);
        }
        let (mut th, mut om) = (0.0_f64, 0.0_f64);
        for k in 0..5 {
            let dom = -9.81 * th.sin() + 1.0;
            th += 0.1 * om;
            om += 0.1 * dom;
            assert_abs_diff_eq!(r.states[k][0], th, epsilon = 1e-14);
            assert_abs_diff_eq!(r.states[k][1], om, epsilon = 1e-14);
        }
    }

    #[test]
    fn rollout_clamps_out_of_bound_controls() {
        let sys = pendulum();
        let big = sys.control_hi[0] + 100.0;
        let r = rollout(&sys, &StateVector::zeros(2), &[ControlVector(vec![big])], &IntegratorConfig::default()).unwrap();
        assert!(r.clamped[0]);
        assert_eq!(r.controls[0][0], sys.control_hi[0]);
    }

    #[test]
    fn rollout_reports_blowup_index() {
        let sys = pendulum();
        let cfg = IntegratorConfig { dt: 1e300, scheme: Scheme::Euler };
        let err = rollout(&sys, &StateVector(vec![0.1, 1e10]), &vec![ControlVector::zeros(1); 3], &cfg).unwrap_err();
        assert!(matches!(err, Error::IntegrationBlowup { .. }));
    }

    #[test]
    fn segway_obstacle_classification() {
        let sys = SystemSpec::builtin("segway").unwrap();
        // Top of the segway is (p + sin θ, cos θ); with θ = 0 it sits at (p, 1).
        let at = |d: f64| StateVector(vec![d, 0.0, 0.0, 0.0]);
        assert_eq!(sys.classify_state(&at(0.05)).unwrap(), StateClass::Unsafe);
        assert_eq!(sys.classify_state(&at(0.20)).unwrap(), StateClass::Safe);
        assert_eq!(sys.classify_state(&at(0.12)).unwrap(), StateClass::Neither);
    }

    #[test]
    fn pendulum_sets() {
        let sys = pendulum();
        assert_eq!(sys.classify_state(&StateVector(vec![0.1, 0.1])).unwrap(), StateClass::Safe);
        assert_eq!(sys.classify_state(&StateVector(vec![1.0, 0.0])).unwrap(), StateClass::Neither);
        assert_eq!(sys.classify_state(&StateVector(vec![1.6, 0.0])).unwrap(), StateClass::Unsafe);
        assert_eq!(sys.classify_state(&StateVector(vec![0.0, 2.6])).unwrap(), StateClass::Unsafe);
    }
}
