//! Evaluation metrics, violation auditing and contour export.

mod contour;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clbf::{dot, Certificate, CertificateConfig};
use crate::diffusion::{sample_trajectory, trajectory_rows, Guidance, SamplerConfig, TrajectorySample};
use crate::dynamics::{ControlVector, StateClass, StateVector, SystemSpec};
use crate::error::{check_dim, Error, Result};
use crate::rng::StreamKey;

pub use contour::{contour_slice, write_contour_csv, ContourSlice, PLOT_SCRIPT};

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub num_rollouts: usize,
    /// Executed steps per rollout; the plan is resampled every `sampler.horizon` steps.
    pub episode_steps: usize,
    /// Uniform states for the violation-rate audit.
    pub violation_states: usize,
    /// Random controls per audited state, on top of the control-box vertices.
    pub violation_controls: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            num_rollouts: 20,
            episode_steps: 50,
            violation_states: 10_000,
            violation_controls: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rollouts == 0 {
            return Err(Error::config("eval.num_rollouts", "must be >= 1"));
        }
        if self.episode_steps == 0 {
            return Err(Error::config("eval.episode_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Aggregate metrics; serialized as `metrics.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub safety_rate: f64,
    pub terminal_error_mean: f64,
    pub terminal_error_std: f64,
    pub violation_rate: f64,
    pub violation_half_width: f64,
    pub monotonicity_fraction: f64,
    /// Mean over trajectories of `Σ_t [L_fV(x_t, u_t) + λV(x_t)]⁺`.
    pub stability_hinge_mean: f64,
    pub eval_time_ms_mean: f64,
    pub eval_time_ms_std: f64,
    pub wall_ms: f64,
}

impl MetricsReport {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        MetricsReport {
            eval_time_ms_mean: 0.0,
            eval_time_ms_std: 0.0,
            wall_ms: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fraction of consecutive pairs with `v[t+1] > v[t] + 1e−9`.
pub fn monotonicity_of_values(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Contract("monotonicity needs at least two values".into()));
    }
    let ups = values.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    Ok(ups as f64 / (values.len() - 1) as f64)
}

/// Fraction of steps along `x_0, …, x_T` where `V` increases.
pub fn monotonicity_fraction(cert: &dyn Certificate, sample: &TrajectorySample) -> Result<f64> {
    let values: Vec<f64> = sample.all_states().map(|x| cert.value_at(x)).collect();
    monotonicity_of_values(&values)
}

/// `Σ_t [L_fV(x_t, u_t) + λV(x_t)]⁺` along a trajectory.
pub fn stability_hinge_energy(
    sys: &SystemSpec,
    cert: &dyn Certificate,
    ccfg: &CertificateConfig,
    sample: &TrajectorySample,
) -> f64 {
    trajectory_rows(sys, cert, ccfg, sample)
        .iter()
        .filter(|r| !r.hinge.is_nan())
        .map(|r| r.hinge)
        .sum()
}

/// Whether any of `x_0, …, x_T` lies in the unsafe set.
pub fn enters_unsafe(sys: &SystemSpec, sample: &TrajectorySample) -> bool {
    sample.all_states().any(|x| sys.classify_slice(x) == StateClass::Unsafe)
}

/// Monte-Carlo estimate of the relative volume of the violation region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationEstimate {
    pub rate: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub num_states: usize,
}

fn box_vertices(lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
    let m = lo.len();
    (0..1usize << m)
        .map(|mask| (0..m).map(|j| if mask >> j & 1 == 1 { hi[j] } else { lo[j] }).collect())
        .collect()
}

pub(crate) fn uniform_in_box(rng: &mut impl Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&a, &b)| if b > a { rng.random_range(a..=b) } else { a })
        .collect()
}

/// Whether no candidate control achieves `L_fV(x, u) + λV(x) ≤ 0`.
pub(crate) fn violates(
    sys: &SystemSpec,
    cert: &dyn Certificate,
    ccfg: &CertificateConfig,
    x: &[f64],
    controls: &[Vec<f64>],
    grad: &mut [f64],
    f: &mut [f64],
) -> bool {
    let v = cert.value_and_grad_at(x, grad);
    let mut best = f64::INFINITY;
    for u in controls {
        sys.model.eval(0.0, x, u, f);
        best = best.min(dot(grad, f));
    }
    best + ccfg.lambda * v > 0.0
}

/// Candidate controls for the audit: `num_controls` uniform draws plus every
/// vertex of the control box.
pub(crate) fn audit_controls(sys: &SystemSpec, num_controls: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut controls = box_vertices(&sys.control_lo, &sys.control_hi);
    controls.extend((0..num_controls).map(|_| uniform_in_box(rng, &sys.control_lo, &sys.control_hi)));
    controls
}

/// Fraction of uniformly drawn domain states where the dissipation condition
/// fails for every candidate control.
pub fn violation_rate_estimate(
    sys: &SystemSpec,
    cert: &dyn Certificate,
    ccfg: &CertificateConfig,
    num_states: usize,
    num_controls_per_state: usize,
    key: StreamKey,
) -> Result<ViolationEstimate> {
    if num_states == 0 {
        return Err(Error::Contract("violation estimate needs at least one state".into()));
    }
    check_dim("certificate input", sys.n(), cert.input_dim())?;
    let n = sys.n();
    let violations: usize = (0..num_states)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(grad, f), i| {
                let mut rng = key.child(i as u64).rng();
                let x = uniform_in_box(&mut rng, &sys.domain_lo, &sys.domain_hi);
                let controls = audit_controls(sys, num_controls_per_state, &mut rng);
                violates(sys, cert, ccfg, &x, &controls, grad, f) as usize
            },
        )
        .sum();
    let p = violations as f64 / num_states as f64;
    Ok(ViolationEstimate {
        rate: p,
        half_width: 1.96 * (p * (1.0 - p) / num_states as f64).sqrt(),
        num_states,
    })
}

/// One closed-loop evaluation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub trajectory: TrajectorySample,
    pub safe: bool,
    pub terminal_error: f64,
    pub monotonicity: f64,
    pub stability_hinge: f64,
    pub wall_ms: f64,
    /// Reverse-diffusion steps that fell back to unweighted means.
    pub fallback_steps: usize,
}

/// Runs one receding-horizon episode: plan `T` steps, execute them all, replan.
pub fn run_episode(
    guidance: &Guidance<'_>,
    scfg: &SamplerConfig,
    steps: usize,
    x0: &StateVector,
    key: StreamKey,
) -> Result<Episode> {
    let start = Instant::now();
    let mut x = x0.clone();
    let mut controls: Vec<ControlVector> = Vec::with_capacity(steps);
    let mut fallback_steps = 0;
    let mut plan = 0u64;
    while controls.len() < steps {
        let t0 = controls.len() as f64 * guidance.integ.dt;
        let (sample, diag) = sample_trajectory(guidance, scfg, &x, t0, key.child(plan))?;
        fallback_steps += diag.fallback_steps();
        let take = (steps - controls.len()).min(sample.horizon());
        controls.extend_from_slice(&sample.controls()[..take]);
        x = sample.states()[take - 1].clone();
        plan += 1;
    }
    let trajectory = TrajectorySample::from_controls(guidance.sys, x0.clone(), 0.0, controls, guidance.integ)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let sys = guidance.sys;
    let err: Vec<f64> = trajectory
        .final_state()
        .iter()
        .zip(sys.goal.iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok(Episode {
        safe: !enters_unsafe(sys, &trajectory),
        terminal_error: dot(&err, &err).sqrt(),
        monotonicity: monotonicity_fraction(guidance.cert, &trajectory)?,
        stability_hinge: stability_hinge_energy(sys, guidance.cert, guidance.ccfg, &trajectory),
        wall_ms,
        fallback_steps,
        trajectory,
    })
}

/// Summarizes episodes; violation fields are left at zero.
pub fn summarize(episodes: &[Episode]) -> MetricsReport {
    let n = episodes.len().max(1) as f64;
    let terminal: Vec<f64> = episodes.iter().map(|e| e.terminal_error).collect();
    let times: Vec<f64> = episodes.iter().map(|e| e.wall_ms).collect();
    let (te_mean, te_std) = mean_std(&terminal);
    let (t_mean, t_std) = mean_std(&times);
    MetricsReport {
        safety_rate: episodes.iter().filter(|e| e.safe).count() as f64 / n,
        terminal_error_mean: te_mean,
        terminal_error_std: te_std,
        monotonicity_fraction: episodes.iter().map(|e| e.monotonicity).sum::<f64>() / n,
        stability_hinge_mean: episodes.iter().map(|e| e.stability_hinge).sum::<f64>() / n,
        eval_time_ms_mean: t_mean,
        eval_time_ms_std: t_std,
        ..Default::default()
    }
}

/// Closed-loop evaluation from `ecfg.num_rollouts` initial states drawn from
/// the system's evaluation box. Rollout `r` uses substream `key.child(r)`.
pub fn evaluate_policy(
    guidance: &Guidance<'_>,
    scfg: &SamplerConfig,
    ecfg: &EvalConfig,
    key: StreamKey,
) -> Result<(MetricsReport, Vec<Episode>)> {
    ecfg.validate()?;
    let sys = guidance.sys;
    let start = Instant::now();
    let episodes = (0..ecfg.num_rollouts)
        .into_par_iter()
        .map(|r| {
            let k = key.child(r as u64);
            let x0 = StateVector(uniform_in_box(&mut k.child(0).rng(), &sys.eval_init_lo, &sys.eval_init_hi));
            run_episode(guidance, scfg, ecfg.episode_steps, &x0, k.child(1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = summarize(&episodes);
    if ecfg.violation_states > 0 {
        let v = violation_rate_estimate(
            sys,
            guidance.cert,
            guidance.ccfg,
            ecfg.violation_states,
            ecfg.violation_controls,
            key.child(u64::MAX),
        )?;
        report.violation_rate = v.rate;
        report.violation_half_width = v.half_width;
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((report, episodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clbf::MlpCertificate;
    use crate::diffusion::GuidanceConfig;
    use crate::dynamics::{Constants, IntegratorConfig, SystemModel};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Unstable;
    impl SystemModel for Unstable {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn eval(&self, _: f64, x: &[f64], _: &[f64], xdot: &mut [f64]) {
            xdot[0] = x[0];
        }
        fn is_safe(&self, _: &[f64]) -> bool {
            true
        }
        fn is_unsafe(&self, _: &[f64]) -> bool {
            false
        }
    }

    struct Square;
    impl Certificate for Square {
        fn input_dim(&self) -> usize {
            1
        }
        fn value_at(&self, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn value_and_grad_at(&self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        }
    }

    fn unstable_system() -> SystemSpec {
        let c = Constants::parse(
            "control_lo = []\ncontrol_hi = []\ngoal = [0.0]\nu_eq = []\ndomain_lo = [-1.0]\ndomain_hi = [1.0]\n",
        )
        .unwrap();
        SystemSpec::with_model("unstable", Arc::new(Unstable), c).unwrap()
    }

    #[test]
    fn monotonicity_edges() {
        assert_eq!(monotonicity_of_values(&[3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(monotonicity_of_values(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        let mut dec = vec![5.0, 4.0, 2.5, 1.0];
        dec.reverse();
        assert_eq!(monotonicity_of_values(&dec).unwrap(), 1.0);
        assert_eq!(monotonicity_of_values(&[1.0, 1.0 + 1e-12]).unwrap(), 0.0);
        assert!(monotonicity_of_values(&[1.0]).is_err());
    }

    #[test]
    fn zero_net_never_violates() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::zeros(&[2, 8, 1]).unwrap();
        let v = violation_rate_estimate(&sys, &cert, &CertificateConfig::default(), 500, 8, StreamKey::new(0)).unwrap();
        assert_eq!(v.rate, 0.0);
        assert_eq!(v.half_width, 0.0);
    }

    #[test]
    fn unstable_scalar_system_violates_everywhere() {
        // L_fV + λV = 2x² + x² > 0 for x ≠ 0.
        let sys = unstable_system();
        let v = violation_rate_estimate(&sys, &Square, &CertificateConfig::default(), 2000, 4, StreamKey::new(1)).unwrap();
        assert!(v.rate > 0.999, "{}", v.rate);
    }

    #[test]
    fn vertices_of_control_box() {
        let v = box_vertices(&[0.0, -1.0], &[1.0, 2.0]);
        assert_eq!(v.len(), 4);
        assert!(v.contains(&vec![1.0, 2.0]) && v.contains(&vec![0.0, -1.0]));
        assert_eq!(box_vertices(&[], &[]), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn more_controls_never_certify_fewer_states() {
        // Same states, superset of controls: the violating set can only shrink.
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::init(&[2, 16, 1], 3).unwrap();
        let ccfg = CertificateConfig::default();
        let (mut grad, mut f) = (vec![0.0; 2], vec![0.0; 2]);
        let mut rng = StreamKey::new(4).rng();
        for _ in 0..200 {
            let x = uniform_in_box(&mut rng, &sys.domain_lo, &sys.domain_hi);
            let few = audit_controls(&sys, 2, &mut rng);
            let mut many = few.clone();
            many.extend(audit_controls(&sys, 30, &mut rng));
            if !violates(&sys, &cert, &ccfg, &x, &few, &mut grad, &mut f) {
                assert!(!violates(&sys, &cert, &ccfg, &x, &many, &mut grad, &mut f));
            }
        }
    }

    #[test]
    fn episode_at_goal_with_zero_net() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::zeros(&[2, 4, 1]).unwrap();
        let cost = |_: &[f64], u: &[f64]| u[0] * u[0];
        let gcfg = GuidanceConfig {
            gamma: 1e-3,
            ..Default::default()
        };
        let g = Guidance {
            sys: &sys,
            cert: &cert,
            ccfg: &CertificateConfig::default(),
            gcfg: &gcfg,
            integ: &IntegratorConfig::default(),
            cost: &cost,
        };
        let scfg = SamplerConfig {
            num_candidates: 32,
            ..Default::default()
        };
        let ep = run_episode(&g, &scfg, 7, &sys.goal, StreamKey::new(2)).unwrap();
        assert_eq!(ep.trajectory.horizon(), 7);
        assert!(ep.safe);
        assert!(ep.terminal_error < 0.5);
        let report = summarize(&[ep.clone(), ep]);
        assert_eq!(report.safety_rate, 1.0);
        assert_eq!(report.terminal_error_std, 0.0);
    }
}
