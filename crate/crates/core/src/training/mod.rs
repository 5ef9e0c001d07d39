//! Alternating training: guided trajectory collection, then certificate updates.

mod optimizer;

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clbf::{clbf_loss_grad, Certificate, CertificateConfig, Checkpoint, Label, LabeledState, MlpCertificate};
use crate::diffusion::{
    sample_trajectory, trajectory_rows, write_trajectory_csv, Guidance, GuidanceConfig, QuadraticCost, SamplerConfig,
    TrajectorySample,
};
use crate::dynamics::{step_into, ControlVector, IntegratorConfig, StateClass, StateVector, StepScratch, SystemSpec};
use crate::error::{Error, Result};
use crate::eval::{
    audit_controls, enters_unsafe, mean_std, monotonicity_fraction, stability_hinge_energy, uniform_in_box,
    violation_rate_estimate, MetricsReport,
};
use crate::rng::StreamKey;

pub use optimizer::OptimizerState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of collect/update rounds `K`.
    pub epochs: usize,
    /// Initial states sampled per epoch (`B`).
    pub batch_initial_states: usize,
    pub grad_steps_per_epoch: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs of data kept in the replay window; 1 keeps only the newest epoch.
    pub replay_epochs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Extra uniformly drawn domain states per epoch, each paired with the
    /// audit control that best decreases the current certificate.
    pub domain_samples: usize,
    /// States for the per-epoch violation estimate (0 skips it).
    pub violation_states: usize,
    /// Overrides of the system's initial-state box.
    pub init_lo: Option<Vec<f64>>,
    pub init_hi: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_initial_states: 16,
            grad_steps_per_epoch: 200,
            minibatch: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            replay_epochs: 5,
            hidden_layers: 3,
            hidden_width: 64,
            domain_samples: 256,
            violation_states: 2000,
            init_lo: None,
            init_hi: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        if self.batch_initial_states == 0 {
            return Err(Error::config("training.batch_initial_states", "must be >= 1"));
        }
        if self.minibatch == 0 {
            return Err(Error::config("training.minibatch", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("training.learning_rate", "must be > 0"));
        }
        for (field, b) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("training.adam_eps", "must be > 0"));
        }
        if self.replay_epochs == 0 {
            return Err(Error::config("training.replay_epochs", "must be >= 1"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("training.hidden_width", "must be >= 1"));
        }
        let (lo, hi) = self.init_box(sys);
        if lo.len() != sys.n() || hi.len() != sys.n() {
            return Err(Error::config("training.init_lo", format!("expected {} entries", sys.n())));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::config("training.init_lo", "lower corner exceeds upper corner"));
        }
        Ok(())
    }

    pub fn init_box(&self, sys: &SystemSpec) -> (Vec<f64>, Vec<f64>) {
        (
            self.init_lo.clone().unwrap_or_else(|| sys.init_lo.clone()),
            self.init_hi.clone().unwrap_or_else(|| sys.init_hi.clone()),
        )
    }
}

/// Every configuration a training run needs.
#[derive(Clone, Debug)]
pub struct TrainSetup<'a> {
    pub sys: &'a SystemSpec,
    pub ccfg: CertificateConfig,
    pub gcfg: GuidanceConfig,
    pub scfg: SamplerConfig,
    pub integ: IntegratorConfig,
    pub tcfg: TrainConfig,
    pub seed: u64,
}

impl TrainSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        self.ccfg.validate()?;
        self.gcfg.validate()?;
        self.scfg.validate()?;
        self.integ.validate()?;
        self.tcfg.validate(self.sys)
    }

    pub fn initial_certificate(&self) -> Result<MlpCertificate> {
        MlpCertificate::for_system(self.sys, self.tcfg.hidden_layers, self.tcfg.hidden_width, self.seed)
    }

    fn cost(&self) -> QuadraticCost {
        QuadraticCost::for_system(self.sys, self.gcfg.control_weight)
    }
}

pub fn label_of(sys: &SystemSpec, x: &[f64]) -> Label {
    match sys.classify_slice(x) {
        StateClass::Safe => Label::Safe,
        StateClass::Unsafe => Label::Unsafe,
        StateClass::Neither => Label::Interior,
    }
}

/// Labeled states from the epochs inside the replay window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayDataset {
    entries: Vec<(usize, LabeledState)>,
    window: usize,
}

impl ReplayDataset {
    pub fn new(window: usize) -> Self {
        ReplayDataset {
            entries: Vec::new(),
            window: window.max(1),
        }
    }

    /// Adds one epoch of data and evicts epochs that fell out of the window.
    pub fn push_epoch(&mut self, epoch: usize, states: Vec<LabeledState>) {
        let oldest = (epoch + 1).saturating_sub(self.window);
        self.entries.retain(|(e, _)| *e >= oldest);
        self.entries.extend(states.into_iter().map(|s| (epoch, s)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.entries.iter().map(|(e, _)| *e).collect();
        e.dedup();
        e
    }

    pub fn states(&self) -> impl Iterator<Item = &LabeledState> {
        self.entries.iter().map(|(_, s)| s)
    }

    pub fn get(&self, i: usize) -> &LabeledState {
        &self.entries[i].1
    }
}

/// Output of one collection phase.
#[derive(Clone, Debug)]
pub struct Collected {
    pub trajectories: Vec<TrajectorySample>,
    /// One entry per visited transition plus the goal anchor.
    pub states: Vec<LabeledState>,
    /// Initial states whose sampling failed.
    pub failures: usize,
}

/// Samples `B` guided trajectories from random initial states and labels
/// every transition. Trajectory `b` uses substream `key.child(b)`.
pub fn collect_phase(setup: &TrainSetup<'_>, cert: &dyn Certificate, key: StreamKey) -> Result<Collected> {
    let sys = setup.sys;
    let (lo, hi) = setup.tcfg.init_box(sys);
    let cost = setup.cost();
    let guidance = Guidance {
        sys,
        cert,
        ccfg: &setup.ccfg,
        gcfg: &setup.gcfg,
        integ: &setup.integ,
        cost: &cost,
    };
    let results: Vec<Option<TrajectorySample>> = (0..setup.tcfg.batch_initial_states)
        .into_par_iter()
        .map(|b| {
            let k = key.child(b as u64);
            let x0 = StateVector(uniform_in_box(&mut k.child(0).rng(), &lo, &hi));
            sample_trajectory(&guidance, &setup.scfg, &x0, 0.0, k.child(1)).ok().map(|(s, _)| s)
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let trajectories: Vec<TrajectorySample> = results.into_iter().flatten().collect();
    if trajectories.is_empty() {
        return Err(Error::CollectionFailed(failures));
    }
    let mut states = Vec::new();
    for traj in &trajectories {
        let mut prev = traj.x0();
        for (t, (u, next)) in traj.controls().iter().zip(traj.states()).enumerate() {
            states.push(LabeledState::transition(
                prev.clone(),
                label_of(sys, prev),
                u.clone(),
                next.clone(),
                traj.time(t),
            ));
            prev = next;
        }
    }
    states.push(LabeledState::goal(sys.goal.clone()));
    Ok(Collected {
        trajectories,
        states,
        failures,
    })
}

/// Uniform domain states, each with the audit control minimizing `L_fV` under
/// the current certificate and the resulting successor.
pub fn domain_samples(setup: &TrainSetup<'_>, cert: &dyn Certificate, count: usize, key: StreamKey) -> Vec<LabeledState> {
    let sys = setup.sys;
    let n = sys.n();
    (0..count)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n], vec![0.0; n], StepScratch::new(n)),
            |(grad, f, next, scratch), i| {
                let mut rng = key.child(i as u64).rng();
                let x = uniform_in_box(&mut rng, &sys.domain_lo, &sys.domain_hi);
                let controls = audit_controls(sys, 16, &mut rng);
                cert.value_and_grad_at(&x, grad);
                let mut best = (f64::INFINITY, 0);
                for (k, u) in controls.iter().enumerate() {
                    sys.model.eval(0.0, &x, u, f);
                    let lie = crate::clbf::dot(grad, f);
                    if lie < best.0 {
                        best = (lie, k);
                    }
                }
                let u = &controls[best.1];
                if !step_into(sys.model.as_ref(), 0.0, &x, u, &setup.integ, scratch, next) {
                    return None;
                }
                Some(LabeledState::transition(
                    StateVector(x.clone()),
                    label_of(sys, &x),
                    ControlVector(u.clone()),
                    StateVector(next.clone()),
                    0.0,
                ))
            },
        )
        .flatten()
        .collect()
}

/// Adam steps on minibatches drawn from the replay window, each with the
/// goal anchor appended. Returns the per-step loss trace.
pub fn update_phase(
    cert: &mut MlpCertificate,
    setup: &TrainSetup<'_>,
    dataset: &ReplayDataset,
    opt: &mut OptimizerState,
    key: StreamKey,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Contract("update phase needs a nonempty dataset".into()));
    }
    let tcfg = &setup.tcfg;
    let mut rng = key.rng();
    let anchor = LabeledState::goal(setup.sys.goal.clone());
    let mut trace = Vec::with_capacity(tcfg.grad_steps_per_epoch);
    for step in 0..tcfg.grad_steps_per_epoch {
        let mut batch: Vec<LabeledState> = if dataset.len() <= tcfg.minibatch {
            dataset.states().cloned().collect()
        } else {
            sample_indices(&mut rng, dataset.len(), tcfg.minibatch)
                .into_iter()
                .map(|i| dataset.get(i).clone())
                .collect()
        };
        batch.push(anchor.clone());
        let (loss, grad) = clbf_loss_grad(cert, &setup.ccfg, setup.sys, &batch).map_err(|e| match e {
            Error::NonFinite(_) => Error::TrainingDivergence {
                minibatch: step,
                loss: f64::NAN,
            },
            other => other,
        })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { minibatch: step, loss });
        }
        opt.step(cert.params_mut(), &grad, tcfg);
        trace.push(loss);
    }
    if !cert.is_finite() {
        return Err(Error::TrainingDivergence {
            minibatch: tcfg.grad_steps_per_epoch,
            loss: f64::NAN,
        });
    }
    Ok(trace)
}

/// Metrics of one epoch, computed on the epoch's own trajectories with the
/// updated certificate.
pub fn epoch_metrics(
    setup: &TrainSetup<'_>,
    cert: &MlpCertificate,
    trajectories: &[TrajectorySample],
    key: StreamKey,
) -> Result<MetricsReport> {
    let sys = setup.sys;
    let terminal: Vec<f64> = trajectories
        .iter()
        .map(|t| {
            t.final_state()
                .iter()
                .zip(sys.goal.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let (te_mean, te_std) = mean_std(&terminal);
    let n = trajectories.len() as f64;
    let mono: f64 = trajectories
        .iter()
        .map(|t| monotonicity_fraction(cert, t))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum::<f64>()
        / n;
    let (violation_rate, violation_half_width) = if setup.tcfg.violation_states > 0 {
        let v = violation_rate_estimate(sys, cert, &setup.ccfg, setup.tcfg.violation_states, 64, key)?;
        (v.rate, v.half_width)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MetricsReport {
        safety_rate: trajectories.iter().filter(|t| !enters_unsafe(sys, t)).count() as f64 / n,
        terminal_error_mean: te_mean,
        terminal_error_std: te_std,
        violation_rate,
        violation_half_width,
        monotonicity_fraction: mono,
        stability_hinge_mean: trajectories
            .iter()
            .map(|t| stability_hinge_energy(sys, cert, &setup.ccfg, t))
            .sum::<f64>()
            / n,
        ..Default::default()
    })
}

/// Per-epoch record returned by [`run`].
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub metrics: MetricsReport,
    pub loss_trace: Vec<f64>,
    pub trajectories: Vec<TrajectorySample>,
}

/// Runs `K` epochs of collection and update. With `out` set, writes
/// `epoch_{k}/{checkpoint,trajectories.csv,metrics.json}` for `k = 1..K` and
/// the final `checkpoint`.
pub fn run(setup: &TrainSetup<'_>, out: Option<&Path>) -> Result<(MlpCertificate, Vec<EpochRecord>)> {
    setup.validate()?;
    let mut cert = setup.initial_certificate()?;
    let mut opt = OptimizerState::new(cert.num_params());
    let mut dataset = ReplayDataset::new(setup.tcfg.replay_epochs);
    let root = StreamKey::new(setup.seed);
    let mut history = Vec::with_capacity(setup.tcfg.epochs);
    for epoch in 1..=setup.tcfg.epochs {
        let start = Instant::now();
        let ek = root.child(epoch as u64);
        let wrap = |e: Error| Error::Epoch {
            epoch,
            source: Box::new(e),
        };
        let collected = collect_phase(setup, &cert, ek.child(0)).map_err(wrap)?;
        let mut states = collected.states;
        if setup.tcfg.domain_samples > 0 {
            states.extend(domain_samples(setup, &cert, setup.tcfg.domain_samples, ek.child(2)));
        }
        dataset.push_epoch(epoch, states);
        let loss_trace = update_phase(&mut cert, setup, &dataset, &mut opt, ek.child(1)).map_err(wrap)?;
        let mut metrics = epoch_metrics(setup, &cert, &collected.trajectories, ek.child(3)).map_err(wrap)?;
        metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let record = EpochRecord {
            metrics,
            loss_trace,
            trajectories: collected.trajectories,
        };
        if let Some(dir) = out {
            write_epoch(setup, &cert, dir, epoch, &record)?;
        }
        history.push(record);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        checkpoint_of(setup, &cert).save(&dir.join("checkpoint"))?;
    }
    Ok((cert, history))
}

pub fn checkpoint_of(setup: &TrainSetup<'_>, cert: &MlpCertificate) -> Checkpoint {
    Checkpoint {
        cert: cert.clone(),
        config: setup.ccfg,
        seed: setup.seed,
    }
}

/// Writes a set of trajectories as one table; `t` restarts at 0 for each.
pub fn write_trajectories(
    path: &Path,
    sys: &SystemSpec,
    cert: &dyn Certificate,
    ccfg: &CertificateConfig,
    trajectories: &[TrajectorySample],
) -> Result<()> {
    let rows: Vec<_> = trajectories
        .iter()
        .flat_map(|t| trajectory_rows(sys, cert, ccfg, t))
        .collect();
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_trajectory_csv(&mut w, sys.n(), sys.m(), &rows)
}

fn write_epoch(setup: &TrainSetup<'_>, cert: &MlpCertificate, root: &Path, epoch: usize, record: &EpochRecord) -> Result<()> {
    let dir = root.join(format!("epoch_{epoch}"));
    fs::create_dir_all(&dir)?;
    checkpoint_of(setup, cert).save(&dir.join("checkpoint"))?;
    write_trajectories(&dir.join("trajectories.csv"), setup.sys, cert, &setup.ccfg, &record.trajectories)?;
    let mut json = serde_json::to_value(&record.metrics).expect("metrics serialize");
    json["epoch"] = epoch.into();
    json["loss_first"] = record.loss_trace.first().copied().unwrap_or(f64::NAN).into();
    json["loss_last"] = record.loss_trace.last().copied().unwrap_or(f64::NAN).into();
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&json).expect("json") + "\n")?;
    Ok(())
}

/// Draws a random initial state from the training box.
pub fn random_initial_state(setup: &TrainSetup<'_>, rng: &mut impl Rng) -> StateVector {
    let (lo, hi) = setup.tcfg.init_box(setup.sys);
    StateVector(uniform_in_box(rng, &lo, &hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clbf::clbf_loss;

    fn small_setup(sys: &SystemSpec) -> TrainSetup<'_> {
        TrainSetup {
            sys,
            ccfg: CertificateConfig::default(),
            gcfg: GuidanceConfig::default(),
            scfg: SamplerConfig {
                num_candidates: 16,
                horizon: 3,
                schedule: crate::diffusion::ScheduleConfig {
                    steps: 8,
                    ..Default::default()
                },
                ..Default::default()
            },
            integ: IntegratorConfig::default(),
            tcfg: TrainConfig {
                epochs: 2,
                batch_initial_states: 3,
                grad_steps_per_epoch: 5,
                minibatch: 16,
                hidden_layers: 2,
                hidden_width: 8,
                domain_samples: 8,
                violation_states: 50,
                ..Default::default()
            },
            seed: 3,
        }
    }

    #[test]
    fn collection_counts_and_labels() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut setup = small_setup(&sys);
        setup.tcfg.batch_initial_states = 1;
        setup.scfg.horizon = 1;
        let cert = setup.initial_certificate().unwrap();
        let c = collect_phase(&setup, &cert, StreamKey::new(0)).unwrap();
        assert_eq!(c.states.len(), 2);
        assert_eq!(c.states.iter().filter(|s| s.label == Label::Goal).count(), 1);

        setup.tcfg.batch_initial_states = 4;
        setup.scfg.horizon = 3;
        let c = collect_phase(&setup, &cert, StreamKey::new(1)).unwrap();
        assert_eq!(c.states.len(), 4 * 3 + 1);
        for s in c.states.iter().filter(|s| s.label != Label::Goal) {
            assert_eq!(s.label, label_of(&sys, &s.x));
            assert!(s.control.is_some() && s.successor.is_some());
        }
    }

    #[test]
    fn replay_window_evicts_oldest_epochs() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut d = ReplayDataset::new(2);
        for e in 1..=4 {
            d.push_epoch(e, vec![LabeledState::goal(sys.goal.clone()); e]);
        }
        assert_eq!(d.epochs(), vec![3, 4]);
        assert_eq!(d.len(), 7);
    }

    #[test]
    fn zero_steps_leave_parameters_unchanged() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut setup = small_setup(&sys);
        setup.tcfg.grad_steps_per_epoch = 0;
        let mut cert = setup.initial_certificate().unwrap();
        let before = cert.clone();
        let mut d = ReplayDataset::new(1);
        d.push_epoch(1, vec![LabeledState::goal(StateVector(vec![0.3, 0.0]))]);
        let mut opt = OptimizerState::new(cert.num_params());
        let trace = update_phase(&mut cert, &setup, &d, &mut opt, StreamKey::new(0)).unwrap();
        assert!(trace.is_empty());
        assert_eq!(cert, before);
    }

    #[test]
    fn one_small_step_reduces_batch_loss() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut setup = small_setup(&sys);
        setup.tcfg.grad_steps_per_epoch = 1;
        setup.tcfg.learning_rate = 1e-4;
        setup.tcfg.minibatch = 1000;
        let mut cert = setup.initial_certificate().unwrap();
        let c = collect_phase(&setup, &cert, StreamKey::new(5)).unwrap();
        let mut d = ReplayDataset::new(1);
        d.push_epoch(1, c.states.clone());
        let mut batch = c.states.clone();
        batch.push(LabeledState::goal(sys.goal.clone()));
        let before = clbf_loss(&cert, &setup.ccfg, &sys, &batch).unwrap();
        let mut opt = OptimizerState::new(cert.num_params());
        update_phase(&mut cert, &setup, &d, &mut opt, StreamKey::new(0)).unwrap();
        let after = clbf_loss(&cert, &setup.ccfg, &sys, &batch).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut setup = small_setup(&sys);
        setup.tcfg.epochs = 0;
        let (cert, hist) = run(&setup, None).unwrap();
        assert!(hist.is_empty());
        assert_eq!(cert, setup.initial_certificate().unwrap());
    }

    #[test]
    fn tiny_run_is_reproducible_and_writes_layout() {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let setup = small_setup(&sys);
        let dir = tempfile::tempdir().unwrap();
        let (a, hist) = run(&setup, Some(dir.path())).unwrap();
        let (b, _) = run(&setup, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(hist.len(), 2);
        for k in 1..=2 {
            let e = dir.path().join(format!("epoch_{k}"));
            assert!(e.join("checkpoint").exists());
            assert!(e.join("trajectories.csv").exists());
            let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(e.join("metrics.json")).unwrap()).unwrap();
            for key in [
                "safety_rate",
                "terminal_error_mean",
                "terminal_error_std",
                "violation_rate",
                "monotonicity_fraction",
                "wall_ms",
            ] {
                assert!(m.get(key).is_some(), "{key}");
            }
        }
        let loaded = Checkpoint::load(&dir.path().join("checkpoint")).unwrap();
        assert_eq!(loaded.cert, a);
    }
}
