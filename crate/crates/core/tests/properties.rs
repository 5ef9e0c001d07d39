use proptest::prelude::*;

use s2diff::clbf::{clbf_loss, lie_derivative, Checkpoint, CertificateConfig, Label, LabeledState, MlpCertificate};
use s2diff::diffusion::{sample_trajectory, Guidance, GuidanceConfig, NoiseSchedule, QuadraticCost, SamplerConfig, ScheduleConfig};
use s2diff::dynamics::{step, ControlVector, IntegratorConfig, StateVector, SystemSpec};
use s2diff::eval::monotonicity_of_values;
use s2diff::rng::StreamKey;
use s2diff::training::label_of;

fn lerp(lo: &[f64], hi: &[f64], t: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).zip(t).map(|((l, h), s)| l + (h - l) * s).collect()
}

fn unit(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n)
}

fn pendulum_batch(points: &[(Vec<f64>, Vec<f64>)]) -> Vec<LabeledState> {
    let sys = SystemSpec::builtin("pendulum").unwrap();
    let integ = IntegratorConfig::default();
    points
        .iter()
        .map(|(tx, tu)| {
            let x = StateVector(lerp(&sys.domain_lo, &sys.domain_hi, tx));
            let u = ControlVector(lerp(&sys.control_lo, &sys.control_hi, tu));
            let xn = step(&sys, &x, &u, &integ).unwrap();
            let label = label_of(&sys, &x.0);
            LabeledState::transition(x, label, u, xn, 0.0)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_nonnegative_and_permutation_invariant(
        seed in 0u64..1000,
        points in prop::collection::vec((unit(2), unit(1)), 1..24),
        rotate in 0usize..24,
    ) {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let cert = MlpCertificate::for_system(&sys, 2, 16, seed).unwrap();
        let cfg = CertificateConfig::default();
        let mut batch = pendulum_batch(&points);
        batch.push(LabeledState::goal(sys.goal.clone()));
        let a = clbf_loss(&cert, &cfg, &sys, &batch).unwrap();
        prop_assert!(a >= 0.0);
        let k = rotate % batch.len();
        batch.rotate_left(k);
        batch.reverse();
        let b = clbf_loss(&cert, &cfg, &sys, &batch).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn lie_derivative_is_linear_in_control(
        sys_idx in 0usize..4,
        seed in 0u64..1000,
        tx in unit(6),
        t1 in unit(3),
        t2 in unit(3),
    ) {
        let name = ["pendulum", "segway", "quad2d", "car_kinematic"][sys_idx];
        let sys = SystemSpec::builtin(name).unwrap();
        let cert = MlpCertificate::for_system(&sys, 2, 16, seed).unwrap();
        let x = StateVector(lerp(&sys.domain_lo, &sys.domain_hi, &tx[..sys.n()]));
        let m = sys.m();
        let u1 = ControlVector(lerp(&sys.control_lo, &sys.control_hi, &t1[..m]));
        let u2 = ControlVector(lerp(&sys.control_lo, &sys.control_hi, &t2[..m]));
        let sum = ControlVector(u1.iter().zip(u2.iter()).map(|(a, b)| a + b).collect());
        let l = |u: &ControlVector| lie_derivative(&cert, &sys, &x, u).unwrap();
        let r = l(&sum) - l(&u1) - l(&u2) + l(&ControlVector::zeros(m));
        prop_assert!(r.abs() <= 1e-10 * (1.0 + l(&sum).abs()), "residual {r}");
    }

    #[test]
    fn constant_certificate_pays_only_the_lie_hinge(v in 0.0..0.9f64) {
        let sys = SystemSpec::builtin("pendulum").unwrap();
        let mut cert = MlpCertificate::zeros(&[2, 1, 1]).unwrap();
        cert.set_bias(1, 0, v);
        let cfg = CertificateConfig { eps: 0.0, lambda: 1.0, alpha2: 0.0, ..Default::default() };
        let s = LabeledState::transition(
            StateVector(vec![0.1, 0.0]),
            Label::Safe,
            ControlVector(vec![0.0]),
            StateVector(vec![0.1, 0.0]),
            0.0,
        );
        // Safe state below c: only the Lie hinge [0 + λv]⁺ is active.
        let loss = clbf_loss(&cert, &cfg, &sys, &[s]).unwrap();
        prop_assert!((loss - v).abs() <= 1e-12);
    }

    #[test]
    fn monotonicity_reverses(values in prop::collection::vec(-10.0..10.0f64, 2..40)) {
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted.dedup_by(|a, b| (*a - *b).abs() <= 1e-6);
        prop_assume!(sorted.len() >= 2);
        prop_assert_eq!(monotonicity_of_values(&sorted).unwrap(), 0.0);
        sorted.reverse();
        prop_assert_eq!(monotonicity_of_values(&sorted).unwrap(), 1.0);
        let f = monotonicity_of_values(&values).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn checkpoint_text_is_a_fixed_point(seed in 0u64..10_000, width in 1usize..12) {
        let sys = SystemSpec::builtin("quad2d").unwrap();
        let cert = MlpCertificate::for_system(&sys, 2, width, seed).unwrap();
        let ck = Checkpoint { cert, config: CertificateConfig::default(), seed };
        let text = ck.to_text();
        let again = Checkpoint::from_text(&text).unwrap();
        prop_assert_eq!(&again.to_text(), &text);
        prop_assert_eq!(again.cert.params(), ck.cert.params());
    }

    #[test]
    fn schedule_is_strictly_decreasing(start in 2.0..10.0f64, end in -8.0..0.0f64, steps in 2usize..80) {
        let s = NoiseSchedule::sigmoid(&ScheduleConfig { steps, logit_start: start, logit_end: end }).unwrap();
        for i in 1..=s.steps() {
            prop_assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
            prop_assert!(s.alpha(i) > 0.0 && s.alpha(i) < 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sampled_controls_respect_bounds(seed in 0u64..1000, sys_idx in 0usize..3, tx in unit(6)) {
        let name = ["pendulum", "quad2d", "segway"][sys_idx];
        let sys = SystemSpec::builtin(name).unwrap();
        let cert = MlpCertificate::for_system(&sys, 2, 8, seed).unwrap();
        let cost = QuadraticCost::for_system(&sys, 0.01);
        let gcfg = GuidanceConfig::default();
        let integ = IntegratorConfig::default();
        let ccfg = CertificateConfig::default();
        let g = Guidance { sys: &sys, cert: &cert, ccfg: &ccfg, gcfg: &gcfg, integ: &integ, cost: &cost };
        let scfg = SamplerConfig {
            num_candidates: 16,
            schedule: ScheduleConfig { steps: 10, ..Default::default() },
            ..Default::default()
        };
        let x0 = StateVector(lerp(&sys.domain_lo, &sys.domain_hi, &tx[..sys.n()]));
        let (s, _) = sample_trajectory(&g, &scfg, &x0, 0.0, StreamKey::new(seed)).unwrap();
        for u in s.controls() {
            for j in 0..sys.m() {
                prop_assert!(u[j] >= sys.control_lo[j] && u[j] <= sys.control_hi[j]);
            }
        }
    }
}
