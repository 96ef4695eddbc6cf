use ipwsgd::engine::{ipw_weight, sgd_step};
use ipwsgd::env::{parse_replay_log, ReplayLog, ReplayLogEntry};
use ipwsgd::inference::PluginAccumulators;
use ipwsgd::model::{HessianVariant, LinearModel, LogisticModel, RewardModel};
use ipwsgd::policy::greedy_propensity;
use ipwsgd::report::sig6;
use ipwsgd::types::{Action, ExplorationSchedule, LearningSchedule, Observation, ParameterState};
use ipwsgd::value::ValueAccumulator;
use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;

fn vector(p: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, p).prop_map(DVector::from_vec)
}

fn observation(p: usize) -> impl Strategy<Value = Observation> {
    (vector(p), any::<bool>(), -2.0..2.0f64)
        .prop_map(|(x, a, y)| Observation::new(x, Action::from(a), y).unwrap())
}

proptest! {
    #[test]
    fn ipw_weights_are_unbiased(pi in 1e-6..(1.0 - 1e-6)) {
        let w1 = ipw_weight(Action::One, pi).unwrap();
        let w0 = ipw_weight(Action::Zero, pi).unwrap();
        prop_assert!(w1 > 0.0 && w0 > 0.0);
        prop_assert!((pi * w1 + (1.0 - pi) * w0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn propensity_bounded_by_exploration(eps in 1e-6..=1.0f64, best in any::<bool>()) {
        let pi = greedy_propensity(Action::from(best), eps).unwrap();
        prop_assert!(pi >= eps / 2.0 - 1e-15 && pi <= 1.0 - eps / 2.0 + 1e-15);
    }

    #[test]
    fn exploration_stays_in_range(
        exponent in 0.0..2.0f64,
        floor in 0.01..1.0f64,
        burn_in in 0usize..20,
        t in 1usize..100_000,
    ) {
        let s = ExplorationSchedule::decaying(exponent, floor, burn_in).unwrap();
        let e = s.rate(t);
        prop_assert!(e >= floor && e <= 1.0);
        if t <= burn_in {
            prop_assert_eq!(e, 1.0);
        }
    }

    #[test]
    fn average_is_mean_of_iterates(
        obs in prop::collection::vec(observation(2), 1..40),
        pis in prop::collection::vec(0.05..0.95f64, 40),
    ) {
        let model = LinearModel::new(2);
        let schedule = LearningSchedule::new(0.5, 0.6).unwrap();
        let mut state = ParameterState::zeros(2);
        let mut sum = DVector::zeros(4);
        for (o, &pi) in obs.iter().zip(&pis) {
            state = sgd_step(&state, &model, &schedule, o, pi).unwrap();
            sum += &state.hat_beta;
        }
        let mean = sum / obs.len() as f64;
        prop_assert_eq!(state.t, obs.len());
        prop_assert!((&state.bar_beta - mean).amax() < 1e-9 * (1.0 + state.bar_beta.amax()));
    }

    #[test]
    fn plugin_matrices_symmetric_psd(
        beta in vector(6),
        obs in prop::collection::vec(observation(3), 1..30),
        pi in 0.05..0.95f64,
        logistic in any::<bool>(),
    ) {
        let model: Box<dyn RewardModel> = if logistic {
            Box::new(LogisticModel::new(3))
        } else {
            Box::new(LinearModel::new(3))
        };
        let mut acc = PluginAccumulators::new(3, HessianVariant::Exact);
        for o in &obs {
            let o = if logistic {
                Observation::new(o.x.clone(), o.a, f64::from(u8::from(o.y > 0.0))).unwrap()
            } else {
                o.clone()
            };
            acc.accumulate(model.as_ref(), &beta, &o, pi).unwrap();
        }
        for m in [acc.s_hat().unwrap(), acc.h_hat().unwrap()] {
            prop_assert!((&m - m.transpose()).amax() < 1e-12 * (1.0 + m.amax()));
            let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
            prop_assert!(min > -1e-9 * (1.0 + m.amax()));
        }
    }

    #[test]
    fn value_merge_is_sequential(
        obs in prop::collection::vec((observation(2), any::<bool>()), 2..30),
        split in 1usize..29,
        eps in 0.05..1.0f64,
    ) {
        let split = split.min(obs.len() - 1);
        let mut whole = ValueAccumulator::new();
        let mut left = ValueAccumulator::new();
        let mut right = ValueAccumulator::new();
        for (i, (o, d)) in obs.iter().enumerate() {
            let d = Action::from(*d);
            whole.update(o, d, eps, Some(0.3)).unwrap();
            let part = if i < split { &mut left } else { &mut right };
            part.update(o, d, eps, Some(0.3)).unwrap();
        }
        left.merge(&right);
        prop_assert_eq!(left.t(), whole.t());
        prop_assert!((left.estimate().unwrap() - whole.estimate().unwrap()).abs() < 1e-12);
        prop_assert!((left.sum_v2() - whole.sum_v2()).abs() < 1e-9);
    }

    #[test]
    fn sig6_keeps_six_digits(v in prop::num::f64::NORMAL) {
        let back: f64 = sig6(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-6 * v.abs(), "{} -> {}", v, sig6(v));
    }

    #[test]
    fn replay_log_round_trip(
        rows in prop::collection::vec((vector(2), any::<bool>(), -5.0..5.0f64, 0.05..0.95f64), 1..20),
    ) {
        let entries = rows
            .into_iter()
            .map(|(x, a, reward, propensity)| ReplayLogEntry {
                x,
                action: Action::from(a),
                reward,
                propensity,
            })
            .collect();
        let log = ReplayLog::new(2, entries).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = parse_replay_log(buf.as_slice()).unwrap();
        prop_assert_eq!(back, log);
    }
}
