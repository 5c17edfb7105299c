mod common;

use std::collections::BTreeMap;

use common::{constant_cache, synth_cache, tiny_model};
use deepheart::autodiff::{Tape, Tensor};
use deepheart::model::{build_autoencoder, build_deepheart, ModelConfig, ModelKind, ParameterStore};
use deepheart::par;
use deepheart::sensorstream::{label_subset_member, Channel, Label, Partition};
use deepheart::train::{
    adam_step, build_examples, clip_gradients, pretrain_autoencoder, pretrain_heuristic_full, supervised_loss,
    train_supervised, transfer_weights, Ablation, Adam, TrainConfig, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line Adam for one scalar coordinate.
struct Oracle {
    m: f64,
    v: f64,
    t: i32,
}

impl Oracle {
    fn step(&mut self, theta: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.t));
        theta - lr * m_hat / (v_hat.sqrt() + 1e-8)
    }
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut adam = Adam::<f64>::new(1e-3);
    let mut p = vec![0.5, -2.0];
    adam.begin_step();
    adam.update("w", &mut p, &[0.0, 0.0]).unwrap();
    assert_eq!(p, vec![0.5, -2.0]);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut adam = Adam::<f64>::new(1e-3);
    let mut p = vec![1.0];
    adam.begin_step();
    adam.update("w", &mut p, &[1.0]).unwrap();
    assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-10, "{}", p[0]);
}

#[test]
fn adam_two_steps_match_oracle_state() {
    let mut adam = Adam::<f64>::new(1e-2);
    let mut p = vec![0.3, -0.7];
    let grads = [[0.5, -1.5], [0.25, 2.0]];
    let mut oracles = [Oracle { m: 0.0, v: 0.0, t: 0 }, Oracle { m: 0.0, v: 0.0, t: 0 }];
    let mut expect = p.clone();
    for g in grads {
        adam.begin_step();
        adam.update("w", &mut p, &g).unwrap();
        for i in 0..2 {
            expect[i] = oracles[i].step(expect[i], g[i], 1e-2);
        }
    }
    let (m, v) = adam.moments("w").unwrap();
    for i in 0..2 {
        assert!((p[i] - expect[i]).abs() < 1e-12);
        assert!((m[i] - oracles[i].m).abs() < 1e-12);
        assert!((v[i] - oracles[i].v).abs() < 1e-12);
    }
    assert_eq!(adam.steps(), 2);
}

#[test]
fn adam_quadratic_trajectory_matches_oracle() {
    // f(θ) = Σ a_i (θ_i − c_i)²
    let a = [1.0, 3.0, 0.2];
    let c = [2.0, -1.0, 0.5];
    let mut adam = Adam::<f64>::new(0.05);
    let mut p = vec![0.0; 3];
    let mut q = vec![0.0; 3];
    let mut oracles: Vec<Oracle> = (0..3).map(|_| Oracle { m: 0.0, v: 0.0, t: 0 }).collect();
    for _ in 0..100 {
        let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (p[i] - c[i])).collect();
        adam.begin_step();
        adam.update("theta", &mut p, &g).unwrap();
        for i in 0..3 {
            let gi = 2.0 * a[i] * (q[i] - c[i]);
            q[i] = oracles[i].step(q[i], gi, 0.05);
        }
    }
    for i in 0..3 {
        assert!((p[i] - q[i]).abs() < 1e-10);
    }
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let cfg = tiny_model(4, 1, 1, 3);
    let mut store = build_deepheart(&cfg, 0).unwrap();
    let mut grads = BTreeMap::new();
    let shape = store.get("head/bias").unwrap().shape().to_vec();
    grads.insert("head/bias".to_string(), Tensor::filled(&shape, f32::NAN));
    let err = adam_step(&mut store, &grads, &mut Adam::new(1e-3)).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteGradient(ref n) if n == "head/bias"), "{err}");
}

#[test]
fn clipping_bounds_the_joint_norm() {
    let mut g = BTreeMap::new();
    g.insert("a".to_string(), Tensor::new(vec![2], vec![3.0f32, 0.0]).unwrap());
    g.insert("b".to_string(), Tensor::new(vec![1], vec![4.0f32]).unwrap());
    assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-6);
    assert!((g["b"].data()[0] - 0.8).abs() < 1e-6);
    // Within bound, or disabled: untouched.
    let before = g.clone();
    clip_gradients(&mut g, 2.0);
    clip_gradients(&mut g, 0.0);
    assert_eq!(g, before);
}

#[test]
fn transfer_into_itself_copies_everything() {
    let cfg = tiny_model(8, 2, 1, 5);
    let src = build_deepheart(&cfg, 1).unwrap();
    let mut dst = src.clone();
    assert_eq!(transfer_weights(&src, &mut dst).unwrap(), src.len());
    assert_eq!(dst, src);
}

#[test]
fn autoencoder_transfer_counts_encoder_parameters_and_matches_encoding() {
    let cfg = ModelConfig::default();
    let src = build_autoencoder(&cfg, 1).unwrap();
    let mut dst = build_deepheart(&cfg, 2).unwrap();
    let n = transfer_weights(&src, &mut dst).unwrap();
    assert_eq!(n, cfg.encoder_names().len());
    // conv0 and two residual units (weight, bias), four LSTM layers of two
    // directions with three tensors each.
    assert_eq!(n, 2 + 2 * 2 + 4 * 2 * 3);
    assert_eq!(dst.get("head/weight"), build_deepheart(&cfg, 2).unwrap().get("head/weight"));

    let small = tiny_model(16, 2, 2, 5);
    let src = build_autoencoder(&small, 3).unwrap();
    let mut dst = build_deepheart(&small, 4).unwrap();
    transfer_weights(&src, &mut dst).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&[77, 3], |_| rng.gen_range(-1.0f32..1.0));
    let run = |s: &ParameterStore| {
        let mut tape = Tape::new();
        let p = s.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let h = small.encode(&mut tape, &p, xv, None).unwrap();
        tape.value(h).clone()
    };
    assert_eq!(run(&src), run(&dst));
}

#[test]
fn mismatched_shapes_refuse_transfer() {
    let mut dst = build_deepheart(&tiny_model(8, 2, 1, 5), 0).unwrap();
    let before = dst.clone();
    let wide = build_deepheart(&tiny_model(16, 2, 1, 5), 0).unwrap();
    let err = transfer_weights(&wide, &mut dst).unwrap_err();
    assert!(matches!(err, TrainError::TransferShape { ref name, .. } if name == "conv0/bias"), "{err}");
    assert_eq!(dst, before);
}

#[test]
fn masked_targets_do_not_reach_loss_or_gradients() {
    let cache = synth_cache(40, 3, 96);
    let cfg = tiny_model(8, 2, 1, 5);
    let store = build_deepheart(&cfg, 0).unwrap();
    let examples = build_examples(&cache, &cfg, Ablation::All, false, |_| true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let run = |ex: &deepheart::train::Example| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let mut drop = ChaCha8Rng::seed_from_u64(1);
        let l = supervised_loss(&cfg, &mut tape, &p, ex, Some(&mut drop)).unwrap();
        let grads = tape.backward(l).unwrap();
        let g: Vec<Vec<u32>> =
            p.iter().map(|(_, v)| grads.get(v).unwrap().data().iter().map(|x| x.to_bits()).collect()).collect();
        (tape.value(l).data()[0].to_bits(), g)
    };
    for case in 0..100 {
        let ex = &examples[case % examples.len()];
        let mut perturbed = ex.clone();
        for (t, m) in perturbed.targets.data_mut().iter_mut().zip(ex.mask.data()) {
            if *m == 0.0 {
                *t = rng.gen_range(-1e6..1e6);
            }
        }
        assert_eq!(run(ex), run(&perturbed), "case {case}");
    }
}

#[test]
fn no_labeled_users_is_an_error() {
    let cache = synth_cache(20, 4, 64);
    let cfg = tiny_model(4, 1, 1, 3);
    let tc = TrainConfig { label_fraction: 1e-12, max_epochs: 1, ..TrainConfig::default() };
    assert!(matches!(train_supervised(&cache, &cfg, &tc, None), Err(TrainError::NoLabeledWeeks)));
}

#[test]
fn label_subsets_nest() {
    let users: Vec<String> = (0..500).map(|i| format!("u{i:05}")).collect();
    for seed in 0..3 {
        let fractions = [0.05, 0.1, 0.2, 0.5, 0.7, 1.0];
        for w in fractions.windows(2) {
            for u in &users {
                if label_subset_member(seed, u, w[0]) {
                    assert!(label_subset_member(seed, u, w[1]));
                }
            }
        }
        let n = users.iter().filter(|u| label_subset_member(seed, u, 0.1)).count();
        assert!((25..=75).contains(&n), "{n}");
    }
}

#[test]
fn supervised_training_is_bitwise_reproducible_and_thread_independent() {
    let cache = synth_cache(30, 5, 96);
    let cfg = tiny_model(8, 2, 1, 5);
    let tc = TrainConfig { max_epochs: 3, batch_size: 4, ..TrainConfig::default() };
    let (a, la) = train_supervised(&cache, &cfg, &tc, None).unwrap();
    let (b, lb) = train_supervised(&cache, &cfg, &tc, None).unwrap();
    let (c, lc) = par::sequential(|| train_supervised(&cache, &cfg, &tc, None)).unwrap();
    assert_eq!(la.csv_rows(), lb.csv_rows());
    assert_eq!(la.csv_rows(), lc.csv_rows());
    for ((_, x), ((_, y), (_, z))) in a.iter().zip(b.iter().zip(c.iter())) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
        assert_eq!(bits(x), bits(z));
    }
    assert!(la.train_weeks > 0 && la.label_counts.len() == 4);
    assert!(la.epochs.iter().all(|e| e.tune_loss.is_some()));
}

#[test]
fn ablation_zeroes_the_excluded_channel() {
    let cache = synth_cache(10, 6, 400);
    let cfg = tiny_model(4, 1, 1, 3);
    for (ablation, col) in [(Ablation::HrOnly, 1), (Ablation::StepsOnly, 0)] {
        let ex = build_examples(&cache, &cfg, ablation, false, |_| true).unwrap();
        let all = build_examples(&cache, &cfg, Ablation::All, false, |_| true).unwrap();
        let mut touched = 0;
        let excluded = if col == 0 { Channel::HeartRate } else { Channel::StepCount };
        for ((e, a), cw) in ex.iter().zip(&all).zip(&cache.weeks) {
            for r in 0..e.x.rows() {
                let (row, orig) = (e.x.row(r), a.x.row(r));
                if cw.week.events[r].channel == excluded {
                    assert_eq!(row[col], 0.0);
                    assert_eq!(row[2], 0.0);
                    touched += 1;
                } else {
                    assert_eq!(row, orig);
                }
            }
        }
        assert!(touched > 0, "{ablation}");
    }
}

#[test]
fn tiny_autoencoder_reconstructs_constant_sequences() {
    let cache = constant_cache(10, 65.0, 64);
    let cfg = tiny_model(4, 1, 1, 1);
    let tc = TrainConfig { batch_size: 1, pretrain_epochs: 20, noise_sigma: 0.0, lr: 1e-2, ..TrainConfig::default() };
    let (enc, log) = pretrain_autoencoder(&cache, &cfg, &tc).unwrap();
    assert_eq!(log.epochs.len(), 20);
    assert_eq!(enc.kind(), ModelKind::Encoder);
    let last = log.epochs.last().unwrap().train_loss;
    assert!(last < 1e-3, "{last}");
}

#[test]
fn autoencoder_loss_falls_over_first_epochs() {
    let cache = synth_cache(30, 8, 128);
    let cfg = tiny_model(8, 2, 1, 5);
    let tc = TrainConfig { batch_size: 4, pretrain_epochs: 6, lr: 3e-3, ..TrainConfig::default() };
    let (_, log) = pretrain_autoencoder(&cache, &cfg, &tc).unwrap();
    let l: Vec<f64> = log.epochs.iter().map(|e| e.train_loss).collect();
    // Two-epoch moving average.
    let avg: Vec<f64> = l.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    assert!(avg.windows(2).all(|w| w[1] < w[0]), "{l:?}");
}

#[test]
fn heuristic_head_learns_zero_on_constant_heart_rate() {
    let cache = constant_cache(10, 58.0, 64);
    let cfg = tiny_model(8, 2, 1, 5);
    let tc = TrainConfig { batch_size: 1, pretrain_epochs: 20, lr: 3e-3, ..TrainConfig::default() };
    let (store, log) = pretrain_heuristic_full(&cache, &cfg, &tc).unwrap();
    assert!(log.epochs.last().unwrap().train_loss < 1e-3, "{:?}", log.epochs.last());
    let examples = build_examples(&cache, &cfg, Ablation::All, false, |_| true).unwrap();
    for ex in &examples {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(ex.x.clone());
        let out = cfg.heuristic(&mut tape, &p, x, None).unwrap();
        assert!(tape.value(out).data().iter().all(|v| v.abs() < 0.05));
    }
}

#[test]
fn heuristic_predictions_follow_planted_hrv() {
    let cache = synth_cache(80, 10, 256);
    let cfg = tiny_model(8, 2, 1, 5);
    let tc = TrainConfig { batch_size: 4, pretrain_epochs: 8, lr: 3e-3, ..TrainConfig::default() };
    let (store, _) = pretrain_heuristic_full(&cache, &cfg, &tc).unwrap();
    let examples = build_examples(&cache, &cfg, Ablation::All, false, |w| w.split == Partition::Train).unwrap();
    let task = cache.task_index("diabetes").unwrap();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for ex in &examples {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(ex.x.clone());
        let out = cfg.heuristic(&mut tape, &p, x, None).unwrap();
        let v = tape.value(out);
        // Channel 2 is the 5-minute window.
        let mean = (0..v.rows()).map(|r| f64::from(v.at(r, 2))).sum::<f64>() / v.rows() as f64;
        match ex.labels[task] {
            Some(Label::Positive) => pos.push(mean),
            Some(Label::Negative) => neg.push(mean),
            None => {}
        }
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!pos.is_empty() && !neg.is_empty());
    assert!(m(&pos) < m(&neg), "pos {} neg {}", m(&pos), m(&neg));
}
