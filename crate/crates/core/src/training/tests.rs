use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agent::{pilot_step_with, AgentState, StepOptions};
use crate::diffcore::Parameterized;
use crate::geometry::{apply_action, Action};
use crate::observation::{synth_scene, SceneConfig};
use crate::training::objectives::SelectorObjective;
use crate::diffcore::Objective;

fn small_scene(n: usize, frames: usize) -> SceneConfig {
    SceneConfig {
        frames,
        objects: n,
        slots: n,
        appearance_dim: 4,
        motion_bins: 6,
        ..SceneConfig::default()
    }
}

fn arch_for(scene: &SceneConfig) -> Architecture {
    Architecture {
        d: scene.appearance_dim,
        k: scene.motion_bins,
        n: scene.slots,
        hidden_selector: 6,
        hidden_regressor: 5,
    }
}

fn bits(model: &PilotModel) -> Vec<u64> {
    model.tensors().iter().flat_map(|t| t.values.iter().map(|v| v.to_bits())).collect()
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        max_epochs: 3,
        seq_len: 12,
        samples: 3,
        baseline: true,
        lr: LrSchedule {
            initial: 0.01,
            decay: 0.5,
            period: 2,
        },
        seed: 11,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn reward_reference_values() {
    let g = ViewingAngle::new(10.0, 5.0);
    assert_eq!(reward(g, g, DEFAULT_ETA), 1.0);
    assert_eq!(reward(ViewingAngle::new(60.0, 5.0), g, DEFAULT_ETA), -1.0);
    let half = reward(ViewingAngle::new(30.45, 5.0), g, DEFAULT_ETA);
    assert!((half - 0.5).abs() < 1e-9, "{half}");
    // eta is the default NFoV's center-to-corner distance
    let corner = (32.75f64.powi(2) + 24.5625f64.powi(2)).sqrt();
    assert!((DEFAULT_ETA - corner).abs() < 0.05);
    // wraparound: 355 vs 5 is 10 degrees apart
    let w = reward(ViewingAngle::new(355.0, 0.0), ViewingAngle::new(5.0, 0.0), DEFAULT_ETA);
    assert!((w - (1.0 - 10.0 / DEFAULT_ETA)).abs() < 1e-12);
}

#[test]
fn reward_at_exactly_eta_is_zero() {
    let r = reward(ViewingAngle::new(40.0, 0.0), ViewingAngle::new(0.0, 0.0), 40.0);
    assert_eq!(r, 0.0);
    let r = reward(ViewingAngle::new(40.0 + 1e-9, 0.0), ViewingAngle::new(0.0, 0.0), 40.0);
    assert_eq!(r, -1.0);
}

proptest! {
    #[test]
    fn reward_is_bounded_and_monotone(d1 in 0.0f64..120.0, d2 in 0.0f64..120.0, eta in 1.0f64..80.0) {
        let g = ViewingAngle::new(0.0, 0.0);
        let r1 = reward(ViewingAngle::new(d1, 0.0), g, eta);
        let r2 = reward(ViewingAngle::new(d2, 0.0), g, eta);
        prop_assert!((-1.0..=1.0).contains(&r1));
        if d1 <= d2 {
            prop_assert!(r1 >= r2);
        }
        // continuous below eta: Lipschitz with constant 1/eta
        if d1 <= eta && d2 <= eta {
            prop_assert!((r1 - r2).abs() <= (d1 - d2).abs() / eta + 1e-12);
        }
        // the only jump is from 0 to -1 past eta
        if d1 > eta {
            prop_assert_eq!(r1, -1.0);
        }
    }
}

#[test]
fn candidate_reward_matches_branch_resimulation() {
    let scene = small_scene(2, 8);
    let ep = synth_scene(&scene, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = PilotModel::init(arch_for(&scene), &mut rng);
    let drive: Vec<usize> = (0..ep.len()).map(|t| t % 2).collect();
    let roll = rollout(&model, ep.frames(), ep.gt(), ep.init_angle(), DEFAULT_ETA, |t, _| vec![drive[t], 0, 1]).unwrap();

    // Oracle: replay the driving choices through the online agent, then
    // branch at frame t with each candidate forced.
    let mut state = AgentState::new(&model, ep.init_angle());
    for (t, obs) in ep.frames().iter().enumerate() {
        for (q, cand) in [0usize, 1].into_iter().enumerate() {
            let opts = StepOptions {
                force_index: Some(cand),
                bypass_regressor: false,
            };
            let (angle, _, _) = pilot_step_with(obs, &state, &model, opts).unwrap();
            let expect = reward(angle, ep.gt()[t], DEFAULT_ETA);
            assert_eq!(roll.steps[t].rewards[q + 1], expect, "frame {t} candidate {cand}");
        }
        let opts = StepOptions {
            force_index: Some(drive[t]),
            bypass_regressor: false,
        };
        let (angle, _, next) = pilot_step_with(obs, &state, &model, opts).unwrap();
        assert_eq!(roll.steps[t].regress.angle, angle);
        state = next;
    }
}

#[test]
fn candidate_reward_extremes() {
    let scene = small_scene(2, 4);
    let ep = synth_scene(&scene, 8).unwrap();
    let model = PilotModel::zeros(arch_for(&scene));
    let reg_state = crate::regressor::RegressorState::zeros(5);
    let obs = &ep.frames()[0];
    // a zero regressor holds the view, so a ground truth at the current view scores 1
    let prev = ViewingAngle::new(123.0, 4.0);
    let r = candidate_reward(&model.regressor, obs, prev, 0, prev, &reg_state, DEFAULT_ETA).unwrap();
    assert_eq!(r, 1.0);
    let far = apply_action(prev, Action::new(90.0, 0.0));
    let r = candidate_reward(&model.regressor, obs, far, 1, prev, &reg_state, DEFAULT_ETA).unwrap();
    assert_eq!(r, -1.0);
    assert!(candidate_reward(&model.regressor, obs, far, 2, prev, &reg_state, DEFAULT_ETA).is_err());
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let scene = small_scene(3, 12);
    let ep = synth_scene(&scene, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = PilotModel::init(arch_for(&scene), &mut rng);
    let before = bits(&model);
    let cfg = quick_cfg();
    let rep = train_step(&mut model, &[ep], &cfg, 0.0, &mut rng).unwrap();
    assert_eq!(bits(&model), before);
    assert!(rep.loss.total > 0.0 && rep.mean_reward.is_finite());
}

#[test]
fn train_step_is_deterministic() {
    let scene = small_scene(3, 12);
    let batch: Vec<_> = (0..3).map(|s| synth_scene(&scene, s).unwrap()).collect();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = PilotModel::init(arch_for(&scene), &mut rng);
        let rep = train_step(&mut model, &batch, &quick_cfg(), 0.05, &mut rng).unwrap();
        (bits(&model), rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn numerics_error_leaves_params_untouched() {
    let scene = small_scene(3, 12);
    let ep = synth_scene(&scene, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = PilotModel::init(arch_for(&scene), &mut rng);
    model.regressor.head.weight.values[0] = f64::NAN;
    let before = bits(&model);
    let err = train_step(&mut model, &[ep], &quick_cfg(), 0.1, &mut rng).unwrap_err();
    assert!(matches!(err, PilotError::Numerics(_)), "{err}");
    assert_eq!(bits(&model), before);
}

#[test]
fn windows_longer_than_seq_len_are_rejected() {
    let scene = small_scene(3, 20);
    let ep = synth_scene(&scene, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = PilotModel::init(arch_for(&scene), &mut rng);
    assert!(train_step(&mut model, &[ep], &quick_cfg(), 0.1, &mut rng).is_err());
}

fn grads(model: &PilotModel) -> Vec<f64> {
    model.tensors().iter().flat_map(|t| t.grad.clone()).collect()
}

#[test]
fn hybrid_gradient_decomposes() {
    let scene = small_scene(3, 10);
    let ep = synth_scene(&scene, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = PilotModel::init(arch_for(&scene), &mut rng);
    let samples: Vec<Vec<usize>> = (0..ep.len()).map(|_| (0..3).map(|_| rng.random_range(0..3)).collect()).collect();
    let roll = rollout(&model, ep.frames(), ep.gt(), ep.init_angle(), DEFAULT_ETA, |t, _| samples[t].clone()).unwrap();
    let full = HybridWeights {
        lambda: 10.0,
        supervised: 1.0,
        policy: 1.0,
        baseline: false,
    };

    // rewards forced to zero: the hybrid update is the pure supervised one
    let mut zeroed = roll.clone();
    for s in &mut zeroed.steps {
        s.rewards.iter_mut().for_each(|r| *r = 0.0);
    }
    let mut a = model.clone();
    a.zero_grad();
    backward_hybrid(&mut a, &zeroed, ep.gt(), full).unwrap();
    let mut b = model.clone();
    b.zero_grad();
    backward_hybrid(&mut b, &roll, ep.gt(), HybridWeights { policy: 0.0, ..full }).unwrap();
    assert_eq!(grads(&a), grads(&b));
    assert!(b.selector.tensors().iter().all(|t| t.grad.iter().all(|&g| g == 0.0)));

    // lambda and the regression term zeroed: the pure REINFORCE update,
    // cross-checked against the surrogate objective's own gradient
    let mut c = model.clone();
    c.zero_grad();
    backward_hybrid(&mut c, &roll, ep.gt(), HybridWeights { lambda: 0.0, supervised: 0.0, ..full }).unwrap();
    let mut d = model.clone();
    d.zero_grad();
    let surrogate = SelectorObjective {
        frames: ep.frames().to_vec(),
        samples: samples.clone(),
        rewards: roll.steps.iter().map(|s| s.rewards.clone()).collect(),
        baseline: false,
    };
    surrogate.gradient(&mut d).unwrap();
    let (gc, gd) = (grads(&c), grads(&d));
    for (x, y) in gc.iter().zip(&gd) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
    }
    assert!(c.regressor.tensors().iter().all(|t| t.grad.iter().all(|&g| g == 0.0)));

    // and the hybrid is the sum of the two parts
    let mut e = model.clone();
    e.zero_grad();
    backward_hybrid(&mut e, &roll, ep.gt(), full).unwrap();
    for ((s, p), h) in grads(&b).iter().zip(&gc).zip(grads(&e)) {
        assert!((s + p - h).abs() <= 1e-12 * (1.0 + h.abs()));
    }
}

#[test]
fn gradchecks_pass_on_small_dims() {
    let arch = Architecture {
        d: 4,
        k: 6,
        n: 4,
        hidden_selector: 5,
        hidden_regressor: 4,
    };
    let suite = run_gradchecks(arch, 5, 10.0, &[0, 1, 2], 1e-4, None).unwrap();
    for e in &suite.entries {
        assert!(e.report.passed, "{} seed {}:\n{}", e.objective, e.seed, e.report);
    }
}

#[test]
fn corrupted_gradient_fails_with_named_tensor() {
    let arch = Architecture {
        d: 4,
        k: 6,
        n: 4,
        hidden_selector: 5,
        hidden_regressor: 4,
    };
    let suite = run_gradchecks(arch, 5, 10.0, &[0], 1e-4, Some("regressor.w_r")).unwrap();
    assert!(!suite.passed);
    let failing: Vec<_> = suite
        .entries
        .iter()
        .flat_map(|e| e.report.failures().map(|f| f.name.clone()))
        .collect();
    assert!(!failing.is_empty());
    assert!(failing.iter().all(|n| n == "regressor.w_r"), "{failing:?}");
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let scene = small_scene(3, 30);
    let eps: Vec<_> = (0..2).map(|s| synth_scene(&scene, s).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput {
        dir: dir.path().to_path_buf(),
    };
    let cfg = TrainConfig {
        max_epochs: 0,
        ..quick_cfg()
    };
    let res = train(&eps, arch_for(&scene), &cfg, Some(&out), None).unwrap();
    assert!(res.metrics.is_empty());
    assert_eq!(res.checkpoints, vec![out.checkpoint_path(0)]);
    let ck = Checkpoint::load(&out.checkpoint_path(0)).unwrap();
    assert_eq!(ck.model().unwrap(), res.model);
    assert_eq!(fs::read_to_string(out.metrics_path()).unwrap(), "");
}

#[test]
fn resumed_training_is_bit_identical() {
    let scene = small_scene(3, 30);
    let eps: Vec<_> = (0..3).map(|s| synth_scene(&scene, s).unwrap()).collect();
    let arch = arch_for(&scene);
    let cfg = TrainConfig {
        max_epochs: 5,
        ..quick_cfg()
    };
    let straight_dir = tempfile::tempdir().unwrap();
    let straight = train(&eps, arch, &cfg, Some(&TrainOutput { dir: straight_dir.path().into() }), None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput {
        dir: dir.path().to_path_buf(),
    };
    let first = train(&eps, arch, &TrainConfig { max_epochs: 2, ..cfg.clone() }, Some(&out), None).unwrap();
    assert_eq!(first.metrics.len(), 2);
    let latest = out.latest_checkpoint().unwrap().unwrap();
    assert_eq!(latest, out.checkpoint_path(2));
    let ck = Checkpoint::load(&latest).unwrap();
    let resumed = train(&eps, arch, &cfg, Some(&out), Some(&ck)).unwrap();

    assert_eq!(bits(&resumed.model), bits(&straight.model));
    assert_eq!(resumed.metrics, straight.metrics[2..].to_vec());
    // the appended log equals the uninterrupted one
    assert_eq!(read_metrics(&out.metrics_path()).unwrap(), straight.metrics);
    assert_eq!(
        fs::read_to_string(out.checkpoint_path(5)).unwrap(),
        fs::read_to_string(straight_dir.path().join("checkpoint_00005.json")).unwrap()
    );
}

#[test]
fn lr_schedule_continues_across_resume() {
    let m = quick_cfg();
    let scene = small_scene(3, 30);
    let eps: Vec<_> = (0..2).map(|s| synth_scene(&scene, s).unwrap()).collect();
    let res = train(&eps, arch_for(&scene), &TrainConfig { max_epochs: 4, ..m.clone() }, None, None).unwrap();
    let lrs: Vec<f64> = res.metrics.iter().map(|e| e.lr).collect();
    assert_eq!(lrs, vec![0.01, 0.01, 0.005, 0.005]);
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { eta: 0.0, ..TrainConfig::default() },
        TrainConfig { samples: 0, ..TrainConfig::default() },
        TrainConfig { seq_len: 1, ..TrainConfig::default() },
        TrainConfig { grad_clip: -1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(cfg.validate(), Err(PilotError::Config(_))), "{cfg:?}");
    }
    assert!(train(&[], Architecture { d: 1, k: 1, n: 1, hidden_selector: 1, hidden_regressor: 1 }, &TrainConfig::default(), None, None).is_err());
}
