use std::time::{Duration, Instant};

use sopforge::agents::AgentId;
use sopforge::selfmod::*;
use sopforge::store::{read_checkpoint, write_checkpoint, TrainMeta};
use sopforge::video::EMBED_DIM;

const TWO: [AgentId; 2] = [AgentId::TextToImage, AgentId::ImageToVideo];

fn hand_state(z: &[f64]) -> (ChainState, TrainConfig) {
    let cfg = TrainConfig {
        f32_state: false,
        ..TrainConfig::default()
    };
    let mut state = ChainState::init(&cfg).unwrap();
    for m in state.modulation.values_mut() {
        m.values = z.to_vec();
    }
    for p in state.params.values_mut() {
        p.values_mut().for_each(|v| *v = 0.0);
    }
    (state, cfg)
}

fn unit_theta_grads(d_z: &[f64]) -> GradientSet {
    let mut g = GradientSet::zeros(&TWO).unwrap();
    for p in g.d_theta.values_mut() {
        p.values_mut().for_each(|v| *v = 1.0);
    }
    for d in g.d_z.values_mut() {
        d.copy_from_slice(d_z);
    }
    g
}

fn padded(head: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; EMBED_DIM];
    v[..head.len()].copy_from_slice(head);
    v
}

#[test]
fn hand_case_step_is_half_eta() {
    let (mut state, cfg) = hand_state(&padded(&[0.6, 0.8]));
    let alphas = sgd_step(&mut state, &unit_theta_grads(&[0.0; EMBED_DIM]), &cfg).unwrap();
    for a in TWO {
        assert_eq!(alphas[&a], 0.5);
        for v in state.params[&a].values() {
            assert_eq!(*v, -0.5 * cfg.eta_theta);
        }
    }
}

#[test]
fn alpha_comes_from_updated_z() {
    let (mut state, cfg) = hand_state(&padded(&[0.6, 0.8]));
    // z₁ moves 0.8 → 0.9 under η_z = 0.01.
    let d_z = padded(&[0.0, -10.0]);
    let alphas = sgd_step(&mut state, &unit_theta_grads(&d_z), &cfg).unwrap();
    let z_post = [0.6f64, 0.8 + 0.1];
    let post = (z_post[0] * z_post[0] + z_post[1] * z_post[1]).sqrt() / 2.0;
    for a in TWO {
        assert!((alphas[&a] - post).abs() < 1e-15, "{} vs {post}", alphas[&a]);
        assert!((alphas[&a] - 0.5).abs() > 1e-3);
        let z = &state.modulation[&a].values;
        assert!((z[1] - 0.9).abs() < 1e-15);
        for v in state.params[&a].values() {
            assert!((v + post * cfg.eta_theta).abs() < 1e-15);
        }
    }
}

#[test]
fn fixed_mode_freezes_z_and_uses_one_over_n() {
    let (mut state, mut cfg) = hand_state(&padded(&[0.6, 0.8]));
    cfg.modulation_mode = ModulationMode::Fixed;
    let before = state.modulation.clone();
    let alphas = sgd_step(&mut state, &unit_theta_grads(&padded(&[3.0, -2.0])), &cfg).unwrap();
    assert_eq!(state.modulation, before);
    assert!(alphas.values().all(|a| *a == 0.5));
}

#[test]
fn alpha_clamp_bounds_step() {
    let (mut state, mut cfg) = hand_state(&padded(&[6.0, 8.0]));
    cfg.alpha_clamp = Some(2.0);
    let alphas = sgd_step(&mut state, &unit_theta_grads(&[0.0; EMBED_DIM]), &cfg).unwrap();
    assert!(alphas.values().all(|a| *a == 2.0));
}

#[test]
fn default_training_halves_loss_within_fifty_epochs() {
    for seed in [0u64, 1, 2] {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.epochs, 50);
        let data = oracle_dataset(seed, 16, cfg.t_frames, None).unwrap();
        let start = Instant::now();
        let initial = evaluate_loss(&ChainState::init(&cfg).unwrap(), &data, &cfg).unwrap();
        let out = train(&data, &cfg).unwrap();
        let fin = evaluate_loss(&out.state, &data, &cfg).unwrap();
        assert!(start.elapsed() < Duration::from_secs(120));
        assert!(fin <= 0.5 * initial, "seed {seed}: {initial} -> {fin}");
        assert_eq!(out.history.records.len(), 50 * 4);
    }
}

fn ablation_pair(seed: u64) -> (f64, f64) {
    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let data = oracle_dataset(seed, 16, base.t_frames, Some(2)).unwrap();
    let run = |mode| {
        let cfg = TrainConfig {
            modulation_mode: mode,
            ..base.clone()
        };
        let out = train(&data, &cfg).unwrap();
        evaluate_loss(&out.state, &data, &cfg).unwrap()
    };
    (run(ModulationMode::SelfModulated), run(ModulationMode::Fixed))
}

#[test]
fn self_modulation_not_worse_than_fixed() {
    for seed in [0u64, 1, 2] {
        let (learned, fixed) = ablation_pair(seed);
        assert!(learned <= fixed, "seed {seed}: learned {learned} fixed {fixed}");
    }
}

fn resume_matches(shuffle: bool, through_disk: bool) {
    let cfg2 = TrainConfig {
        epochs: 2,
        shuffle,
        seed: 5,
        ..TrainConfig::default()
    };
    let cfg1 = TrainConfig {
        epochs: 1,
        ..cfg2.clone()
    };
    let data = oracle_dataset(5, 10, cfg2.t_frames, None).unwrap();
    let full = train(&data, &cfg2).unwrap();

    let first = train(&data, &cfg1).unwrap();
    let mut state = first.state;
    if through_disk {
        let dir = tempfile::tempdir().unwrap();
        let meta = TrainMeta { iteration: 0, epoch: 1, seed: 5 };
        write_checkpoint(&state, &cfg1.chain, meta, dir.path()).unwrap();
        let ck = read_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.state, state);
        state = ck.state;
    }
    let second = train_from(&mut state, &data, &cfg1, 2, &mut |_| {}).unwrap();

    assert_eq!(state, full.state);
    let mut joined = first.history.records.clone();
    joined.extend(second.records);
    assert_eq!(joined, full.history.records);
}

#[test]
fn resume_equals_uninterrupted() {
    resume_matches(false, false);
    resume_matches(true, false);
    resume_matches(false, true);
    resume_matches(true, true);
}

#[test]
fn observer_sees_every_batch() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let data = oracle_dataset(0, 7, cfg.t_frames, None).unwrap();
    let mut seen = Vec::new();
    let mut state = ChainState::init(&cfg).unwrap();
    let h = train_from(&mut state, &data, &cfg, 1, &mut |r| seen.push((r.epoch, r.batch))).unwrap();
    assert_eq!(seen.len(), 9);
    assert_eq!(seen[0], (1, 1));
    assert_eq!(seen[8], (3, 3));
    assert_eq!(h.alpha_series(AgentId::ImageToVideo).len(), 9);
}
