use std::time::Instant;

use cof_core::codec::CodecConfig;
use cof_core::dit::{checkpoint, ModelConfig, ModelState};
use cof_core::sequencer::NoisePair;
use cof_core::trainer::{
    adamw_step, batch_gradients, encode_triplet, train, train_step, EncodedTriplet, PlanCache, TrainConfig, Trainer,
};
use cof_core::worlds::{BenchmarkSampler, SamplerConfig};
use cof_core::CofError;
use cof_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODEC: CodecConfig = CodecConfig { patch: 8, temporal: 4 };

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        codec: CODEC,
        model: ModelConfig {
            channels: CODEC.channels(),
            d_model: 16,
            heads: 2,
            blocks: 1,
            cond_width: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn data(n: usize, cof: bool) -> Vec<EncodedTriplet> {
    BenchmarkSampler::new(SamplerConfig::default())
        .unwrap()
        .triplets(n)
        .unwrap()
        .iter()
        .map(|t| encode_triplet(t, &CODEC, cof).unwrap())
        .collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let d = data(4, true);
    let cfg = TrainConfig { lr: 0.0, ..config(5) };
    let (state, log) = train(&cfg, &d, None, |_| {}).unwrap();
    let init = ModelState::init(&cfg.model).unwrap();
    assert_eq!(state.params, init.params);
    assert_eq!(log.len(), 5);
    assert_eq!(state.step, 5);
}

#[test]
fn zero_gradients_apply_exact_weight_decay() {
    let cfg = config(1);
    let mut state = ModelState::init(&cfg.model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for p in &mut state.params {
        *p = Tensor::from_fn(p.shape(), |_| rng.random_range(-1.0..1.0)).unwrap();
    }
    let before = state.params.clone();
    let zeros: Vec<Tensor> = before.iter().map(|p| Tensor::zeros(p.shape()).unwrap()).collect();
    let norm = adamw_step(&mut state, &zeros, &cfg).unwrap();
    assert_eq!(norm, 0.0);
    let factor = 1.0 - cfg.lr * cfg.weight_decay;
    for (a, b) in state.params.iter().zip(&before) {
        assert_eq!(a, &b.map(|x| x * factor));
    }
}

#[test]
fn clipping_bounds_the_first_update() {
    // Adam's first step moves each weight by lr · g / (|g| + eps) with the
    // clipped gradient g.
    let cfg = TrainConfig {
        weight_decay: 0.0,
        ..config(1)
    };
    let mut state = ModelState::init(&cfg.model).unwrap();
    let before = state.params.clone();
    let grads: Vec<Tensor> = before.iter().map(|p| Tensor::full(p.shape(), 50.0).unwrap()).collect();
    let norm = adamw_step(&mut state, &grads, &cfg).unwrap();
    let n: usize = before.iter().map(Tensor::len).sum();
    assert!((norm - 50.0 * (n as f64).sqrt()).abs() < 1e-6 * norm);
    let g = 1.0 / (n as f64).sqrt();
    let step = cfg.lr * g / (g + cfg.eps);
    for (a, b) in state.params.iter().zip(&before) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - step).abs() < 1e-12);
        }
    }
}

/// With a zero head the first reported loss is the mean squared velocity
/// over the reasoning and target frames, recomputed from the same RNG draws.
#[test]
fn initial_loss_is_the_mean_squared_velocity() {
    let d = data(3, true);
    let cfg = TrainConfig {
        batch_size: 2,
        ..config(1)
    };
    let mut tr = Trainer::new(cfg.clone(), &d).unwrap();
    let rec = tr.step().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let picks: Vec<usize> = (0..2).map(|_| rng.random_range(0..d.len())).collect();
    let mut total = 0.0;
    for &i in &picks {
        let seq = &d[i].seq;
        let _t: f64 = rng.random();
        let pair = NoisePair::sample(&seq.z, &mut rng).unwrap();
        let start = seq.bounds.source * seq.frame_len();
        let tail = &pair.v.data()[start..];
        total += tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
    }
    let want = total / 2.0;
    assert!((rec.loss - want).abs() < 1e-10, "{} vs {want}", rec.loss);
}

#[test]
fn overfitting_one_sample_cuts_the_loss_tenfold() {
    let d = data(1, true);
    let cfg = TrainConfig {
        lr: 1e-2,
        ..config(200)
    };
    let (_, log) = train(&cfg, &d, None, |_| {}).unwrap();
    let first = log[0].loss;
    let tail = log[180..].iter().map(|r| r.loss).sum::<f64>() / 20.0;
    assert!(tail * 10.0 <= first, "loss {first} -> {tail}");
}

#[test]
fn training_is_deterministic() {
    let d = data(6, true);
    let cfg = config(4);
    let (a, la) = train(&cfg, &d, None, |_| {}).unwrap();
    let (b, lb) = train(&cfg, &d, None, |_| {}).unwrap();
    assert_eq!(a, b);
    let strip =
        |l: &[cof_core::trainer::TrainLogRecord]| l.iter().map(|r| (r.step, r.loss, r.grad_norm)).collect::<Vec<_>>();
    assert_eq!(strip(&la), strip(&lb));
    let (c, _) = train(&TrainConfig { seed: 1, ..cfg }, &d, None, |_| {}).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn zero_steps_return_the_initial_state() {
    let d = data(2, true);
    let cfg = config(0);
    let (state, log) = train(&cfg, &d, None, |_| {}).unwrap();
    assert!(log.is_empty());
    assert_eq!(state, ModelState::init(&cfg.model).unwrap());
}

#[test]
fn training_without_reasoning_frames() {
    let d = data(3, false);
    assert!(d.iter().all(|e| e.seq.bounds.reasoning == 0));
    let (state, log) = train(
        &TrainConfig {
            cof: false,
            ..config(3)
        },
        &d,
        None,
        |_| {},
    )
    .unwrap();
    assert_eq!(log.len(), 3);
    assert!(state.is_finite());
}

/// Source-frame predictions receive no gradient on any of 100 random steps.
#[test]
fn source_gradient_stays_zero_for_100_steps() {
    let d = data(8, true);
    let cfg = TrainConfig {
        debug_checks: true,
        batch_size: 2,
        ..config(100)
    };
    let (state, log) = train(&cfg, &d, None, |_| {}).unwrap();
    assert_eq!(log.len(), 100);
    assert!(state.is_finite());
}

#[test]
fn checkpoints_are_written_at_the_cadence() {
    let d = data(2, true);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..config(5)
    };
    let mut seen = 0;
    let (state, _) = train(&cfg, &d, Some(dir.path()), |_| seen += 1).unwrap();
    assert_eq!(seen, 5);
    for name in ["ckpt_000002.bin", "ckpt_000004.bin", "final.bin"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("ckpt_000005.bin").exists());
    let loaded = checkpoint::load(&dir.path().join("final.bin")).unwrap();
    assert_eq!(loaded.step, 5);
    assert_eq!(loaded.config, state.config);
    assert!(loaded.moments.is_some());
}

#[test]
fn malformed_batches_are_rejected() {
    let cfg = config(1);
    let with = data(2, true);
    let without = data(2, false);
    let state = ModelState::init(&cfg.model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut plans = PlanCache::default();
    assert!(batch_gradients(&state, &[], &mut rng, &mut plans, false).is_err());
    assert!(batch_gradients(&state, &[&with[0], &without[1]], &mut rng, &mut plans, false).is_err());
    assert!(Trainer::new(cfg.clone(), &[]).is_err());
    let wrong = TrainConfig {
        model: ModelConfig {
            channels: 48,
            ..cfg.model.clone()
        },
        ..cfg.clone()
    };
    assert!(Trainer::new(wrong, &with).is_err());
    assert!(Trainer::new(TrainConfig { batch_size: 0, ..cfg }, &with).is_err());
}

#[test]
fn divergence_is_reported() {
    let d = data(2, true);
    let cfg = config(1);
    let mut state = ModelState::init(&cfg.model).unwrap();
    let head = state.names.iter().position(|n| n == "head.b").unwrap();
    state.params[head] = Tensor::full(state.params[head].shape(), f64::INFINITY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = [&d[0]];
    let err = train_step(
        &mut state,
        &batch,
        &cfg,
        &mut rng,
        &mut PlanCache::default(),
        Instant::now(),
    )
    .unwrap_err();
    assert!(matches!(err, CofError::NonFiniteLoss { step: 0 }), "{err:?}");
}
