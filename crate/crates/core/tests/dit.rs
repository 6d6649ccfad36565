use cof_core::codec::{encode, CodecConfig, LatentClip};
use cof_core::dit::checkpoint::{from_bytes, load, save, to_bytes, MAGIC};
use cof_core::dit::{forward, layout, timestep_embed, timestep_lipschitz, Bound, ModelConfig, ModelState, Prepared};
use cof_core::rope::{plan_with_grid, RopeScheme};
use cof_core::sequencer::{assemble, masked_velocity_loss, partial_noise, FullSequence, NoisePair};
use cof_core::worlds::{Attribute, BenchmarkSampler, ConditionCode, SamplerConfig, Selector, Task};
use cof_tensor::{gradcheck, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(copy_head: bool) -> ModelConfig {
    ModelConfig {
        channels: 12,
        d_model: 8,
        heads: 1,
        blocks: 1,
        cond_width: 8,
        copy_head,
        seed: 3,
        ..Default::default()
    }
}

/// Replaces every parameter with a random draw so no gradient path is
/// switched off by the zero-initialized head and gates.
fn randomized(cfg: &ModelConfig, seed: u64, std: f64) -> ModelState {
    let mut state = ModelState::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut state.params {
        *p = Tensor::from_fn(p.shape(), |_| rng.random_range(-std..std)).unwrap();
    }
    state
}

fn code() -> ConditionCode {
    ConditionCode {
        task: Task::Recolor,
        selector: Selector::Largest,
        attribute: Attribute::Color(1),
        triptych: true,
    }
}

/// One latent frame per segment on a 2×2 grid of 12 channels.
fn tiny_sequence(seed: u64) -> FullSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clip = || {
        LatentClip::new(
            Tensor::from_fn([1, 12, 2, 2], |_| rng.random_range(0.0..1.0)).unwrap(),
            1,
        )
        .unwrap()
    };
    let (s, r, e) = (clip(), clip(), clip());
    assemble(&s, Some(&r), &e).unwrap()
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for copy_head in [true, false] {
        let cfg = tiny_config(copy_head);
        let state = randomized(&cfg, 1, 0.5);
        let seq = tiny_sequence(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = NoisePair::sample(&seq.z, &mut rng).unwrap();
        let noisy = partial_noise(&seq, &noise.eps, 0.6).unwrap();
        let plan = plan_with_grid(RopeScheme::CoFAligned, 1, 1, 1, 2, 2).unwrap();
        let prep = Prepared::new(&cfg, &plan).unwrap();
        let mut shape = vec![1];
        shape.extend_from_slice(noisy.z.shape());
        let z = noisy.z.reshape(shape).unwrap();
        let v = noise.v.clone();
        let bounds = seq.bounds;
        let names = state.names.clone();
        let check = gradcheck::check(&state.params, 1e-5, |tape, vars| {
            let bound = Bound::new(&names, vars.to_vec()).unwrap();
            let zv = tape.constant(z.clone());
            let out = forward(tape, &cfg, &bound, zv, &[0.6], &[code()], &prep).unwrap();
            let out = tape.reshape(out, v.shape()).unwrap();
            Ok(masked_velocity_loss(tape, out, &v, &bounds).unwrap())
        })
        .unwrap();
        for (name, err) in state.names.iter().zip(&check.rel_errors) {
            assert!(*err < 1e-3, "{name}: relative error {err} (copy head {copy_head})");
        }
    }
}

#[test]
fn parameter_count_matches_a_hand_count() {
    // C = 12, d = 8, cond 8, MLP 16, one block.
    let embed = 12 * 8 + 8;
    let tables = (1 + 10 + 4 + 10 + 28 + 4 + 10 + 28) * 8;
    let cond_mlp = 8 * 8 + 8;
    let block = (8 * 48 + 48) + (8 * 24 + 24) + (8 * 8 + 8) + (8 * 16 + 16) + (16 * 8 + 8);
    let last = (8 * 16 + 16) + (8 * 12 + 12);
    let copy = 8 * 8 * 2 + 8 + 1;
    let plain = embed + tables + cond_mlp + block + last;
    assert_eq!(plain, 2188);
    assert_eq!(tiny_config(false).param_count(), plain);
    assert_eq!(tiny_config(true).param_count(), plain + copy);
    for cfg in [
        tiny_config(true),
        tiny_config(false),
        ModelConfig {
            channels: 768,
            ..Default::default()
        },
    ] {
        let state = ModelState::init(&cfg).unwrap();
        assert_eq!(state.param_count(), cfg.param_count());
        let from_layout: usize = layout(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(from_layout, cfg.param_count());
    }
}

#[test]
fn fresh_model_predicts_zero_velocity() {
    let cfg = tiny_config(true);
    let state = ModelState::init(&cfg).unwrap();
    let seq = tiny_sequence(5);
    let plan = plan_with_grid(RopeScheme::CoFAligned, 1, 1, 1, 2, 2).unwrap();
    for t in [0.0, 0.3, 1.0] {
        let v = state.predict(&seq.z, t, &code(), &plan).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn prediction_is_deterministic_and_depends_on_the_scheme() {
    let cfg = tiny_config(true);
    let state = randomized(&cfg, 6, 0.3);
    let seq = tiny_sequence(7);
    let cof = plan_with_grid(RopeScheme::CoFAligned, 1, 1, 1, 2, 2).unwrap();
    let seq_plan = plan_with_grid(RopeScheme::Sequential, 1, 1, 1, 2, 2).unwrap();
    let a = state.predict(&seq.z, 0.4, &code(), &cof).unwrap();
    assert_eq!(a, state.predict(&seq.z, 0.4, &code(), &cof).unwrap());
    let b = state.predict(&seq.z, 0.4, &code(), &seq_plan).unwrap();
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-6, "plans give identical outputs");
    // Same init seed, same weights.
    assert_eq!(ModelState::init(&cfg).unwrap(), ModelState::init(&cfg).unwrap());
}

#[test]
fn conditioning_changes_the_prediction() {
    let state = randomized(&tiny_config(true), 8, 0.3);
    let seq = tiny_sequence(9);
    let plan = plan_with_grid(RopeScheme::CoFAligned, 1, 1, 1, 2, 2).unwrap();
    let a = state.predict(&seq.z, 0.5, &code(), &plan).unwrap();
    let other = ConditionCode {
        selector: Selector::Smallest,
        ..code()
    };
    assert_ne!(a, state.predict(&seq.z, 0.5, &other, &plan).unwrap());
    assert_ne!(a, state.predict(&seq.z, 0.7, &code(), &plan).unwrap());
}

#[test]
fn batched_forward_matches_single_samples() {
    let cfg = tiny_config(true);
    let state = randomized(&cfg, 10, 0.3);
    let plan = plan_with_grid(RopeScheme::CoFAligned, 1, 1, 1, 2, 2).unwrap();
    let prep = Prepared::new(&cfg, &plan).unwrap();
    let seqs: Vec<FullSequence> = (0..3).map(|i| tiny_sequence(20 + i)).collect();
    let ts = [0.1, 0.5, 0.9];
    let codes = [
        code(),
        ConditionCode {
            triptych: false,
            ..code()
        },
        ConditionCode {
            selector: Selector::Leftmost,
            ..code()
        },
    ];
    let parts: Vec<&Tensor> = seqs.iter().map(|s| &s.z).collect();
    let z = Tensor::concat(&parts, 0)
        .unwrap()
        .into_reshape([3, 3, 12, 2, 2])
        .unwrap();
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, false);
    let zv = tape.constant(z);
    let out = forward(&mut tape, &cfg, &bound, zv, &ts, &codes, &prep).unwrap();
    let out = tape.value(out).clone();
    let per = out.len() / 3;
    for i in 0..3 {
        let single = state.predict(&seqs[i].z, ts[i], &codes[i], &plan).unwrap();
        for (a, b) in single.data().iter().zip(&out.data()[i * per..(i + 1) * per]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn mismatched_plans_are_rejected() {
    let state = ModelState::init(&tiny_config(true)).unwrap();
    let seq = tiny_sequence(11);
    let wrong = plan_with_grid(RopeScheme::CoFAligned, 2, 1, 1, 2, 2).unwrap();
    assert!(state.predict(&seq.z, 0.5, &code(), &wrong).is_err());
    let bad = ModelConfig {
        d_model: 12,
        heads: 1,
        ..tiny_config(true)
    };
    assert!(ModelState::init(&bad).is_err());
}

#[test]
fn timestep_embedding_examples() {
    let e0 = timestep_embed(0.0, 8);
    assert_eq!(e0.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let e = timestep_embed(0.5, 4);
    // Frequencies 1 and 10⁴ for width 4.
    let want = [0.5f64.sin(), 5000f64.sin(), 0.5f64.cos(), 5000f64.cos()];
    for (a, b) in e.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }
    let lip = timestep_lipschitz(32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (ea, eb) = (timestep_embed(a, 32), timestep_embed(b, 32));
        let d = ea
            .data()
            .iter()
            .zip(eb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(d <= lip * (a - b).abs() + 1e-12);
    }
}

#[test]
fn checkpoints_round_trip_at_f32_precision() {
    let cfg = tiny_config(true);
    let mut state = randomized(&cfg, 12, 1.0);
    state.step = 17;
    state.moments = Some((
        state.params.clone(),
        state.params.iter().map(|p| p.map(|x| x * x)).collect(),
    ));
    let loaded = from_bytes(&to_bytes(&state).unwrap()).unwrap();
    assert_eq!(loaded.config, state.config);
    assert_eq!(loaded.step, 17);
    assert_eq!(loaded.names, state.names);
    let f32ed = |t: &Tensor| t.map(|x| x as f32 as f64);
    for (a, b) in loaded.params.iter().zip(&state.params) {
        assert_eq!(a, &f32ed(b));
    }
    let (m, v) = loaded.moments.clone().unwrap();
    let (m0, v0) = state.moments.clone().unwrap();
    assert_eq!(m, m0.iter().map(f32ed).collect::<Vec<_>>());
    assert_eq!(v, v0.iter().map(f32ed).collect::<Vec<_>>());
    // A second trip is exact.
    assert_eq!(from_bytes(&to_bytes(&loaded).unwrap()).unwrap(), loaded);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    save(&path, &loaded).unwrap();
    assert_eq!(load(&path).unwrap(), loaded);
    assert_eq!(&std::fs::read(&path).unwrap()[..8], MAGIC);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let state = ModelState::init(&tiny_config(false)).unwrap();
    let bytes = to_bytes(&state).unwrap();
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(from_bytes(&bad).is_err());
    assert!(from_bytes(&[]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(from_bytes(&extra).is_err());
}

/// The benchmark geometry runs end to end through the model.
#[test]
fn benchmark_geometry_forward() {
    let codec = CodecConfig { patch: 8, temporal: 4 };
    let t = BenchmarkSampler::new(SamplerConfig::default())
        .unwrap()
        .triplet(0)
        .unwrap();
    let seq = assemble(
        &encode(&t.source, &codec).unwrap(),
        Some(&encode(&t.reasoning, &codec).unwrap()),
        &encode(&t.target, &codec).unwrap(),
    )
    .unwrap();
    let cfg = ModelConfig {
        channels: codec.channels(),
        ..Default::default()
    };
    let state = randomized(&cfg, 13, 0.05);
    let plan = plan_with_grid(RopeScheme::CoFAligned, 3, 1, 3, 4, 4).unwrap();
    let v = state.predict(&seq.z, 0.5, &t.condition, &plan).unwrap();
    assert_eq!(v.shape(), seq.z.shape());
    assert!(v.is_finite());
}
