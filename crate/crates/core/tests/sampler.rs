use cof_core::codec::{encode, CodecConfig};
use cof_core::dit::{ModelConfig, ModelState};
use cof_core::rope::RopeScheme;
use cof_core::sampler::{
    finish, sample, sample_batch, sample_trajectories, sample_trajectory, ExactOracle, SampleConfig, SampleLayout,
};
use cof_core::sequencer::{assemble, extract_edit};
use cof_core::worlds::{BenchmarkSampler, EditTriplet, FrameClip, SamplerConfig};
use cof_tensor::Tensor;

const CODEC: CodecConfig = CodecConfig { patch: 8, temporal: 4 };

fn triplet(i: u64) -> EditTriplet {
    BenchmarkSampler::new(SamplerConfig::default())
        .unwrap()
        .triplet(i)
        .unwrap()
}

fn config(steps: usize) -> SampleConfig {
    SampleConfig {
        steps,
        seed: 11,
        codec: CODEC,
        ..Default::default()
    }
}

/// Ground-truth clean sequence and the oracle for the layout's noise draw.
fn oracle_for(t: &EditTriplet, cfg: &SampleConfig) -> (SampleLayout, Tensor, Tensor, ExactOracle) {
    let layout = SampleLayout::new(&t.source, cfg).unwrap();
    let zr = encode(&t.reasoning, &CODEC).unwrap();
    let z0 = assemble(&layout.source, Some(&zr), &encode(&t.target, &CODEC).unwrap())
        .unwrap()
        .z;
    let eps = layout.noise(cfg.seed).unwrap();
    let oracle = ExactOracle::new(&z0, &eps).unwrap();
    (layout, z0, eps, oracle)
}

fn run(t: &EditTriplet, steps: usize, scheme: RopeScheme) -> (Vec<cof_core::sequencer::FullSequence>, Tensor) {
    let cfg = config(steps);
    let (layout, z0, eps, oracle) = oracle_for(t, &cfg);
    let plan = layout.plan(scheme).unwrap();
    let mut traj = sample_trajectories(&oracle, &[layout], &[t.condition], &plan, steps, &[eps]).unwrap();
    (traj.pop().unwrap(), z0)
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn one_oracle_step_recovers_the_target_bitwise() {
    let t = triplet(0);
    let (traj, z0) = run(&t, 1, RopeScheme::CoFAligned);
    assert_eq!(traj.len(), 2);
    let last = traj.last().unwrap().clone();
    // `ε − (ε − z0)` is exact up to one rounding; decoding snaps it away.
    assert!(max_diff(&last.z, &z0) <= 1e-15);
    let out = finish(last, &CODEC).unwrap();
    assert_eq!(out.edited, t.target);
    // Blended reasoning values sit off the 8-bit grid; compare after snapping.
    let gt = &t.reasoning;
    let snapped = FrameClip::quantized_from(gt.frames(), gt.height(), gt.width(), gt.pixels()).unwrap();
    assert_eq!(out.reasoning.unwrap(), snapped);
}

#[test]
fn many_oracle_steps_agree_with_one() {
    let t = triplet(1);
    let (one, _) = run(&t, 1, RopeScheme::CoFAligned);
    let (fifty, _) = run(&t, 50, RopeScheme::CoFAligned);
    assert_eq!(fifty.len(), 51);
    let worst = max_diff(&one.last().unwrap().z, &fifty.last().unwrap().z);
    assert!(worst < 1e-9, "max deviation {worst}");
    assert_eq!(finish(fifty.last().unwrap().clone(), &CODEC).unwrap().edited, t.target);
}

#[test]
fn source_is_pinned_at_every_step() {
    let t = triplet(2);
    for scheme in RopeScheme::ALL {
        for steps in [1, 7] {
            let (traj, z0) = run(&t, steps, scheme);
            let zs = encode(&t.source, &CODEC).unwrap();
            for seq in &traj {
                assert_eq!(seq.source().unwrap(), zs);
                let n = seq.bounds.source * seq.frame_len();
                assert_eq!(&seq.z.data()[..n], &z0.data()[..n]);
            }
        }
    }
}

#[test]
fn oracle_noise_norm_decays_linearly() {
    let t = triplet(3);
    let steps = 10;
    let (traj, z0) = run(&t, steps, RopeScheme::CoFAligned);
    let norms: Vec<f64> = traj
        .iter()
        .map(|s| {
            s.z.data()
                .iter()
                .zip(z0.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for (k, pair) in norms.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] + 1e-12, "step {k}: {} -> {}", pair[0], pair[1]);
        let expected = norms[0] * (1.0 - (k + 1) as f64 / steps as f64);
        assert!((pair[1] - expected).abs() < 1e-9 * norms[0].max(1.0));
    }
    assert_eq!(traj.first().unwrap().t, 1.0);
    assert_eq!(traj.last().unwrap().t, 0.0);
}

#[test]
fn extraction_uses_the_training_slice() {
    let t = triplet(4);
    let (traj, z0) = run(&t, 1, RopeScheme::CoFAligned);
    let last = traj.last().unwrap();
    let gt = assemble(
        &encode(&t.source, &CODEC).unwrap(),
        Some(&encode(&t.reasoning, &CODEC).unwrap()),
        &encode(&t.target, &CODEC).unwrap(),
    )
    .unwrap();
    assert_eq!(gt.z, z0);
    let (a, b) = (extract_edit(last).unwrap(), extract_edit(&gt).unwrap());
    assert_eq!(a.values.shape(), b.values.shape());
    assert!(max_diff(&a.values, &b.values) <= 1e-15);
    assert_eq!(finish(last.clone(), &CODEC).unwrap().edited, t.target);
}

fn small_model() -> ModelState {
    ModelState::init(&ModelConfig {
        channels: CODEC.channels(),
        d_model: 16,
        heads: 2,
        blocks: 1,
        cond_width: 8,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn model_trajectory_ends_at_the_sample_output() {
    let state = small_model();
    let t = triplet(5);
    let cfg = config(3);
    let out = sample(&state, &t.source, &t.condition, &cfg).unwrap();
    let traj = sample_trajectory(&state, &t.source, &t.condition, &cfg).unwrap();
    assert_eq!(traj.len(), 4);
    assert_eq!(traj.last().unwrap(), &out.latent);
    // Deterministic given the seed.
    assert_eq!(
        sample(&state, &t.source, &t.condition, &cfg).unwrap().latent,
        out.latent
    );
}

#[test]
fn batching_does_not_change_results() {
    let state = small_model();
    let ts: Vec<EditTriplet> = (0..3).map(triplet).collect();
    let cfg = config(2);
    let sources: Vec<_> = ts.iter().map(|t| &t.source).collect();
    let conds: Vec<_> = ts.iter().map(|t| t.condition).collect();
    let batch = sample_batch(&state, &sources, &conds, &[5, 6, 7], &cfg).unwrap();
    for (i, t) in ts.iter().enumerate() {
        let single = sample(
            &state,
            &t.source,
            &t.condition,
            &SampleConfig {
                seed: 5 + i as u64,
                ..cfg.clone()
            },
        )
        .unwrap();
        let d = max_diff(&single.latent.z, &batch[i].latent.z);
        assert!(d < 1e-12, "sample {i} differs by {d}");
    }
}

#[test]
fn longer_targets_extend_the_plan() {
    let state = small_model();
    let t = triplet(6);
    let cfg = SampleConfig {
        target_frames: Some(17),
        ..config(2)
    };
    let out = sample(&state, &t.source, &t.condition, &cfg).unwrap();
    assert_eq!(out.edited.frames(), 17);
    assert_eq!(out.latent.bounds.target, 5);
}

#[test]
fn invalid_configs_are_rejected() {
    let t = triplet(7);
    assert!(SampleLayout::new(&t.source, &config(0)).is_err());
    assert!(SampleLayout::new(
        &t.source,
        &SampleConfig {
            guidance: 1.5,
            ..config(1)
        }
    )
    .is_err());
    assert!(SampleLayout::new(
        &t.source,
        &SampleConfig {
            target_frames: Some(8),
            ..config(1)
        }
    )
    .is_err());
    assert!(SampleLayout::new(
        &t.source,
        &SampleConfig {
            reasoning_frames: 10,
            ..config(1)
        }
    )
    .is_err());
}
