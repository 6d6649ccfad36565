use cof_core::worlds::store::{
    read_dataset, read_pgm, read_ppm, read_triplet, write_dataset, write_ppm, write_triplet,
};
use cof_core::worlds::{
    embed_condition, BenchmarkSampler, ConditionTables, EditTriplet, FrameClip, Mask, ReasoningBase, ReasoningFormat,
    SamplerConfig, Task,
};
use cof_tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sampler(cfg: SamplerConfig) -> BenchmarkSampler {
    BenchmarkSampler::new(cfg).unwrap()
}

fn frame_pixels(clip: &FrameClip, f: usize) -> &[f64] {
    let n = clip.height() * clip.width() * 3;
    &clip.pixels()[f * n..(f + 1) * n]
}

/// Checks the triplet invariants pixel by pixel.
fn check_invariants(t: &EditTriplet) -> Result<(), TestCaseError> {
    let (h, w) = (t.source.height(), t.source.width());
    prop_assert!(t.source.same_geometry(&t.target));
    prop_assert!(t
        .source
        .pixels()
        .iter()
        .chain(t.target.pixels())
        .all(|p| (0.0..=1.0).contains(p)));
    for f in 0..t.frames() {
        for y in 0..h {
            for x in 0..w {
                if !t.edit_mask.get(y, x) {
                    prop_assert_eq!(t.source.pixel(f, y, x), t.target.pixel(f, y, x));
                }
            }
        }
    }
    let base = match t.base {
        ReasoningBase::Source => &t.source,
        ReasoningBase::Target => &t.target,
    };
    for f in 0..t.reasoning_frames() {
        for y in 0..h {
            for x in 0..w {
                if !t.edit_mask.get(y, x) && t.format != ReasoningFormat::BlackBg {
                    prop_assert_eq!(t.reasoning.pixel(f, y, x), base.pixel(f, y, x));
                }
            }
        }
    }
    if t.format == ReasoningFormat::ProgressiveGray {
        prop_assert_eq!(frame_pixels(&t.reasoning, 0), frame_pixels(base, 0));
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_triplets_satisfy_the_invariants(
        index in 0u64..100_000,
        seed in 0u64..4,
        frames in prop::sample::select(vec![1usize, 5, 9, 17]),
        k in 1usize..5,
        triptych in any::<bool>(),
        format in prop::sample::select(vec!["progressive_gray", "static_gray", "red", "black_bg"]),
        on_target in any::<bool>(),
    ) {
        let cfg = SamplerConfig {
            frames,
            frames_max: frames,
            reasoning_frames: k.min(frames),
            triptych,
            format: ReasoningFormat::parse(format).unwrap(),
            base: if on_target { ReasoningBase::Target } else { ReasoningBase::Source },
            seed,
            ..Default::default()
        };
        let s = sampler(cfg);
        let t = s.triplet(index).unwrap();
        prop_assert_eq!(t.frames(), frames);
        prop_assert_eq!(t.reasoning_frames(), k.min(frames));
        prop_assert_eq!(t.condition.triptych, triptych);
        check_invariants(&t)?;

        let (spec, cond) = s.scene(index).unwrap();
        prop_assert!(spec.instances.len() >= 2);
        prop_assert!(cond.selector.resolve(&spec.instances).is_ok());
        for inst in &spec.instances {
            for f in 0..frames {
                prop_assert!(inst.inside(f, spec.height, spec.width));
            }
        }
    }
}

#[test]
fn generation_is_deterministic_across_instances() {
    let a = sampler(SamplerConfig::default());
    let b = sampler(SamplerConfig::default());
    for i in [0, 1, 77, 4096] {
        assert_eq!(a.triplet(i).unwrap(), b.triplet(i).unwrap());
    }
    let other = sampler(SamplerConfig {
        seed: 1,
        ..Default::default()
    });
    assert_ne!(a.triplet(0).unwrap().source, other.triplet(0).unwrap().source);
}

/// Pixel-diff oracle: every changed pixel lies in the mask, so the count of
/// changed locations is bounded by the mask area.
#[test]
fn recolor_changes_at_most_the_mask() {
    let s = sampler(SamplerConfig {
        tasks: vec![Task::Recolor],
        ..Default::default()
    });
    for i in 0..40 {
        let t = s.triplet(i).unwrap();
        let (h, w) = (t.source.height(), t.source.width());
        let mut changed = Mask::empty(h, w);
        for f in 0..t.frames() {
            for y in 0..h {
                for x in 0..w {
                    if t.source.pixel(f, y, x) != t.target.pixel(f, y, x) {
                        changed.set(y, x);
                    }
                }
            }
        }
        assert!(changed.count() > 0, "sample {i} has no visible edit");
        assert!(changed.count() <= t.edit_mask.count());
        assert!(changed.bits().iter().zip(t.edit_mask.bits()).all(|(&c, &m)| !c || m));
    }
}

#[test]
fn every_task_is_produced() {
    let s = sampler(SamplerConfig::default());
    let mut seen = [0usize; 4];
    for t in s.triplets(200).unwrap() {
        seen[t.condition.task.index()] += 1;
    }
    assert!(seen.iter().all(|&n| n > 20), "{seen:?}");
}

fn embed(tables: &ConditionTables<Tensor>, t: &EditTriplet, triptych: bool) -> Tensor {
    let mut tape = Tape::new();
    let vars = ConditionTables::from_vec(
        tables
            .clone()
            .into_vec()
            .into_iter()
            .map(|x| tape.constant(x))
            .collect(),
    )
    .unwrap();
    let code = cof_core::worlds::ConditionCode {
        triptych,
        ..t.condition
    };
    let e = embed_condition(&mut tape, &vars, &code).unwrap();
    tape.value(e).clone()
}

#[test]
fn distinct_codes_embed_distinctly() {
    let tables = ConditionTables::init(8, 0.02, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ts = sampler(SamplerConfig::default()).triplets(60).unwrap();
    for a in &ts {
        assert_eq!(embed(&tables, a, true), embed(&tables, a, true));
        assert_ne!(embed(&tables, a, true), embed(&tables, a, false));
        for b in &ts {
            if a.condition != b.condition {
                assert_ne!(embed(&tables, a, true), embed(&tables, b, true));
                assert_ne!(embed(&tables, a, false), embed(&tables, b, false));
            }
        }
    }
}

#[test]
fn triplets_survive_the_directory_format() {
    let dir = tempfile::tempdir().unwrap();
    let s = sampler(SamplerConfig {
        reasoning_frames: 3,
        ..Default::default()
    });
    for i in 0..8 {
        let t = s.triplet(i).unwrap();
        let path = dir.path().join(format!("t{i}"));
        write_triplet(&path, &t, i).unwrap();
        assert_eq!(read_triplet(&path).unwrap(), t);
        let (w, h, px) = read_ppm(&path.join("source").join("0000.ppm")).unwrap();
        assert_eq!((w, h), (32, 32));
        assert_eq!(px, frame_pixels(&t.source, 0));
        assert_eq!(read_pgm(&path.join("mask.pgm")).unwrap(), t.edit_mask);
    }
}

#[test]
fn ppm_header_and_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let clip = FrameClip::new(1, 1, 2, vec![0.0, 1.0, 0.5, 0.2, 0.8, 1.0 / 255.0]).unwrap();
    let path = dir.path().join("x.ppm");
    write_ppm(&path, &clip, 0).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
    assert_eq!(&bytes[11..], &[0, 255, 128, 51, 204, 1]);
}

#[test]
fn dataset_manifest_counts_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let ts = sampler(SamplerConfig::default()).triplets(12).unwrap();
    let seeds: Vec<u64> = (0..12).collect();
    let m = write_dataset(dir.path(), &ts, &seeds).unwrap();
    assert_eq!(m.count, 12);
    assert_eq!(m.task_histogram.values().sum::<usize>(), 12);
    for task in Task::ALL {
        let n = ts.iter().filter(|t| t.condition.task == task).count();
        assert_eq!(m.task_histogram.get(task.name()).copied().unwrap_or(0), n);
    }
    assert_eq!(read_dataset(dir.path()).unwrap(), ts);
}

#[test]
fn invalid_sampler_configs_are_rejected() {
    let bad = [
        SamplerConfig {
            tasks: vec![],
            ..Default::default()
        },
        SamplerConfig {
            reasoning_frames: 0,
            ..Default::default()
        },
        SamplerConfig {
            reasoning_frames: 10,
            ..Default::default()
        },
        SamplerConfig {
            frames_max: 5,
            ..Default::default()
        },
        SamplerConfig {
            min_instances: 4,
            ..Default::default()
        },
        SamplerConfig {
            positional_fraction: 1.5,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(BenchmarkSampler::new(cfg).is_err());
    }
}
