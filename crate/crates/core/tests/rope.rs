use cof_core::rope::{
    apply_rotary, collisions, plan, plan_with_grid, rotary_angles, RopeScheme, RotaryTables, Segment,
    DEFAULT_BAND_SPLIT, DEFAULT_FREQ_BASE,
};
use cof_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEAD_DIM: usize = 16;

#[test]
fn cof_aligned_at_nine_latents() {
    let p = plan(RopeScheme::CoFAligned, 9, 1, 9).unwrap();
    assert_eq!(p.source, (1..=9).collect::<Vec<_>>());
    assert_eq!(p.reasoning, vec![0]);
    assert_eq!(p.target, (1..=9).collect::<Vec<_>>());
}

#[test]
fn sequential_without_reasoning() {
    let p = plan(RopeScheme::Sequential, 2, 0, 2).unwrap();
    let all: Vec<usize> = p.frames().map(|(_, t)| t).collect();
    assert_eq!(all, vec![0, 1, 2, 3]);
}

#[test]
fn naive_reset_collision_set() {
    let p = plan(RopeScheme::NaiveReset, 3, 1, 3).unwrap();
    let c = collisions(&p);
    assert_eq!(c.len(), 1);
    assert_eq!(c[&0], vec![Segment::Source, Segment::Reasoning, Segment::Target]);
}

#[test]
fn zero_counts_are_rejected() {
    assert!(plan(RopeScheme::CoFAligned, 0, 1, 3).is_err());
    assert!(plan(RopeScheme::Sequential, 3, 1, 0).is_err());
    assert!(plan_with_grid(RopeScheme::NaiveReset, 3, 1, 3, 0, 2).is_err());
}

#[test]
fn cof_target_extends_instead_of_remapping() {
    let p = plan(RopeScheme::CoFAligned, 3, 1, 7).unwrap();
    assert_eq!(p.target, (1..=7).collect::<Vec<_>>());
}

/// Exhaustive over the sizes the benchmark can produce.
#[test]
fn scheme_properties_exhaustive() {
    for f in 1..=16 {
        for l in 1..=2 {
            let naive = plan(RopeScheme::NaiveReset, f, l, f).unwrap();
            assert!(!collisions(&naive).is_empty(), "naive F'={f} L={l}");
            let cof = plan(RopeScheme::CoFAligned, f, l, f).unwrap();
            assert!(collisions(&cof).is_empty(), "cof F'={f} L={l}");
            let seq = plan(RopeScheme::Sequential, f, l, f).unwrap();
            assert!(collisions(&seq).is_empty(), "sequential F'={f} L={l}");

            // Equal temporal angles for source and target at every index.
            let pos = |t: usize| [t, 0, 0];
            let src = rotary_angles(
                &cof.source.iter().map(|&t| pos(t)).collect::<Vec<_>>(),
                HEAD_DIM,
                DEFAULT_BAND_SPLIT,
                DEFAULT_FREQ_BASE,
            )
            .unwrap();
            let tgt = rotary_angles(
                &cof.target.iter().map(|&t| pos(t)).collect::<Vec<_>>(),
                HEAD_DIM,
                DEFAULT_BAND_SPLIT,
                DEFAULT_FREQ_BASE,
            )
            .unwrap();
            assert_eq!(src, tgt);

            // Source→target offset: constant for CoF, F'+L for Sequential.
            assert!(cof.source.iter().zip(&cof.target).all(|(s, t)| s == t));
            assert!(seq.source.iter().zip(&seq.target).all(|(s, t)| t - s == f + l));
        }
    }
}

#[test]
fn spatial_indices_are_shared_across_segments() {
    let p = plan_with_grid(RopeScheme::Sequential, 2, 1, 2, 3, 4).unwrap();
    let toks = p.tokens();
    assert_eq!(toks.len(), 5 * 12);
    for (i, tok) in toks.iter().enumerate() {
        assert_eq!((tok.y, tok.x), ((i % 12) / 4, i % 4));
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn rotate_at(x: &Tensor, pos: [usize; 3]) -> Tensor {
    let tables = RotaryTables::from_positions(&[pos], HEAD_DIM, DEFAULT_BAND_SPLIT, DEFAULT_FREQ_BASE).unwrap();
    apply_rotary(x, &tables).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn zero_index_is_identity_and_rotation_is_isometric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[1, HEAD_DIM], &mut rng);
    assert_eq!(rotate_at(&x, [0, 0, 0]), x);
    for pos in [[1, 2, 3], [17, 0, 5], [400, 31, 9]] {
        let y = rotate_at(&x, pos);
        assert!((y.norm() - x.norm()).abs() < 1e-12);
    }
}

#[test]
fn odd_head_dim_is_rejected() {
    assert!(RotaryTables::from_positions(&[[0, 0, 0]], 10, DEFAULT_BAND_SPLIT, DEFAULT_FREQ_BASE).is_err());
    assert!(RotaryTables::from_positions(&[[0, 0, 0]], 7, DEFAULT_BAND_SPLIT, DEFAULT_FREQ_BASE).is_err());
}

proptest! {
    #[test]
    fn relative_shift_identity(
        seed in any::<u64>(),
        i in 0usize..40, j in 0usize..40, s in 0usize..40,
        yi in 0usize..8, yj in 0usize..8, xi in 0usize..8, xj in 0usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random(&[1, HEAD_DIM], &mut rng);
        let k = random(&[1, HEAD_DIM], &mut rng);
        let base = dot(&rotate_at(&q, [i, yi, xi]), &rotate_at(&k, [j, yj, xj]));
        let shifted = dot(&rotate_at(&q, [i + s, yi + s, xi]), &rotate_at(&k, [j + s, yj + s, xj]));
        prop_assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn collisions_characterize_schemes(f in 1usize..=24, l in 0usize..=3, extra in 0usize..4) {
        let naive = plan(RopeScheme::NaiveReset, f, l, f + extra).unwrap();
        prop_assert_eq!(collisions(&naive).is_empty(), l == 0);
        prop_assert!(collisions(&plan(RopeScheme::CoFAligned, f, l, f + extra).unwrap()).is_empty());
        prop_assert!(collisions(&plan(RopeScheme::Sequential, f, l, f + extra).unwrap()).is_empty());
    }
}
