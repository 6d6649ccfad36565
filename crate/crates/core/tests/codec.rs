use cof_core::codec::{decode, decode_quantized, encode, latent_len, CodecConfig, LatentClip};
use cof_core::worlds::{BenchmarkSampler, FrameClip, SamplerConfig};
use cof_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clip(frames: usize, h: usize, w: usize, seed: u64) -> FrameClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..frames * h * w * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    FrameClip::new(frames, h, w, px).unwrap()
}

#[test]
fn latent_lengths_match_the_compression_formula() {
    assert_eq!(latent_len(33, 4), 9);
    assert_eq!(latent_len(4, 4), 1);
    assert_eq!(latent_len(1, 4), 1);
    assert_eq!(latent_len(9, 4), 3);
    assert_eq!(latent_len(9, 1), 9);
    for ct in [1, 2, 4] {
        for f in 1..64 {
            assert!(latent_len(f + 1, ct) >= latent_len(f, ct));
        }
    }
}

#[test]
fn thirty_three_frames_give_nine_latents() {
    let cfg = CodecConfig { patch: 4, temporal: 4 };
    let z = encode(&random_clip(33, 8, 8, 0), &cfg).unwrap();
    assert_eq!(z.values.shape(), &[9, 3 * 16 * 4, 2, 2]);
}

#[test]
fn constant_clip_has_equal_latent_frames() {
    let cfg = CodecConfig { patch: 2, temporal: 4 };
    let clip = FrameClip::filled(9, 4, 6, [0.2, 0.4, 0.6]).unwrap();
    let z = encode(&clip, &cfg).unwrap();
    let per = z.values.len() / z.frames();
    let d = z.values.data();
    for f in 1..z.frames() {
        assert_eq!(&d[..per], &d[f * per..(f + 1) * per]);
    }
}

#[test]
fn zero_latent_decodes_to_black() {
    let cfg = CodecConfig { patch: 4, temporal: 1 };
    let z = LatentClip::new(Tensor::zeros([3, cfg.channels(), 2, 2]).unwrap(), 3).unwrap();
    let clip = decode(&z, &cfg).unwrap();
    assert!(clip.pixels().iter().all(|&p| p == 0.0));
}

#[test]
fn divisibility_violations_are_errors() {
    let cfg = CodecConfig { patch: 4, temporal: 4 };
    assert!(encode(&random_clip(5, 6, 8, 1), &cfg).is_err());
    assert!(cfg.check_video_frames(8).is_err());
    assert!(cfg.check_video_frames(9).is_ok());
    let z = LatentClip::new(Tensor::zeros([2, 7, 2, 2]).unwrap(), 5).unwrap();
    assert!(decode(&z, &cfg).is_err());
}

/// Pixel differences between source and target inside the edit mask survive
/// the round trip exactly.
#[test]
fn edit_region_differences_survive_the_round_trip() {
    let cfg = CodecConfig { patch: 8, temporal: 4 };
    let t = BenchmarkSampler::new(SamplerConfig::default())
        .unwrap()
        .triplet(4)
        .unwrap();
    let s = decode(&encode(&t.source, &cfg).unwrap(), &cfg).unwrap();
    let e = decode(&encode(&t.target, &cfg).unwrap(), &cfg).unwrap();
    let diff =
        |a: &FrameClip, b: &FrameClip| -> Vec<f64> { a.pixels().iter().zip(b.pixels()).map(|(x, y)| x - y).collect() };
    assert_eq!(diff(&s, &e), diff(&t.source, &t.target));
}

#[test]
fn quantized_decode_clamps_and_snaps() {
    let cfg = CodecConfig { patch: 1, temporal: 1 };
    let z = LatentClip::new(
        Tensor::new([1, 3, 1, 2], vec![-0.5, 0.5, 1.7, 0.1, 0.9, 0.3]).unwrap(),
        1,
    )
    .unwrap();
    assert!(decode(&z, &cfg).is_err());
    let clip = decode_quantized(&z, &cfg).unwrap();
    assert_eq!(clip.pixel(0, 0, 0), [0.0, 1.0, (0.9f64 * 255.0).round() / 255.0]);
    assert_eq!(
        clip.pixel(0, 0, 1),
        [0.5f64, 0.1, 0.3].map(|v| (v * 255.0).round() / 255.0)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_bitwise(
        f in prop::sample::select(vec![1usize, 5, 9, 33]),
        ct in prop::sample::select(vec![1usize, 4]),
        p in prop::sample::select(vec![2usize, 4]),
        gh in 1usize..3, gw in 1usize..3,
        seed in any::<u64>(),
    ) {
        let cfg = CodecConfig { patch: p, temporal: ct };
        let clip = random_clip(f, gh * p, gw * p, seed);
        let z = encode(&clip, &cfg).unwrap();
        prop_assert_eq!(z.frames(), latent_len(f, ct));
        prop_assert_eq!(z.channels(), 3 * p * p * ct);
        prop_assert_eq!(decode(&z, &cfg).unwrap(), clip);
    }

    #[test]
    fn latent_round_trip_is_identity(
        f in prop::sample::select(vec![1usize, 2, 3, 5, 6]),
        p in 1usize..4,
        seed in any::<u64>(),
    ) {
        // With ct = 1 every latent is a valid encoding.
        let cfg = CodecConfig { patch: p, temporal: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Tensor::from_fn([f, cfg.channels(), 2, 3], |_| rng.random_range(0.0..=1.0)).unwrap();
        let z = LatentClip::new(values, f).unwrap();
        prop_assert_eq!(encode(&decode(&z, &cfg).unwrap(), &cfg).unwrap(), z);
    }

    #[test]
    fn remainder_groups_round_trip(f in 1usize..20, ct in 1usize..5, seed in any::<u64>()) {
        let cfg = CodecConfig { patch: 2, temporal: ct };
        let clip = random_clip(f, 4, 2, seed);
        let z = encode(&clip, &cfg).unwrap();
        prop_assert_eq!(z.frames(), latent_len(f, ct));
        prop_assert_eq!(decode(&z, &cfg).unwrap(), clip);
    }
}
