//! Euler integration of the learned flow from noise to the edited clip, with
//! the clean source re-pinned after every step.

use std::collections::HashMap;

use cof_tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_quantized, encode, latent_len, CodecConfig, LatentClip};
use crate::dit::{forward, ModelState, Prepared};
use crate::rope::{plan_with_grid, RopePlan, RopeScheme};
use crate::sequencer::{extract_edit, partial_noise, Boundaries, FullSequence, NoisePair};
use crate::worlds::{ConditionCode, EditTriplet, FrameClip};
use crate::{CofError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub seed: u64,
    /// Pixel frames of the generated target; defaults to the source length.
    pub target_frames: Option<usize>,
    /// Reasoning frames to generate (0 for the plain in-context layout).
    pub reasoning_frames: usize,
    /// Classifier-free guidance scale; only 0 (disabled) is supported.
    pub guidance: f64,
    pub codec: CodecConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            seed: 0,
            target_frames: None,
            reasoning_frames: 4,
            guidance: 0.0,
            codec: CodecConfig::default(),
        }
    }
}

/// Predicts velocities for a batch of sequences `[batch, frames, C, h, w]`
/// sharing one timestep and plan.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f64, conds: &[ConditionCode], plan: &RopePlan) -> Result<Tensor>;
}

/// A trained model as a velocity field.
pub struct ModelField<'a> {
    state: &'a ModelState,
    prepared: std::cell::RefCell<Option<(RopePlan, Prepared)>>,
}

impl<'a> ModelField<'a> {
    pub fn new(state: &'a ModelState) -> Self {
        Self {
            state,
            prepared: Default::default(),
        }
    }
}

impl VelocityField for ModelField<'_> {
    fn velocity(&self, z: &Tensor, t: f64, conds: &[ConditionCode], plan: &RopePlan) -> Result<Tensor> {
        let mut cache = self.prepared.borrow_mut();
        if cache.as_ref().is_none_or(|(p, _)| p != plan) {
            *cache = Some((plan.clone(), Prepared::new(&self.state.config, plan)?));
        }
        let prep = &cache.as_ref().expect("just filled").1;
        let mut tape = Tape::new();
        let bound = self.state.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let ts = vec![t; conds.len()];
        let out = forward(&mut tape, &self.state.config, &bound, zv, &ts, conds, prep)?;
        Ok(tape.value(out).clone())
    }
}

/// Returns `ε − z0` regardless of input: the exact field of the straight path
/// from a known clean sequence to a known noise draw.
pub struct ExactOracle {
    pub v: Tensor,
}

impl ExactOracle {
    pub fn new(z0: &Tensor, eps: &Tensor) -> Result<Self> {
        Ok(Self {
            v: eps.zip_map(z0, |e, z| e - z)?,
        })
    }
}

impl VelocityField for ExactOracle {
    fn velocity(&self, z: &Tensor, _t: f64, _conds: &[ConditionCode], _plan: &RopePlan) -> Result<Tensor> {
        if z.len() != self.v.len() {
            return Err(CofError::Shape(format!(
                "oracle for {:?} queried at {:?}",
                self.v.shape(),
                z.shape()
            )));
        }
        Ok(self.v.reshape(z.shape())?)
    }
}

/// The exact field `(z − z0) / t` toward each triplet's ground truth,
/// looked up by the pinned source latents and the condition. Any noise
/// draw then integrates to the ground-truth sequence.
pub struct TargetOracle {
    codec: CodecConfig,
    known: HashMap<(Vec<u64>, ConditionCode), (LatentClip, LatentClip)>,
}

impl TargetOracle {
    pub fn new(triplets: &[EditTriplet], codec: &CodecConfig) -> Result<Self> {
        let mut known = HashMap::new();
        for t in triplets {
            let zs = encode(&t.source, codec)?;
            let key = (zs.values.data().iter().map(|x| x.to_bits()).collect(), t.condition);
            known.insert(key, (encode(&t.reasoning, codec)?, encode(&t.target, codec)?));
        }
        Ok(Self { codec: *codec, known })
    }
}

impl VelocityField for TargetOracle {
    fn velocity(&self, z: &Tensor, t: f64, conds: &[ConditionCode], plan: &RopePlan) -> Result<Tensor> {
        let (s, r, e) = (plan.source.len(), plan.reasoning.len(), plan.target.len());
        let per = z.len() / conds.len().max(1);
        let frame = per / (s + r + e).max(1);
        let mut out = Vec::with_capacity(z.len());
        for (i, cond) in conds.iter().enumerate() {
            let zi = &z.data()[i * per..(i + 1) * per];
            let key = (zi[..s * frame].iter().map(|x| x.to_bits()).collect::<Vec<_>>(), *cond);
            let (zr, ze) = self
                .known
                .get(&key)
                .ok_or_else(|| CofError::Invalid(format!("oracle has no triplet for sample {i}")))?;
            if ze.frames() != e || (r > 0 && zr.frames() != r) {
                return Err(CofError::Shape(format!(
                    "oracle triplet has {} target latents, plan {e} (codec {:?})",
                    ze.frames(),
                    self.codec
                )));
            }
            let mut z0 = zi[..s * frame].to_vec();
            if r > 0 {
                z0.extend_from_slice(zr.values.data());
            }
            z0.extend_from_slice(ze.values.data());
            out.extend(zi.iter().zip(&z0).map(|(a, b)| (a - b) / t));
        }
        Ok(Tensor::new(z.shape(), out)?)
    }
}

/// Sequence layout implied by a source clip and sampling config.
#[derive(Clone, Debug)]
pub struct SampleLayout {
    pub source: LatentClip,
    pub bounds: Boundaries,
    pub pixel_frames: [usize; 3],
}

impl SampleLayout {
    pub fn new(source: &FrameClip, cfg: &SampleConfig) -> Result<Self> {
        if cfg.steps == 0 {
            return Err(CofError::Config("sampling needs at least one step".into()));
        }
        if cfg.guidance != 0.0 {
            return Err(CofError::Config("guidance is not supported; use 0".into()));
        }
        let codec = &cfg.codec;
        codec.check_video_frames(source.frames())?;
        let f_tgt = cfg.target_frames.unwrap_or(source.frames());
        codec.check_video_frames(f_tgt)?;
        if cfg.reasoning_frames > source.frames() {
            return Err(CofError::Config(format!(
                "{} reasoning frames for a {}-frame source",
                cfg.reasoning_frames,
                source.frames()
            )));
        }
        let zs = encode(source, codec)?;
        let l = if cfg.reasoning_frames == 0 {
            0
        } else {
            latent_len(cfg.reasoning_frames, codec.temporal)
        };
        Ok(Self {
            bounds: Boundaries {
                source: zs.frames(),
                reasoning: l,
                target: latent_len(f_tgt, codec.temporal),
            },
            pixel_frames: [source.frames(), cfg.reasoning_frames, f_tgt],
            source: zs,
        })
    }

    pub fn plan(&self, scheme: RopeScheme) -> Result<RopePlan> {
        let (h, w) = self.source.grid();
        plan_with_grid(
            scheme,
            self.bounds.source,
            self.bounds.reasoning,
            self.bounds.target,
            h,
            w,
        )
    }

    /// Clean source followed by zeros, at `t = 0`.
    pub fn clean_sequence(&self) -> Result<FullSequence> {
        let s = self.source.values.shape();
        let rest = Tensor::zeros([self.bounds.total() - self.bounds.source, s[1], s[2], s[3]])?;
        Ok(FullSequence {
            z: Tensor::concat(&[&self.source.values, &rest], 0)?,
            bounds: self.bounds,
            t: 0.0,
            pixel_frames: self.pixel_frames,
        })
    }

    /// Full-shape standard normal draw for `seed`.
    pub fn noise(&self, seed: u64) -> Result<Tensor> {
        let shape = self.clean_sequence()?.z.shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(NoisePair::sample(&Tensor::zeros(shape)?, &mut rng)?.eps)
    }
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    Ok(Tensor::concat(parts, 0)?.into_reshape(shape)?)
}

/// Integrates a batch of sequences from `t = 1` to `t = 0`. Returns, per
/// sample, every intermediate sequence (`steps + 1` in total).
pub fn sample_trajectories(
    field: &dyn VelocityField,
    layouts: &[SampleLayout],
    conds: &[ConditionCode],
    plan: &RopePlan,
    steps: usize,
    eps: &[Tensor],
) -> Result<Vec<Vec<FullSequence>>> {
    let Some(first) = layouts.first() else {
        return Ok(Vec::new());
    };
    if layouts.len() != conds.len() || layouts.len() != eps.len() {
        return Err(CofError::Invalid(
            "layouts, conditions and noise differ in count".into(),
        ));
    }
    let cleans = layouts
        .iter()
        .map(SampleLayout::clean_sequence)
        .collect::<Result<Vec<_>>>()?;
    if cleans.iter().any(|c| c.z.shape() != cleans[0].z.shape()) || plan.latent_frames() != first.bounds.total() {
        return Err(CofError::Shape(
            "batched samples must share one geometry and plan".into(),
        ));
    }
    let mut seqs = cleans
        .iter()
        .zip(eps)
        .map(|(c, e)| partial_noise(c, e, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let per = cleans[0].z.len();
    let start = first.bounds.source * cleans[0].frame_len();
    let dt = 1.0 / steps as f64;
    let mut out: Vec<Vec<FullSequence>> = seqs.iter().map(|s| vec![s.clone()]).collect();
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let z = stack(&seqs.iter().map(|s| &s.z).collect::<Vec<_>>())?;
        let v = field.velocity(&z, t, conds, plan)?;
        if v.shape() != z.shape() {
            return Err(CofError::Shape(format!("velocity {:?} for {:?}", v.shape(), z.shape())));
        }
        let t_next = if k + 1 == steps { 0.0 } else { 1.0 - (k + 1) as f64 * dt };
        for (i, seq) in seqs.iter_mut().enumerate() {
            let vi = &v.data()[i * per..(i + 1) * per];
            let zi = seq.z.data_mut();
            for (zj, vj) in zi[start..].iter_mut().zip(&vi[start..]) {
                *zj -= dt * vj;
            }
            zi[..start].copy_from_slice(&cleans[i].z.data()[..start]);
            seq.t = t_next;
            out[i].push(seq.clone());
        }
    }
    Ok(out)
}

/// Output of one edit.
#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub edited: FrameClip,
    pub reasoning: Option<FrameClip>,
    pub latent: FullSequence,
}

/// Decodes the target and reasoning segments of a finished sequence.
pub fn finish(seq: FullSequence, codec: &CodecConfig) -> Result<SampleOutput> {
    let edited = decode_quantized(&extract_edit(&seq)?, codec)?;
    let reasoning = seq.reasoning()?.map(|r| decode_quantized(&r, codec)).transpose()?;
    Ok(SampleOutput {
        edited,
        reasoning,
        latent: seq,
    })
}

/// Edits several same-geometry sources at once; sample `i` draws its noise
/// from `seeds[i]`, so results do not depend on how samples are batched.
pub fn sample_batch_with(
    field: &dyn VelocityField,
    scheme: RopeScheme,
    sources: &[&FrameClip],
    conds: &[ConditionCode],
    seeds: &[u64],
    cfg: &SampleConfig,
) -> Result<Vec<SampleOutput>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    if seeds.len() != sources.len() {
        return Err(CofError::Invalid("one seed per source is required".into()));
    }
    let layouts = sources
        .iter()
        .map(|s| SampleLayout::new(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let plan = layouts[0].plan(scheme)?;
    let eps = layouts
        .iter()
        .zip(seeds)
        .map(|(l, &s)| l.noise(s))
        .collect::<Result<Vec<_>>>()?;
    sample_trajectories(field, &layouts, conds, &plan, cfg.steps, &eps)?
        .into_iter()
        .map(|mut traj| finish(traj.pop().expect("trajectory is never empty"), &cfg.codec))
        .collect()
}

pub fn sample_with(
    field: &dyn VelocityField,
    scheme: RopeScheme,
    source: &FrameClip,
    cond: &ConditionCode,
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    let mut out = sample_batch_with(field, scheme, &[source], &[*cond], &[cfg.seed], cfg)?;
    Ok(out.pop().expect("one output per source"))
}

/// Edits `source` with a trained model.
pub fn sample(
    state: &ModelState,
    source: &FrameClip,
    cond: &ConditionCode,
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    sample_with(&ModelField::new(state), state.config.rope, source, cond, cfg)
}

pub fn sample_batch(
    state: &ModelState,
    sources: &[&FrameClip],
    conds: &[ConditionCode],
    seeds: &[u64],
    cfg: &SampleConfig,
) -> Result<Vec<SampleOutput>> {
    sample_batch_with(&ModelField::new(state), state.config.rope, sources, conds, seeds, cfg)
}

/// Every intermediate sequence of one edit, `steps + 1` in total.
pub fn sample_trajectory(
    state: &ModelState,
    source: &FrameClip,
    cond: &ConditionCode,
    cfg: &SampleConfig,
) -> Result<Vec<FullSequence>> {
    let layout = SampleLayout::new(source, cfg)?;
    let plan = layout.plan(state.config.rope)?;
    let eps = layout.noise(cfg.seed)?;
    let field = ModelField::new(state);
    let mut all = sample_trajectories(&field, &[layout], &[*cond], &plan, cfg.steps, &[eps])?;
    Ok(all.pop().expect("one trajectory"))
}
