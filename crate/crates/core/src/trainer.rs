//! Minibatch flow-matching training with partial noising and AdamW.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use cof_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode, CodecConfig};
use crate::dit::{checkpoint, forward, ModelConfig, ModelState, Prepared};
use crate::rope::plan_with_grid;
use crate::sequencer::{assemble, masked_velocity_loss, partial_noise, Boundaries, FullSequence, NoisePair};
use crate::worlds::{ConditionCode, EditTriplet};
use crate::{CofError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables; the final one is always written).
    pub checkpoint_every: u64,
    /// Include the reasoning segment. Off gives the plain in-context layout.
    pub cof: bool,
    /// Check every step that the loss sends no gradient to source-frame predictions.
    pub debug_checks: bool,
    pub codec: CodecConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            steps: 3000,
            lr: 1e-3,
            betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 0,
            cof: true,
            debug_checks: false,
            codec: CodecConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CofError::Config("batch_size must be positive".into()));
        }
        let negative = |x: f64| x.is_nan() || x < 0.0;
        let non_positive = |x: f64| x.is_nan() || x <= 0.0;
        if negative(self.lr) || negative(self.weight_decay) || non_positive(self.eps) || non_positive(self.grad_clip) {
            return Err(CofError::Config(
                "lr, eps, grad_clip and weight_decay out of range".into(),
            ));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(CofError::Config("betas must lie in [0, 1)".into()));
        }
        self.codec.validate()?;
        self.model.validate()?;
        if self.model.channels != self.codec.channels() {
            return Err(CofError::Config(format!(
                "model expects {} channels, codec produces {}",
                self.model.channels,
                self.codec.channels()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<serde_json::Value>,
}

/// A triplet encoded and assembled at `t = 0`.
#[derive(Clone, Debug)]
pub struct EncodedTriplet {
    pub seq: FullSequence,
    pub cond: ConditionCode,
}

/// Encodes each segment independently and concatenates them. Source and
/// target must satisfy the codec's temporal divisibility rule.
pub fn encode_triplet(t: &EditTriplet, codec: &CodecConfig, cof: bool) -> Result<EncodedTriplet> {
    codec.check_video_frames(t.source.frames())?;
    codec.check_video_frames(t.target.frames())?;
    let zs = encode(&t.source, codec)?;
    let ze = encode(&t.target, codec)?;
    let zr = if cof { Some(encode(&t.reasoning, codec)?) } else { None };
    Ok(EncodedTriplet {
        seq: assemble(&zs, zr.as_ref(), &ze)?,
        cond: t.condition,
    })
}

/// AdamW with global-norm clipping. Returns the pre-clip gradient norm.
pub fn adamw_step(state: &mut ModelState, grads: &[Tensor], cfg: &TrainConfig) -> Result<f64> {
    if grads.len() != state.params.len() {
        return Err(CofError::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            state.params.len()
        )));
    }
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let clip = if norm > cfg.grad_clip {
        cfg.grad_clip / norm
    } else {
        1.0
    };
    let (m, v) = state.moments.get_or_insert_with(|| {
        let zeros = |p: &Vec<Tensor>| {
            p.iter()
                .map(|t| Tensor::zeros(t.shape()).expect("valid shape"))
                .collect()
        };
        (zeros(&state.params), zeros(&state.params))
    });
    state.step += 1;
    let [b1, b2] = cfg.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((p, g), m), v) in state.params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            let gi = g[i] * clip;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let update = (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] = p[i] * decay - cfg.lr * update;
        }
    }
    Ok(norm)
}

/// Caches plan-derived tensors per sequence geometry.
#[derive(Default)]
pub struct PlanCache {
    entries: HashMap<(usize, usize, usize, usize, usize), Prepared>,
}

impl PlanCache {
    pub fn get(&mut self, model: &ModelConfig, seq: &FullSequence) -> Result<&Prepared> {
        let b = seq.bounds;
        let s = seq.z.shape();
        let key = (b.source, b.reasoning, b.target, s[2], s[3]);
        match self.entries.entry(key) {
            Entry::Occupied(e) => Ok(e.into_mut()),
            Entry::Vacant(e) => {
                let plan = plan_with_grid(model.rope, b.source, b.reasoning, b.target, s[2], s[3])?;
                Ok(e.insert(Prepared::new(model, &plan)?))
            }
        }
    }
}

/// Loss and parameter gradients for one minibatch: the mean over samples of
/// the masked velocity loss.
pub fn batch_gradients(
    state: &ModelState,
    batch: &[&EncodedTriplet],
    rng: &mut ChaCha8Rng,
    plans: &mut PlanCache,
    check_source: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let Some(first) = batch.first() else {
        return Err(CofError::Invalid("empty batch".into()));
    };
    let shape = first.seq.z.shape();
    if let Some(odd) = batch
        .iter()
        .find(|b| b.seq.z.shape() != shape || b.seq.bounds != first.seq.bounds)
    {
        return Err(CofError::Shape(format!(
            "batch mixes shapes {shape:?} and {:?}",
            odd.seq.z.shape()
        )));
    }
    let prep = plans.get(&state.config, &first.seq)?;
    let mut ts = Vec::with_capacity(batch.len());
    let mut zs = Vec::with_capacity(batch.len());
    let mut vs = Vec::with_capacity(batch.len());
    for sample in batch {
        let t: f64 = rng.random();
        let noise = NoisePair::sample(&sample.seq.z, rng)?;
        let noisy = partial_noise(&sample.seq, &noise.eps, t)?;
        if check_source {
            let n = sample.seq.bounds.source * sample.seq.frame_len();
            if noisy.z.data()[..n] != sample.seq.z.data()[..n] {
                return Err(CofError::Invalid("noising changed the source segment".into()));
            }
        }
        zs.push(noisy.z);
        vs.push(noise.v);
        ts.push(t);
    }
    let stack = |parts: &[Tensor]| -> Result<Tensor> {
        let mut s = vec![parts.len()];
        s.extend_from_slice(shape);
        Ok(Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)?.into_reshape(s)?)
    };
    let codes: Vec<ConditionCode> = batch.iter().map(|b| b.cond).collect();
    let mut tape = Tape::new();
    let bound = state.bind(&mut tape, true);
    let z = tape.constant(stack(&zs)?);
    let v_hat = forward(&mut tape, &state.config, &bound, z, &ts, &codes, prep)?;
    let bounds = first.seq.bounds;
    let loss = masked_velocity_loss(&mut tape, v_hat, &stack(&vs)?, &bounds)?;
    let loss_value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    if check_source {
        check_source_gradient(grads.get(v_hat), batch.len(), &bounds)?;
    }
    let out = bound
        .vars
        .iter()
        .zip(&state.params)
        .map(|(v, p)| {
            grads
                .take(*v)
                .unwrap_or_else(|| Tensor::zeros(p.shape()).expect("valid shape"))
        })
        .collect();
    Ok((loss_value, out))
}

fn check_source_gradient(grad: Option<&Tensor>, batch: usize, bounds: &Boundaries) -> Result<()> {
    let Some(g) = grad else { return Ok(()) };
    let per_sample = g.len() / batch;
    let per_frame = per_sample / bounds.total();
    for sample in g.data().chunks(per_sample) {
        if sample[..bounds.source * per_frame].iter().any(|&x| x != 0.0) {
            return Err(CofError::Invalid(
                "loss gradient reached source-frame predictions".into(),
            ));
        }
    }
    Ok(())
}

/// State of an ongoing run: model, data order and RNG.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub state: ModelState,
    data: &'a [EncodedTriplet],
    rng: ChaCha8Rng,
    plans: PlanCache,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a [EncodedTriplet]) -> Result<Self> {
        cfg.validate()?;
        let state = ModelState::init(&cfg.model)?;
        Self::resume(cfg, state, data)
    }

    pub fn resume(cfg: TrainConfig, state: ModelState, data: &'a [EncodedTriplet]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(CofError::Invalid("no training samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(state.step);
        Ok(Self {
            cfg,
            state,
            data,
            rng,
            plans: PlanCache::default(),
            started: Instant::now(),
        })
    }

    pub fn step(&mut self) -> Result<TrainLogRecord> {
        let batch: Vec<&EncodedTriplet> = (0..self.cfg.batch_size)
            .map(|_| &self.data[self.rng.random_range(0..self.data.len())])
            .collect();
        train_step(
            &mut self.state,
            &batch,
            &self.cfg,
            &mut self.rng,
            &mut self.plans,
            self.started,
        )
    }
}

/// One optimizer update on `batch`.
pub fn train_step(
    state: &mut ModelState,
    batch: &[&EncodedTriplet],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    plans: &mut PlanCache,
    started: Instant,
) -> Result<TrainLogRecord> {
    let step = state.step;
    let (loss, grads) = match batch_gradients(state, batch, rng, plans, cfg.debug_checks) {
        Err(CofError::Tensor(cof_tensor::TensorError::NonFinite { .. })) => {
            return Err(CofError::NonFiniteLoss { step })
        }
        other => other?,
    };
    if !loss.is_finite() {
        return Err(CofError::NonFiniteLoss { step });
    }
    let grad_norm = adamw_step(state, &grads, cfg)?;
    if !state.is_finite() {
        return Err(CofError::NonFiniteLoss { step });
    }
    Ok(TrainLogRecord {
        step: state.step,
        loss,
        grad_norm,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        eval: None,
    })
}

/// Runs `cfg.steps` updates from a fresh initialization. With `out`, writes
/// `ckpt_<step>.bin` at the configured cadence and `final.bin` at the end.
pub fn train(
    cfg: &TrainConfig,
    data: &[EncodedTriplet],
    out: Option<&Path>,
    mut on_log: impl FnMut(&TrainLogRecord),
) -> Result<(ModelState, Vec<TrainLogRecord>)> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        let rec = trainer.step()?;
        on_log(&rec);
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 {
                checkpoint::save(&dir.join(format!("ckpt_{:06}.bin", rec.step)), &trainer.state)?;
            }
        }
        log.push(rec);
    }
    if let Some(dir) = out {
        checkpoint::save(&dir.join("final.bin"), &trainer.state)?;
    }
    Ok((trainer.state, log))
}
