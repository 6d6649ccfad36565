use std::collections::HashMap;

use cof_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::rope::{RopePlan, RotaryTables};
use crate::sequencer::FullSequence;
use crate::worlds::{embed_condition, ConditionCode, ConditionTables};
use crate::{CofError, Result};

const INIT_STD: f64 = 0.02;
const TIMESTEP_MAX_FREQ: f64 = 1e4;

/// Frequencies of the timestep features, geometric from 1 to 10⁴.
pub fn timestep_freqs(width: usize) -> Vec<f64> {
    let n = width / 2;
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| TIMESTEP_MAX_FREQ.powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// `[sin(f·t)…, cos(f·t)…]` over [`timestep_freqs`].
pub fn timestep_embed(t: f64, width: usize) -> Tensor {
    let freqs = timestep_freqs(width);
    let data: Vec<f64> = freqs
        .iter()
        .map(|f| (f * t).sin())
        .chain(freqs.iter().map(|f| (f * t).cos()))
        .collect();
    let n = data.len();
    Tensor::new([n], data).expect("length matches")
}

/// Lipschitz constant of [`timestep_embed`] in `t`.
pub fn timestep_lipschitz(width: usize) -> f64 {
    timestep_freqs(width).iter().map(|f| f * f).sum::<f64>().sqrt()
}

/// Learnable parameters plus optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub step: u64,
    /// First and second Adam moments, parallel to `params`, once training starts.
    pub moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

/// Parameter names and shapes in declaration order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, d, dc) = (cfg.channels, cfg.d_model, cfg.cond_width);
    let m = cfg.mlp_ratio * d;
    let mut out = vec![("embed.w".to_string(), vec![c, d]), ("embed.b".to_string(), vec![d])];
    for (name, rows) in ConditionTables::<()>::NAMES.iter().zip(ConditionTables::<()>::rows()) {
        out.push((name.to_string(), vec![rows, dc]));
    }
    out.push(("cond_mlp.w".into(), vec![dc, dc]));
    out.push(("cond_mlp.b".into(), vec![dc]));
    for b in 0..cfg.blocks {
        let p = |s: &str| format!("block{b}.{s}");
        out.extend([
            (p("mod.w"), vec![dc, 6 * d]),
            (p("mod.b"), vec![6 * d]),
            (p("qkv.w"), vec![d, 3 * d]),
            (p("qkv.b"), vec![3 * d]),
            (p("out.w"), vec![d, d]),
            (p("out.b"), vec![d]),
            (p("fc1.w"), vec![d, m]),
            (p("fc1.b"), vec![m]),
            (p("fc2.w"), vec![m, d]),
            (p("fc2.b"), vec![d]),
        ]);
    }
    out.push(("final.mod.w".into(), vec![dc, 2 * d]));
    out.push(("final.mod.b".into(), vec![2 * d]));
    out.push(("head.w".into(), vec![d, c]));
    out.push(("head.b".into(), vec![c]));
    if cfg.copy_head {
        let dh = cfg.head_dim();
        out.push(("copy.q.w".into(), vec![d, dh]));
        out.push(("copy.k.w".into(), vec![d, dh]));
        out.push(("head.gate.w".into(), vec![d, 1]));
        out.push(("head.gate.b".into(), vec![1]));
    }
    out
}

impl ModelState {
    /// Truncated-normal weights, zero biases (including modulation gates)
    /// and a zero output head.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in layout(cfg) {
            let zero = name.ends_with(".b") || name.starts_with("head.");
            let t = if zero {
                Tensor::zeros(shape)?
            } else {
                Tensor::trunc_normal(shape, INIT_STD, &mut rng)?
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config: cfg.clone(),
            names,
            params,
            step: 0,
            moments: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Records every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        let index = self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Bound { vars, index }
    }

    /// Condition embedding `[3, cond_width]` for `code`.
    pub fn embed_condition(&self, code: &ConditionCode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let e = embed_condition(&mut tape, &bound.condition_tables()?, code)?;
        Ok(tape.value(e).clone())
    }

    /// Velocity prediction for the whole sequence, without gradients.
    pub fn predict(&self, z: &Tensor, t: f64, code: &ConditionCode, plan: &RopePlan) -> Result<Tensor> {
        let z_shape = z.shape().to_vec();
        let prepared = Prepared::new(&self.config, plan)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let mut shape = vec![1];
        shape.extend_from_slice(z.shape());
        let z = tape.constant(z.reshape(shape)?);
        let out = forward(
            &mut tape,
            &self.config,
            &bound,
            z,
            &[t],
            std::slice::from_ref(code),
            &prepared,
        )?;
        Ok(tape.value(out).reshape(z_shape)?)
    }

    pub fn forward(&self, seq: &FullSequence, code: &ConditionCode, plan: &RopePlan) -> Result<Tensor> {
        self.predict(&seq.z, seq.t, code, plan)
    }
}

/// Parameters recorded on a tape.
pub struct Bound {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Pairs already-recorded variables with parameter names, e.g. for
    /// finite-difference checks that create their own leaves.
    pub fn new(names: &[String], vars: Vec<Var>) -> Result<Self> {
        if names.len() != vars.len() {
            return Err(CofError::Shape(format!(
                "{} names for {} variables",
                names.len(),
                vars.len()
            )));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self { vars, index })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| CofError::Shape(format!("missing parameter {name}")))
    }

    pub fn condition_tables(&self) -> Result<ConditionTables<Var>> {
        let vars = ConditionTables::<()>::NAMES
            .iter()
            .map(|n| self.get(n))
            .collect::<Result<Vec<_>>>()?;
        ConditionTables::from_vec(vars)
    }
}

/// Plan-derived tensors shared by every forward pass over one geometry.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub rotary: RotaryTables,
    pub segments: Vec<usize>,
    pub frames: usize,
    pub grid: (usize, usize),
}

impl Prepared {
    pub fn new(cfg: &ModelConfig, plan: &RopePlan) -> Result<Self> {
        Ok(Self {
            rotary: RotaryTables::new(plan, cfg.head_dim(), cfg.band_split, cfg.freq_base)?,
            segments: plan.token_segments(),
            frames: plan.latent_frames(),
            grid: (plan.grid_h, plan.grid_w),
        })
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

/// `x · (1 + scale) + shift`.
fn modulate(tape: &mut Tape, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let xs = tape.mul(x, scale)?;
    let y = tape.add(x, xs)?;
    Ok(tape.add(y, shift)?)
}

/// Per-token modulation chunks: `cond` has one row per (sample, segment).
fn modulation(tape: &mut Tape, cond: Var, w: Var, b: Var, rows: &[usize], chunks: usize, d: usize) -> Result<Vec<Var>> {
    let m = linear(tape, cond, w, b)?;
    let m = tape.gather_rows(m, rows)?;
    (0..chunks).map(|i| Ok(tape.slice(m, 1, i * d, d)?)).collect()
}

fn attention(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    b: usize,
    x: Var,
    batch: usize,
    prep: &Prepared,
) -> Result<Var> {
    let (d, heads, dh) = (cfg.d_model, cfg.heads, cfg.head_dim());
    let n = prep.segments.len();
    let qkv = linear(
        tape,
        x,
        p.get(&format!("block{b}.qkv.w"))?,
        p.get(&format!("block{b}.qkv.b"))?,
    )?;
    let mut split = |i: usize, rotate: bool| -> Result<Var> {
        let s = tape.slice(qkv, 1, i * d, d)?;
        let s = tape.reshape(s, [batch, n, heads, dh])?;
        let s = tape.permute(s, &[0, 2, 1, 3])?;
        if rotate {
            Ok(tape.rotary(s, &prep.rotary.cos, &prep.rotary.sin)?)
        } else {
            Ok(s)
        }
    };
    let q = split(0, true)?;
    let k = split(1, true)?;
    let v = split(2, false)?;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let att = tape.softmax_lastdim(scores)?;
    let o = tape.matmul(att, v)?;
    let o = tape.permute(o, &[0, 2, 1, 3])?;
    let o = tape.reshape(o, [batch * n, d])?;
    linear(
        tape,
        o,
        p.get(&format!("block{b}.out.w"))?,
        p.get(&format!("block{b}.out.b"))?,
    )
}

/// Smallest `t` the copy head divides by.
pub const COPY_T_MIN: f64 = 0.02;

/// `g · (z − Σ_j a_j z_j) / t` per token, where `a` is a rotary attention row
/// over the raw tokens `z` of the same sample and `g` a learned scalar gate.
/// A preserved token that attends to its source counterpart gets exactly the
/// straight-path velocity when `g = 1`.
fn copy_head(tape: &mut Tape, cfg: &ModelConfig, p: &Bound, h: Var, z: Var, t: &[f64], prep: &Prepared) -> Result<Var> {
    let (batch, n, c, dh) = (t.len(), prep.segments.len(), cfg.channels, cfg.head_dim());
    let mut project = |name: &str| -> Result<Var> {
        let x = tape.matmul(h, p.get(name)?)?;
        let x = tape.reshape(x, [batch, n, dh])?;
        Ok(tape.rotary(x, &prep.rotary.cos, &prep.rotary.sin)?)
    };
    let q = project("copy.q.w")?;
    let k = project("copy.k.w")?;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let att = tape.softmax_lastdim(scores)?;
    let values = tape.reshape(z, [batch, n, c])?;
    let copied = tape.matmul(att, values)?;
    let copied = tape.reshape(copied, [batch * n, c])?;
    let diff = tape.sub(z, copied)?;
    let gate = linear(tape, h, p.get("head.gate.w")?, p.get("head.gate.b")?)?;
    let inv_t = Tensor::from_fn([batch * n, 1], |i| 1.0 / t[i / n].max(COPY_T_MIN))?;
    let inv_t = tape.constant(inv_t);
    let gate = tape.mul(gate, inv_t)?;
    let ones = tape.constant(Tensor::ones([1, c])?);
    let gate = tape.matmul(gate, ones)?;
    Ok(tape.mul(diff, gate)?)
}

/// Predicts the velocity for every latent frame of a batch `z`
/// (`[batch, frames, C, h, w]`); sample `i` is at noise level `t[i]` under
/// condition `codes[i]`.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    z: Var,
    t: &[f64],
    codes: &[ConditionCode],
    prep: &Prepared,
) -> Result<Var> {
    let shape = tape.value(z).shape().to_vec();
    let batch = t.len();
    let (frames, (gh, gw)) = (prep.frames, prep.grid);
    if shape != [batch, frames, cfg.channels, gh, gw] || codes.len() != batch {
        return Err(CofError::Shape(format!(
            "batch {shape:?} with {} timesteps and {} conditions vs plan of {frames} frames \
             on a {gh}x{gw} grid with {} channels",
            t.len(),
            codes.len(),
            cfg.channels
        )));
    }
    let n = frames * gh * gw;
    let d = cfg.d_model;

    let tokens = tape.permute(z, &[0, 1, 3, 4, 2])?;
    let tokens = tape.reshape(tokens, [batch * n, cfg.channels])?;
    let mut h = linear(tape, tokens, p.get("embed.w")?, p.get("embed.b")?)?;

    let tables = p.condition_tables()?;
    let cond = codes
        .iter()
        .map(|code| embed_condition(tape, &tables, code))
        .collect::<Result<Vec<_>>>()?;
    let cond = if batch == 1 { cond[0] } else { tape.concat(&cond, 0)? };
    let temb: Vec<Tensor> = t.iter().map(|&ti| timestep_embed(ti, cfg.cond_width)).collect();
    let rows: Vec<&Tensor> = temb.iter().flat_map(|e| [e, e, e]).collect();
    let temb = Tensor::concat(&rows, 0)?.into_reshape([3 * batch, cfg.cond_width])?;
    let temb = tape.constant(temb);
    let c = tape.add(cond, temb)?;
    let c = linear(tape, c, p.get("cond_mlp.w")?, p.get("cond_mlp.b")?)?;
    let c = tape.gelu(c)?;
    let rows: Vec<usize> = (0..batch)
        .flat_map(|b| prep.segments.iter().map(move |s| 3 * b + s))
        .collect();

    for b in 0..cfg.blocks {
        let w = p.get(&format!("block{b}.mod.w"))?;
        let bias = p.get(&format!("block{b}.mod.b"))?;
        let m = modulation(tape, c, w, bias, &rows, 6, d)?;

        let a = tape.layer_norm(h, None, None)?;
        let a = modulate(tape, a, m[0], m[1])?;
        let a = attention(tape, cfg, p, b, a, batch, prep)?;
        let a = tape.mul(a, m[2])?;
        h = tape.add(h, a)?;

        let f = tape.layer_norm(h, None, None)?;
        let f = modulate(tape, f, m[3], m[4])?;
        let f = linear(
            tape,
            f,
            p.get(&format!("block{b}.fc1.w"))?,
            p.get(&format!("block{b}.fc1.b"))?,
        )?;
        let f = tape.gelu(f)?;
        let f = linear(
            tape,
            f,
            p.get(&format!("block{b}.fc2.w"))?,
            p.get(&format!("block{b}.fc2.b"))?,
        )?;
        let f = tape.mul(f, m[5])?;
        h = tape.add(h, f)?;
    }

    let m = modulation(tape, c, p.get("final.mod.w")?, p.get("final.mod.b")?, &rows, 2, d)?;
    let out = tape.layer_norm(h, None, None)?;
    let out = modulate(tape, out, m[0], m[1])?;
    let mut v = linear(tape, out, p.get("head.w")?, p.get("head.b")?)?;
    if cfg.copy_head {
        let copied = copy_head(tape, cfg, p, out, tokens, t, prep)?;
        v = tape.add(v, copied)?;
    }
    let out = tape.reshape(v, [batch, frames, gh, gw, cfg.channels])?;
    Ok(tape.permute(out, &[0, 1, 4, 2, 3])?)
}
