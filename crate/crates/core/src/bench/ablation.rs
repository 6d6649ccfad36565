//! Ablation grids: one trained model per distinct cell, evaluated on a
//! held-out split of the same procedural benchmark.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, fingerprint, EvalOptions, EvalReport};
use super::extrapolation::{extrapolation_frames, length_extrapolation_eval};
use super::metrics::Thresholds;
use crate::codec::CodecConfig;
use crate::dit::{checkpoint, ModelConfig, ModelState};
use crate::rope::RopeScheme;
use crate::sampler::{ModelField, SampleConfig};
use crate::trainer::{encode_triplet, train, TrainConfig};
use crate::worlds::{BenchmarkSampler, EditTriplet, ReasoningFormat, SamplerConfig};
use crate::{CofError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    CofOnOff,
    RopeScheme,
    ReasoningFormat,
    ReasoningFrames,
    Triptych,
    LengthFactor,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::CofOnOff,
        AblationAxis::RopeScheme,
        AblationAxis::ReasoningFormat,
        AblationAxis::ReasoningFrames,
        AblationAxis::Triptych,
        AblationAxis::LengthFactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::CofOnOff => "cof_on_off",
            AblationAxis::RopeScheme => "rope_scheme",
            AblationAxis::ReasoningFormat => "reasoning_format",
            AblationAxis::ReasoningFrames => "reasoning_frames",
            AblationAxis::Triptych => "triptych",
            AblationAxis::LengthFactor => "length_factor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| CofError::Invalid(format!("unknown ablation axis {s:?}")))
    }

    /// Labelled cells along this axis, each a variation of `base`.
    pub fn cells(self, base: &CellSpec) -> Vec<(String, CellSpec)> {
        let with = |f: &dyn Fn(&mut CellSpec)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::CofOnOff => vec![
                ("cof".into(), with(&|c| c.cof = true)),
                // Without reasoning frames the in-context layout is sequential.
                (
                    "no_cof".into(),
                    with(&|c| {
                        c.cof = false;
                        c.scheme = RopeScheme::Sequential;
                    }),
                ),
            ],
            AblationAxis::RopeScheme => RopeScheme::ALL
                .into_iter()
                .map(|s| (s.name().to_string(), with(&|c| c.scheme = s)))
                .collect(),
            AblationAxis::ReasoningFormat => ["progressive_gray", "static_gray", "red", "black_bg"]
                .into_iter()
                .map(|f| {
                    let format = ReasoningFormat::parse(f).expect("known format");
                    (f.to_string(), with(&|c| c.format = format.clone()))
                })
                .collect(),
            AblationAxis::ReasoningFrames => (1..=5)
                .map(|k| (format!("K={k}"), with(&|c| c.reasoning_frames = k)))
                .collect(),
            AblationAxis::Triptych => vec![
                ("triptych".into(), with(&|c| c.triptych = true)),
                ("direct".into(), with(&|c| c.triptych = false)),
            ],
            AblationAxis::LengthFactor => [1, 2, 4]
                .into_iter()
                .map(|k| (format!("{k}x"), with(&|c| c.length_factor = k)))
                .collect(),
        }
    }
}

/// The design choices that define one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSpec {
    pub cof: bool,
    pub scheme: RopeScheme,
    pub format: ReasoningFormat,
    pub reasoning_frames: usize,
    pub triptych: bool,
    /// Evaluation length as a multiple of the training length.
    pub length_factor: usize,
}

impl Default for CellSpec {
    fn default() -> Self {
        Self {
            cof: true,
            scheme: RopeScheme::CoFAligned,
            format: ReasoningFormat::ProgressiveGray,
            reasoning_frames: 4,
            triptych: true,
            length_factor: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub train_steps: u64,
    pub eval_samples: usize,
    /// Cells not started within this many seconds become holes.
    pub max_seconds: Option<f64>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            train_steps: 3000,
            eval_samples: 128,
            max_seconds: None,
        }
    }
}

/// Shared data, training and sampling settings for every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSetup {
    /// Benchmark generator; its seed is the shared data seed.
    pub data: SamplerConfig,
    pub train_count: usize,
    /// First benchmark index of the held-out evaluation split.
    pub eval_offset: u64,
    /// Training settings; `steps`, `seed`, `cof` and the RoPE scheme are set per cell.
    pub train: TrainConfig,
    pub sample_steps: usize,
    pub thresholds: Thresholds,
    /// Directory caching trained checkpoints by fingerprint.
    pub cache_dir: Option<PathBuf>,
}

impl Default for AblationSetup {
    fn default() -> Self {
        let codec = CodecConfig { patch: 8, temporal: 4 };
        let train = TrainConfig {
            codec,
            model: ModelConfig {
                channels: codec.channels(),
                ..Default::default()
            },
            ..Default::default()
        };
        Self {
            data: SamplerConfig::default(),
            train_count: 512,
            eval_offset: 1_000_000,
            train,
            sample_steps: 50,
            thresholds: Thresholds::default(),
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub axis: AblationAxis,
    pub label: String,
    pub spec: CellSpec,
    /// Fingerprint of the training run behind this cell.
    pub model: Option<String>,
    pub report: Option<EvalReport>,
    /// Why the cell has no report.
    pub hole: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub seed: u64,
    pub data_seed: u64,
    pub budget: Budget,
    pub setup: AblationSetup,
    pub cells: Vec<CellResult>,
}

/// Success margin by which CoF with aligned indices must beat a baseline.
pub const ORDERING_MARGIN: f64 = 0.05;

/// Progressive gray ≥ static gray ≥ {red, black background}, with
/// progressive strictly above black background.
pub fn format_ordering_holds(progressive: f64, static_gray: f64, red: f64, black_bg: f64) -> bool {
    progressive >= static_gray && static_gray >= red && static_gray >= black_bg && progressive > black_bg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl AblationResults {
    pub fn cell(&self, axis: AblationAxis, label: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.axis == axis && c.label == label)
    }

    fn success(&self, axis: AblationAxis, label: &str) -> Option<f64> {
        self.cell(axis, label)?.report.as_ref().map(|r| r.overall.success_ratio)
    }

    /// Directional checks for every axis whose cells are all present.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let mut margin = |name: &str, axis: AblationAxis, ours: &str, theirs: &str| {
            if let (Some(a), Some(b)) = (self.success(axis, ours), self.success(axis, theirs)) {
                out.push(Check {
                    name: name.into(),
                    pass: a - b >= ORDERING_MARGIN,
                    detail: format!("{ours} {:.2}% vs {theirs} {:.2}%", 100.0 * a, 100.0 * b),
                });
            }
        };
        margin("cof_beats_no_cof", AblationAxis::CofOnOff, "cof", "no_cof");
        margin(
            "aligned_beats_naive_reset",
            AblationAxis::RopeScheme,
            "cof",
            "naive_reset",
        );
        let f = |l: &str| self.success(AblationAxis::ReasoningFormat, l);
        if let (Some(p), Some(s), Some(r), Some(b)) = (f("progressive_gray"), f("static_gray"), f("red"), f("black_bg"))
        {
            out.push(Check {
                name: "format_ordering".into(),
                pass: format_ordering_holds(p, s, r, b),
                detail: format!(
                    "progressive {:.2}%, static {:.2}%, red {:.2}%, black {:.2}%",
                    100.0 * p,
                    100.0 * s,
                    100.0 * r,
                    100.0 * b
                ),
            });
        }
        if let (Some(on), Some(off)) = (
            self.success(AblationAxis::Triptych, "triptych"),
            self.success(AblationAxis::Triptych, "direct"),
        ) {
            out.push(Check {
                name: "triptych_at_least_direct".into(),
                pass: on >= off,
                detail: format!("triptych {:.2}% vs direct {:.2}%", 100.0 * on, 100.0 * off),
            });
        }
        let pres = |l: &str| {
            self.cell(AblationAxis::LengthFactor, l)?
                .report
                .as_ref()
                .map(|r| r.overall.mean_preservation_mae)
        };
        if let (Some(one), Some(two)) = (pres("1x"), pres("2x")) {
            out.push(Check {
                name: "length_2x_preservation".into(),
                pass: two <= 2.0 * one,
                detail: format!("preservation MAE {one:.4} at 1x, {two:.4} at 2x"),
            });
        }
        out
    }

    /// One table per axis, in the layout of the usual ablation tables.
    pub fn markdown(&self) -> String {
        let mut s = String::new();
        let mut axes: Vec<AblationAxis> = Vec::new();
        for c in &self.cells {
            if !axes.contains(&c.axis) {
                axes.push(c.axis);
            }
        }
        for axis in axes {
            s.push_str(&format!(
                "### {}\n\n| cell | success | edit MAE | preservation MAE | reasoning IoU |\n|---|---|---|---|---|\n",
                axis.name()
            ));
            for c in self.cells.iter().filter(|c| c.axis == axis) {
                match &c.report {
                    Some(r) => {
                        let a = &r.overall;
                        s.push_str(&format!(
                            "| {} | {:.2}% | {:.4} | {:.4} | {} |\n",
                            c.label,
                            100.0 * a.success_ratio,
                            a.mean_edit_region_mae,
                            a.mean_preservation_mae,
                            a.mean_reasoning_iou.map_or("-".into(), |v| format!("{v:.3}"))
                        ));
                    }
                    None => s.push_str(&format!(
                        "| {} | hole: {} | | | |\n",
                        c.label,
                        c.hole.as_deref().unwrap_or("missing")
                    )),
                }
            }
            s.push('\n');
        }
        s
    }
}

impl AblationSetup {
    /// Benchmark generator for a cell.
    pub fn sampler_config(&self, spec: &CellSpec) -> SamplerConfig {
        SamplerConfig {
            format: spec.format.clone(),
            reasoning_frames: spec.reasoning_frames,
            triptych: spec.triptych,
            ..self.data.clone()
        }
    }

    pub fn train_config(&self, spec: &CellSpec, steps: u64, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.steps = steps;
        cfg.seed = seed;
        cfg.cof = spec.cof;
        cfg.model.rope = spec.scheme;
        cfg.model.seed = seed;
        cfg
    }

    pub fn sample_config(&self, spec: &CellSpec, seed: u64) -> SampleConfig {
        SampleConfig {
            steps: self.sample_steps,
            seed,
            target_frames: None,
            reasoning_frames: if spec.cof { spec.reasoning_frames } else { 0 },
            guidance: 0.0,
            codec: self.train.codec,
        }
    }

    /// Identifies a training run: everything that changes the weights.
    pub fn model_fingerprint(&self, spec: &CellSpec, steps: u64, seed: u64) -> String {
        fingerprint(&serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "data": self.sampler_config(spec),
            "train_count": self.train_count,
            "train": self.train_config(spec, steps, seed),
        }))
    }

    pub fn training_set(&self, spec: &CellSpec) -> Result<Vec<EditTriplet>> {
        BenchmarkSampler::new(self.sampler_config(spec))?.triplets(self.train_count)
    }

    pub fn eval_set(&self, spec: &CellSpec, count: usize) -> Result<Vec<EditTriplet>> {
        let sampler = BenchmarkSampler::new(self.sampler_config(spec))?;
        (0..count as u64)
            .map(|i| sampler.triplet(self.eval_offset + i))
            .collect()
    }

    /// Trains a cell's model, or loads it from the cache directory.
    pub fn train_cell(&self, spec: &CellSpec, steps: u64, seed: u64) -> Result<ModelState> {
        let key = self.model_fingerprint(spec, steps, seed);
        let cached = self.cache_dir.as_ref().map(|d| d.join(format!("{key}.bin")));
        if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
            return checkpoint::load(path);
        }
        let cfg = self.train_config(spec, steps, seed);
        let data = self
            .training_set(spec)?
            .iter()
            .map(|t| encode_triplet(t, &cfg.codec, spec.cof))
            .collect::<Result<Vec<_>>>()?;
        let (state, _) = train(&cfg, &data, None, |_| {})?;
        if let Some(path) = cached {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            checkpoint::save(&path, &state)?;
        }
        Ok(state)
    }

    fn eval_options(&self, spec: &CellSpec, seed: u64) -> EvalOptions {
        EvalOptions {
            sample: self.sample_config(spec, seed),
            thresholds: self.thresholds,
            ..Default::default()
        }
    }

    /// Held-out evaluation of a trained cell at training length.
    pub fn eval_cell(&self, state: &ModelState, spec: &CellSpec, count: usize, seed: u64) -> Result<EvalReport> {
        let set = self.eval_set(spec, count)?;
        evaluate(
            &ModelField::new(state),
            spec.scheme,
            &set,
            &self.eval_options(spec, seed),
            serde_json::json!({ "cell": spec, "model": self.model_fingerprint(spec, state.step, seed) }),
        )
    }

    /// Held-out evaluation at several multiples of the training length, on
    /// the same scenes.
    pub fn eval_lengths(
        &self,
        state: &ModelState,
        spec: &CellSpec,
        factors: &[usize],
        count: usize,
        seed: u64,
    ) -> Result<super::extrapolation::ExtrapolationReport> {
        let indices: Vec<u64> = (0..count as u64).map(|i| self.eval_offset + i).collect();
        length_extrapolation_eval(
            &ModelField::new(state),
            spec.scheme,
            &self.sampler_config(spec),
            factors,
            &indices,
            &self.eval_options(spec, seed),
            serde_json::json!({ "cell": spec, "model": self.model_fingerprint(spec, state.step, seed) }),
        )
    }

    /// Runs every cell of `axes` with model seed `seed`. Cells that share a
    /// training configuration share one model; cells that cannot start
    /// within the time budget, or whose training fails, are recorded as holes.
    pub fn run(&self, axes: &[AblationAxis], budget: &Budget, seed: u64) -> Result<AblationResults> {
        let started = Instant::now();
        let mut models: HashMap<String, ModelState> = HashMap::new();
        let mut cells = Vec::new();
        let base = CellSpec::default();
        for &axis in axes {
            let specs = axis.cells(&base);
            let mut lengths: Option<Result<super::extrapolation::ExtrapolationReport>> = None;
            for (label, spec) in specs.iter().cloned() {
                let key = self.model_fingerprint(&spec, budget.train_steps, seed);
                let over = budget.max_seconds.is_some_and(|s| started.elapsed().as_secs_f64() > s);
                if over && !models.contains_key(&key) {
                    cells.push(hole(axis, label, spec, "budget exceeded"));
                    continue;
                }
                let state = match models.get(&key) {
                    Some(s) => s,
                    None => match self.train_cell(&spec, budget.train_steps, seed) {
                        Ok(s) => models.entry(key.clone()).or_insert(s),
                        Err(e) => {
                            cells.push(hole(axis, label, spec, &format!("training failed: {e}")));
                            continue;
                        }
                    },
                };
                let report = if axis == AblationAxis::LengthFactor {
                    let factors: Vec<usize> = specs.iter().map(|(_, s)| s.length_factor).collect();
                    let all = lengths
                        .get_or_insert_with(|| self.eval_lengths(state, &spec, &factors, budget.eval_samples, seed));
                    match all {
                        Ok(r) => r.factor(spec.length_factor).cloned().ok_or_else(|| {
                            CofError::Invalid(format!(
                                "no report for {} frames",
                                extrapolation_frames(self.data.frames, spec.length_factor)
                            ))
                        }),
                        Err(e) => Err(CofError::Invalid(e.to_string())),
                    }
                } else {
                    self.eval_cell(state, &spec, budget.eval_samples, seed)
                };
                match report {
                    Ok(r) => cells.push(CellResult {
                        axis,
                        label,
                        spec,
                        model: Some(key),
                        report: Some(r),
                        hole: None,
                    }),
                    Err(e) => cells.push(hole(axis, label, spec, &format!("evaluation failed: {e}"))),
                }
            }
        }
        Ok(AblationResults {
            seed,
            data_seed: self.data.seed,
            budget: budget.clone(),
            setup: self.clone(),
            cells,
        })
    }
}

fn hole(axis: AblationAxis, label: String, spec: CellSpec, why: &str) -> CellResult {
    CellResult {
        axis,
        label,
        spec,
        model: None,
        report: None,
        hole: Some(why.to_string()),
    }
}
