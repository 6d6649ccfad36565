use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{edit_metrics, reasoning_iou, Thresholds};
use crate::rope::RopeScheme;
use crate::sampler::{sample_batch_with, SampleConfig, VelocityField};
use crate::worlds::{EditTriplet, FrameClip};
use crate::{CofError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    pub task: String,
    pub edit_region_mae: f64,
    pub preservation_mae: f64,
    /// Absent when no reasoning frames were generated.
    pub reasoning_iou: Option<f64>,
    pub success: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub mean_edit_region_mae: f64,
    pub mean_preservation_mae: f64,
    pub mean_reasoning_iou: Option<f64>,
    /// Mean reasoning IoU over successful samples only.
    pub mean_reasoning_iou_successful: Option<f64>,
}

impl Aggregate {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a SampleReport>) -> Self {
        let samples: Vec<&SampleReport> = samples.into_iter().collect();
        let n = samples.len();
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let successes = samples.iter().filter(|s| s.success).count();
        Self {
            count: n,
            successes,
            success_ratio: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            mean_edit_region_mae: mean(samples.iter().map(|s| s.edit_region_mae).collect()).unwrap_or(0.0),
            mean_preservation_mae: mean(samples.iter().map(|s| s.preservation_mae).collect()).unwrap_or(0.0),
            mean_reasoning_iou: mean(samples.iter().filter_map(|s| s.reasoning_iou).collect()),
            mean_reasoning_iou_successful: mean(
                samples
                    .iter()
                    .filter(|s| s.success)
                    .filter_map(|s| s.reasoning_iou)
                    .collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Everything needed to reproduce the run (model, sampler, thresholds...).
    pub config: serde_json::Value,
    /// SHA-256 of the compact JSON of `config`.
    pub fingerprint: String,
    pub thresholds: Thresholds,
    pub samples: Vec<SampleReport>,
    pub per_task: BTreeMap<String, Aggregate>,
    pub overall: Aggregate,
}

pub fn fingerprint(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl EvalReport {
    pub fn new(config: serde_json::Value, thresholds: Thresholds, samples: Vec<SampleReport>) -> Self {
        let mut by_task: BTreeMap<String, Vec<&SampleReport>> = BTreeMap::new();
        for s in &samples {
            by_task.entry(s.task.clone()).or_default().push(s);
        }
        let per_task = by_task.into_iter().map(|(k, v)| (k, Aggregate::of(v))).collect();
        Self {
            fingerprint: fingerprint(&config),
            config,
            thresholds,
            overall: Aggregate::of(&samples),
            per_task,
            samples,
        }
    }

    pub fn success_ratio(&self) -> f64 {
        self.overall.success_ratio
    }

    /// Markdown table with one row per task plus the overall row.
    pub fn markdown(&self) -> String {
        let mut s = String::from("| task | n | success | edit MAE | preservation MAE | reasoning IoU |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        let rows = self.per_task.iter().map(|(k, a)| (k.as_str(), a));
        for (name, a) in rows.chain(std::iter::once(("overall", &self.overall))) {
            s.push_str(&format!(
                "| {name} | {} | {:.2}% | {:.4} | {:.4} | {} |\n",
                a.count,
                100.0 * a.success_ratio,
                a.mean_edit_region_mae,
                a.mean_preservation_mae,
                a.mean_reasoning_iou.map_or("-".into(), |v| format!("{v:.3}"))
            ));
        }
        s
    }
}

/// Scores already generated outputs: `outputs[i]` is the edited clip and,
/// optionally, the predicted reasoning clip for `triplets[i]`.
pub fn score_outputs(
    outputs: &[(FrameClip, Option<FrameClip>)],
    triplets: &[EditTriplet],
    th: &Thresholds,
) -> Result<Vec<SampleReport>> {
    if outputs.len() != triplets.len() {
        return Err(CofError::Invalid(format!(
            "{} outputs for {} triplets",
            outputs.len(),
            triplets.len()
        )));
    }
    outputs
        .iter()
        .zip(triplets)
        .enumerate()
        .map(|(index, ((edited, reasoning), t))| {
            let m = edit_metrics(edited, t, th)?;
            Ok(SampleReport {
                index,
                task: t.condition.task.name().to_string(),
                edit_region_mae: m.edit_region_mae,
                preservation_mae: m.preservation_mae,
                reasoning_iou: reasoning.as_ref().map(|r| reasoning_iou(r, t)).transpose()?,
                success: m.success,
            })
        })
        .collect()
}

/// Options for [`evaluate`].
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub sample: SampleConfig,
    pub thresholds: Thresholds,
    /// Samples integrated together per forward pass.
    pub batch: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sample: SampleConfig::default(),
            thresholds: Thresholds::default(),
            batch: 16,
        }
    }
}

/// Edits every triplet's source under its own condition and scores the
/// result. Sample `i` uses noise seed `sample.seed + i`; the target length is
/// each triplet's own unless `sample.target_frames` is set.
pub fn evaluate(
    field: &dyn VelocityField,
    scheme: RopeScheme,
    triplets: &[EditTriplet],
    opts: &EvalOptions,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let mut outputs = Vec::with_capacity(triplets.len());
    let batch = opts.batch.max(1);
    for (c, chunk) in triplets.chunks(batch).enumerate() {
        // Same-geometry runs share one batched integration.
        let mut start = 0;
        while start < chunk.len() {
            let first = &chunk[start];
            let end = start
                + chunk[start..]
                    .iter()
                    .take_while(|t| t.source.same_geometry(&first.source))
                    .count();
            let part = &chunk[start..end];
            let sources: Vec<&FrameClip> = part.iter().map(|t| &t.source).collect();
            let conds: Vec<_> = part.iter().map(|t| t.condition).collect();
            let seeds: Vec<u64> = (0..part.len())
                .map(|i| opts.sample.seed.wrapping_add((c * batch + start + i) as u64))
                .collect();
            for out in sample_batch_with(field, scheme, &sources, &conds, &seeds, &opts.sample)? {
                outputs.push((out.edited, out.reasoning));
            }
            start = end;
        }
    }
    let samples = score_outputs(&outputs, triplets, &opts.thresholds)?;
    let config = serde_json::json!({
        "run": config,
        "sample": opts.sample,
        "scheme": scheme,
        "thresholds": opts.thresholds,
        "count": triplets.len(),
    });
    Ok(EvalReport::new(config, opts.thresholds, samples))
}
