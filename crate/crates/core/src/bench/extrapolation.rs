use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalOptions, EvalReport};
use crate::rope::RopeScheme;
use crate::sampler::VelocityField;
use crate::worlds::{BenchmarkSampler, EditTriplet, SamplerConfig};
use crate::{CofError, Result};

/// Pixel length at `factor` times a `base`-frame clip: `factor·(base−1) + 1`,
/// which keeps every length valid for any temporal factor dividing `base − 1`.
pub fn extrapolation_frames(base: usize, factor: usize) -> usize {
    factor * (base.saturating_sub(1)) + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub factor: usize,
    pub frames: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub scheme: RopeScheme,
    pub base_frames: usize,
    pub factors: Vec<FactorReport>,
}

impl ExtrapolationReport {
    pub fn factor(&self, factor: usize) -> Option<&EvalReport> {
        self.factors.iter().find(|f| f.factor == factor).map(|f| &f.report)
    }

    /// Preservation MAE at `factor` divided by the factor-1 value.
    pub fn preservation_growth(&self, factor: usize) -> Option<f64> {
        let base = self.factor(1)?.overall.mean_preservation_mae;
        Some(self.factor(factor)?.overall.mean_preservation_mae / base)
    }

    pub fn markdown(&self) -> String {
        let mut s = format!("scheme `{}`\n\n", self.scheme.name());
        s.push_str("| factor | frames | success | edit MAE | preservation MAE |\n|---|---|---|---|---|\n");
        for f in &self.factors {
            let a = &f.report.overall;
            s.push_str(&format!(
                "| {} | {} | {:.2}% | {:.4} | {:.4} |\n",
                f.factor,
                f.frames,
                100.0 * a.success_ratio,
                a.mean_edit_region_mae,
                a.mean_preservation_mae
            ));
        }
        s
    }
}

/// The same scenes rendered at every factor. Scenes are laid out so every
/// instance stays on canvas for the longest length, which makes the shorter
/// renders prefixes of the longer ones.
pub fn extrapolation_triplets(
    base: &SamplerConfig,
    factors: &[usize],
    indices: &[u64],
) -> Result<Vec<(usize, Vec<EditTriplet>)>> {
    if factors.is_empty() || factors.contains(&0) {
        return Err(CofError::Config("length factors must be positive".into()));
    }
    let longest = factors
        .iter()
        .map(|&k| extrapolation_frames(base.frames, k))
        .max()
        .unwrap_or(1);
    factors
        .iter()
        .map(|&k| {
            let cfg = SamplerConfig {
                frames: extrapolation_frames(base.frames, k),
                frames_max: longest.max(base.frames_max),
                ..base.clone()
            };
            let sampler = BenchmarkSampler::new(cfg)?;
            let set = indices
                .iter()
                .map(|&i| sampler.triplet(i))
                .collect::<Result<Vec<_>>>()?;
            Ok((k, set))
        })
        .collect()
}

/// Evaluates one field at each length factor; the target length follows each
/// factor's source length.
pub fn length_extrapolation_eval(
    field: &dyn VelocityField,
    scheme: RopeScheme,
    base: &SamplerConfig,
    factors: &[usize],
    indices: &[u64],
    opts: &EvalOptions,
    config: serde_json::Value,
) -> Result<ExtrapolationReport> {
    let mut opts = opts.clone();
    opts.sample.target_frames = None;
    let mut out = Vec::with_capacity(factors.len());
    for (factor, set) in extrapolation_triplets(base, factors, indices)? {
        let frames = extrapolation_frames(base.frames, factor);
        let report = evaluate(
            field,
            scheme,
            &set,
            &opts,
            serde_json::json!({ "run": config, "length_factor": factor }),
        )?;
        out.push(FactorReport { factor, frames, report });
    }
    Ok(ExtrapolationReport {
        scheme,
        base_frames: base.frames,
        factors: out,
    })
}
