//! Pixel-exact evaluation against synthetic ground truth, the ablation grid
//! and the length-extrapolation protocol.

mod ablation;
mod eval;
mod extrapolation;
mod metrics;

pub use ablation::{
    format_ordering_holds, AblationAxis, AblationResults, AblationSetup, Budget, CellResult, CellSpec, Check,
    ORDERING_MARGIN,
};
pub use eval::{evaluate, fingerprint, score_outputs, Aggregate, EvalOptions, EvalReport, SampleReport};
pub use extrapolation::{
    extrapolation_frames, extrapolation_triplets, length_extrapolation_eval, ExtrapolationReport, FactorReport,
};

pub use metrics::{
    edit_metrics, is_success, reasoning_iou, reasoning_region, EditMetrics, Thresholds, REASONING_THRESHOLD, TAU_EDIT,
    TAU_PRES,
};
