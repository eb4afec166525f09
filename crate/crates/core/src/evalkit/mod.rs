//! Enrollment/verification scoring, FAR/FRR sweeps, DET curves, AUC and EER.

mod metrics;
mod protocol;
mod report;

pub use metrics::{
    aggregate, auc, det_curve, eer, exact_sweep, far_frr, grid_thresholds, histogram, phrase_metrics,
    score_phrase, sweep_at, threshold, AggregateMetrics, Distribution, Histogram, PhraseMetrics, ScoreSet,
    ThresholdSweep, GRID_STEPS, NUM_BINS,
};
pub use protocol::{evaluate, mean_embedding, Embedder, EvalOptions, EvalReport, NoiseConfig};
pub use report::{det_csv, det_svg, histogram_csv, histogram_svg, metrics_csv, AGGREGATE_LABEL};

#[cfg(test)]
mod tests;
