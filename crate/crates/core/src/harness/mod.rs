//! Experiment harness: feature assembly, the per-participant temporal split,
//! model runs for the four EMA questions, F1 scoring and reports.

mod experiment;
mod features;
mod metrics;
mod split;

pub use experiment::{
    architecture, emit_report, evaluate_model, question_baseline, run_experiment, run_question, train_model, Architecture,
    Dataset, ExperimentConfig, ExperimentOutcome, ModelEntry, ModelKind, Parents, QuestionReport, Report, SensingVariant,
    SplitName, TrainOverride, FUSION_LAYER, FUSION_WIDTH,
};
pub use features::{
    assemble, cohort_digest, embedder_weights, featurize, labeled_instances, one_hot, sensing_windows, series_seed,
    FeatureBlock, FeatureConfig, FeatureMode, FeatureSet, InstanceKey, LabeledInstance, AUDIO_WIDTH, SENSING_WIDTH,
    STREAM_WIDTH, TEXT_WIDTH,
};
pub use metrics::{chance_baseline, f1_from_predictions, f1_scores, normalize_rows, Averaged, F1Scores, N_CLASSES};
pub use split::{temporal_split, SplitAssignment, MIN_SPLIT_INSTANCES};
