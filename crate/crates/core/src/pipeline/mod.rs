//! Training, evaluation and the two-stage orchestration.

mod metrics;
mod run;
mod train;

pub use metrics::{
    confusion_csv, confusion_table, direct_baseline, eq1, evaluate, evaluate_threads, gold_examples,
    parse_confusion_csv, render_confusion, ClassScores, ConfusionMatrix, Metrics, PerClass,
};
pub use run::{
    autolabel_stage, require, train_stage1, train_stage2, two_stage_run, write_eval, write_json, AutolabelSummary,
    EvalBlock, PipelineConfig, Report, StageOutput, StageSummary, AUTOLABELED_CORPUS, STAGE1_CHECKPOINT,
    STAGE2_BILSTM_CHECKPOINT, STAGE2_CNN_CHECKPOINT,
};
pub use train::{train, EpochRecord, SelectionRule, TrainConfig, TrainingHistory};
