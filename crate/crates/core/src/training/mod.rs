//! Ground-motion-level splits, mini-batch training with early stopping, and test reports.

mod dataset;
mod eval;
mod split;
mod trainer;

pub use dataset::{batch_input, Dataset, FeatureKind, Sample, SampleFeatures};
pub use eval::{
    amplified_to_percent, evaluate, polyfit, polyval, read_history_csv, read_scatter_csv,
    report_from_predictions, scatter_svg, write_history_csv, write_scatter_csv,
    write_scatter_svg, EvalReport, ScatterPoint, DEFAULT_FIT_DEGREE,
};
pub use split::{split_by_ground_motion, Split, SplitPlan, SplitRatios};
pub use trainer::{
    predict_all, train, train_with, EarlyStopping, EpochRecord, StopDecision, StopReason,
    TrainConfig, TrainOutcome, EVAL_CHUNK,
};
