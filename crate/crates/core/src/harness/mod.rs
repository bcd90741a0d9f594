//! Few-shot experiment protocol on synthetic or imported features: shot
//! sampling, training arms, evaluation, matrices, ablation sweeps and the
//! distribution-shift protocol.

mod ablation;
mod dataset;
mod protocol;
mod zeroshot;

pub use ablation::{distribution_shift, run_sweep, ShiftResult, ShiftRun, Sweep, SweepResult};
pub use dataset::{
    build_vocabulary, class_names, import_features, load_dataset, make_synthetic, parse_features,
    read_class_list, sample_shots, save_dataset, synthetic_bank, synthetic_fixture_pairs,
    synthetic_knowledge, test_split, write_features, Dataset, FeatureFile, FeatureSpace, Split,
    SyntheticSpec, DEFAULT_ALIGN,
};
pub use protocol::{
    aggregate, caption_anchors, evaluate_top1, mean_std, parallel_map, render_table, run_grid,
    run_matrix, run_one, train_run, zero_shot_top1, AggregateRow, Arm, Experiment, MatrixResult,
    RunReport, TrainedRun,
};
pub use zeroshot::{zeroshot_demo, RankFlip, ZeroShotReport, ZeroShotWorld};
