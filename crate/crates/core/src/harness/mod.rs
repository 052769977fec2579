//! Experiment orchestration: configuration, end-to-end episodes, sweeps,
//! paired comparisons and the knowledge-base file.

mod config;
mod experiments;
mod kb;
mod pipeline;

pub use config::{
    Allocator, ChannelConfig, ChannelModel, CodeConfig, CodecConfig, Estimation, ExperimentConfig,
    OfdmSettings, Profile, SweepAxis, SweepConfig,
};
pub use experiments::{
    baseline_training_reward, compare_allocators, export_importance_map, importance_csv,
    mean_std, run_paired, run_sweep, selftest, selftest_config, spearman, std_error,
    train_policy, Comparison, ImportanceRow, Summary, SweepPoint, SweepTable, SWEEP_HEADER,
};
pub use kb::{KnowledgeBase, MAGIC, POLICY_TAG, STR_TAG, VERSION};
pub use pipeline::{
    dataset, train_knowledge_base, CodecReport, EpisodeResult, EpisodeSeeds, Experiment,
    LinkEpisode, Prepared, Received,
};
