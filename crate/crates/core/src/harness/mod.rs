//! Experiment orchestration: configs, single attacks with restarts,
//! campaigns and their metrics, PCA of optimizer paths, artifact export,
//! analytic benchmarks and estimator verification suites.

pub mod attack;
pub mod bench;
pub mod campaign;
pub mod config;
pub mod export;
pub mod pca;
pub mod verify;

pub use attack::{run_attack, run_optimizer, AttackObjective, AttackOutcome, AttackSetup, QueryAudit};
pub use bench::{run_bench, BenchConfig, BenchFunction, BenchReport};
pub use campaign::{
    robust_accuracy, run_campaign, run_campaign_on, CampaignResult, CampaignStats, PointRun, RobustnessRecord,
    RunOutcome,
};
pub use config::{DatasetEntry, DatasetSpec, ExperimentConfig, LossMode, LossSettings, OptimizerSpec, Sample};
pub use export::{export_results, query_histogram, RunReport};
pub use pca::{pca_trajectory, PcaTrajectory};
