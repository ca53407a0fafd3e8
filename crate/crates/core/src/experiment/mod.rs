//! Repeated-estimation experiments and their stability metrics.

pub mod config;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sim;

pub use config::{DataSource, ExperimentConfig, ModelSpec};
pub use report::{ExperimentReport, PointReport, ReportMetadata, ReportSummary};
pub use run::{cell_seed, run_experiment, run_with_setup, setup_experiment, summarize, summarize_point, ExperimentSetup};
pub use sim::{generate_sim_dataset, sim_covariance, sim_moments, SimDataset};
