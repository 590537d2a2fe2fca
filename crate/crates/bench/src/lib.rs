//! Benchmark harness: blind and oracle runs of the six separation methods,
//! score aggregation and report files.

pub mod config;
pub mod dataset;
pub mod init_study;
pub mod report;
pub mod run;
pub mod stats;

pub use config::{InitKind, MethodId, Mode, ProtocolConfig};
pub use init_study::{init_study, InitRow, InitStudy};
pub use run::{run_grid, separate_blind, separate_oracle, Metric, RunRecord, RunScores, Separation};
pub use stats::{aggregate_stats, quantile_sorted, FiveNumber, SummaryRow};
