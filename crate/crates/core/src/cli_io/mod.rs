//! Station data ingestion, run configuration and the command pipeline.

pub mod config;
pub mod dataset;
pub mod pipeline;

pub use config::{MonthDay, RunConfig, SeasonWindow, YearRange};
pub use dataset::{
    ingest, parse_eca_series, read_csv_simple, read_eca_series, write_csv_simple, write_eca_series, DataSource,
    Quality, StationDataset,
};
pub use pipeline::{build_train_sample, execute, qq_points, run_pipeline, spearman, Command, Report, StageError};
