//! Staged, resumable analysis runs driven by one TOML config.
//!
//! Every stage writes into the run directory and records its inputs, outputs
//! and checksums in `manifest.json`, so later stages can be rerun alone.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::{
    CleaningConfig, EfaConfig, EvaluationConfig, HomalsConfig, LabellingConfig, PathsConfig, PipelineConfig,
};
pub use manifest::{sha256_file, sha256_hex, RunManifest, StageRecord, MANIFEST_FILE};
pub use report::{cmd_report, REPORT_FILE};
pub use stages::{
    cmd_clean, cmd_evaluate, cmd_factors, cmd_synth, read_analysis_table, write_analysis_table, CleanSummary,
    EvaluateSummary, FactorsSummary, SynthOutput, ANALYSIS, CLEANED,
};
