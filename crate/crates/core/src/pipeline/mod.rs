//! Scene simulation, file formats, label-store operations, the end-to-end
//! Global-BA driver and evaluation reports.

pub mod config;
pub mod io;
pub mod labels;
pub mod report;
pub mod run;
pub mod scene;
pub mod sim;

use thiserror::Error;

pub use config::{MergeConfig, PipelineConfig, SelectConfig, THREADS_ENV};
pub use labels::{merge_keep_initial, merge_replace, select_by_depth, GenerationTag, Label, LabelSet};
pub use report::{evaluate, Report};
pub use run::{run_global_ba, run_global_ba_with, BoxRefiner, GlobalBaOutput, IdentityRefiner, RunStatus};
pub use scene::{SceneBundle, Truth, TruthObject, TruthPoint, TruthState};
pub use sim::{simulate, SimConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("scene has no ground truth")]
    MissingTruth,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GATE_SKIPPED: i32 = 3;
pub const EXIT_DEGENERATE_INPUT: i32 = 4;

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Input(_) | PipelineError::MissingTruth => EXIT_DEGENERATE_INPUT,
            PipelineError::Io(_) => 1,
        }
    }
}
