//! Pipeline orchestration: run configs, stage markers, and the subcommands.

pub mod ablate;
pub mod config;
pub mod rundir;
pub mod stages;

pub use ablate::{cmd_ablate, AblateAxis, AblateTable};
pub use config::{PseudoSource, RunConfig, Stage};
pub use rundir::StageError;
pub use stages::run_stage;
