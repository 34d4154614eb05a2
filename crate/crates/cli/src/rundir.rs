//! Run-directory discipline: single-owner locking, atomic stage markers, and
//! dependency checks.
//!
//! A stage marker exists only if the stage's outputs are fully written:
//! markers are written to a temp file and renamed into place after all
//! artifacts are committed. An interrupted stage leaves no marker, so a
//! re-run resumes from the last committed stage.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stage, ALL_STAGES};

/// One completed stage: the caching key, timing, and artifact paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: String,
    pub config_hash: String,
    pub elapsed_seconds: f64,
    pub artifacts: Vec<PathBuf>,
}

/// Exclusive ownership of a run directory for the duration of a stage.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(run_dir)
            .with_context(|| format!("creating run dir {}", run_dir.display()))?;
        let path = run_dir.join("run.lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                anyhow::bail!(
                    "run directory {} is locked by another process (remove {} if stale)",
                    run_dir.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn markers_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("markers")
}

pub fn marker_path(run_dir: &Path, stage: Stage) -> PathBuf {
    markers_dir(run_dir).join(format!("{}.json", stage.name()))
}

pub fn read_marker(run_dir: &Path, stage: Stage) -> Option<StageMarker> {
    let path = marker_path(run_dir, stage);
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Commits a marker via write-then-rename.
pub fn write_marker(run_dir: &Path, marker: &StageMarker) -> Result<()> {
    let dir = markers_dir(run_dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(".{}.json.tmp", marker.stage));
    let final_path = dir.join(format!("{}.json", marker.stage));
    std::fs::write(&tmp, serde_json::to_string_pretty(marker)?)
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, &final_path)
        .with_context(|| format!("committing {}", final_path.display()))?;
    Ok(())
}

pub fn remove_marker(run_dir: &Path, stage: Stage) {
    let _ = std::fs::remove_file(marker_path(run_dir, stage));
}

/// Removes the markers of `stage` and everything after it in pipeline order.
pub fn remove_from_stage_onward(run_dir: &Path, stage: Stage) {
    let mut found = false;
    for s in ALL_STAGES {
        if s == stage {
            found = true;
        }
        if found {
            remove_marker(run_dir, s);
        }
    }
}

/// How a stage invocation should proceed.
#[derive(Debug, PartialEq, Eq)]
pub enum StagePlan {
    /// Marker present with the current hash: nothing to do.
    NoOp,
    /// Run the stage.
    Run,
}

/// Stage-level failures that map to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    /// Exit code 2.
    #[error("missing dependency stage: {stage}")]
    MissingDependency { stage: &'static str },
    /// Exit code 1.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

/// Validates dependencies and the stage's own marker state.
///
/// A dependency counts as present only when its marker exists *and* carries
/// the hash implied by the current config; stale upstream outputs are treated
/// as missing.
pub fn plan_stage(
    run_dir: &Path,
    config: &RunConfig,
    stage: Stage,
    force: bool,
) -> Result<StagePlan, StageError> {
    for dep in stage.dependencies(config) {
        match read_marker(run_dir, dep) {
            Some(marker) if marker.config_hash == dep.config_hash(config) => {}
            _ => {
                return Err(StageError::MissingDependency { stage: dep.name() });
            }
        }
    }
    let hash = stage.config_hash(config);
    match read_marker(run_dir, stage) {
        Some(marker) if marker.config_hash == hash && !force => Ok(StagePlan::NoOp),
        Some(marker) if marker.config_hash != hash && !force => Err(StageError::Config(format!(
            "stage {} was previously run with a different config (hash {} vs {}); \
             pass --force to re-run it and invalidate downstream stages",
            stage.name(),
            &marker.config_hash[..12],
            &hash[..12],
        ))),
        Some(_) => {
            // forced re-run invalidates this stage and everything downstream
            remove_from_stage_onward(run_dir, stage);
            Ok(StagePlan::Run)
        }
        None => Ok(StagePlan::Run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_with_dir(dir: &Path) -> RunConfig {
        let mut config = RunConfig {
            synth: Some(segdistill_core::synth::SynthSpec::default()),
            ..RunConfig::default()
        };
        config.paths.output_dir = dir.to_path_buf();
        config.propagate_seed();
        config
    }

    fn fake_marker(run_dir: &Path, config: &RunConfig, stage: Stage) {
        write_marker(
            run_dir,
            &StageMarker {
                stage: stage.name().into(),
                config_hash: stage.config_hash(config),
                elapsed_seconds: 0.0,
                artifacts: vec![],
            },
        )
        .unwrap();
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn missing_dependency_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let config = config_with_dir(dir.path());
        let err = plan_stage(dir.path(), &config, Stage::Distill, false).unwrap_err();
        match err {
            StageError::MissingDependency { stage } => assert_eq!(stage, "experts"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn completed_stage_with_same_hash_is_noop() {
        let dir = tempfile::tempdir().unwrap();
        let config = config_with_dir(dir.path());
        fake_marker(dir.path(), &config, Stage::Synth);
        let plan = plan_stage(dir.path(), &config, Stage::Synth, false).unwrap();
        assert_eq!(plan, StagePlan::NoOp);
    }

    #[test]
    fn changed_hash_requires_force() {
        let dir = tempfile::tempdir().unwrap();
        let config = config_with_dir(dir.path());
        fake_marker(dir.path(), &config, Stage::Synth);
        let mut changed = config.clone();
        changed.seed = 42;
        changed.propagate_seed();
        let err = plan_stage(dir.path(), &changed, Stage::Synth, false).unwrap_err();
        assert!(matches!(err, StageError::Config(_)));
        let plan = plan_stage(dir.path(), &changed, Stage::Synth, true).unwrap();
        assert_eq!(plan, StagePlan::Run);
    }

    #[test]
    fn force_invalidates_downstream_markers() {
        let dir = tempfile::tempdir().unwrap();
        let config = config_with_dir(dir.path());
        fake_marker(dir.path(), &config, Stage::Synth);
        fake_marker(dir.path(), &config, Stage::Retrieve);
        let plan = plan_stage(dir.path(), &config, Stage::Synth, true).unwrap();
        assert_eq!(plan, StagePlan::Run);
        assert!(read_marker(dir.path(), Stage::Retrieve).is_none());
    }

    #[test]
    fn stale_dependency_counts_as_missing() {
        let dir = tempfile::tempdir().unwrap();
        let config = config_with_dir(dir.path());
        fake_marker(dir.path(), &config, Stage::Synth);
        // upstream config change invalidates the synth marker for retrieve
        let mut changed = config.clone();
        changed.seed = 1;
        changed.propagate_seed();
        let err = plan_stage(dir.path(), &changed, Stage::Retrieve, false).unwrap_err();
        assert!(matches!(
            err,
            StageError::MissingDependency { stage: "synth" }
        ));
    }
}
