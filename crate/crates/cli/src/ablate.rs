//! Ablation sweeps: one full pipeline run per axis value, sharing the parent
//! dataset and embedding cache.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use segdistill_core::data::CategoryCatalog;
use segdistill_core::eval::EvalReport;

use crate::config::{PseudoSource, RunConfig, Stage};
use crate::rundir::{read_marker, StageError};
use crate::stages::{
    catalog_path, collection_manifest_path, embeddings_cache_path, eval_report_path, run_stage,
    val_multi_path, val_single_path,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateAxis {
    ArchiveSize,
    NMax,
    KGroups,
}

impl AblateAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblateAxis::ArchiveSize => "archive_size",
            AblateAxis::NMax => "n_max",
            AblateAxis::KGroups => "k_groups",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "archive_size" => Ok(AblateAxis::ArchiveSize),
            "n_max" => Ok(AblateAxis::NMax),
            "k_groups" => Ok(AblateAxis::KGroups),
            other => Err(anyhow!(
                "unknown ablation axis {other:?} (expected archive_size | n_max | k_groups)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateRow {
    pub value: usize,
    pub miou_single: f64,
    pub miou_multi: Option<f64>,
    pub miou_all: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateTable {
    pub axis: String,
    pub rows: Vec<AblateRow>,
}

fn validate_values(
    axis: AblateAxis,
    values: &[usize],
    num_categories: usize,
) -> Result<(), StageError> {
    if values.is_empty() {
        return Err(StageError::Config("ablation needs at least one value".into()));
    }
    for &v in values {
        let ok = match axis {
            AblateAxis::ArchiveSize | AblateAxis::NMax => v >= 1,
            AblateAxis::KGroups => v >= 1 && v <= num_categories,
        };
        if !ok {
            return Err(StageError::Config(format!(
                "value {v} is invalid for axis {}",
                axis.name()
            )));
        }
    }
    Ok(())
}

fn apply_axis(config: &mut RunConfig, axis: AblateAxis, value: usize) {
    match axis {
        AblateAxis::ArchiveSize => config.retrieval.archive_k = value,
        AblateAxis::NMax => {
            config.distill.train.n_max = value;
            config.distill.train.copy_paste_enabled = true;
        }
        AblateAxis::KGroups => config.retrieval.k_groups = value,
    }
}

fn copy_if_exists(from: &Path, to: &Path) -> Result<()> {
    if from.is_file() {
        if let Some(parent) = to.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::copy(from, to).with_context(|| format!("copying {}", from.display()))?;
    }
    Ok(())
}

/// Runs the pipeline once per axis value. All other settings are shared; the
/// parent's dataset and embedding cache are reused by every run. Emits a
/// (value, mIoU) table and a plot-ready data file.
pub fn cmd_ablate(
    config: &RunConfig,
    axis: AblateAxis,
    values: &[usize],
    force: bool,
) -> Result<AblateTable, StageError> {
    config
        .validate()
        .map_err(|e| StageError::Config(e.to_string()))?;
    let run_dir = config.paths.output_dir.clone();

    // parent dataset: generate once when configured and absent
    if config.synth.is_some()
        && config.paths.collection_manifest.is_none()
        && read_marker(&run_dir, Stage::Synth).is_none()
    {
        run_stage(config, Stage::Synth, false)?;
    }
    let catalog = CategoryCatalog::read_from(&catalog_path(config, &run_dir))
        .map_err(|e| StageError::Config(format!("cannot load catalog: {e}")))?;
    validate_values(axis, values, catalog.num_foreground())?;

    let axis_dir = run_dir.join("ablate").join(axis.name());
    std::fs::create_dir_all(&axis_dir)
        .map_err(|e| StageError::Other(anyhow!("creating {}: {e}", axis_dir.display())))?;
    let shared_cache = axis_dir.join("embeddings.bin");

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let sub_dir = axis_dir.join(format!("v{value:05}"));
        let mut sub = config.clone();
        sub.paths.output_dir = sub_dir.clone();
        sub.paths.collection_manifest = Some(collection_manifest_path(config, &run_dir));
        sub.paths.catalog = Some(catalog_path(config, &run_dir));
        sub.paths.val_single_manifest = Some(val_single_path(config, &run_dir));
        sub.paths.val_multi_manifest = Some(val_multi_path(config, &run_dir));
        sub.synth = None;
        apply_axis(&mut sub, axis, value);
        sub.propagate_seed();

        // reuse the shared embedding cache when a previous value computed it
        let sub_cache = embeddings_cache_path(&sub_dir);
        if !sub_cache.is_file() {
            copy_if_exists(&shared_cache, &sub_cache).map_err(StageError::Other)?;
            copy_if_exists(
                &PathBuf::from(format!("{}.ids", shared_cache.display())),
                &PathBuf::from(format!("{}.ids", sub_cache.display())),
            )
            .map_err(StageError::Other)?;
        }

        let mut stages = vec![Stage::Retrieve, Stage::Pseudolabel];
        if sub.distill.pseudo_source == PseudoSource::Expert {
            stages.push(Stage::Experts);
        }
        stages.push(Stage::Distill);
        stages.push(Stage::Eval);
        for stage in stages {
            run_stage(&sub, stage, force)?;
        }

        if !shared_cache.is_file() {
            copy_if_exists(&sub_cache, &shared_cache).map_err(StageError::Other)?;
            copy_if_exists(
                &PathBuf::from(format!("{}.ids", sub_cache.display())),
                &PathBuf::from(format!("{}.ids", shared_cache.display())),
            )
            .map_err(StageError::Other)?;
        }

        let single = EvalReport::read_from(&eval_report_path(&sub_dir, "single"))
            .map_err(|e| StageError::Other(anyhow!(e.to_string())))?;
        let multi_path = eval_report_path(&sub_dir, "multi");
        let multi = multi_path
            .is_file()
            .then(|| EvalReport::read_from(&multi_path))
            .transpose()
            .map_err(|e| StageError::Other(anyhow!(e.to_string())))?;
        let all = EvalReport::read_from(&eval_report_path(&sub_dir, "all"))
            .map_err(|e| StageError::Other(anyhow!(e.to_string())))?;
        rows.push(AblateRow {
            value,
            miou_single: single.miou,
            miou_multi: multi.map(|r| r.miou),
            miou_all: all.miou,
        });
    }

    let table = AblateTable {
        axis: axis.name().into(),
        rows,
    };
    write_outputs(&axis_dir, &table).map_err(StageError::Other)?;
    Ok(table)
}

fn write_outputs(axis_dir: &Path, table: &AblateTable) -> Result<()> {
    let mut tsv = String::from("value\tmiou_single\tmiou_multi\tmiou_all\n");
    let mut plot = String::new();
    for row in &table.rows {
        let multi = row
            .miou_multi
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into());
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.value, row.miou_single, multi, row.miou_all
        ));
        plot.push_str(&format!("{} {}\n", row.value, row.miou_all));
    }
    std::fs::write(axis_dir.join("results.tsv"), tsv)?;
    std::fs::write(axis_dir.join("plot.dat"), plot)?;
    Ok(())
}
