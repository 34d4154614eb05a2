//! The six pipeline stage commands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use segdistill_core::data::{
    load_manifest, write_manifest, write_mask, CategoryCatalog, ImageSource, LabelMask,
    ManifestImageSource, ManifestRecord, Provenance, PseudoLabelRecord,
};
use segdistill_core::distill::{predict, train_segmenter, SoftPrediction};
use segdistill_core::eval::{
    default_threshold_grid, size_stratified_miou, sweep_threshold, ConfusionAccumulator,
    EvalConfigEcho, EvalReport,
};
use segdistill_core::experts::{refine_masks, train_expert};
use segdistill_core::pseudomask::{
    generate_saliency, label_archive, refine_edges, SaliencyOutcome,
};
use segdistill_core::retrieval::{
    build_archive, default_templates, embed_collection, ensemble_prompts, group_categories,
    load_templates, ExpertGroup,
};
use segdistill_core::segnet::TrainedSegmenter;
use segdistill_core::synth::oracle::{OracleEmbeddingProvider, OracleSaliencyProvider};
use segdistill_core::synth::{generate_dataset, SaliencyNoiseSpec};
use segdistill_core::data::{Archive, EmbeddingVector};
use segdistill_core::distill::trainer::log_to_jsonl;
use ndarray::Array3;

use crate::config::{PseudoSource, RunConfig, Stage};
use crate::rundir::{plan_stage, write_marker, RunLock, StageError, StageMarker, StagePlan};

pub struct StageOutcome {
    pub stage: Stage,
    pub ran: bool,
}

/// Runs one stage end to end: lock, validate, plan, execute, commit marker.
pub fn run_stage(config: &RunConfig, stage: Stage, force: bool) -> Result<StageOutcome, StageError> {
    config
        .validate()
        .map_err(|e| StageError::Config(e.to_string()))?;
    let run_dir = config.paths.output_dir.clone();
    let _lock = RunLock::acquire(&run_dir).map_err(StageError::Other)?;
    config.write_echo(&run_dir).map_err(StageError::Other)?;

    match plan_stage(&run_dir, config, stage, force)? {
        StagePlan::NoOp => {
            log::info!("stage {} already complete; nothing to do", stage.name());
            Ok(StageOutcome { stage, ran: false })
        }
        StagePlan::Run => {
            let started = Instant::now();
            let artifacts = execute(config, &run_dir, stage).map_err(StageError::Other)?;
            write_marker(
                &run_dir,
                &StageMarker {
                    stage: stage.name().into(),
                    config_hash: stage.config_hash(config),
                    elapsed_seconds: started.elapsed().as_secs_f64(),
                    artifacts,
                },
            )
            .map_err(StageError::Other)?;
            log::info!(
                "stage {} finished in {:.1}s",
                stage.name(),
                started.elapsed().as_secs_f64()
            );
            Ok(StageOutcome { stage, ran: true })
        }
    }
}

fn execute(config: &RunConfig, run_dir: &Path, stage: Stage) -> Result<Vec<PathBuf>> {
    match stage {
        Stage::Synth => exec_synth(config, run_dir),
        Stage::Retrieve => exec_retrieve(config, run_dir),
        Stage::Pseudolabel => exec_pseudolabel(config, run_dir),
        Stage::Experts => exec_experts(config, run_dir),
        Stage::Distill => exec_distill(config, run_dir),
        Stage::Eval => exec_eval(config, run_dir),
    }
}

// ---- path resolution -------------------------------------------------------

pub fn dataset_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("dataset")
}

pub fn collection_manifest_path(config: &RunConfig, run_dir: &Path) -> PathBuf {
    config
        .paths
        .collection_manifest
        .clone()
        .unwrap_or_else(|| dataset_dir(run_dir).join("train.jsonl"))
}

pub fn catalog_path(config: &RunConfig, run_dir: &Path) -> PathBuf {
    config
        .paths
        .catalog
        .clone()
        .unwrap_or_else(|| dataset_dir(run_dir).join("catalog.txt"))
}

pub fn val_single_path(config: &RunConfig, run_dir: &Path) -> PathBuf {
    config
        .paths
        .val_single_manifest
        .clone()
        .unwrap_or_else(|| dataset_dir(run_dir).join("val_single.jsonl"))
}

pub fn val_multi_path(config: &RunConfig, run_dir: &Path) -> PathBuf {
    config
        .paths
        .val_multi_manifest
        .clone()
        .unwrap_or_else(|| dataset_dir(run_dir).join("val_multi.jsonl"))
}

fn archives_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("retrieval").join("archives")
}

fn archive_path(run_dir: &Path, category_index: u16) -> PathBuf {
    archives_dir(run_dir).join(format!("cat_{category_index:03}.json"))
}

fn groups_path(run_dir: &Path) -> PathBuf {
    run_dir.join("retrieval").join("groups.json")
}

pub fn embeddings_cache_path(run_dir: &Path) -> PathBuf {
    run_dir.join("retrieval").join("embeddings.bin")
}

fn pseudo_dir(run_dir: &Path, provenance: Provenance) -> PathBuf {
    run_dir.join("pseudolabels").join(provenance.to_string())
}

fn pseudo_records_path(run_dir: &Path, provenance: Provenance) -> PathBuf {
    pseudo_dir(run_dir, provenance).join("records.jsonl")
}

fn distill_model_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("distill").join("model")
}

pub fn eval_report_path(run_dir: &Path, split: &str) -> PathBuf {
    run_dir.join("eval").join(format!("report_{split}.json"))
}

// ---- shared loading --------------------------------------------------------

fn load_catalog(config: &RunConfig, run_dir: &Path) -> Result<CategoryCatalog> {
    let path = catalog_path(config, run_dir);
    CategoryCatalog::read_from(&path)
        .map_err(|e| anyhow!("loading catalog {}: {e}", path.display()))
}

fn load_collection(
    config: &RunConfig,
    run_dir: &Path,
    catalog: &CategoryCatalog,
) -> Result<(Vec<ManifestRecord>, ManifestImageSource, PathBuf)> {
    let manifest_path = collection_manifest_path(config, run_dir);
    let records = load_manifest(&manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let source = ManifestImageSource::load(&records, &dir, Some(catalog.num_classes()))?;
    Ok((records, source, dir))
}

fn load_archives(config: &RunConfig, run_dir: &Path, catalog: &CategoryCatalog) -> Result<Vec<Archive>> {
    let _ = config;
    (1..=catalog.num_foreground() as u16)
        .map(|idx| Ok(Archive::read_from(&archive_path(run_dir, idx))?))
        .collect()
}

fn load_groups(run_dir: &Path) -> Result<Vec<ExpertGroup>> {
    let path = groups_path(run_dir);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads pseudo-label records persisted by the pseudolabel or experts stage.
fn load_pseudo_records(
    run_dir: &Path,
    provenance: Provenance,
    catalog: &CategoryCatalog,
) -> Result<Vec<PseudoLabelRecord>> {
    let manifest_path = pseudo_records_path(run_dir, provenance);
    let rows = load_manifest(&manifest_path)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    rows.iter()
        .map(|row| {
            let mask_path = row
                .resolved_mask_path(&dir)
                .ok_or_else(|| anyhow!("pseudo record {} has no mask", row.id))?;
            let mask = segdistill_core::data::read_mask(&mask_path, 2)?;
            let category = row
                .category
                .as_deref()
                .and_then(|name| catalog.index_of(name))
                .ok_or_else(|| anyhow!("pseudo record {} has unknown category", row.id))?;
            Ok(PseudoLabelRecord::new(row.id.clone(), mask, category, provenance)?)
        })
        .collect()
}

/// Persists pseudo-label records as mask PNGs plus a manifest with a
/// provenance column. `image_paths` maps image ids to their source files.
fn persist_pseudo_records(
    run_dir: &Path,
    provenance: Provenance,
    records: &[PseudoLabelRecord],
    catalog: &CategoryCatalog,
    image_paths: &HashMap<String, PathBuf>,
) -> Result<Vec<PathBuf>> {
    let dir = pseudo_dir(run_dir, provenance);
    let mut rows = Vec::with_capacity(records.len());
    let mut artifacts = Vec::new();
    for rec in records {
        let cat_dir = dir.join("masks").join(format!("cat_{:03}", rec.category_index));
        std::fs::create_dir_all(&cat_dir)
            .with_context(|| format!("creating {}", cat_dir.display()))?;
        let rel_mask = PathBuf::from(format!(
            "masks/cat_{:03}/{}.png",
            rec.category_index, rec.image_id
        ));
        write_mask(&rec.mask, &dir.join(&rel_mask))?;
        let image_path = image_paths
            .get(&rec.image_id)
            .ok_or_else(|| anyhow!("no source image path for {}", rec.image_id))?
            .clone();
        rows.push(ManifestRecord {
            id: rec.image_id.clone(),
            image_path,
            mask_path: Some(rel_mask),
            category: Some(
                catalog
                    .entry(rec.category_index)
                    .ok_or_else(|| anyhow!("category {} missing", rec.category_index))?
                    .name
                    .clone(),
            ),
            provenance: Some(rec.provenance),
        });
    }
    let manifest_path = pseudo_records_path(run_dir, provenance);
    write_manifest(&rows, &manifest_path)?;
    artifacts.push(manifest_path);
    Ok(artifacts)
}

/// id -> absolute image path map for the collection.
fn image_path_map(records: &[ManifestRecord], manifest_dir: &Path) -> HashMap<String, PathBuf> {
    records
        .iter()
        .map(|r| (r.id.clone(), r.resolved_image_path(manifest_dir)))
        .collect()
}

// ---- stage bodies ----------------------------------------------------------

fn exec_synth(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = config
        .synth
        .as_ref()
        .ok_or_else(|| anyhow!("no [synth] section in config"))?;
    let paths = generate_dataset(spec, &dataset_dir(run_dir))?;
    Ok(vec![
        paths.catalog,
        paths.train_manifest,
        paths.val_single_manifest,
        paths.val_multi_manifest,
    ])
}

fn exec_retrieve(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let catalog = load_catalog(config, run_dir)?;
    if config.retrieval.k_groups > catalog.num_foreground() {
        bail!(
            "retrieval.k_groups = {} exceeds the {} catalog categories",
            config.retrieval.k_groups,
            catalog.num_foreground()
        );
    }
    let (_records, source, _) = load_collection(config, run_dir, &catalog)?;
    let provider = OracleEmbeddingProvider;
    let templates = match &config.paths.templates {
        Some(path) => load_templates(path)?,
        None => default_templates(),
    };

    std::fs::create_dir_all(archives_dir(run_dir))?;
    let cache = embeddings_cache_path(run_dir);
    let store = embed_collection(&source, &provider, Some(&cache))?;

    let mut text_embeddings: Vec<EmbeddingVector> = Vec::new();
    let mut artifacts = vec![cache];
    for (idx, entry) in catalog.iter() {
        let text = ensemble_prompts(&templates, entry.retrieval_text(), &provider)?;
        let archive = build_archive(&store, &text, config.retrieval.archive_k, idx)?;
        let path = archive_path(run_dir, idx);
        archive.write_to(&path)?;
        artifacts.push(path);
        text_embeddings.push(text);
    }

    let groups = group_categories(&text_embeddings, config.retrieval.k_groups, config.seed)?;
    let gpath = groups_path(run_dir);
    std::fs::write(&gpath, serde_json::to_string_pretty(&groups)?)?;
    artifacts.push(gpath);
    Ok(artifacts)
}

fn exec_pseudolabel(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let catalog = load_catalog(config, run_dir)?;
    let (records, source, manifest_dir) = load_collection(config, run_dir, &catalog)?;
    let archives = load_archives(config, run_dir, &catalog)?;
    let provider = OracleSaliencyProvider {
        noise: config.saliency.noise.as_ref().map(|n| SaliencyNoiseSpec {
            radius: n.radius,
            speckle_prob: n.speckle_prob,
            seed: config.seed,
        }),
    };

    let mut all_records = Vec::new();
    for archive in &archives {
        let mut outcomes = generate_saliency(archive, &source, &provider)?;
        if config.saliency.refine_strength > 0.0 {
            outcomes = archive
                .entries
                .par_iter()
                .zip(outcomes)
                .map(|(entry, outcome)| match outcome {
                    SaliencyOutcome::Mask(mask) => {
                        let sample = source.get(&entry.image_id)?;
                        let refined =
                            refine_edges(&sample, &mask, config.saliency.refine_strength as f32)?;
                        if refined.is_empty_foreground() {
                            Ok(SaliencyOutcome::Empty)
                        } else {
                            Ok(SaliencyOutcome::Mask(refined))
                        }
                    }
                    other => Ok(other),
                })
                .collect::<segdistill_core::Result<Vec<_>>>()?;
        }
        all_records.extend(label_archive(archive, &outcomes)?);
    }

    persist_pseudo_records(
        run_dir,
        Provenance::Saliency,
        &all_records,
        &catalog,
        &image_path_map(&records, &manifest_dir),
    )
}

fn exec_experts(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let catalog = load_catalog(config, run_dir)?;
    let (records, source, manifest_dir) = load_collection(config, run_dir, &catalog)?;
    let archives = load_archives(config, run_dir, &catalog)?;
    let groups = load_groups(run_dir)?;
    let saliency = load_pseudo_records(run_dir, Provenance::Saliency, &catalog)?;

    let mut artifacts = Vec::new();
    let mut refined_records = Vec::new();
    for group in &groups {
        let group_records: Vec<PseudoLabelRecord> = saliency
            .iter()
            .filter(|r| group.member_category_indices.contains(&r.category_index))
            .cloned()
            .collect();
        let (expert, train_log) =
            train_expert(group, &group_records, &source, &config.expert_train)?;
        let expert_dir = run_dir.join("experts").join(format!("group_{:02}", group.group_id));
        expert.save(&expert_dir)?;
        std::fs::write(expert_dir.join("train_log.jsonl"), log_to_jsonl(&train_log))?;
        artifacts.push(expert_dir);

        for archive in archives
            .iter()
            .filter(|a| group.member_category_indices.contains(&a.category_index))
        {
            refined_records.extend(refine_masks(&expert, archive, &source)?);
        }
    }

    let mut persisted = persist_pseudo_records(
        run_dir,
        Provenance::Expert,
        &refined_records,
        &catalog,
        &image_path_map(&records, &manifest_dir),
    )?;
    artifacts.append(&mut persisted);
    Ok(artifacts)
}

fn exec_distill(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let catalog = load_catalog(config, run_dir)?;
    let (_records, source, _) = load_collection(config, run_dir, &catalog)?;
    let provenance = match config.distill.pseudo_source {
        PseudoSource::Expert => Provenance::Expert,
        PseudoSource::Saliency => Provenance::Saliency,
    };
    let corpus = load_pseudo_records(run_dir, provenance, &catalog)?;
    let (model, train_log) = train_segmenter(&corpus, &catalog, &source, &config.distill.train)?;

    let model_dir = distill_model_dir(run_dir);
    model.save(&model_dir)?;
    let log_path = run_dir.join("distill").join("train_log.jsonl");
    std::fs::write(&log_path, log_to_jsonl(&train_log))?;
    Ok(vec![model_dir, log_path])
}

/// Prediction results for one validation split.
struct SplitEval {
    accumulator: ConfusionAccumulator,
    pairs: Vec<(LabelMask, LabelMask)>,
    softs: Vec<SoftPrediction>,
}

fn evaluate_split(
    model: &TrainedSegmenter,
    manifest_path: &Path,
    catalog: &CategoryCatalog,
    config: &RunConfig,
) -> Result<Option<SplitEval>> {
    if !manifest_path.is_file() {
        return Ok(None);
    }
    let records = load_manifest(manifest_path)?;
    if records.is_empty() {
        return Ok(None);
    }
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let source = ManifestImageSource::load(&records, &dir, Some(catalog.num_classes()))?;

    let results: Vec<(LabelMask, LabelMask, SoftPrediction)> = records
        .par_iter()
        .map(|rec| {
            let sample = source.get(&rec.id)?;
            let gt = sample
                .gt_mask
                .clone()
                .ok_or_else(|| segdistill_core::Error::InvalidArgument(format!(
                    "validation record {} has no ground-truth mask",
                    rec.id
                )))?;
            let (pred, soft) = predict(model, &sample.pixels, config.eval.resize_policy)?;
            Ok((pred, gt, soft))
        })
        .collect::<segdistill_core::Result<_>>()?;

    let mut accumulator = ConfusionAccumulator::new(catalog.num_classes());
    let mut pairs = Vec::with_capacity(results.len());
    let mut softs = Vec::with_capacity(results.len());
    for (pred, gt, soft) in results {
        accumulator.accumulate(&pred, &gt)?;
        pairs.push((pred, gt));
        softs.push(soft);
    }
    Ok(Some(SplitEval {
        accumulator,
        pairs,
        softs,
    }))
}

fn report_for(
    split: &SplitEval,
    catalog: &CategoryCatalog,
    config: &RunConfig,
    with_strata: bool,
) -> Result<EvalReport> {
    let iou = split.accumulator.iou_report(config.eval.include_background)?;
    let strata = if with_strata {
        let refs: Vec<(&LabelMask, &LabelMask)> =
            split.pairs.iter().map(|(p, g)| (p, g)).collect();
        Some(size_stratified_miou(
            &refs,
            config.eval.strata_cuts,
            catalog.num_classes(),
        )?)
    } else {
        None
    };
    Ok(EvalReport {
        per_class_iou: iou.per_class_iou,
        miou: iou.miou,
        strata_miou: strata,
        config: EvalConfigEcho {
            num_classes: catalog.num_classes(),
            include_background: config.eval.include_background,
            strata_cuts: with_strata.then_some(config.eval.strata_cuts),
            note: with_strata.then(|| {
                "size strata cut points are configurable defaults, not benchmark-defined".into()
            }),
        },
    })
}

/// Foreground-only scores for background thresholding: drop the background
/// column and renormalize.
fn foreground_soft(soft: &SoftPrediction) -> Result<SoftPrediction> {
    let (h, w, k) = soft.scores().dim();
    let mut fg = Array3::zeros((h, w, k - 1));
    for y in 0..h {
        for x in 0..w {
            let sum: f32 = (1..k).map(|c| soft.scores()[(y, x, c)]).sum();
            let sum = sum.max(1e-12);
            for c in 1..k {
                fg[(y, x, c - 1)] = soft.scores()[(y, x, c)] / sum;
            }
        }
    }
    Ok(SoftPrediction::new(fg)?)
}

fn exec_eval(config: &RunConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let catalog = load_catalog(config, run_dir)?;
    let model = TrainedSegmenter::load(&distill_model_dir(run_dir))?;
    let eval_dir = run_dir.join("eval");
    std::fs::create_dir_all(&eval_dir)?;

    let single = evaluate_split(&model, &val_single_path(config, run_dir), &catalog, config)?;
    let multi = evaluate_split(&model, &val_multi_path(config, run_dir), &catalog, config)?;
    if single.is_none() && multi.is_none() {
        bail!("no validation manifests found; supply paths.val_single_manifest or run synth");
    }

    let mut artifacts = Vec::new();
    let mut combined = ConfusionAccumulator::new(catalog.num_classes());
    if let Some(split) = &single {
        let report = report_for(split, &catalog, config, true)?;
        let path = eval_report_path(run_dir, "single");
        report.write_to(&path)?;
        artifacts.push(path);
        combined.merge(&split.accumulator)?;
    }
    if let Some(split) = &multi {
        let report = report_for(split, &catalog, config, false)?;
        let path = eval_report_path(run_dir, "multi");
        report.write_to(&path)?;
        artifacts.push(path);
        combined.merge(&split.accumulator)?;
    }
    let all_iou = combined.iou_report(config.eval.include_background)?;
    let all_report = EvalReport {
        per_class_iou: all_iou.per_class_iou,
        miou: all_iou.miou,
        strata_miou: None,
        config: EvalConfigEcho {
            num_classes: catalog.num_classes(),
            include_background: config.eval.include_background,
            strata_cuts: None,
            note: None,
        },
    };
    let all_path = eval_report_path(run_dir, "all");
    all_report.write_to(&all_path)?;
    artifacts.push(all_path);

    if config.eval.threshold_sweep {
        if let Some(split) = &single {
            let fg_softs: Vec<SoftPrediction> = split
                .softs
                .iter()
                .map(foreground_soft)
                .collect::<Result<_>>()?;
            let gts: Vec<LabelMask> = split.pairs.iter().map(|(_, g)| g.clone()).collect();
            let (best_t, curve) = sweep_threshold(&fg_softs, &gts, &default_threshold_grid())?;
            let mut out = format!("# best_t = {best_t}\n");
            for (t, miou) in curve {
                out.push_str(&format!("{t}\t{miou}\n"));
            }
            let curve_path = eval_dir.join("threshold_curve.tsv");
            std::fs::write(&curve_path, out)?;
            artifacts.push(curve_path);
        }
    }
    Ok(artifacts)
}
