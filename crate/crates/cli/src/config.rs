//! Run configuration: a TOML file with one section per pipeline stage.
//!
//! The global `seed` is propagated into every stage config when the file is
//! loaded, and the fully-resolved config is echoed into the run directory so
//! runs are self-describing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segdistill_core::distill::{ResizePolicy, TrainConfig};
use segdistill_core::synth::SynthSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Run directory; all stage outputs land here.
    pub output_dir: PathBuf,
    /// Unlabelled collection manifest. Defaults to the synth stage's output.
    pub collection_manifest: Option<PathBuf>,
    /// Category catalog file. Defaults to the synth stage's output.
    pub catalog: Option<PathBuf>,
    /// Prompt template file. Defaults to the vendored 85-entry list.
    pub templates: Option<PathBuf>,
    /// Single-object validation manifest. Defaults to the synth stage's output.
    pub val_single_manifest: Option<PathBuf>,
    /// Multi-object validation manifest. Defaults to the synth stage's output.
    pub val_multi_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// `oracle` is the only built-in; external adapters plug in behind the
    /// same interface.
    pub kind: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Images per category archive (top-k).
    pub archive_k: usize,
    /// Number of expert groups for k-means over text embeddings.
    pub k_groups: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            archive_k: 500,
            k_groups: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyNoiseConfig {
    pub radius: usize,
    pub speckle_prob: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyConfig {
    /// Edge-aware refinement strength; 0 disables refinement.
    pub refine_strength: f64,
    /// Deterministic mask corruption (testing the refinement claim).
    pub noise: Option<SaliencyNoiseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoSource {
    /// Train the distilled model on expert-refined masks (default).
    Expert,
    /// Train directly on saliency masks (archive-size ablation setting).
    Saliency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub pseudo_source: PseudoSource,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            pseudo_source: PseudoSource::Expert,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub include_background: bool,
    pub strata_cuts: (f64, f64, f64),
    pub resize_policy: ResizePolicy,
    /// Also sweep a background threshold over the model's foreground scores
    /// and emit the (t, mIoU) curve.
    pub threshold_sweep: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            include_background: true,
            strata_cuts: (0.01, 0.1, 0.5),
            resize_policy: ResizePolicy::None,
            threshold_sweep: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub provider: ProviderConfig,
    /// Synthetic dataset spec; omit when supplying an external collection.
    pub synth: Option<SynthSpec>,
    pub retrieval: RetrievalConfig,
    pub saliency: SaliencyConfig,
    /// Schedule for category experts (lighter than distillation).
    pub expert_train: TrainConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            provider: ProviderConfig::default(),
            synth: None,
            retrieval: RetrievalConfig::default(),
            saliency: SaliencyConfig::default(),
            expert_train: TrainConfig {
                max_iterations: 500,
                copy_paste_enabled: false,
                ..TrainConfig::default()
            },
            distill: DistillConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        config.propagate_seed();
        Ok(config)
    }

    /// Pushes the global seed into every stage config.
    pub fn propagate_seed(&mut self) {
        if let Some(synth) = &mut self.synth {
            synth.seed = self.seed;
        }
        self.expert_train.seed = self.seed;
        self.distill.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.output_dir.as_os_str().is_empty() {
            bail!("paths.output_dir is required");
        }
        if self.provider.kind != "oracle" {
            bail!(
                "provider kind {:?} is not available; only \"oracle\" is built in",
                self.provider.kind
            );
        }
        if self.synth.is_none() && self.paths.collection_manifest.is_none() {
            bail!("either a [synth] section or paths.collection_manifest is required");
        }
        if let Some(spec) = &self.synth {
            spec.validate()
                .map_err(|e| anyhow::anyhow!("invalid [synth]: {e}"))?;
        }
        for (name, p) in [
            ("collection_manifest", &self.paths.collection_manifest),
            ("catalog", &self.paths.catalog),
            ("templates", &self.paths.templates),
            ("val_single_manifest", &self.paths.val_single_manifest),
            ("val_multi_manifest", &self.paths.val_multi_manifest),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("paths.{name} does not exist: {}", p.display());
                }
            }
        }
        if self.retrieval.archive_k == 0 {
            bail!("retrieval.archive_k must be >= 1");
        }
        if self.retrieval.k_groups == 0 {
            bail!("retrieval.k_groups must be >= 1");
        }
        self.expert_train
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid [expert_train]: {e}"))?;
        self.distill
            .train
            .validate()
            .map_err(|e| anyhow::anyhow!("invalid [distill.train]: {e}"))?;
        let cuts = self.eval.strata_cuts;
        if !(cuts.0 > 0.0 && cuts.0 < cuts.1 && cuts.1 < cuts.2 && cuts.2 < 1.0) {
            bail!("eval.strata_cuts must be ascending in (0, 1)");
        }
        if let Some(noise) = &self.saliency.noise {
            if !(0.0..=1.0).contains(&noise.speckle_prob) {
                bail!("saliency.noise.speckle_prob must be in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Echoes the resolved config into the run directory.
    pub fn write_echo(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join("config.toml");
        std::fs::write(&path, self.to_toml())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn hash_json<T: Serialize>(value: &T, upstream: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(value).expect("subset serializes"));
    for u in upstream {
        hasher.update(u.as_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Retrieve,
    Pseudolabel,
    Experts,
    Distill,
    Eval,
}

pub const ALL_STAGES: [Stage; 6] = [
    Stage::Synth,
    Stage::Retrieve,
    Stage::Pseudolabel,
    Stage::Experts,
    Stage::Distill,
    Stage::Eval,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Retrieve => "retrieve",
            Stage::Pseudolabel => "pseudolabel",
            Stage::Experts => "experts",
            Stage::Distill => "distill",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this stage reads, under the given config.
    pub fn dependencies(self, config: &RunConfig) -> Vec<Stage> {
        let needs_synth = config.synth.is_some() && config.paths.collection_manifest.is_none();
        match self {
            Stage::Synth => vec![],
            Stage::Retrieve => {
                if needs_synth {
                    vec![Stage::Synth]
                } else {
                    vec![]
                }
            }
            Stage::Pseudolabel => vec![Stage::Retrieve],
            Stage::Experts => vec![Stage::Pseudolabel],
            Stage::Distill => match config.distill.pseudo_source {
                PseudoSource::Expert => vec![Stage::Experts],
                PseudoSource::Saliency => vec![Stage::Pseudolabel],
            },
            Stage::Eval => vec![Stage::Distill],
        }
    }

    /// Caching key: hash of the stage's config subset chained with its
    /// dependencies' hashes.
    pub fn config_hash(self, config: &RunConfig) -> String {
        let upstream: Vec<String> = self
            .dependencies(config)
            .iter()
            .map(|d| d.config_hash(config))
            .collect();
        let upstream_refs: Vec<&str> = upstream.iter().map(String::as_str).collect();
        match self {
            Stage::Synth => hash_json(&(&config.synth, config.seed), &upstream_refs),
            Stage::Retrieve => hash_json(
                &(
                    &config.retrieval,
                    &config.provider.kind,
                    &config.paths.collection_manifest,
                    &config.paths.catalog,
                    &config.paths.templates,
                    config.seed,
                ),
                &upstream_refs,
            ),
            Stage::Pseudolabel => hash_json(&(&config.saliency, config.seed), &upstream_refs),
            Stage::Experts => hash_json(&(&config.expert_train, config.seed), &upstream_refs),
            Stage::Distill => hash_json(&(&config.distill, config.seed), &upstream_refs),
            Stage::Eval => hash_json(
                &(
                    &config.eval,
                    &config.paths.val_single_manifest,
                    &config.paths.val_multi_manifest,
                ),
                &upstream_refs,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml(dir: &Path) -> String {
        format!(
            r#"
seed = 7

[paths]
output_dir = "{}"

[synth]
num_categories = 3
images_per_category = 4
"#,
            dir.display()
        )
    }

    #[test]
    fn load_propagates_seed_into_stages() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::load(&cfg_path, None).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.synth.as_ref().unwrap().seed, 7);
        assert_eq!(config.distill.train.seed, 7);
        assert_eq!(config.expert_train.seed, 7);
        config.validate().unwrap();
    }

    #[test]
    fn seed_override_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::load(&cfg_path, Some(99)).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.synth.as_ref().unwrap().seed, 99);
    }

    #[test]
    fn unknown_provider_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(
            &cfg_path,
            minimal_toml(dir.path()) + "\n[provider]\nkind = \"clip\"\n",
        )
        .unwrap();
        let config = RunConfig::load(&cfg_path, None).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn stage_hash_changes_with_config_and_chains_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let a = RunConfig::load(&cfg_path, None).unwrap();
        let mut b = a.clone();
        b.retrieval.archive_k = 123;
        assert_ne!(Stage::Retrieve.config_hash(&a), Stage::Retrieve.config_hash(&b));
        // downstream hashes change too (chained)
        assert_ne!(Stage::Distill.config_hash(&a), Stage::Distill.config_hash(&b));
        // synth unaffected by retrieval settings
        assert_eq!(Stage::Synth.config_hash(&a), Stage::Synth.config_hash(&b));
    }

    #[test]
    fn distill_dependency_follows_pseudo_source() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let mut config = RunConfig::load(&cfg_path, None).unwrap();
        assert_eq!(Stage::Distill.dependencies(&config), vec![Stage::Experts]);
        config.distill.pseudo_source = PseudoSource::Saliency;
        assert_eq!(
            Stage::Distill.dependencies(&config),
            vec![Stage::Pseudolabel]
        );
    }

    #[test]
    fn config_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.toml");
        std::fs::write(&cfg_path, minimal_toml(dir.path())).unwrap();
        let config = RunConfig::load(&cfg_path, None).unwrap();
        config.write_echo(dir.path()).unwrap();
        let back = RunConfig::load(&dir.path().join("config.toml"), None).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.retrieval.archive_k, config.retrieval.archive_k);
    }
}
