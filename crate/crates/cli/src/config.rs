use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use salm::baselines::{ForestConfig, SupervisedConfig, TfidfConfig, DEFAULT_K};
use salm::corpus::{default_classes, CorpusFormat, LoadOptions, VulnClass, DEFAULT_MAX_PAYLOAD_BYTES};
use salm::pipeline::{ModelConfig, StageConfig};
use salm::retrieve::HnswParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Guessed from the extension when absent.
    #[serde(default)]
    pub format: Option<CorpusFormat>,
    /// JSON list of `{id, name, generic_label}`; the built-in table when absent.
    #[serde(default)]
    pub classes: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_max_bytes")]
    pub max_payload_bytes: usize,
}

fn default_max_bytes() -> usize {
    DEFAULT_MAX_PAYLOAD_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    Temporal { cutoff: NaiveDate },
    Stratified { test_fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tfidf: TfidfConfig,
    pub forest: ForestConfig,
    pub forest_seed: u64,
    pub supervised: SupervisedConfig,
    pub knn_k: usize,
    pub hnsw: HnswParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            tfidf: TfidfConfig::default(),
            forest: ForestConfig::default(),
            forest_seed: 0,
            supervised: SupervisedConfig::default(),
            knn_k: DEFAULT_K,
            hnsw: HnswParams::default(),
        }
    }
}

fn stage2_default() -> StageConfig {
    StageConfig::stage2()
}

/// Partial stage-2 sections fill in from the stage-2 preset rather than the
/// stage-1 one.
fn stage2_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> Result<StageConfig, D::Error> {
    use serde::de::Error;
    let given = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(StageConfig::stage2()).map_err(D::Error::custom)?;
    merge(&mut base, given);
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Everything one experiment needs. Relative paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub stage1: StageConfig,
    #[serde(default = "stage2_default", deserialize_with = "stage2_over_defaults")]
    pub stage2: StageConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset.path);
        if let Some(c) = config.dataset.classes.as_mut() {
            resolve(c);
        }
        resolve(&mut config.output_dir);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if let SplitConfig::Stratified { test_fraction, .. } = self.split {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                bail!("split.stratified.test_fraction must lie in (0, 1), got {test_fraction}");
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> Result<Vec<VulnClass>> {
        match &self.dataset.classes {
            None => Ok(default_classes()),
            Some(p) => {
                let raw = fs::read_to_string(p).with_context(|| format!("cannot read class table {}", p.display()))?;
                serde_json::from_str(&raw).with_context(|| format!("invalid class table {}", p.display()))
            }
        }
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            classes: self.classes()?,
            strict: self.dataset.strict,
            max_payload_bytes: self.dataset.max_payload_bytes,
            provenance: None,
        })
    }

    pub fn format(&self) -> CorpusFormat {
        self.dataset
            .format
            .unwrap_or_else(|| CorpusFormat::from_path(&self.dataset.path))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(crate::manifest::sha256_hex(serde_json::to_string(&value)?.as_bytes()))
    }
}
