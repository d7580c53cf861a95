//! TOML run configuration for `train`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maskcap::dataset::{load_samples, RegionCaptionSample, SourceRegistry, SourceSpec, STAGE2_SOURCES};
use maskcap::encoders::RgbImage;
use maskcap::model::ModelConfig;
use maskcap::training::{OptimizerConfig, TrainingData};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    /// Optional JSON parameter file overlaid on the fresh stage-1 model.
    #[serde(default)]
    pub init_weights: Option<PathBuf>,
    pub sources: Vec<SourceSpec>,
    /// Stage-2 sources; defaults to the registered region sources.
    #[serde(default)]
    pub stage2_sources: Option<Vec<String>>,
    #[serde(default)]
    pub stage1: OptimizerConfig,
    #[serde(default)]
    pub stage2: OptimizerConfig,
    #[serde(default)]
    pub stage3: OptimizerConfig,
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| maskcap::error::Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sources {
            if let Some(p) = &s.path {
                s.path = Some(base.join(p));
            }
        }
        if let Some(w) = &cfg.init_weights {
            cfg.init_weights = Some(base.join(w));
        }
        cfg.model.validate()?;
        if cfg.sources.is_empty() {
            return Err(maskcap::error::Error::Config("config lists no sources".into()).into());
        }
        Ok(cfg)
    }

    pub fn optimizer(&self, stage: u8) -> &OptimizerConfig {
        match stage {
            1 => &self.stage1,
            2 => &self.stage2,
            _ => &self.stage3,
        }
    }

    pub fn registry(&self) -> SourceRegistry {
        let mut r = SourceRegistry::default();
        for s in &self.sources {
            r.insert(s.clone());
        }
        r
    }

    pub fn stage2_list(&self) -> Vec<String> {
        match &self.stage2_sources {
            Some(list) => list.clone(),
            None => STAGE2_SOURCES
                .iter()
                .filter(|n| self.sources.iter().any(|s| s.name == **n))
                .map(|n| n.to_string())
                .collect(),
        }
    }

    pub fn data_files(&self) -> Vec<PathBuf> {
        self.sources.iter().filter_map(|s| s.path.clone()).collect()
    }
}

/// Loads every source with a path. Image paths are rewritten to resolved
/// paths so that sources in different directories cannot collide.
pub fn load_training_data(cfg: &RunConfig) -> Result<(TrainingData, Vec<PathBuf>)> {
    let mut sources: BTreeMap<String, Vec<RegionCaptionSample>> = BTreeMap::new();
    let mut images: HashMap<String, RgbImage> = HashMap::new();
    let mut image_files = Vec::new();
    for spec in &cfg.sources {
        let Some(path) = &spec.path else {
            continue;
        };
        let mut samples = load_samples(path)
            .with_context(|| format!("reading {}", path.display()))?
            .into_strict()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut samples {
            let file = base.join(&s.image_path);
            let key = file.to_string_lossy().into_owned();
            if !images.contains_key(&key) {
                let img = RgbImage::load(&file).with_context(|| format!("loading image {}", file.display()))?;
                images.insert(key.clone(), img);
                image_files.push(file);
            }
            s.image_path = key;
        }
        sources.insert(spec.name.clone(), samples);
    }
    if sources.is_empty() {
        bail!(maskcap::error::Error::Config("no source has a path".into()));
    }
    Ok((TrainingData { sources, images }, image_files))
}
