//! Run configuration: a TOML file with one section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneSpec;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::evo::EvoConfig;
use crate::objectives::DaLossConfig;
use crate::space::SpaceParams;

/// Environment variable that overrides `search.master_seed`.
pub const SEED_ENV: &str = "EVOADA_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSearchConfig {
    /// Training epochs given to each sampled genome.
    pub epochs_per_candidate: usize,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        RandomSearchConfig {
            epochs_per_candidate: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub seeds: Vec<u64>,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            epochs: 20,
            seeds: vec![101, 202, 303],
        }
    }
}

/// Settings shared by the rank-correlation and histogram studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Genomes sampled for the rank-correlation study.
    pub rank_genomes: usize,
    /// Genomes sampled for the accuracy histogram.
    pub histogram_genomes: usize,
    /// Training epochs per genome.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            rank_genomes: 30,
            histogram_genomes: 50,
            epochs: 20,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceParams,
    pub backbone: BackboneSpec,
    pub training: DaLossConfig,
    pub search: EvoConfig,
    pub dataset: DatasetSpec,
    pub random_search: RandomSearchConfig,
    pub retrain: RetrainConfig,
    pub study: StudyConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML. Errors carry the line, column and offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// Applies `section.key=value` overrides. Values are read as TOML and
    /// fall back to plain strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not section.key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key {path:?} is not section.key")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("unknown section {section:?}")))?
                .insert(key.to_string(), value);
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        *self = RunConfig::parse(&text).map_err(|e| Error::Config(format!("override: {e}")))?;
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.search.master_seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Section checks plus cross-section consistency.
    pub fn check(&self) -> Result<()> {
        self.space.check()?;
        self.backbone.check()?;
        self.training.check()?;
        self.search.check()?;
        self.dataset.check()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.space.num_slots != self.backbone.num_slots() {
            return bad(format!(
                "space.num_slots = {} but the backbone has {} slots",
                self.space.num_slots,
                self.backbone.num_slots()
            ));
        }
        if self.backbone.num_classes != self.dataset.num_classes {
            return bad(format!(
                "backbone.num_classes = {} but dataset.num_classes = {}",
                self.backbone.num_classes, self.dataset.num_classes
            ));
        }
        if self.backbone.input_channels != 1
            || self.backbone.input_height != self.dataset.height
            || self.backbone.input_width != self.dataset.width
        {
            return bad("backbone input must be 1×height×width of the dataset".into());
        }
        if self.random_search.epochs_per_candidate == 0 || self.retrain.epochs == 0 || self.study.epochs == 0 {
            return bad("epoch counts must be ≥ 1".into());
        }
        if self.retrain.seeds.is_empty() {
            return bad("retrain.seeds must not be empty".into());
        }
        Ok(())
    }

    /// Total training epochs of one evolutionary run.
    pub fn search_budget(&self) -> u64 {
        (self.search.population * self.search.generations * self.training.epochs_per_generation) as u64
    }
}
