use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// A JSON artifact carrying the identity of the run that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Files written by each stage, relative to the output directory.
    pub stages: BTreeMap<String, Vec<String>>,
}

/// Output directory of one configured run.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub config: PipelineConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl RunDir {
    /// Creates the directory and echoes the effective config into it.
    pub fn open(config: PipelineConfig) -> Result<Self> {
        let dir = config.paths.output.clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating output dir {}", dir.display()))?;
        let run = Self { hash: config.hash(), config, dir };
        run.write_text(CONFIG_FILE, &run.config.to_toml()?)?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_file(&self.path(name), text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let stamped = Stamped { config_hash: self.hash.clone(), seed: self.config.seed, body };
        let mut text = serde_json::to_string_pretty(&stamped)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn read_text(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        fs::read_to_string(&path).with_context(|| format!("reading {}; run the earlier stage first", path.display()))
    }

    /// Records a finished stage. A manifest left by a different config is
    /// replaced rather than merged.
    pub fn record(&self, stage: &str, files: &[&str]) -> Result<()> {
        let mut manifest = fs::read_to_string(self.path(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| m.config_hash == self.hash && m.seed == self.config.seed)
            .unwrap_or_else(|| Manifest {
                config_hash: self.hash.clone(),
                seed: self.config.seed,
                version: env!("CARGO_PKG_VERSION").into(),
                stages: BTreeMap::new(),
            });
        let mut listed: Vec<String> = files.iter().map(|f| f.to_string()).collect();
        listed.push(CONFIG_FILE.into());
        manifest.stages.insert(stage.into(), listed);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        self.write_text(MANIFEST_FILE, &text)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
