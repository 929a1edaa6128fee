//! Helpers shared by the subcommands: run directories, JSON configs, cohort
//! loading and file digests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use statenet::data::{io::MANIFEST_FILE, load_cohort, window_cohort, EegWindow, Montage, Recording, WindowConfig};
use statenet::diff::checkpoint::digest;

pub const RUNS_ENV: &str = "STATENET_RUNS_DIR";

/// `$STATENET_RUNS_DIR/<name>`, or `runs/<name>` when the variable is unset.
pub fn default_run_dir(name: &str) -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(name)
}

/// Parses a JSON config; unknown keys are rejected by the target type.
pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts a cohort directory or its manifest file.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

pub struct Cohort {
    pub recordings: Vec<Recording>,
    pub montage: Montage,
}

impl Cohort {
    pub fn load(data: &Path) -> Result<Self> {
        let path = manifest_path(data);
        let (_, recordings) = load_cohort(&path).with_context(|| format!("loading cohort {}", path.display()))?;
        let Some(first) = recordings.first() else {
            bail!("cohort {} has no recordings", path.display());
        };
        let montage = first.montage.clone();
        if let Some(r) = recordings.iter().find(|r| r.montage.channels != montage.channels) {
            bail!("recording {} uses a different montage than {}", r.id, first.id);
        }
        Ok(Self {
            recordings,
            montage,
        })
    }

    /// Fails unless the cohort's channels are exactly those of `preset`.
    pub fn expect_montage(&self, preset: &str) -> Result<()> {
        let want = Montage::preset(preset)?;
        if want.channels != self.montage.channels {
            bail!(
                "montage mismatch: requested {} ({} channels) but the cohort has {} ({} channels)",
                want.name,
                want.len(),
                self.montage.name,
                self.montage.len()
            );
        }
        Ok(())
    }

    pub fn neonates(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.recordings.iter().map(|r| r.neonate_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn windows(&self, cfg: &WindowConfig) -> Result<Vec<EegWindow>> {
        Ok(window_cohort(&self.recordings, cfg)?)
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(digest(&bytes))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
