use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gen_shape, load_cloud, save_cloud, PointCloud, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::StreamKey;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { seed: 0, train_per_class: 100, test_per_class: 20, points: 256 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points < super::MIN_POINTS {
            return Err(Error::Config(format!(
                "points = {} is below the minimum of {}",
                self.points,
                super::MIN_POINTS
            )));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("every split needs at least one sample per class".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub label: u32,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: u64,
    pub points: usize,
    pub train: Vec<SampleEntry>,
    pub test: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&[SampleEntry]> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train or test)"))),
        }
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate().map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in self.train.iter().chain(&self.test) {
            if !seen.insert(&e.id) {
                return Err(Error::Contract(format!("duplicate sample id {}", e.id)));
            }
            if e.label as usize >= self.classes.len() {
                return Err(Error::Contract(format!("label {} of {} out of range", e.label, e.id)));
            }
        }
        Ok(())
    }
}

/// Generate both splits under `out` and write the manifest.
pub fn generate_dataset(out: &Path, cfg: &DatasetConfig, exec: Exec) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut manifest = DatasetManifest {
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: cfg.seed,
        points: cfg.points,
        train: Vec::new(),
        test: Vec::new(),
    };
    for (split, per_class) in [("train", cfg.train_per_class), ("test", cfg.test_per_class)] {
        let jobs: Vec<(usize, usize)> =
            (0..CLASS_NAMES.len()).flat_map(|c| (0..per_class).map(move |i| (c, i))).collect();
        let entries = exec.try_map(&jobs, |&(class, idx)| -> Result<SampleEntry> {
            let seed = StreamKey::new(cfg.seed).with_str(split).with(class as u64).with(idx as u64).seed();
            let id = format!("{split}_{}_{idx:04}", CLASS_NAMES[class]);
            let mut pc = gen_shape(class, seed, cfg.points)?;
            pc.id = id.clone();
            let rel = PathBuf::from(split).join(format!("{id}.pcb"));
            save_cloud(&out.join(&rel), &pc)?;
            Ok(SampleEntry { id, label: class as u32, path: rel })
        })?;
        match split {
            "train" => manifest.train = entries,
            _ => manifest.test = entries,
        }
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_split(root: &Path, manifest: &DatasetManifest, split: &str) -> Result<Vec<PointCloud>> {
    manifest
        .split(split)?
        .iter()
        .map(|e| {
            let path = root.join(&e.path);
            let mut pc = load_cloud(&path)?;
            if pc.label != e.label {
                return Err(Error::format(&path, format!("label {} disagrees with manifest {}", pc.label, e.label)));
            }
            pc.id = e.id.clone();
            Ok(pc)
        })
        .collect()
}
