use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{corrupt, CorruptionKind, CorruptionSpec, SeverityTable, SEVERITIES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{load_split, save_cloud, DatasetManifest};
use crate::rng::StreamKey;

pub const SUITE_MANIFEST_FILE: &str = "suite.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSample {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Relative to the suite root.
    pub dir: PathBuf,
    pub samples: Vec<SuiteSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    /// Path of the source dataset as given when the suite was built.
    pub dataset: PathBuf,
    pub dataset_seed: u64,
    pub base_seed: u64,
    pub severity_table: SeverityTable,
    pub cells: Vec<SuiteCell>,
}

impl SuiteManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(SUITE_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn cell(&self, kind: CorruptionKind, severity: u8) -> Option<&SuiteCell> {
        self.cells.iter().find(|c| c.kind == kind && c.severity == severity)
    }

    /// Every (kind, severity) pair present exactly once.
    pub fn is_complete(&self) -> bool {
        self.cells.len() == CorruptionKind::ALL.len() * SEVERITIES
            && CorruptionKind::ALL.iter().all(|&k| {
                (1..=SEVERITIES as u8).all(|s| self.cells.iter().filter(|c| c.kind == k && c.severity == s).count() == 1)
            })
    }
}

/// Per-sample corruption seed.
pub fn sample_seed(base_seed: u64, kind: CorruptionKind, severity: u8, sample_id: &str) -> u64 {
    StreamKey::new(base_seed).with(kind.index() as u64).with(severity as u64).with_str(sample_id).seed()
}

/// Corrupt the dataset's test split into `<out>/<kind>_<severity>/<id>.pcb`.
///
/// `cells = None` builds all 35 cells.
pub fn build_suite(
    dataset_root: &Path,
    base_seed: u64,
    out: &Path,
    cells: Option<&[(CorruptionKind, u8)]>,
    exec: Exec,
) -> Result<SuiteManifest> {
    let manifest = DatasetManifest::load(dataset_root)?;
    let clouds = load_split(dataset_root, &manifest, "test")?;
    let all: Vec<(CorruptionKind, u8)> = CorruptionKind::ALL
        .iter()
        .flat_map(|&k| (1..=SEVERITIES as u8).map(move |s| (k, s)))
        .collect();
    let wanted = cells.unwrap_or(&all);

    let mut out_cells = Vec::with_capacity(wanted.len());
    for &(kind, severity) in wanted {
        let dir = PathBuf::from(kind.cell_name(severity));
        let samples = exec.try_map(&clouds, |pc| -> Result<SuiteSample> {
            let seed = sample_seed(base_seed, kind, severity, &pc.id);
            let corrupted = corrupt(pc, &CorruptionSpec::new(kind, severity, seed)?)?;
            save_cloud(&out.join(&dir).join(format!("{}.pcb", pc.id)), &corrupted)?;
            Ok(SuiteSample { id: pc.id.clone(), seed })
        })?;
        out_cells.push(SuiteCell { kind, severity, dir, samples });
    }
    let suite = SuiteManifest {
        dataset: dataset_root.to_path_buf(),
        dataset_seed: manifest.seed,
        base_seed,
        severity_table: SeverityTable::default(),
        cells: out_cells,
    };
    let path = out.join(SUITE_MANIFEST_FILE);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(&path, serde_json::to_string_pretty(&suite)?).map_err(|e| Error::io(&path, e))?;
    Ok(suite)
}
