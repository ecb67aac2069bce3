//! CSV manifests for clean corpora, noise pools and augmented sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row of a clean corpus manifest: `path,speaker,label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanEntry {
    pub path: PathBuf,
    pub speaker: String,
    pub label: String,
}

impl CleanEntry {
    /// Utterance id: the file stem.
    pub fn id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

/// Row of a noise pool manifest: `path,id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub path: PathBuf,
    pub id: String,
}

/// Row of an augmented manifest. Together with the parent audio and the
/// noise clip it regenerates the mix exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEntry {
    pub path: String,
    pub speaker: String,
    pub label: String,
    pub parent_id: String,
    pub noise_id: String,
    pub snr_db: f64,
    pub offset: usize,
    pub seed: u64,
}

/// Row of the speaker sidecar: `speaker,gender`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub speaker: String,
    pub gender: String,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut wtr = csv::Writer::from_path(path)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a clean manifest; relative audio paths resolve against the
/// manifest's directory.
pub fn read_clean_manifest(path: impl AsRef<Path>) -> Result<Vec<CleanEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows: Vec<CleanEntry> = read_csv(path)?;
    for r in &mut rows {
        if r.path.is_relative() {
            r.path = base.join(&r.path);
        }
    }
    Ok(rows)
}

pub fn write_clean_manifest(path: impl AsRef<Path>, rows: &[CleanEntry]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_noise_manifest(path: impl AsRef<Path>) -> Result<Vec<NoiseEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows: Vec<NoiseEntry> = read_csv(path)?;
    for r in &mut rows {
        if r.path.is_relative() {
            r.path = base.join(&r.path);
        }
    }
    Ok(rows)
}

pub fn write_noise_manifest(path: impl AsRef<Path>, rows: &[NoiseEntry]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_augmented_manifest(path: impl AsRef<Path>) -> Result<Vec<AugmentedEntry>> {
    read_csv(path.as_ref())
}

pub fn write_augmented_manifest(path: impl AsRef<Path>, rows: &[AugmentedEntry]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn read_speakers(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let rows: Vec<SpeakerEntry> = read_csv(path.as_ref())?;
    Ok(rows.into_iter().map(|r| (r.speaker, r.gender)).collect())
}

pub fn write_speakers(path: impl AsRef<Path>, rows: &[SpeakerEntry]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

/// Sorted distinct values, used to map string labels onto class indices.
pub fn label_set<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = labels.into_iter().map(str::to_string).collect();
    v.sort();
    v.dedup();
    v
}
