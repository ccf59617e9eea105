//! Synthetic datasets on disk: volume triplets plus `manifest.json`.
//!
//! Train sample `i` is synthetic sample index `i`; test sample `j` is index
//! [`TEST_INDEX_BASE`]` + j`, so the test split does not depend on the
//! number of training samples.

use std::fs;
use std::path::{Path, PathBuf};

use collabdqn_core::env::Scan;
use collabdqn_core::synth::{self, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::volume_io::{self, read_json, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const TEST_INDEX_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Lists the triplet stems of each split relative to the manifest's
/// directory, and the configuration that generated them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub generator: SynthConfig,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Manifest {
    pub fn stems(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn stem_names(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(3);
    (0..n).map(|i| format!("{prefix}-{i:0width$}")).collect()
}

/// Prepares `dir` for writing: creates it when its parent exists, and
/// refuses a non-empty directory unless `force`.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_dir() {
        let mut entries = fs::read_dir(dir).map_err(Error::io(dir))?;
        if entries.next().is_some() && !force {
            return Err(Error::NotEmpty { path: dir.to_path_buf() });
        }
        return Ok(());
    }
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Error::MissingParent { path: dir.to_path_buf() });
    }
    fs::create_dir(dir).map_err(Error::io(dir))
}

/// Writes `n_train + n_test` triplets and the manifest into `dir`.
pub fn generate(dir: &Path, config: &SynthConfig, n_train: usize, n_test: usize, force: bool, workers: usize) -> Result<Manifest> {
    config.validate()?;
    if n_train + n_test == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    prepare_output_dir(dir, force)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        generator: config.clone(),
        train: stem_names("train", n_train),
        test: stem_names("test", n_test),
    };
    map_indexed(n_train + n_test, workers, |i| {
        let (index, stem) = if i < n_train {
            (i as u64, &manifest.train[i])
        } else {
            (TEST_INDEX_BASE + (i - n_train) as u64, &manifest.test[i - n_train])
        };
        let sample = synth::generate_one(config, index)?;
        volume_io::save_volume(&sample.volume, &sample.landmarks, &dir.join(stem))
    })?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let m: Manifest = read_json(&path)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Version {
            path,
            found: m.version,
            expected: MANIFEST_VERSION,
        });
    }
    Ok(m)
}

/// Loads one split as normalized scans named by their stems.
pub fn load_split(dir: &Path, split: Split, workers: usize) -> Result<Vec<Scan>> {
    let manifest = read_manifest(dir)?;
    let stems = manifest.stems(split);
    map_indexed(stems.len(), workers, |i| volume_io::load_scan(&dir.join(&stems[i]), stems[i].clone()))
}

/// Every file the manifest refers to, plus the manifest itself.
pub fn files(dir: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for stem in manifest.train.iter().chain(&manifest.test) {
        let s = dir.join(stem);
        out.push(volume_io::header_path(&s));
        out.push(volume_io::raw_path(&s));
        out.push(volume_io::landmarks_path(&s));
    }
    out.push(dir.join(MANIFEST));
    out
}
