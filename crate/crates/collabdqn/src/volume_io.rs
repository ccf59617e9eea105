//! The volume triplet: `<stem>.vol.json` header, `<stem>.vol.raw` payload
//! and `<stem>.landmarks.json`.
//!
//! The payload holds `shape[0] * shape[1] * shape[2]` little-endian f32
//! values in row-major order over `[x, y, z]`, so `z` varies fastest.
//! Landmarks are `[{"name": ..., "voxel": [x, y, z]}]` in continuous voxel
//! coordinates.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use collabdqn_core::env::{Landmark, LandmarkSet, Scan, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: String,
    pub version: u32,
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(stem.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".vol.json")
}

pub fn raw_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".vol.raw")
}

pub fn landmarks_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".landmarks.json")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn save_volume(volume: &Volume, landmarks: &LandmarkSet, stem: &Path) -> Result<()> {
    let header = VolumeHeader {
        shape: volume.shape(),
        spacing_mm: volume.spacing(),
        dtype: DTYPE.into(),
        version: FORMAT_VERSION,
    };
    write_json(&header_path(stem), &header)?;
    let mut raw = Vec::with_capacity(volume.data().len() * 4);
    for v in volume.data() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let path = raw_path(stem);
    fs::write(&path, raw).map_err(Error::io(&path))?;
    write_json(&landmarks_path(stem), &landmarks.entries())
}

/// Reads a triplet; intensities are returned as stored, unnormalized.
pub fn load_volume(stem: &Path) -> Result<(Volume, LandmarkSet)> {
    let hpath = header_path(stem);
    let header: VolumeHeader = read_json(&hpath)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            path: hpath,
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    if header.dtype != DTYPE {
        return Err(Error::UnknownDtype {
            path: hpath,
            dtype: header.dtype,
        });
    }
    let rpath = raw_path(stem);
    let raw = fs::read(&rpath).map_err(Error::io(&rpath))?;
    let expected = header.shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    let expected = expected.ok_or_else(|| Error::Config(format!("{}: shape {:?} overflows", hpath.display(), header.shape)))?;
    if raw.len() as u64 != expected as u64 * 4 {
        return Err(Error::SizeMismatch {
            path: rpath,
            expected,
            actual_bytes: raw.len() as u64,
        });
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let volume = Volume::new(header.shape, header.spacing_mm, data)?;
    let marks: Vec<Landmark> = read_json(&landmarks_path(stem))?;
    let marks = LandmarkSet::new(marks)?;
    Ok((volume, marks))
}

/// Loads a triplet as a scan named `id`, with intensities normalized.
pub fn load_scan(stem: &Path, id: impl Into<String>) -> Result<Scan> {
    let (volume, marks) = load_volume(stem)?;
    Ok(Scan::new(id, volume, marks)?)
}
