use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A 3D scalar field indexed `(x, y, z)`, row-major with `z` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidVolume(format!("zero extent in shape {shape:?}")));
        }
        let len = shape.iter().product::<usize>();
        if len != data.len() {
            return Err(Error::InvalidVolume(format!(
                "shape {shape:?} needs {len} intensities, got {}",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("spacing {spacing:?} must be positive")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite intensity".into()));
        }
        Ok(Self { shape, spacing, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.shape[1] + y) * self.shape[2] + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn contains(&self, p: [i64; 3]) -> bool {
        p.iter().zip(&self.shape).all(|(&c, &e)| c >= 0 && (c as usize) < e)
    }

    /// Per-volume min-max rescaling to `[0, 1]`. A constant volume maps to 0.
    pub fn normalized(mut self) -> Self {
        let (lo, hi) = self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in &mut self.data {
            *v = if range > 0.0 { ((*v - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Landmark {
    pub name: String,
    /// Continuous voxel coordinates.
    #[cfg_attr(feature = "serde", serde(rename = "voxel"))]
    pub position: [f64; 3],
}

/// Named landmark positions with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn new(entries: Vec<Landmark>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for l in &entries {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidVolume(format!("duplicate landmark name `{}`", l.name)));
            }
            if l.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidVolume(format!("landmark `{}` has a non-finite position", l.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Landmark] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Landmark> {
        self.entries.iter().find(|l| l.name == name)
    }

    /// Errors unless every landmark lies inside `[0, extent - 1]` on each axis.
    pub fn check_bounds(&self, shape: [usize; 3]) -> Result<()> {
        for l in &self.entries {
            if l.position.iter().zip(&shape).any(|(&c, &e)| c < 0.0 || c > (e - 1) as f64) {
                return Err(Error::InvalidVolume(format!(
                    "landmark `{}` at {:?} lies outside shape {shape:?}",
                    l.name, l.position
                )));
            }
        }
        Ok(())
    }
}

/// A normalized volume with its annotations, ready for training or testing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub id: String,
    pub volume: Volume,
    pub landmarks: LandmarkSet,
}

impl Scan {
    /// Min-max normalizes `volume` and validates the landmark bounds.
    pub fn new(id: impl Into<String>, volume: Volume, landmarks: LandmarkSet) -> Result<Self> {
        landmarks.check_bounds(volume.shape())?;
        Ok(Self {
            id: id.into(),
            volume: volume.normalized(),
            landmarks,
        })
    }

    /// Target positions for `names`, in order.
    pub fn targets(&self, names: &[String]) -> Result<Vec<[f64; 3]>> {
        names
            .iter()
            .map(|n| {
                self.landmarks.get(n).map(|l| l.position).ok_or_else(|| Error::MissingLandmark {
                    scan: self.id.clone(),
                    landmark: n.clone(),
                })
            })
            .collect()
    }
}
