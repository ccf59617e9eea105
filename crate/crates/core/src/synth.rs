//! Synthetic volumes with geometrically coupled landmarks.
//!
//! Each sample draws one similarity pose (rotation, isotropic scale,
//! translation) and renders a fixed template through it:
//!
//! - a smooth radial fill that is nonzero everywhere;
//! - three nested ellipsoidal shells of distinct brightness;
//! - three tubes running from the centre along the template's +x, +y and
//!   +z axes.
//!
//! Landmarks sit where tubes cross shells. They are therefore fixed by the
//! structure's geometry rather than marked by a bright spot, and because
//! every landmark of a sample goes through the same pose their displacements
//! are strongly correlated. Each landmark then gets a small independent
//! jitter, and the volume gets additive Gaussian noise.
//!
//! Template coordinates `u ∈ [-1, 1]³` map to voxels as
//! `p = c + s·R·(u ⊙ h) + t`, where `c` is the volume centre and `h` the
//! half extents.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{Landmark, LandmarkSet, Volume};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Ellipsoid semi-axes in template units.
pub const SEMI_AXES: [f64; 3] = [0.72, 0.60, 0.52];
/// Normalized radii of the three shells.
pub const SHELL_RADII: [f64; 3] = [0.3, 0.6, 0.9];
const SHELL_LEVELS: [f64; 3] = [0.55, 0.9, 0.7];
const SHELL_WIDTH: f64 = 0.05;
const TUBE_LEVELS: [f64; 3] = [0.6, 0.45, 0.3];
/// Tube radius in template units.
const TUBE_RADIUS: f64 = 0.05;
const FILL_LEVEL: f64 = 0.35;

const MAX_POSE_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct TemplateLandmark {
    pub name: String,
    /// Template coordinates, each in `[-1, 1]`.
    pub offset: [f64; 3],
}

/// The five default landmarks: tube/shell crossings on the middle and inner
/// shells.
pub fn default_template() -> Vec<TemplateLandmark> {
    let at = |name: &str, axis: usize, shell: usize| {
        let mut offset = [0.0; 3];
        offset[axis] = SHELL_RADII[shell] * SEMI_AXES[axis];
        TemplateLandmark { name: name.into(), offset }
    };
    alloc::vec![at("L0", 0, 1), at("L1", 0, 0), at("L2", 1, 1), at("L3", 2, 1), at("L4", 1, 0)]
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct SynthConfig {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub landmarks: Vec<TemplateLandmark>,
    /// Each Euler angle is drawn from `±rotation_deg`.
    pub rotation_deg: f64,
    pub scale_range: [f64; 2],
    /// Each translation component is drawn from `±translation_vox`.
    pub translation_vox: f64,
    /// Independent per-landmark jitter, voxels.
    pub jitter_sigma: f64,
    pub noise_sigma: f64,
    /// Multiplies shell and tube brightness.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: [64; 3],
            spacing_mm: [1.0; 3],
            landmarks: default_template(),
            rotation_deg: 15.0,
            scale_range: [0.9, 1.1],
            translation_vox: 6.0,
            jitter_sigma: 1.0,
            noise_sigma: 0.05,
            contrast: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.shape.iter().any(|&e| e < 16) {
            return bad(format!("synthetic extents {:?} must be at least 16", self.shape));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("spacing {:?} must be positive", self.spacing_mm));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.5 && hi < 2.0 && lo <= hi) {
            return bad(format!("scale range {:?} must satisfy 0.5 < lo <= hi < 2", self.scale_range));
        }
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("translation_vox", self.translation_vox),
            ("jitter_sigma", self.jitter_sigma),
            ("noise_sigma", self.noise_sigma),
            ("contrast", self.contrast),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        for l in &self.landmarks {
            if l.offset.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                return bad(format!("template landmark `{}` offset {:?} leaves the unit box", l.name, l.offset));
            }
        }
        LandmarkSet::new(self.landmarks.iter().map(|l| Landmark { name: l.name.clone(), position: [0.0; 3] }).collect())?;
        Ok(())
    }
}

/// A similarity transform from template to voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    /// `Rz(c)·Ry(b)·Rx(a)`, angles in radians.
    pub fn from_euler(a: f64, b: f64, c: f64, scale: f64, translation: [f64; 3]) -> Self {
        let (sa, ca) = (libm::sin(a), libm::cos(a));
        let (sb, cb) = (libm::sin(b), libm::cos(b));
        let (sc, cc) = (libm::sin(c), libm::cos(c));
        let rotation = [
            [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
            [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
            [-sb, cb * sa, cb * ca],
        ];
        Self {
            rotation,
            scale,
            translation,
        }
    }

    /// Template point to voxel coordinates in a volume of `shape`.
    pub fn to_voxel(&self, u: [f64; 3], shape: [usize; 3]) -> [f64; 3] {
        let local: [f64; 3] = core::array::from_fn(|i| u[i] * shape[i] as f64 / 2.0);
        core::array::from_fn(|i| {
            let r: f64 = (0..3).map(|j| self.rotation[i][j] * local[j]).sum();
            (shape[i] as f64 - 1.0) / 2.0 + self.scale * r + self.translation[i]
        })
    }

    /// Voxel coordinates back to template coordinates.
    pub fn to_template(&self, p: [f64; 3], shape: [usize; 3]) -> [f64; 3] {
        let d: [f64; 3] = core::array::from_fn(|i| (p[i] - (shape[i] as f64 - 1.0) / 2.0 - self.translation[i]) / self.scale);
        core::array::from_fn(|j| {
            let r: f64 = (0..3).map(|i| self.rotation[i][j] * d[i]).sum();
            r / (shape[j] as f64 / 2.0)
        })
    }
}

/// Noise-free template intensity at template point `u`.
pub fn template_intensity(u: [f64; 3], contrast: f64) -> f64 {
    let q: [f64; 3] = core::array::from_fn(|i| u[i] / SEMI_AXES[i]);
    let rho = libm::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
    let mut v = FILL_LEVEL * libm::exp(-rho * rho / (2.0 * 0.8 * 0.8));
    for (r, level) in SHELL_RADII.iter().zip(SHELL_LEVELS) {
        let d = (rho - r) / SHELL_WIDTH;
        v += contrast * level * libm::exp(-0.5 * d * d);
    }
    for axis in 0..3 {
        let along = q[axis];
        if along <= 0.0 {
            continue;
        }
        let off: f64 = (0..3).filter(|&j| j != axis).map(|j| u[j] * u[j]).sum();
        let radial = libm::exp(-0.5 * off / (TUBE_RADIUS * TUBE_RADIUS));
        // Fade in at the centre and out past the outer shell.
        let span = (along / 0.05).min(1.0) * (1.0 - ((along - SHELL_RADII[2]) / 0.1).clamp(0.0, 1.0));
        v += contrast * TUBE_LEVELS[axis] * radial * span;
    }
    v
}

/// Renders the template through `pose` with optional noise.
pub fn rasterize(config: &SynthConfig, pose: &Pose, rng: Option<&mut Rng>) -> Result<Volume> {
    let [sx, sy, sz] = config.shape;
    let mut data = Vec::with_capacity(sx * sy * sz);
    for x in 0..sx {
        for y in 0..sy {
            for z in 0..sz {
                let u = pose.to_template([x as f64, y as f64, z as f64], config.shape);
                data.push(template_intensity(u, config.contrast) as f32);
            }
        }
    }
    if let Some(rng) = rng {
        if config.noise_sigma > 0.0 {
            for v in &mut data {
                let n: f64 = StandardNormal.sample(rng);
                *v += (config.noise_sigma * n) as f32;
            }
        }
    }
    Volume::new(config.shape, config.spacing_mm, data)
}

/// One sample: the pose it was drawn with, the raw (unnormalized) volume and
/// its landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pose: Pose,
    pub volume: Volume,
    pub landmarks: LandmarkSet,
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws poses and jitter until every landmark is strictly inside the
/// volume.
pub fn draw_pose(config: &SynthConfig, rng: &mut Rng) -> Result<(Pose, LandmarkSet)> {
    let max_angle = config.rotation_deg.to_radians();
    let upper = config.shape.map(|e| (e - 1) as f64);
    for _ in 0..MAX_POSE_TRIES {
        let a = uniform(rng, -max_angle, max_angle);
        let b = uniform(rng, -max_angle, max_angle);
        let c = uniform(rng, -max_angle, max_angle);
        let s = uniform(rng, config.scale_range[0], config.scale_range[1]);
        let t = [0; 3].map(|_| uniform(rng, -config.translation_vox, config.translation_vox));
        let pose = Pose::from_euler(a, b, c, s, t);
        let mut entries = Vec::with_capacity(config.landmarks.len());
        for l in &config.landmarks {
            let mut p = pose.to_voxel(l.offset, config.shape);
            for c in &mut p {
                let n: f64 = StandardNormal.sample(rng);
                *c += config.jitter_sigma * n;
            }
            entries.push(Landmark {
                name: l.name.clone(),
                position: p,
            });
        }
        if entries.iter().all(|l| l.position.iter().zip(&upper).all(|(&c, &hi)| c > 0.0 && c < hi)) {
            return Ok((pose, LandmarkSet::new(entries)?));
        }
    }
    Err(Error::Synthesis(format!(
        "no pose within {MAX_POSE_TRIES} tries keeps every landmark inside {:?}",
        config.shape
    )))
}

/// Sample `index` of the dataset keyed by `config.seed`. Each index has its
/// own ChaCha stream, so samples can be generated independently.
pub fn generate_one(config: &SynthConfig, index: u64) -> Result<Sample> {
    let mut rng = rng::stream(config.seed, index);
    let (pose, landmarks) = draw_pose(config, &mut rng)?;
    let volume = rasterize(config, &pose, Some(&mut rng))?;
    Ok(Sample { pose, volume, landmarks })
}

/// Samples `0..n`.
pub fn generate(config: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    (0..n as u64).map(|i| generate_one(config, i)).collect()
}
