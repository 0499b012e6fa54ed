//! Simulated pinhole depth camera and the dropout/Gaussian depth-noise model.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize, Pose, Vec3};
use crate::raycast::VoxelRay;
use crate::scene::GroundTruthScene;
use crate::seed;

/// Pinhole camera with square pixels. The vertical field of view follows
/// from the aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub horizontal_fov: f64,
    /// Meters.
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { width: 64, height: 48, horizontal_fov: 90.0, max_range: 20.0 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("camera width and height must be >= 1".into()));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < 180.0) {
            return Err(Error::InvalidParameter(format!("fov must be in (0, 180), got {}", self.horizontal_fov)));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidParameter(format!("max_range must be > 0, got {}", self.max_range)));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov.to_radians() / 2.0).tan()
    }

    /// Unit ray direction of pixel `(u, v)` in the camera frame, row-major
    /// with `v = 0` at the top.
    pub fn pixel_dir(&self, u: usize, v: usize) -> Vec3 {
        let f = self.focal();
        normalize([
            f,
            self.width as f64 / 2.0 - (u as f64 + 0.5),
            self.height as f64 / 2.0 - (v as f64 + 0.5),
        ])
    }

    /// All pixel directions in the camera frame, row-major.
    pub fn ray_dirs(&self) -> Vec<Vec3> {
        let mut dirs = Vec::with_capacity(self.pixel_count());
        for v in 0..self.height {
            for u in 0..self.width {
                dirs.push(self.pixel_dir(u, v));
            }
        }
        dirs
    }

    /// Pixel ray directions rotated into the world frame for `pose`.
    pub fn world_dirs(&self, pose: &Pose) -> Vec<Vec3> {
        self.ray_dirs().into_iter().map(|d| pose.to_world_dir(d)).collect()
    }
}

/// Per-pixel range along the ray in meters.
///
/// `f64::INFINITY` marks a ray that found no surface within range;
/// `NaN` marks a pixel dropped by the noise model (no measurement at all).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub const NO_RETURN: f64 = f64::INFINITY;

    pub fn is_dropped(d: f64) -> bool {
        d.is_nan()
    }

    pub fn dropped_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_nan()).count()
    }

    pub fn no_return_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_infinite()).count()
    }

    /// 16-bit binary PGM, millimeter quantization, 0 for missing pixels.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for &d in &self.depth {
            let mm = if d.is_finite() { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
            w.write_all(&mm.to_be_bytes())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First occupied voxel along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub index: usize,
    pub depth: f64,
}

fn check_pose(scene: &GroundTruthScene, pose: &Pose) -> Result<()> {
    let v = scene.grid().voxel_of(pose.position);
    if !scene.grid().contains(v) {
        return Err(Error::InvalidPose(format!("position {:?} is outside the grid", pose.position)));
    }
    if scene.is_occupied(v) {
        return Err(Error::InvalidPose(format!("position {:?} is inside an occupied voxel", pose.position)));
    }
    Ok(())
}

#[inline]
fn first_hit(scene: &GroundTruthScene, origin: Vec3, dir: Vec3, max_range: f64) -> Option<RayHit> {
    VoxelRay::new(scene.grid(), origin, dir, max_range)
        .find(|v| scene.occupied_at(v.index))
        .map(|v| RayHit { index: v.index, depth: v.t_enter })
}

/// Casts every camera ray against the ground truth and reports the first
/// occupied voxel per pixel.
pub fn cast_hits(scene: &GroundTruthScene, pose: &Pose, camera: &CameraModel) -> Result<Vec<Option<RayHit>>> {
    check_pose(scene, pose)?;
    Ok(camera
        .world_dirs(pose)
        .into_iter()
        .map(|d| first_hit(scene, pose.position, d, camera.max_range))
        .collect())
}

/// Ground-truth depth image: range to the entry face of the first occupied
/// voxel, or [`DepthImage::NO_RETURN`].
pub fn render_depth(scene: &GroundTruthScene, pose: &Pose, camera: &CameraModel) -> Result<DepthImage> {
    camera.validate()?;
    let hits = cast_hits(scene, pose, camera)?;
    Ok(DepthImage {
        width: camera.width,
        height: camera.height,
        depth: hits.into_iter().map(|h| h.map_or(DepthImage::NO_RETURN, |h| h.depth)).collect(),
    })
}

/// Pixel dropout followed by additive Gaussian noise on surviving returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub drop_fraction: f64,
    /// Standard deviation in meters.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { drop_fraction: 0.0, sigma: 0.0, seed: 0 }
    }
}

impl NoiseModel {
    /// The noise grid used in the robustness study: 40% dropout with
    /// σ = 0.1, 0.2, 0.5 and 1.0 m.
    pub const LEVELS: [(&'static str, f64); 4] = [("low", 0.1), ("medium", 0.2), ("high", 0.5), ("very_high", 1.0)];
    pub const DROP_FRACTION: f64 = 0.4;

    pub fn is_noise_free(&self) -> bool {
        self.drop_fraction == 0.0 && self.sigma == 0.0
    }

    /// Same parameters with a seed specialized to one measurement.
    pub fn for_measurement(&self, stream: u64) -> Self {
        Self { seed: seed::child(self.seed, stream), ..*self }
    }
}

pub fn apply_noise(image: &DepthImage, noise: &NoiseModel, max_range: f64) -> DepthImage {
    let mut out = image.clone();
    if noise.is_noise_free() {
        return out;
    }
    let mut rng = seed::rng(noise.seed);
    let n = out.depth.len();
    let drop = ((noise.drop_fraction.clamp(0.0, 1.0)) * n as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, n, drop.min(n)) {
        out.depth[i] = f64::NAN;
    }
    if noise.sigma > 0.0 {
        let normal = Normal::new(0.0, noise.sigma).expect("finite sigma");
        for d in out.depth.iter_mut().filter(|d| d.is_finite()) {
            let e: f64 = normal.sample(&mut rng);
            *d = (*d + e).clamp(1e-3, max_range);
        }
    }
    out
}
