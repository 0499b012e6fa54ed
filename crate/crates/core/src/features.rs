//! Multi-scale occupancy/uncertainty samples around a camera pose.
//!
//! For every level `l` in `1..=L` a `Dx × Dy × Dz` lattice with spacing
//! `2^l · r` is centered on the camera, rotated with its yaw, and each lattice
//! point reads the level-`l` pyramid by trilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};
use crate::occupancy::OccupancyMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Lattice size `(Dx, Dy, Dz)`; x points along the view direction.
    pub dims: [usize; 3],
    pub levels: usize,
    /// Shift of the lattice center along the view axis, in meters.
    pub forward_offset: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { dims: [16, 16, 8], levels: 3, forward_offset: 0.0 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidParameter("feature levels must be >= 1".into()));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidParameter(format!("feature dims must be >= 2, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        2 * self.levels
    }

    pub fn points(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Number of scalars in one sample.
    pub fn len(&self) -> usize {
        self.points() * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor `x(M, p)` of shape `Dx × Dy × Dz × 2L`, channel-last with x
/// fastest among the spatial axes. Channels are `[occ_1, unc_1, occ_2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleSample {
    pub dims: [usize; 3],
    pub levels: usize,
    pub values: Vec<f32>,
    pub pose: Pose,
}

impl MultiScaleSample {
    pub fn channels(&self) -> usize {
        2 * self.levels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, channel: usize) -> f32 {
        self.values[((z * self.dims[1] + y) * self.dims[0] + x) * self.channels() + channel]
    }
}

/// Camera-frame offset of lattice point `(i, j, k)` at spacing `s`.
#[inline]
fn lattice_offset(dims: [usize; 3], i: usize, j: usize, k: usize, s: f64) -> Vec3 {
    [
        (i as f64 - (dims[0] as f64 - 1.0) / 2.0) * s,
        (j as f64 - (dims[1] as f64 - 1.0) / 2.0) * s,
        (k as f64 - (dims[2] as f64 - 1.0) / 2.0) * s,
    ]
}

/// Writes the sample values for `pose` into `out` (length `cfg.len()`).
pub fn extract_into(map: &OccupancyMap, pose: &Pose, cfg: &FeatureConfig, out: &mut [f32]) {
    assert_eq!(out.len(), cfg.len());
    assert!(cfg.levels <= map.pyramid_levels(), "map pyramid has fewer levels than requested");
    let channels = cfg.channels();
    let r = map.grid().res();
    let center = pose.to_world_point([cfg.forward_offset, 0.0, 0.0]);
    let (s, c) = pose.yaw.sin_cos();
    let d = cfg.dims;
    for level in 1..=cfg.levels {
        let spacing = (1u64 << level) as f64 * r;
        let ch = 2 * (level - 1);
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    let o = lattice_offset(d, i, j, k, spacing);
                    let p = [center[0] + c * o[0] - s * o[1], center[1] + s * o[0] + c * o[1], center[2] + o[2]];
                    let (occ, unc) = map.multiscale_average(p, level);
                    let at = ((k * d[1] + j) * d[0] + i) * channels + ch;
                    out[at] = occ as f32;
                    out[at + 1] = unc as f32;
                }
            }
        }
    }
}

pub fn extract(map: &OccupancyMap, pose: &Pose, cfg: &FeatureConfig) -> MultiScaleSample {
    let mut values = vec![0f32; cfg.len()];
    extract_into(map, pose, cfg, &mut values);
    MultiScaleSample { dims: cfg.dims, levels: cfg.levels, values, pose: *pose }
}

/// Copy of `map` rotated by `quarter_turns · 90°` about the vertical axis
/// through the grid's xy center. Requires a square xy footprint.
pub fn rotate_map_quarter_turns(map: &OccupancyMap, quarter_turns: i32) -> Result<OccupancyMap> {
    let g = *map.grid();
    if g.dims[0] != g.dims[1] {
        return Err(Error::InvalidParameter(format!("rotation needs a square xy footprint, got {:?}", g.dims)));
    }
    let n = g.dims[0];
    let turns = quarter_turns.rem_euclid(4);
    let mut out = OccupancyMap::new(g, *map.params())?;
    for idx in 0..g.len() {
        let [x, y, z] = g.coords(idx);
        // rotate content by +turns: destination (x, y) receives source R^-1 (x, y)
        let (mut sx, mut sy) = (x, y);
        for _ in 0..turns {
            (sx, sy) = (sy, n - 1 - sx);
        }
        let src = g.index([sx, sy, z]);
        out.set_voxel([x, y, z], map.occ_at(src), map.unc_at(src));
    }
    out.refresh_pyramid();
    Ok(out)
}

/// Rotation consistency of feature extraction for quarter-turn yaws.
///
/// Compares extraction at `pose` turned by `+k·90°` on `map` with extraction
/// at `pose` on `map` rotated by `−k·90°` about the pose. The pose must sit
/// on the grid's vertical center axis. Returns the max absolute difference.
pub fn yaw_rotate_equivalence_check(map: &OccupancyMap, pose: &Pose, quarter_turns: i32, cfg: &FeatureConfig) -> Result<f64> {
    let g = map.grid();
    let (lo, hi) = g.bounds();
    let cx = (lo[0] + hi[0]) / 2.0;
    let cy = (lo[1] + hi[1]) / 2.0;
    let tol = 1e-9 * g.res();
    if (pose.position[0] - cx).abs() > tol || (pose.position[1] - cy).abs() > tol {
        return Err(Error::InvalidParameter(format!(
            "pose {:?} must lie on the grid center axis ({cx}, {cy})",
            pose.position
        )));
    }
    let turned = Pose::new(pose.position, pose.yaw + quarter_turns as f64 * std::f64::consts::FRAC_PI_2);
    let rotated = rotate_map_quarter_turns(map, -quarter_turns)?;
    let a = extract(map, &turned, cfg);
    let b = extract(&rotated, pose, cfg);
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::occupancy::MapParams;

    fn map() -> OccupancyMap {
        let g = GridSpec::new([32, 32, 16], 0.4, [0.0; 3]).unwrap();
        OccupancyMap::new(g, MapParams::default()).unwrap()
    }

    #[test]
    fn uniform_map_constant_tensor() {
        let m = map();
        let cfg = FeatureConfig::default();
        let s = extract(&m, &Pose::new([6.1, 5.3, 3.0], 0.7), &cfg);
        assert_eq!(s.values.len(), 16 * 16 * 8 * 6);
        for pair in s.values.chunks(2) {
            assert_eq!(pair, &[0.5, 1.0]);
        }
    }

    #[test]
    fn channel_count_is_twice_levels() {
        let cfg = FeatureConfig { dims: [4, 4, 2], levels: 2, forward_offset: 0.0 };
        assert_eq!(cfg.channels(), 4);
        assert_eq!(cfg.len(), 4 * 4 * 2 * 4);
    }

    #[test]
    fn grid_aligned_pose_reads_cells_exactly() {
        let mut m = map();
        for idx in 0..m.grid().len() {
            let v = m.grid().coords(idx);
            let occ = ((v[0] * 7 + v[1] * 3 + v[2] * 5) % 11) as f64 / 10.0;
            let unc = ((v[0] + 2 * v[1] + 3 * v[2]) % 7) as f64 / 6.0;
            m.set_voxel(v, occ, unc);
        }
        m.refresh_pyramid();
        let r = m.grid().res();
        let cfg = FeatureConfig { dims: [4, 4, 2], levels: 3, forward_offset: 0.0 };
        // multiples of 2^L · r put every lattice point on a cell center
        let pose = Pose::new([16.0 * r, 16.0 * r, 8.0 * r], 0.0);
        let s = extract(&m, &pose, &cfg);
        for level in 1..=3 {
            let sp = (1 << level) as f64 * r;
            for k in 0..2 {
                for j in 0..4 {
                    for i in 0..4 {
                        let o = lattice_offset(cfg.dims, i, j, k, sp);
                        let p = [pose.position[0] + o[0], pose.position[1] + o[1], pose.position[2] + o[2]];
                        let (occ, unc) = m.multiscale_average(p, level);
                        assert_eq!(s.get(i, j, k, 2 * (level - 1)), occ as f32);
                        assert_eq!(s.get(i, j, k, 2 * (level - 1) + 1), unc as f32);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_equivalence_quarter_turns() {
        let mut m = map();
        // asymmetric content
        for idx in 0..m.grid().len() {
            let v = m.grid().coords(idx);
            if v[0] > 18 && v[1] < 12 {
                m.set_voxel(v, 1.0, 0.2);
            } else if v[1] > 20 {
                m.set_voxel(v, 0.0, 0.0);
            } else if v[2] < 3 {
                m.set_voxel(v, 0.8, 0.5);
            }
        }
        m.refresh_pyramid();
        let r = m.grid().res();
        let pose = Pose::new([16.0 * r, 16.0 * r, 3.3], 0.3);
        let cfg = FeatureConfig::default();
        assert_eq!(yaw_rotate_equivalence_check(&m, &pose, 0, &cfg).unwrap(), 0.0);
        for k in 1..4 {
            let d = yaw_rotate_equivalence_check(&m, &pose, k, &cfg).unwrap();
            assert!(d <= 1e-6, "k={k}: {d}");
        }
        // the check is not vacuous: rotating the map changes the sample
        let rot = rotate_map_quarter_turns(&m, 1).unwrap();
        assert_ne!(extract(&m, &pose, &cfg).values, extract(&rot, &pose, &cfg).values);
    }
}
