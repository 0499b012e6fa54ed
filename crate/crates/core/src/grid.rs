//! Voxel grid geometry shared by the ground truth scene and the belief map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Dimensions, voxel size and placement of a uniform voxel grid.
///
/// Resolution and origin are stored in single precision so that every file
/// format round-trips them exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub resolution: f32,
    pub origin: [f32; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], resolution: f32, origin: [f32; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidParameter(format!("resolution must be > 0, got {resolution}")));
        }
        Ok(Self { dims, resolution, origin })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn res(&self) -> f64 {
        self.resolution as f64
    }

    #[inline]
    pub fn origin_f64(&self) -> Vec3 {
        [self.origin[0] as f64, self.origin[1] as f64, self.origin[2] as f64]
    }

    /// Linear index, x fastest.
    #[inline]
    pub fn index(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn contains(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    pub fn checked(&self, v: [i64; 3]) -> Result<[usize; 3]> {
        if self.contains(v) {
            Ok([v[0] as usize, v[1] as usize, v[2] as usize])
        } else {
            Err(Error::OutOfBounds(v))
        }
    }

    /// Continuous grid coordinates of a world point (voxel `i` spans `[i, i+1)`).
    #[inline]
    pub fn to_grid(&self, p: Vec3) -> Vec3 {
        let o = self.origin_f64();
        let r = self.res();
        [(p[0] - o[0]) / r, (p[1] - o[1]) / r, (p[2] - o[2]) / r]
    }

    /// Voxel containing a world point, possibly outside the grid.
    #[inline]
    pub fn voxel_of(&self, p: Vec3) -> [i64; 3] {
        let g = self.to_grid(p);
        [g[0].floor() as i64, g[1].floor() as i64, g[2].floor() as i64]
    }

    #[inline]
    pub fn voxel_center(&self, v: [usize; 3]) -> Vec3 {
        let o = self.origin_f64();
        let r = self.res();
        [
            o[0] + (v[0] as f64 + 0.5) * r,
            o[1] + (v[1] as f64 + 0.5) * r,
            o[2] + (v[2] as f64 + 0.5) * r,
        ]
    }

    /// World-space extent of the whole grid as `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let o = self.origin_f64();
        let r = self.res();
        (
            o,
            [
                o[0] + self.dims[0] as f64 * r,
                o[1] + self.dims[1] as f64 * r,
                o[2] + self.dims[2] as f64 * r,
            ],
        )
    }

    /// Inclusive voxel index range of voxels whose extent overlaps the open
    /// interval `(lo, hi)` along `axis`, unclamped.
    pub fn overlap_range(&self, axis: usize, lo: f64, hi: f64) -> (i64, i64) {
        const SHRINK: f64 = 1e-9;
        let o = self.origin[axis] as f64;
        let r = self.res();
        let first = ((lo - o) / r + SHRINK).floor() as i64;
        let last = ((hi - o) / r - SHRINK).ceil() as i64 - 1;
        (first, last)
    }

    /// Inclusive index range of voxels whose centers lie in `[lo, lo + count·r)`
    /// where the count is `round((hi - lo) / r)`.
    pub fn center_range(&self, axis: usize, lo: f64, hi: f64) -> (i64, i64) {
        let o = self.origin[axis] as f64;
        let r = self.res();
        let first = ((lo - o) / r - 0.5 - 1e-9).ceil() as i64;
        let count = ((hi - lo) / r).round() as i64;
        (first, first + count - 1)
    }
}
