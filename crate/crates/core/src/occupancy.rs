//! The agent's belief map: per-voxel occupancy and uncertainty.
//!
//! Occupancy is integrated with a beam-based log-odds inverse sensor model.
//! Every voxel touched by a depth image (traversed or hit) has its
//! uncertainty multiplied by `exp(-eta)` exactly once per image.
//!
//! A mipmap pyramid of `(occ, unc)` means supports the multi-scale queries
//! used by feature extraction. Level `l` cells average the `2^l`-sided cube
//! of base voxels they cover; voxels outside the grid count as
//! `(occ_prior, 1)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::geom::{Pose, Vec3};
use crate::grid::GridSpec;
use crate::raycast::VoxelRay;
use crate::sensor::{CameraModel, DepthImage};

const MAP_MAGIC: &[u8; 4] = b"NBVM";
const MAP_VERSION: u32 = 1;

/// Log-odds increments of the inverse sensor model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorModel {
    pub l_occ: f64,
    pub l_free: f64,
    pub l_min: f64,
    pub l_max: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { l_occ: 0.85, l_free: -0.4, l_min: -3.5, l_max: 3.5 }
    }
}

/// Thresholds that turn `(occ, unc)` into a [`VoxelClass`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub occ_free_max: f64,
    pub occ_occupied_min: f64,
    pub unc_known_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { occ_free_max: 0.25, occ_occupied_min: 0.75, unc_known_max: 0.5 }
    }
}

impl Thresholds {
    #[inline]
    pub fn classify(&self, occ: f64, unc: f64) -> VoxelClass {
        if unc > self.unc_known_max {
            VoxelClass::Unknown
        } else if occ >= self.occ_occupied_min {
            VoxelClass::Occupied
        } else if occ <= self.occ_free_max {
            VoxelClass::Free
        } else {
            VoxelClass::Unknown
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoxelClass {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams {
    /// Information added per measurement; uncertainty decays by `exp(-eta)`.
    pub eta: f64,
    pub occ_prior: f64,
    pub sensor: SensorModel,
    pub thresholds: Thresholds,
    /// Number of pyramid levels above the base grid.
    pub pyramid_levels: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            eta: std::f64::consts::LN_2,
            occ_prior: 0.5,
            sensor: SensorModel::default(),
            thresholds: Thresholds::default(),
            pyramid_levels: 3,
        }
    }
}

/// Counts from one measurement integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub touched: usize,
    pub hits: usize,
    pub free: usize,
}

#[derive(Debug, Clone)]
struct PyramidLevel {
    dims: [usize; 3],
    cells: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct OccupancyMap {
    grid: GridSpec,
    params: MapParams,
    decay: f64,
    occ: Vec<f64>,
    unc: Vec<f64>,
    /// Class under the map's own thresholds, kept in step with occ/unc.
    class: Vec<VoxelClass>,
    version: u64,
    levels: Vec<PyramidLevel>,
    dirty: Option<([usize; 3], [usize; 3])>,
    stamp: u32,
    touch_mark: Vec<u32>,
    hit_mark: Vec<u32>,
    touched: Vec<usize>,
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

impl OccupancyMap {
    /// Fully unknown map: `occ = occ_prior`, `unc = 1` everywhere.
    pub fn new(grid: GridSpec, params: MapParams) -> Result<Self> {
        if !(params.eta > 0.0) || !params.eta.is_finite() {
            return Err(Error::InvalidParameter(format!("eta must be > 0, got {}", params.eta)));
        }
        if !(0.0..=1.0).contains(&params.occ_prior) {
            return Err(Error::InvalidParameter(format!("occ_prior must be in [0,1], got {}", params.occ_prior)));
        }
        if params.pyramid_levels == 0 {
            return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
        }
        let n = grid.len();
        let levels = (1..=params.pyramid_levels)
            .map(|l| {
                let dims = grid.dims.map(|d| d.div_ceil(1 << l));
                PyramidLevel { dims, cells: vec![[params.occ_prior, 1.0]; dims[0] * dims[1] * dims[2]] }
            })
            .collect();
        Ok(Self {
            grid,
            params,
            decay: (-params.eta).exp(),
            occ: vec![params.occ_prior; n],
            unc: vec![1.0; n],
            class: vec![params.thresholds.classify(params.occ_prior, 1.0); n],
            version: 0,
            levels,
            dirty: None,
            stamp: 0,
            touch_mark: vec![0; n],
            hit_mark: vec![0; n],
            touched: Vec::new(),
        })
    }

    /// Fresh map with a cleared (free, certain) box of side `clear_extent`
    /// around `clear_center`. Cleared voxels are those whose centers fall in
    /// the box; exactly `round(clear_extent / r)` per axis.
    pub fn init(grid: GridSpec, params: MapParams, clear_center: Vec3, clear_extent: f64) -> Result<Self> {
        let mut map = Self::new(grid, params)?;
        map.clear_box(clear_center, clear_extent)?;
        map.refresh_pyramid();
        Ok(map)
    }

    pub fn clear_box(&mut self, center: Vec3, extent: f64) -> Result<usize> {
        let h = extent / 2.0;
        let r: Vec<(i64, i64)> = (0..3).map(|a| self.grid.center_range(a, center[a] - h, center[a] + h)).collect();
        let lo = self.grid.checked([r[0].0, r[1].0, r[2].0])?;
        let hi = self.grid.checked([r[0].1, r[1].1, r[2].1])?;
        let mut n = 0;
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let i = self.grid.index([x, y, z]);
                    self.occ[i] = 0.0;
                    self.unc[i] = 0.0;
                    self.reclass(i);
                    n += 1;
                }
            }
        }
        self.mark_dirty(lo, hi);
        Ok(n)
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn params(&self) -> &MapParams {
        &self.params
    }

    #[inline]
    pub fn eta(&self) -> f64 {
        self.params.eta
    }

    /// `exp(-eta)`.
    #[inline]
    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Incremented by every measurement integration.
    #[inline]
    pub fn version(&self) -> u64 {
        self.version
    }

    #[inline]
    pub fn occ_at(&self, index: usize) -> f64 {
        self.occ[index]
    }

    #[inline]
    pub fn unc_at(&self, index: usize) -> f64 {
        self.unc[index]
    }

    pub fn occ(&self) -> &[f64] {
        &self.occ
    }

    pub fn unc(&self) -> &[f64] {
        &self.unc
    }

    /// Direct write, mostly for tests and tooling. Call
    /// [`refresh_pyramid`](Self::refresh_pyramid) before multi-scale queries.
    pub fn set_voxel(&mut self, v: [usize; 3], occ: f64, unc: f64) {
        let i = self.grid.index(v);
        self.occ[i] = occ.clamp(0.0, 1.0);
        self.unc[i] = unc.clamp(0.0, 1.0);
        self.reclass(i);
        self.mark_dirty(v, v);
    }

    #[inline]
    pub fn class_at(&self, index: usize) -> VoxelClass {
        self.class[index]
    }

    #[inline]
    fn reclass(&mut self, i: usize) {
        self.class[i] = self.params.thresholds.classify(self.occ[i], self.unc[i]);
    }

    pub fn classify(&self, v: [i64; 3]) -> Result<VoxelClass> {
        self.classify_with(v, &self.params.thresholds)
    }

    pub fn classify_with(&self, v: [i64; 3], thresholds: &Thresholds) -> Result<VoxelClass> {
        let v = self.grid.checked(v)?;
        let i = self.grid.index(v);
        Ok(thresholds.classify(self.occ[i], self.unc[i]))
    }

    /// True iff every voxel overlapping the axis-aligned cube of side
    /// `extent` centered at `position` is classified free. Boxes reaching
    /// outside the grid collide.
    pub fn box_is_free(&self, position: Vec3, extent: f64) -> bool {
        let h = extent / 2.0;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let (first, last) = self.grid.overlap_range(a, position[a] - h, position[a] + h);
            if first < 0 || last >= self.grid.dims[a] as i64 || last < first {
                return false;
            }
            lo[a] = first as usize;
            hi[a] = last as usize;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let row = self.grid.index([0, y, z]);
                for x in lo[0]..=hi[0] {
                    if self.class_at(row + x) != VoxelClass::Free {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn mark_dirty(&mut self, lo: [usize; 3], hi: [usize; 3]) {
        self.dirty = Some(match self.dirty {
            None => (lo, hi),
            Some((a, b)) => (
                [a[0].min(lo[0]), a[1].min(lo[1]), a[2].min(lo[2])],
                [b[0].max(hi[0]), b[1].max(hi[1]), b[2].max(hi[2])],
            ),
        });
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty.is_some()
    }

    /// Integrates one depth image taken from `pose`.
    ///
    /// Voxels crossed before a return get a free-space update, the voxel
    /// containing the return gets an occupied update, and rays without a
    /// return clear space up to the camera range. Dropped pixels are
    /// skipped. Each touched voxel is updated once per image, with the
    /// occupied update taking precedence.
    pub fn integrate(&mut self, pose: &Pose, depth: &DepthImage, camera: &CameraModel) -> Result<UpdateStats> {
        if depth.width != camera.width || depth.height != camera.height || depth.depth.len() != camera.pixel_count() {
            return Err(Error::DimensionMismatch(format!(
                "depth image {}x{} ({} px) vs camera {}x{}",
                depth.width,
                depth.height,
                depth.depth.len(),
                camera.width,
                camera.height
            )));
        }
        if !self.grid.contains(self.grid.voxel_of(pose.position)) {
            return Err(Error::InvalidPose(format!("position {:?} is outside the map", pose.position)));
        }
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.touch_mark.fill(0);
            self.hit_mark.fill(0);
            self.stamp = 1;
        }
        let stamp = self.stamp;
        self.touched.clear();
        let dirs = camera.world_dirs(pose);
        for (dir, &d) in dirs.iter().zip(&depth.depth) {
            if DepthImage::is_dropped(d) {
                continue;
            }
            for visit in VoxelRay::new(&self.grid, pose.position, *dir, camera.max_range) {
                let i = visit.index;
                if self.touch_mark[i] != stamp {
                    self.touch_mark[i] = stamp;
                    self.touched.push(i);
                }
                if visit.t_exit > d {
                    self.hit_mark[i] = stamp;
                    break;
                }
            }
        }

        let sensor = self.params.sensor;
        let mut stats = UpdateStats { touched: self.touched.len(), ..Default::default() };
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for k in 0..self.touched.len() {
            let i = self.touched[k];
            let hit = self.hit_mark[i] == stamp;
            let delta = if hit {
                stats.hits += 1;
                sensor.l_occ
            } else {
                stats.free += 1;
                sensor.l_free
            };
            let l = logit(self.occ[i]).clamp(sensor.l_min, sensor.l_max) + delta;
            self.occ[i] = sigmoid(l.clamp(sensor.l_min, sensor.l_max));
            self.unc[i] *= self.decay;
            self.reclass(i);
            let v = self.grid.coords(i);
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        if !self.touched.is_empty() {
            self.mark_dirty(lo, hi);
        }
        self.version += 1;
        self.refresh_pyramid();
        Ok(stats)
    }

    /// Recomputes pyramid cells covering voxels written since the last refresh.
    pub fn refresh_pyramid(&mut self) {
        let Some((mut lo, mut hi)) = self.dirty.take() else { return };
        let prior = [self.params.occ_prior, 1.0];
        for li in 0..self.levels.len() {
            lo = lo.map(|x| x / 2);
            hi = hi.map(|x| x / 2);
            let (below, rest) = self.levels.split_at_mut(li);
            let level = &mut rest[0];
            let child_dims = if li == 0 { self.grid.dims } else { below[li - 1].dims };
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let mut sum = [0.0f64; 2];
                        for c in 0..8 {
                            let cx = 2 * x + (c & 1);
                            let cy = 2 * y + ((c >> 1) & 1);
                            let cz = 2 * z + ((c >> 2) & 1);
                            let val = if cx < child_dims[0] && cy < child_dims[1] && cz < child_dims[2] {
                                let ci = cx + child_dims[0] * (cy + child_dims[1] * cz);
                                if li == 0 {
                                    [self.occ[ci], self.unc[ci]]
                                } else {
                                    below[li - 1].cells[ci]
                                }
                            } else {
                                // out-of-grid children stand for 8^(li) prior voxels
                                prior
                            };
                            sum[0] += val[0];
                            sum[1] += val[1];
                        }
                        let idx = x + level.dims[0] * (y + level.dims[1] * z);
                        level.cells[idx] = [sum[0] / 8.0, sum[1] / 8.0];
                    }
                }
            }
        }
    }

    pub fn pyramid_levels(&self) -> usize {
        self.levels.len()
    }

    #[inline]
    fn cell(&self, level: usize, c: [i64; 3]) -> [f64; 2] {
        let lv = &self.levels[level - 1];
        if c[0] < 0
            || c[1] < 0
            || c[2] < 0
            || c[0] >= lv.dims[0] as i64
            || c[1] >= lv.dims[1] as i64
            || c[2] >= lv.dims[2] as i64
        {
            return [self.params.occ_prior, 1.0];
        }
        lv.cells[c[0] as usize + lv.dims[0] * (c[1] as usize + lv.dims[1] * c[2] as usize)]
    }

    /// Mean `(occ, unc)` over the `2^level` cube nearest `center`,
    /// trilinearly interpolated between pyramid cells of that level.
    pub fn multiscale_average(&self, center: Vec3, level: usize) -> (f64, f64) {
        assert!(level >= 1 && level <= self.levels.len(), "level {level} outside 1..={}", self.levels.len());
        debug_assert!(self.dirty.is_none(), "pyramid is stale; call refresh_pyramid");
        let g = self.grid.to_grid(center);
        let s = (1u64 << level) as f64;
        let u = [g[0] / s - 0.5, g[1] / s - 0.5, g[2] / s - 0.5];
        let base = [u[0].floor(), u[1].floor(), u[2].floor()];
        let f = [u[0] - base[0], u[1] - base[1], u[2] - base[2]];
        let b = [base[0] as i64, base[1] as i64, base[2] as i64];
        let c = |dx: i64, dy: i64, dz: i64| self.cell(level, [b[0] + dx, b[1] + dy, b[2] + dz]);
        // nested lerps keep uniform neighborhoods and zero weights exact
        let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let x00 = lerp(c(0, 0, 0), c(1, 0, 0), f[0]);
        let x10 = lerp(c(0, 1, 0), c(1, 1, 0), f[0]);
        let x01 = lerp(c(0, 0, 1), c(1, 0, 1), f[0]);
        let x11 = lerp(c(0, 1, 1), c(1, 1, 1), f[0]);
        let y0 = lerp(x00, x10, f[1]);
        let y1 = lerp(x01, x11, f[1]);
        let v = lerp(y0, y1, f[2]);
        (v[0], v[1])
    }

    /// Writes a snapshot: header, then `occ` and `unc` as f32 arrays.
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAP_MAGIC)?;
        write_u32(&mut w, MAP_VERSION)?;
        for d in self.grid.dims {
            write_u32(&mut w, d as u32)?;
        }
        write_f32(&mut w, self.grid.resolution)?;
        for o in self.grid.origin {
            write_f32(&mut w, o)?;
        }
        write_f64(&mut w, self.params.eta)?;
        let occ: Vec<f32> = self.occ.iter().map(|&x| x as f32).collect();
        let unc: Vec<f32> = self.unc.iter().map(|&x| x as f32).collect();
        write_f32_slice(&mut w, &occ)?;
        write_f32_slice(&mut w, &unc)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a snapshot; parameters other than `eta` come from `params`.
    pub fn load_snapshot(path: impl AsRef<Path>, params: MapParams) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, MAP_MAGIC)?;
        expect_version(&mut r, MAP_VERSION)?;
        let dims = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
        let resolution = read_f32(&mut r)?;
        let origin = [read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?];
        let eta = read_f64(&mut r)?;
        let grid = GridSpec::new(dims, resolution, origin).map_err(|e| Error::Format(e.to_string()))?;
        let occ = read_f32_vec(&mut r, grid.len())?;
        let unc = read_f32_vec(&mut r, grid.len())?;
        expect_eof(&mut r)?;
        let mut map = Self::new(grid, MapParams { eta, ..params })?;
        map.occ = occ.into_iter().map(f64::from).collect();
        map.unc = unc.into_iter().map(f64::from).collect();
        for i in 0..map.class.len() {
            map.reclass(i);
        }
        map.mark_dirty([0; 3], dims.map(|d| d - 1));
        map.refresh_pyramid();
        Ok(map)
    }
}
