//! Ground-truth world: a dense occupied/free voxel grid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::grid::GridSpec;
use crate::seed;

const SCENE_MAGIC: &[u8; 4] = b"NBVS";
const SCENE_VERSION: u32 = 1;

/// Dense boolean voxel grid of the true world. The outermost voxel layer is
/// always free so that every ray leaves through free space.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    grid: GridSpec,
    occupied: Vec<bool>,
}

impl GroundTruthScene {
    pub fn new(grid: GridSpec, occupied: Vec<bool>) -> Result<Self> {
        if occupied.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "occupancy has {} voxels, grid has {}",
                occupied.len(),
                grid.len()
            )));
        }
        let scene = Self { grid, occupied };
        if let Some(v) = scene.first_occupied_boundary_voxel() {
            return Err(Error::InvalidParameter(format!("boundary voxel {v:?} is occupied")));
        }
        Ok(scene)
    }

    /// Builds a scene by evaluating `f` at every voxel index.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut([usize; 3]) -> bool) -> Result<Self> {
        let occupied = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, occupied)
    }

    pub fn empty(grid: GridSpec) -> Self {
        Self { grid, occupied: vec![false; grid.len()] }
    }

    fn first_occupied_boundary_voxel(&self) -> Option<[usize; 3]> {
        let d = self.grid.dims;
        (0..self.grid.len()).map(|i| self.grid.coords(i)).find(|v| {
            self.occupied[self.grid.index(*v)]
                && (0..3).any(|a| v[a] == 0 || v[a] == d[a] - 1)
        })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn occupied_at(&self, index: usize) -> bool {
        self.occupied[index]
    }

    /// Out-of-grid voxels count as free.
    #[inline]
    pub fn is_occupied(&self, v: [i64; 3]) -> bool {
        self.grid.contains(v) && self.occupied[self.grid.index([v[0] as usize, v[1] as usize, v[2] as usize])]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupied
    }

    /// True if every voxel whose center lies in the axis-aligned box is free.
    pub fn box_is_free(&self, center: Vec3, extent: f64) -> bool {
        let h = extent / 2.0;
        let ranges: Vec<(i64, i64)> =
            (0..3).map(|a| self.grid.center_range(a, center[a] - h, center[a] + h)).collect();
        for z in ranges[2].0..=ranges[2].1 {
            for y in ranges[1].0..=ranges[1].1 {
                for x in ranges[0].0..=ranges[0].1 {
                    if self.is_occupied([x, y, z]) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SCENE_MAGIC)?;
        write_u32(&mut w, SCENE_VERSION)?;
        for d in self.grid.dims {
            write_u32(&mut w, d as u32)?;
        }
        write_f32(&mut w, self.grid.resolution)?;
        for o in self.grid.origin {
            write_f32(&mut w, o)?;
        }
        let mut bits = vec![0u8; self.grid.len().div_ceil(8)];
        for (i, &o) in self.occupied.iter().enumerate() {
            if o {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, SCENE_MAGIC)?;
        expect_version(&mut r, SCENE_VERSION)?;
        let dims = [read_u32(&mut r)? as usize, read_u32(&mut r)? as usize, read_u32(&mut r)? as usize];
        let resolution = read_f32(&mut r)?;
        let origin = [read_f32(&mut r)?, read_f32(&mut r)?, read_f32(&mut r)?];
        let grid = GridSpec::new(dims, resolution, origin).map_err(|e| Error::Format(e.to_string()))?;
        let bits = read_bytes(&mut r, grid.len().div_ceil(8))?;
        expect_eof(&mut r)?;
        let occupied = (0..grid.len()).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        Self::new(grid, occupied).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Ground-truth voxels that intersect the surface: occupied voxels with at
/// least one free 6-neighbor.
#[derive(Debug, Clone)]
pub struct SurfaceSet {
    indices: Vec<usize>,
    member: Vec<bool>,
}

impl SurfaceSet {
    pub fn from_scene(scene: &GroundTruthScene) -> Self {
        let g = scene.grid();
        let mut member = vec![false; g.len()];
        let mut indices = Vec::new();
        for idx in 0..g.len() {
            if !scene.occupied_at(idx) {
                continue;
            }
            let v = g.coords(idx);
            let v = [v[0] as i64, v[1] as i64, v[2] as i64];
            let exposed = NEIGHBORS_6.iter().any(|n| !scene.is_occupied([v[0] + n[0], v[1] + n[1], v[2] + n[2]]));
            if exposed {
                member[idx] = true;
                indices.push(idx);
            }
        }
        Self { indices, member }
    }

    /// Sorted linear indices.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.member[index]
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn surface_set(scene: &GroundTruthScene) -> SurfaceSet {
    SurfaceSet::from_scene(scene)
}

const NEIGHBORS_6: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Parameters of the procedural city generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityParams {
    pub seed: u64,
    /// Scene size in meters.
    pub extent: [f64; 3],
    pub resolution: f64,
    pub building_count: usize,
    /// Building height range in meters.
    pub height_range: (f64, f64),
    /// Building footprint side range in meters.
    pub footprint_range: (f64, f64),
}

impl Default for CityParams {
    fn default() -> Self {
        Self {
            seed: 7,
            extent: [40.0, 40.0, 20.0],
            resolution: 0.4,
            building_count: 6,
            height_range: (4.0, 14.0),
            footprint_range: (4.0, 12.0),
        }
    }
}

/// World-space axis-aligned box; faces lie on voxel boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Half-open containment test.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] < self.max[a])
    }
}

/// Geometry of a generated city before rasterization: the ground slab
/// followed by one box per building.
#[derive(Debug, Clone)]
pub struct CityLayout {
    pub grid: GridSpec,
    pub boxes: Vec<Aabb>,
}

impl CityLayout {
    pub fn generate(params: &CityParams) -> Result<Self> {
        if !(params.resolution > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "resolution must be > 0, got {}",
                params.resolution
            )));
        }
        let resolution = params.resolution as f32;
        let r = resolution as f64;
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = (params.extent[a] / r).round();
            if !(n >= 8.0) {
                return Err(Error::InvalidParameter(format!(
                    "extent {:?} at resolution {} gives fewer than 8 voxels on axis {a}",
                    params.extent, params.resolution
                )));
            }
            dims[a] = n as usize;
        }
        let (h_lo, h_hi) = params.height_range;
        if !(h_lo > 0.0 && h_hi >= h_lo) {
            return Err(Error::InvalidParameter(format!("bad height range {:?}", params.height_range)));
        }
        let (f_lo, f_hi) = params.footprint_range;
        if !(f_lo > 0.0 && f_hi >= f_lo) {
            return Err(Error::InvalidParameter(format!("bad footprint range {:?}", params.footprint_range)));
        }
        // The slab occupies voxel layer 1 so that its top face is at z = 0.
        let origin = [0.0f32, 0.0, -2.0 * resolution];
        let grid = GridSpec::new(dims, resolution, origin)?;
        let o = grid.origin_f64();
        let face = |axis: usize, i: usize| o[axis] + i as f64 * r;
        let vbox = |lo: [usize; 3], hi: [usize; 3]| Aabb {
            min: [face(0, lo[0]), face(1, lo[1]), face(2, lo[2])],
            max: [face(0, hi[0]), face(1, hi[1]), face(2, hi[2])],
        };

        let mut boxes = vec![vbox([1, 1, 1], [dims[0] - 1, dims[1] - 1, 2])];
        let mut rng = seed::rng(seed::substream(params.seed, "scene"));
        let top = dims[2] - 1;
        for _ in 0..params.building_count {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..2 {
                let interior = dims[a] - 2;
                let side_m = rng.random_range(f_lo..=f_hi);
                let side = ((side_m / r).round() as usize).clamp(1, interior);
                let start = rng.random_range(1..=(dims[a] - 1 - side));
                lo[a] = start;
                hi[a] = start + side;
            }
            let h_m = rng.random_range(h_lo..=h_hi);
            let h = ((h_m / r).round() as usize).max(1);
            lo[2] = 2;
            hi[2] = (2 + h).min(top);
            if hi[2] > lo[2] {
                boxes.push(vbox(lo, hi));
            }
        }
        Ok(Self { grid, boxes })
    }

    pub fn rasterize(&self) -> Result<GroundTruthScene> {
        let g = self.grid;
        let mut occupied = vec![false; g.len()];
        for b in &self.boxes {
            let range = |a: usize| {
                let o = g.origin[a] as f64;
                let r = g.res();
                let first = ((b.min[a] - o) / r - 0.5).ceil().max(0.0) as usize;
                let end = (((b.max[a] - o) / r - 0.5).ceil().max(0.0) as usize).min(g.dims[a]);
                first..end
            };
            for z in range(2) {
                for y in range(1) {
                    for x in range(0) {
                        occupied[g.index([x, y, z])] = true;
                    }
                }
            }
        }
        GroundTruthScene::new(g, occupied)
    }
}

/// Deterministic desk-scale city: a ground slab plus random box buildings.
pub fn generate_city_scene(params: &CityParams) -> Result<GroundTruthScene> {
    CityLayout::generate(params)?.rasterize()
}
