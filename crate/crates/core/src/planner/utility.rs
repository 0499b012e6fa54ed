//! View utility functions: oracle, learned, frontier and random.

use std::cell::RefCell;

use rayon::prelude::*;

use super::Viewpoint;
use crate::error::{Error, Result};
use crate::features::{extract_into, FeatureConfig};
use crate::geom::Pose;
use crate::net::UtilityNet;
use crate::occupancy::{OccupancyMap, VoxelClass};
use crate::oracle::{oracle_score, OracleContext};
use crate::raycast::{walk_all, VoxelRay};
use crate::seed;
use crate::sensor::CameraModel;

/// Scores viewpoints against one map snapshot. Scores are nonnegative and
/// depend only on the map and the viewpoint.
pub trait Utility: Sync {
    fn name(&self) -> &str;

    fn score(&self, map: &OccupancyMap, views: &[&Viewpoint]) -> Result<Vec<f64>>;

    /// Rescore every stale candidate in one call instead of one at a time.
    fn batch_rescore(&self) -> bool {
        false
    }
}

pub struct OracleUtility<'a> {
    ctx: &'a OracleContext<'a>,
}

impl<'a> OracleUtility<'a> {
    pub fn new(ctx: &'a OracleContext<'a>) -> Self {
        Self { ctx }
    }
}

impl Utility for OracleUtility<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn score(&self, map: &OccupancyMap, views: &[&Viewpoint]) -> Result<Vec<f64>> {
        views.par_iter().map(|v| oracle_score(map, &v.pose, self.ctx)).collect()
    }
}

pub struct LearnedUtility {
    net: UtilityNet<f32>,
    features: FeatureConfig,
}

impl LearnedUtility {
    pub fn new(net: UtilityNet<f32>, features: FeatureConfig) -> Result<Self> {
        features.validate()?;
        if !net.config().matches_features(&features) {
            return Err(Error::DimensionMismatch(format!(
                "model expects {:?}×{} inputs, features give {:?}×{}",
                net.config().input_dims,
                net.config().input_channels,
                features.dims,
                features.channels()
            )));
        }
        Ok(Self { net, features })
    }

    pub fn net(&self) -> &UtilityNet<f32> {
        &self.net
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    /// Predicted utility of one pose, clamped at 0.
    pub fn score_pose(&self, map: &OccupancyMap, pose: &Pose) -> Result<f64> {
        let mut x = vec![0f32; self.features.len()];
        extract_into(map, pose, &self.features, &mut x);
        Ok(self.net.predict(&x)?[0].max(0.0))
    }
}

const LEARNED_CHUNK: usize = 64;

impl Utility for LearnedUtility {
    fn name(&self) -> &str {
        "learned"
    }

    fn score(&self, map: &OccupancyMap, views: &[&Viewpoint]) -> Result<Vec<f64>> {
        let len = self.features.len();
        let chunks: Vec<Result<Vec<f64>>> = views
            .par_chunks(LEARNED_CHUNK)
            .map(|chunk| {
                let mut x = vec![0f32; chunk.len() * len];
                for (v, out) in chunk.iter().zip(x.chunks_mut(len)) {
                    extract_into(map, &v.pose, &self.features, out);
                }
                Ok(self.net.predict(&x)?.into_iter().map(|s| s.max(0.0)).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(views.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn batch_rescore(&self) -> bool {
        true
    }
}

pub struct FrontierUtility {
    camera: CameraModel,
}

impl FrontierUtility {
    pub fn new(camera: CameraModel) -> Result<Self> {
        camera.validate()?;
        Ok(Self { camera })
    }
}

thread_local! {
    // One bit per voxel, cleared per call; small enough to stay in L1.
    static SEEN: RefCell<Vec<u64>> = const { RefCell::new(Vec::new()) };
}

/// Number of distinct unknown voxels crossed by the camera rays cast through
/// the belief map. A ray stops at the first occupied voxel or at the range
/// limit.
pub fn frontier_utility(map: &OccupancyMap, pose: &Pose, camera: &CameraModel) -> usize {
    let grid = map.grid();
    SEEN.with(|cell| {
        let seen = &mut *cell.borrow_mut();
        seen.clear();
        seen.resize(grid.len().div_ceil(64), 0);
        let mut count = 0;
        let rays = camera.world_dirs(pose).into_iter().map(|d| VoxelRay::new(grid, pose.position, d, camera.max_range));
        walk_all(rays, |i| match map.class_at(i) {
            VoxelClass::Occupied => false,
            VoxelClass::Unknown => {
                let (w, bit) = (i / 64, 1u64 << (i % 64));
                count += (seen[w] & bit == 0) as usize;
                seen[w] |= bit;
                true
            }
            VoxelClass::Free => true,
        });
        count
    })
}

impl Utility for FrontierUtility {
    fn name(&self) -> &str {
        "frontier"
    }

    fn score(&self, map: &OccupancyMap, views: &[&Viewpoint]) -> Result<Vec<f64>> {
        Ok(views.par_iter().map(|v| frontier_utility(map, &v.pose, &self.camera) as f64).collect())
    }
}

/// Uniform score in `[0, 1)` drawn per (seed, map version, viewpoint).
pub struct RandomUtility {
    seed: u64,
}

impl RandomUtility {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Utility for RandomUtility {
    fn name(&self) -> &str {
        "random"
    }

    fn score(&self, map: &OccupancyMap, views: &[&Viewpoint]) -> Result<Vec<f64>> {
        let base = seed::child(self.seed, map.version());
        Ok(views.iter().map(|v| seed::unit_from_hash(seed::child(base, v.key.hash()))).collect())
    }
}
