//! Ground-truth-aware scoring of viewpoints.

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::occupancy::OccupancyMap;
use crate::scene::{surface_set, GroundTruthScene, SurfaceSet};
use crate::sensor::{cast_hits, CameraModel};

/// Ground truth needed by the oracle: the scene, its surface voxels and the
/// camera used for measurements.
#[derive(Debug, Clone)]
pub struct OracleContext<'a> {
    pub scene: &'a GroundTruthScene,
    pub surface: SurfaceSet,
    pub camera: CameraModel,
}

impl<'a> OracleContext<'a> {
    pub fn new(scene: &'a GroundTruthScene, camera: CameraModel) -> Self {
        Self { scene, surface: surface_set(scene), camera }
    }

    fn check_map(&self, map: &OccupancyMap) -> Result<()> {
        if map.grid() != self.scene.grid() {
            return Err(Error::DimensionMismatch(format!(
                "map grid {:?} does not match scene grid {:?}",
                map.grid(),
                self.scene.grid()
            )));
        }
        Ok(())
    }

    /// Surface voxels hit by at least one ray from `pose`, sorted and unique.
    pub fn visible_surface(&self, pose: &Pose) -> Result<Vec<usize>> {
        let mut hits: Vec<usize> = cast_hits(self.scene, pose, &self.camera)?
            .into_iter()
            .flatten()
            .map(|h| h.index)
            .filter(|&i| self.surface.contains(i))
            .collect();
        hits.sort_unstable();
        hits.dedup();
        Ok(hits)
    }
}

/// Certainty-weighted count of observed surface voxels: `Σ_{v∈Surf} (1 − unc(v))`.
pub fn obs_surf(map: &OccupancyMap, ctx: &OracleContext) -> Result<f64> {
    ctx.check_map(map)?;
    Ok(ctx.surface.indices().iter().map(|&i| 1.0 - map.unc_at(i)).sum())
}

/// Decrease of surface uncertainty a measurement from `pose` would produce:
/// `(1 − exp(−η)) · Σ_{v∈S_p} unc(v)` over the visible surface voxels.
pub fn oracle_score(map: &OccupancyMap, pose: &Pose, ctx: &OracleContext) -> Result<f64> {
    ctx.check_map(map)?;
    let visible = ctx.visible_surface(pose)?;
    let sum: f64 = visible.iter().map(|&i| map.unc_at(i)).sum();
    Ok((1.0 - map.decay()) * sum)
}
