//! Brute-force reference implementations used to cross-check the library.

use nbv::grid::GridSpec;
use nbv::{CityParams, GroundTruthScene, Vec3};

/// Interval `(t0, t1)` over which the ray `origin + t·dir` lies inside the
/// box, clipped to `t >= 0`. `None` when the overlap has no length.
pub fn ray_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
            continue;
        }
        let ta = (lo[a] - origin[a]) / dir[a];
        let tb = (hi[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Every voxel the ray passes through before `max_t`, ordered by entry
/// distance, found by testing each voxel box in the segment's bounding box.
pub fn ray_voxels(grid: &GridSpec, origin: Vec3, dir: Vec3, max_t: f64) -> Vec<(usize, f64, f64)> {
    let r = grid.res();
    let o = grid.origin_f64();
    let end = [origin[0] + dir[0] * max_t, origin[1] + dir[1] * max_t, origin[2] + dir[2] * max_t];
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((origin[a].min(end[a]) - o[a]) / r).floor() as i64 - 1;
        let h = ((origin[a].max(end[a]) - o[a]) / r).floor() as i64 + 1;
        lo[a] = l.max(0) as usize;
        hi[a] = (h.max(-1) + 1).min(grid.dims[a] as i64) as usize;
    }
    let mut out = Vec::new();
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let bl = [o[0] + x as f64 * r, o[1] + y as f64 * r, o[2] + z as f64 * r];
                let bh = [bl[0] + r, bl[1] + r, bl[2] + r];
                if let Some((t0, t1)) = ray_box(origin, dir, bl, bh) {
                    if t0 < max_t {
                        out.push((grid.index([x, y, z]), t0, t1));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Voxels a depth measurement touches, and the voxel holding its return.
pub fn measured_voxels(grid: &GridSpec, origin: Vec3, dir: Vec3, depth: f64, max_range: f64) -> (Vec<usize>, Option<usize>) {
    if depth.is_nan() {
        return (Vec::new(), None);
    }
    let mut touched = Vec::new();
    for (i, t0, t1) in ray_voxels(grid, origin, dir, max_range) {
        if t0 > depth {
            break;
        }
        touched.push(i);
        if t1 > depth {
            return (touched, Some(i));
        }
    }
    (touched, None)
}

/// Voxels a perfect sensor observes along one ray: everything up to and
/// including the first occupied voxel of `scene`, or up to `max_range`.
/// Works from geometry alone, so rendered depths that sit exactly on a
/// voxel face cannot tip it either way.
pub fn seen_by_ray(scene: &GroundTruthScene, origin: Vec3, dir: Vec3, max_range: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, _, _) in ray_voxels(scene.grid(), origin, dir, max_range) {
        out.push(i);
        if scene.occupied_at(i) {
            break;
        }
    }
    out
}

pub fn toy_params(seed: u64) -> CityParams {
    CityParams { seed, extent: [24.0, 24.0, 12.0], building_count: 5, ..CityParams::default() }
}

pub fn toy_scene(seed: u64) -> GroundTruthScene {
    nbv::generate_city_scene(&toy_params(seed)).expect("toy scene")
}

/// Random pose whose voxel and its 26 neighbors are free in `scene`.
pub fn free_pose<R: rand::Rng>(scene: &GroundTruthScene, rng: &mut R) -> nbv::Pose {
    let g = scene.grid();
    loop {
        let v = [
            rng.random_range(1..g.dims[0] - 1),
            rng.random_range(1..g.dims[1] - 1),
            rng.random_range(2..g.dims[2] - 1),
        ];
        let c = g.voxel_center(v);
        if !scene.box_is_free(c, 3.0 * g.res()) {
            continue;
        }
        let jitter = |rng: &mut R| rng.random_range(-0.3..0.3) * g.res();
        let p = [c[0] + jitter(rng), c[1] + jitter(rng), c[2] + jitter(rng)];
        return nbv::Pose::new(p, rng.random_range(0.0..std::f64::consts::TAU));
    }
}

/// A map built from `0..max_shots` random measurements of `scene` plus a
/// fresh random query pose.
pub fn random_state<R: rand::Rng>(
    scene: &GroundTruthScene,
    camera: &nbv::CameraModel,
    max_shots: usize,
    rng: &mut R,
) -> (nbv::OccupancyMap, nbv::Pose) {
    let mut map = nbv::OccupancyMap::new(*scene.grid(), nbv::MapParams::default()).expect("map");
    for _ in 0..rng.random_range(0..max_shots) {
        let p = free_pose(scene, rng);
        let img = nbv::render_depth(scene, &p, camera).expect("render");
        map.integrate(&p, &img, camera).expect("integrate");
    }
    let pose = free_pose(scene, rng);
    (map, pose)
}
