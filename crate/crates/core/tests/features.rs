mod common;

use nbv::features::{extract, FeatureConfig};
use nbv::grid::GridSpec;
use nbv::{MapParams, OccupancyMap, Pose};
use proptest::prelude::*;
use rand::Rng;

const DIMS: [usize; 3] = [40, 24, 16];

fn random_map(seed: u64, shift: usize) -> OccupancyMap {
    let grid = GridSpec::new(DIMS, 0.4, [0.0, 0.0, 0.0]).unwrap();
    let mut map = OccupancyMap::new(grid, MapParams::default()).unwrap();
    let mut rng = nbv::seed::rng(seed);
    for z in 0..DIMS[2] {
        for y in 0..DIMS[1] {
            for x in 0..DIMS[0] {
                let (occ, unc) = (rng.random::<f64>(), rng.random::<f64>());
                if x + shift < DIMS[0] {
                    map.set_voxel([x + shift, y, z], occ, unc);
                }
            }
        }
    }
    map.refresh_pyramid();
    map
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn even_voxel_translation_shifts_lattice(seed in any::<u64>(), half_shift in 1usize..3, jitter in prop::array::uniform3(0.0..0.4f64)) {
        let k = 2 * half_shift;
        let cfg = FeatureConfig { dims: [6, 4, 4], levels: 1, forward_offset: 0.0 };
        let a = random_map(seed, 0);
        let b = random_map(seed, k);
        let r = a.grid().res();
        let pose = Pose::new([5.0 + jitter[0], 4.0 + jitter[1], 3.0 + jitter[2]], 0.0);
        let moved = Pose::new([pose.position[0] + k as f64 * r, pose.position[1], pose.position[2]], 0.0);
        let sa = extract(&a, &pose, &cfg);
        let sb = extract(&b, &moved, &cfg);
        // The lattice stays clear of the shifted-in border strip.
        let half = (cfg.dims[0] as f64 - 1.0) / 2.0 * 2.0 * r;
        let support = 2.0 * r;
        prop_assert!(pose.position[0] - half - support > 0.0);
        prop_assert!(moved.position[0] + half + support < DIMS[0] as f64 * r);
        for v in 0..cfg.points() * 2 {
            prop_assert!((sa.values[v] - sb.values[v]).abs() < 1e-6, "{} vs {}", sa.values[v], sb.values[v]);
        }
    }

    #[test]
    fn values_are_unit_interval_and_pure(seed in any::<u64>(), x in -2.0..18.0f64, y in -2.0..11.0f64, z in -1.0..7.0f64, yaw in 0.0..6.3f64) {
        let map = random_map(seed, 0);
        let cfg = FeatureConfig { dims: [8, 8, 4], levels: 3, forward_offset: 1.0 };
        let pose = Pose::new([x, y, z], yaw);
        let s = extract(&map, &pose, &cfg);
        prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(s, extract(&map, &pose, &cfg));
    }
}

#[test]
fn fresh_map_uncertainty_is_one_everywhere() {
    let scene = common::oracles::toy_scene(0);
    let map = OccupancyMap::new(*scene.grid(), MapParams::default()).unwrap();
    let cfg = FeatureConfig::default();
    let s = extract(&map, &Pose::new([12.0, 12.0, 4.0], 1.0), &cfg);
    for i in 0..cfg.points() {
        for l in 0..cfg.levels {
            assert_eq!(s.values[i * cfg.channels() + 2 * l], 0.5);
            assert_eq!(s.values[i * cfg.channels() + 2 * l + 1], 1.0);
        }
    }
}
