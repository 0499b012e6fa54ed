mod common;

use common::oracles::{free_pose, ray_voxels, toy_scene};
use nbv::raycast::{walk_all, VoxelRay};
use nbv::sensor::cast_hits;
use nbv::{apply_noise, render_depth, CameraModel, DepthImage, NoiseModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rendered_rays_stop_at_first_occupied_voxel(scene_seed in 0u64..4, pose_seed in any::<u64>(), range in 2.0..25.0f64) {
        let scene = toy_scene(scene_seed);
        let cam = CameraModel { width: 16, height: 12, horizontal_fov: 90.0, max_range: range };
        let pose = free_pose(&scene, &mut nbv::seed::rng(pose_seed));
        let img = render_depth(&scene, &pose, &cam).unwrap();
        let hits = cast_hits(&scene, &pose, &cam).unwrap();
        for ((dir, &d), hit) in cam.world_dirs(&pose).iter().zip(&img.depth).zip(&hits) {
            prop_assert!(d == DepthImage::NO_RETURN || d <= range);
            let walk = ray_voxels(scene.grid(), pose.position, *dir, range);
            let first = walk.iter().find(|v| scene.occupied_at(v.0));
            match (first, hit) {
                (None, None) => prop_assert_eq!(d, DepthImage::NO_RETURN),
                (Some(&(i, t0, _)), Some(h)) => {
                    prop_assert_eq!(i, h.index);
                    prop_assert!((t0 - d).abs() < 1e-9, "depth {} vs entry {}", d, t0);
                }
                _ => prop_assert!(false, "hit {:?} vs reference {:?}", hit, first),
            }
        }
    }

    #[test]
    fn interleaved_walk_visits_what_each_ray_visits(
        pose_seed in any::<u64>(),
        rays in 0usize..40,
        range in 0.5..30.0f64,
        wall in 2u64..50,
    ) {
        let scene = toy_scene(3);
        let grid = scene.grid();
        let mut rng = nbv::seed::rng(pose_seed);
        let pose = free_pose(&scene, &mut rng);
        let dirs: Vec<[f64; 3]> = (0..rays)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| rand::Rng::random_range(&mut rng, -1.0..1.0));
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.map(|x| x / n)
            })
            .collect();
        // Arbitrary stopping voxels, so rays end early as well as at the range.
        let stop = |i: usize| (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).is_multiple_of(wall);
        let mut expect = Vec::new();
        for d in &dirs {
            for v in VoxelRay::new(grid, pose.position, *d, range) {
                expect.push(v.index);
                if stop(v.index) {
                    break;
                }
            }
        }
        let mut got = Vec::new();
        walk_all(dirs.iter().map(|d| VoxelRay::new(grid, pose.position, *d, range)), |i| {
            got.push(i);
            !stop(i)
        });
        expect.sort_unstable();
        got.sort_unstable();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn render_is_pure(pose_seed in any::<u64>()) {
        let scene = toy_scene(1);
        let cam = CameraModel::default();
        let pose = free_pose(&scene, &mut nbv::seed::rng(pose_seed));
        let a = render_depth(&scene, &pose, &cam).unwrap();
        let b = render_depth(&scene, &pose, &cam).unwrap();
        prop_assert_eq!(a.depth.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.depth.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn noise_keeps_sentinels_and_range(sigma in 0.0..1.0f64, drop in 0.0..1.0f64, seed in any::<u64>()) {
        let scene = toy_scene(2);
        let cam = CameraModel::default();
        let pose = free_pose(&scene, &mut nbv::seed::rng(seed));
        let img = render_depth(&scene, &pose, &cam).unwrap();
        let noisy = apply_noise(&img, &NoiseModel { sigma, drop_fraction: drop, seed }, cam.max_range);
        prop_assert_eq!(noisy.dropped_count(), (drop * cam.pixel_count() as f64).round() as usize);
        for (&a, &b) in img.depth.iter().zip(&noisy.depth) {
            if b.is_nan() {
                continue;
            }
            if a == DepthImage::NO_RETURN {
                prop_assert_eq!(b, DepthImage::NO_RETURN);
            } else {
                prop_assert!(b >= 0.0 && b <= cam.max_range);
            }
        }
    }
}

#[test]
fn noise_grid_values() {
    let sigmas: Vec<f64> = NoiseModel::LEVELS.iter().map(|l| l.1).collect();
    assert_eq!(sigmas, vec![0.1, 0.2, 0.5, 1.0]);
    assert_eq!(NoiseModel::DROP_FRACTION, 0.4);
}
