mod common;

use common::oracles::{random_state, toy_scene};
use nbv::oracle::{obs_surf, oracle_score, OracleContext};
use nbv::{render_depth, CameraModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_form_matches_difference_and_is_nonnegative(scene_seed in 0u64..3, seed in any::<u64>()) {
        let scene = toy_scene(scene_seed);
        let cam = CameraModel::default();
        let ctx = OracleContext::new(&scene, cam);
        let (map, pose) = random_state(&scene, &cam, 6, &mut nbv::seed::rng(seed));
        let score = oracle_score(&map, &pose, &ctx).unwrap();
        prop_assert!(score >= 0.0);
        let before = obs_surf(&map, &ctx).unwrap();
        let mut copy = map.clone();
        copy.integrate(&pose, &render_depth(&scene, &pose, &cam).unwrap(), &cam).unwrap();
        let gain = obs_surf(&copy, &ctx).unwrap() - before;
        prop_assert!(gain >= 0.0);
        prop_assert!((gain - score).abs() <= 1e-9 * score.abs().max(1.0), "gain {} score {}", gain, score);
    }

    #[test]
    fn obs_surf_never_decreases(seed in any::<u64>()) {
        let scene = toy_scene(4);
        let cam = CameraModel::default();
        let ctx = OracleContext::new(&scene, cam);
        let mut rng = nbv::seed::rng(seed);
        let (mut map, _) = random_state(&scene, &cam, 1, &mut rng);
        let mut last = obs_surf(&map, &ctx).unwrap();
        for _ in 0..8 {
            let p = common::oracles::free_pose(&scene, &mut rng);
            map.integrate(&p, &render_depth(&scene, &p, &cam).unwrap(), &cam).unwrap();
            let now = obs_surf(&map, &ctx).unwrap();
            prop_assert!(now >= last);
            last = now;
        }
    }
}

#[test]
fn repeated_view_scores_decay_geometrically() {
    let scene = toy_scene(6);
    let cam = CameraModel::default();
    let ctx = OracleContext::new(&scene, cam);
    let mut rng = nbv::seed::rng(2);
    let (mut map, pose) = loop {
        let (map, pose) = random_state(&scene, &cam, 4, &mut rng);
        if oracle_score(&map, &pose, &ctx).unwrap() > 10.0 {
            break (map, pose);
        }
    };
    let img = render_depth(&scene, &pose, &cam).unwrap();
    let mut prev = oracle_score(&map, &pose, &ctx).unwrap();
    for _ in 0..5 {
        map.integrate(&pose, &img, &cam).unwrap();
        let now = oracle_score(&map, &pose, &ctx).unwrap();
        let want = map.decay() * prev;
        assert!((now - want).abs() <= 1e-12 * want, "{now} vs {want}");
        prev = now;
    }
}
