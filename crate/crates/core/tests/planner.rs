mod common;

use common::oracles::{ray_voxels, toy_scene};
use nbv::features::FeatureConfig;
use nbv::net::{NetConfig, UtilityNet};
use nbv::occupancy::VoxelClass;
use nbv::oracle::OracleContext;
use nbv::planner::*;
use nbv::{CameraModel, GroundTruthScene, OccupancyMap, Pose, Result};
use std::collections::HashMap;

#[derive(Default)]
struct MapLog {
    maps: Vec<OccupancyMap>,
}

impl EpisodeObserver for MapLog {
    fn on_step(&mut self, _t: usize, map: &OccupancyMap, _current: &Pose, _eligible: &[(usize, &Viewpoint)]) -> Result<()> {
        self.maps.push(map.clone());
        Ok(())
    }
}

fn episode(t_end: usize, exhaustive: bool) -> EpisodeConfig {
    let mut cfg = EpisodeConfig::default();
    cfg.planner.t_end = t_end;
    cfg.planner.exhaustive = exhaustive;
    cfg
}

#[test]
fn oracle_gain_equals_chosen_score() {
    let scene = toy_scene(0);
    let cfg = episode(12, true);
    let ctx = OracleContext::new(&scene, cfg.camera);
    for e in 0..3 {
        let start = sample_start(&scene, &cfg, e).unwrap();
        let res = run_episode(&ctx, &OracleUtility::new(&ctx), &start, &cfg, None).unwrap();
        let s = &res.trace.steps;
        for t in 1..s.len() {
            let gain = s[t].obs_surf - s[t - 1].obs_surf;
            assert!((gain - s[t].chosen_score).abs() <= 1e-9 * gain.abs().max(1.0), "episode {e} t {t}: {gain} vs {}", s[t].chosen_score);
        }
    }
}

#[test]
fn lazy_selection_matches_exhaustive() {
    let scene = toy_scene(1);
    let lazy = episode(20, false);
    let full = episode(20, true);
    let ctx = OracleContext::new(&scene, lazy.camera);
    let u = OracleUtility::new(&ctx);
    for e in 0..3 {
        let start = sample_start(&scene, &lazy, 100 + e).unwrap();
        let a = run_episode(&ctx, &u, &start, &lazy, None).unwrap().trace;
        let b = run_episode(&ctx, &u, &start, &full, None).unwrap().trace;
        assert_eq!(a.moves(), b.moves());
        assert_eq!(a.obs_surf_curve(), b.obs_surf_curve());
        let (ea, eb): (usize, usize) = (a.steps.iter().map(|s| s.evals).sum(), b.steps.iter().map(|s| s.evals).sum());
        assert!(ea <= eb, "lazy {ea} exhaustive {eb}");
    }
}

#[test]
fn episode_invariants_hold() {
    let scene = toy_scene(2);
    let cfg = episode(40, false);
    let ctx = OracleContext::new(&scene, cfg.camera);
    let utilities: Vec<Box<dyn Utility>> = vec![
        Box::new(OracleUtility::new(&ctx)),
        Box::new(FrontierUtility::new(cfg.camera).unwrap()),
        Box::new(RandomUtility::new(3)),
    ];
    for u in &utilities {
        let start = sample_start(&scene, &cfg, 7).unwrap();
        let mut log = MapLog::default();
        let res = run_episode(&ctx, u.as_ref(), &start, &cfg, Some(&mut log)).unwrap();
        let steps = &res.trace.steps;
        assert_eq!(steps[0].pose, start);
        assert!(steps[0].chosen_score.is_nan());
        for w in steps.windows(2) {
            assert!(w[1].obs_surf >= w[0].obs_surf, "{}", u.name());
        }
        for t in 1..steps.len() {
            assert!(collision_free(&log.maps[t - 1], steps[t].pose.position, cfg.planner.collision_extent));
            assert!(scene.box_is_free(steps[t].pose.position, 0.0));
        }
        let mut visits: HashMap<ViewKey, u32> = HashMap::new();
        for p in res.trace.moves() {
            *visits.entry(ViewKey::of(&p)).or_default() += 1;
        }
        assert!(visits.values().all(|&n| n <= cfg.planner.max_visits), "{}", u.name());
        assert!(steps.iter().all(|s| s.eligible_neighbors <= 9));
    }
}

#[test]
fn zero_steps_gives_start_row_only() {
    let scene = toy_scene(3);
    let cfg = episode(0, false);
    let ctx = OracleContext::new(&scene, cfg.camera);
    let start = sample_start(&scene, &cfg, 1).unwrap();
    let res = run_episode(&ctx, &RandomUtility::new(0), &start, &cfg, None).unwrap();
    assert_eq!(res.trace.steps.len(), 1);
    assert_eq!(res.trace.to_csv().lines().count(), 2);
}

#[test]
fn sampled_starts_are_valid() {
    let scene = toy_scene(4);
    let cfg = EpisodeConfig::default();
    for s in 0..10 {
        let start = sample_start(&scene, &cfg, s).unwrap();
        assert!(scene.box_is_free(start.position, cfg.planner.clear_extent));
        let map = OccupancyMap::init(*scene.grid(), cfg.map, start.position, cfg.planner.clear_extent).unwrap();
        assert!(collision_free(&map, start.position, cfg.planner.collision_extent));
        for n in neighbors(&start, &cfg.planner) {
            assert!(collision_free(&map, n.position, cfg.planner.collision_extent));
        }
        let k = start.yaw.to_degrees() / cfg.planner.yaw_step_deg;
        assert!((k - k.round()).abs() < 1e-9);
    }
    assert_eq!(sample_start(&scene, &cfg, 3).unwrap(), sample_start(&scene, &cfg, 3).unwrap());
}

#[test]
fn solid_scene_has_no_start() {
    let grid = *toy_scene(0).grid();
    let scene = GroundTruthScene::from_fn(grid, |v| {
        let interior = (0..3).all(|a| v[a] > 0 && v[a] < grid.dims[a] - 1);
        interior && v[0] % 3 == 0
    }).unwrap();
    let mut cfg = EpisodeConfig::default();
    cfg.planner.max_start_attempts = 200;
    assert!(matches!(sample_start(&scene, &cfg, 0), Err(nbv::Error::NoValidStart(200))));
}

#[test]
fn collision_box_straddling_clear_boundary_collides() {
    let scene = toy_scene(5);
    let cfg = EpisodeConfig::default();
    let start = sample_start(&scene, &cfg, 2).unwrap();
    let map = OccupancyMap::init(*scene.grid(), cfg.map, start.position, 6.0).unwrap();
    let r = scene.grid().res();
    // The cleared cube spans 15 voxels, 7.5 voxels either side of the center.
    let edge = 7.5 * r;
    let inside = [start.position[0] + edge - 0.5 - 0.25 * r, start.position[1], start.position[2]];
    let straddle = [start.position[0] + edge - 0.5 + 0.5 * r, start.position[1], start.position[2]];
    assert!(collision_free(&map, inside, 1.0));
    assert!(!collision_free(&map, straddle, 1.0));
}

fn brute_frontier(map: &OccupancyMap, pose: &Pose, cam: &CameraModel) -> usize {
    let mut seen = std::collections::HashSet::new();
    for d in cam.world_dirs(pose) {
        for (i, _, _) in ray_voxels(map.grid(), pose.position, d, cam.max_range) {
            match map.class_at(i) {
                VoxelClass::Occupied => break,
                VoxelClass::Unknown => {
                    seen.insert(i);
                }
                VoxelClass::Free => {}
            }
        }
    }
    seen.len()
}

#[test]
fn frontier_matches_brute_force() {
    let scene = toy_scene(6);
    let cfg = EpisodeConfig::default();
    let cam = CameraModel { width: 24, height: 18, ..cfg.camera };
    let start = sample_start(&scene, &cfg, 5).unwrap();
    let map = OccupancyMap::init(*scene.grid(), cfg.map, start.position, cfg.planner.clear_extent).unwrap();
    let n = frontier_utility(&map, &start, &cam);
    assert!(n > 0);
    assert_eq!(n, brute_frontier(&map, &start, &cam));

    let mut rng = nbv::seed::rng(8);
    for _ in 0..10 {
        let (m, p) = common::oracles::random_state(&scene, &cfg.camera, 5, &mut rng);
        assert_eq!(frontier_utility(&m, &p, &cam), brute_frontier(&m, &p, &cam));
    }
}

#[test]
fn random_utility_is_deterministic_per_version() {
    let scene = toy_scene(7);
    let cfg = episode(10, false);
    let ctx = OracleContext::new(&scene, cfg.camera);
    let start = sample_start(&scene, &cfg, 0).unwrap();
    let a = run_episode(&ctx, &RandomUtility::new(4), &start, &cfg, None).unwrap().trace;
    let b = run_episode(&ctx, &RandomUtility::new(4), &start, &cfg, None).unwrap().trace;
    let c = run_episode(&ctx, &RandomUtility::new(5), &start, &cfg, None).unwrap().trace;
    assert_eq!(a.moves(), b.moves());
    assert_ne!(a.moves(), c.moves());
}

#[test]
fn learned_utility_shapes_and_zero_net() {
    let features = FeatureConfig { dims: [8, 8, 4], levels: 3, forward_offset: 0.0 };
    let cfg = NetConfig { n_blocks: 1, units_per_block: 1, filters_increment: 2, hidden1: 8, hidden2: 4, input_dims: [8, 8, 4], input_channels: 6, ..NetConfig::default() };
    let mut net = UtilityNet::<f32>::new(cfg.clone()).unwrap();
    net.params_mut().fill(0.0);
    let u = LearnedUtility::new(net, features).unwrap();
    let scene = toy_scene(8);
    let ep = EpisodeConfig::default();
    let start = sample_start(&scene, &ep, 0).unwrap();
    let map = OccupancyMap::init(*scene.grid(), ep.map, start.position, 6.0).unwrap();
    let mut graph = ViewGraph::default();
    let ids: Vec<usize> = neighbors(&start, &ep.planner).into_iter().map(|p| graph.get_or_insert(p)).collect();
    let views: Vec<&Viewpoint> = ids.iter().map(|&i| graph.get(i)).collect();
    assert_eq!(u.score(&map, &views).unwrap(), vec![0.0; 9]);

    let wrong = FeatureConfig { dims: [16, 16, 8], ..features };
    assert!(matches!(LearnedUtility::new(UtilityNet::<f32>::new(cfg).unwrap(), wrong), Err(nbv::Error::DimensionMismatch(_))));
}
