//! Greedy next-best-view exploration over an incrementally grown viewpoint
//! graph.

mod candidates;
mod utility;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{add, Pose, Vec3};
use crate::occupancy::{MapParams, OccupancyMap};
use crate::oracle::{obs_surf, OracleContext};
use crate::scene::GroundTruthScene;
use crate::seed;
use crate::sensor::{apply_noise, render_depth, CameraModel, NoiseModel};

pub use candidates::{CandidateSet, Selection};
pub use utility::{frontier_utility, FrontierUtility, LearnedUtility, OracleUtility, RandomUtility, Utility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub t_end: usize,
    /// Translation step along each camera axis, meters.
    pub step: f64,
    pub yaw_step_deg: f64,
    pub turnaround_deg: f64,
    /// Side of the cube around the camera that must be free, meters.
    pub collision_extent: f64,
    /// Side of the cube cleared around the start pose, meters.
    pub clear_extent: f64,
    /// Viewpoints integrated this many times leave the candidate set.
    pub max_visits: u32,
    pub max_start_attempts: usize,
    /// Rescore every candidate at every step instead of lazily.
    pub exhaustive: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            t_end: 200,
            step: 2.5,
            yaw_step_deg: 25.0,
            turnaround_deg: 180.0,
            collision_extent: 1.0,
            clear_extent: 6.0,
            max_visits: 2,
            max_start_attempts: 10_000,
            exhaustive: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.collision_extent > 0.0 && self.clear_extent > 0.0) {
            return Err(Error::InvalidParameter("step and box extents must be > 0".into()));
        }
        if !self.yaw_step_deg.is_finite() || !self.turnaround_deg.is_finite() {
            return Err(Error::InvalidParameter("yaw steps must be finite".into()));
        }
        if self.max_visits == 0 || self.max_start_attempts == 0 {
            return Err(Error::InvalidParameter("max_visits and max_start_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything an episode needs besides the scene and the policy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub planner: PlannerConfig,
    pub camera: CameraModel,
    pub map: MapParams,
    /// Depth noise; the seed is specialized per measurement.
    pub noise: Option<NoiseModel>,
}

const POS_QUANTUM: f64 = 1e-6;
const YAW_QUANTUM: f64 = 1e-6;

/// Quantized pose identity: position to 1 µm, yaw to 1 µrad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewKey([i64; 4]);

impl ViewKey {
    pub fn of(pose: &Pose) -> Self {
        let q = |x: f64| (x / POS_QUANTUM).round() as i64;
        let turn = (std::f64::consts::TAU / YAW_QUANTUM).round() as i64;
        let yaw = ((pose.yaw / YAW_QUANTUM).round() as i64).rem_euclid(turn);
        Self([q(pose.position[0]), q(pose.position[1]), q(pose.position[2]), yaw])
    }

    pub fn hash(&self) -> u64 {
        self.0.iter().fold(0x243F_6A88_85A3_08D3u64, |h, &v| seed::mix64(h ^ v as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    pub id: usize,
    pub key: ViewKey,
    pub pose: Pose,
    pub visit_count: u32,
}

/// All viewpoints seen so far, keyed by quantized pose.
#[derive(Debug, Clone, Default)]
pub struct ViewGraph {
    views: Vec<Viewpoint>,
    index: HashMap<ViewKey, usize>,
}

impl ViewGraph {
    pub fn get_or_insert(&mut self, pose: Pose) -> usize {
        let key = ViewKey::of(&pose);
        *self.index.entry(key).or_insert_with(|| {
            self.views.push(Viewpoint { id: self.views.len(), key, pose, visit_count: 0 });
            self.views.len() - 1
        })
    }

    pub fn get(&self, id: usize) -> &Viewpoint {
        &self.views[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Viewpoint {
        &mut self.views[id]
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// The 9 neighbors of `pose`: ±step along the camera x, y and z axes, yaw
/// ±yaw_step, and a turnaround.
pub fn neighbors(pose: &Pose, cfg: &PlannerConfig) -> [Pose; 9] {
    let s = cfg.step;
    let t = |v: Vec3| Pose::new(add(pose.position, pose.to_world_dir(v)), pose.yaw);
    let r = |deg: f64| Pose::new(pose.position, pose.yaw + deg.to_radians());
    [
        t([s, 0.0, 0.0]),
        t([-s, 0.0, 0.0]),
        t([0.0, s, 0.0]),
        t([0.0, -s, 0.0]),
        t([0.0, 0.0, s]),
        t([0.0, 0.0, -s]),
        r(cfg.yaw_step_deg),
        r(-cfg.yaw_step_deg),
        r(cfg.turnaround_deg),
    ]
}

/// True iff every voxel overlapping the cube of side `extent` centered at
/// `position` is classified free; anything outside the grid collides.
pub fn collision_free(map: &OccupancyMap, position: Vec3, extent: f64) -> bool {
    map.box_is_free(position, extent)
}

/// Rejection-samples a start pose: a voxel center whose clear box lies in
/// the grid and is free in the ground truth, with yaw on the yaw-step
/// lattice, such that the start and its 9 neighbors are collision free in
/// the freshly cleared map.
pub fn sample_start(scene: &GroundTruthScene, cfg: &EpisodeConfig, seed: u64) -> Result<Pose> {
    let p = &cfg.planner;
    p.validate()?;
    let grid = scene.grid();
    let yaw_slots = ((360.0 / p.yaw_step_deg.abs()).ceil() as usize).max(1);
    let mut rng = seed::rng(seed);
    for _ in 0..p.max_start_attempts {
        let v = [0, 1, 2].map(|a| rng.random_range(0..grid.dims[a]));
        let yaw = (rng.random_range(0..yaw_slots) as f64 * p.yaw_step_deg).to_radians();
        let pose = Pose::new(grid.voxel_center(v), yaw);
        if !scene.box_is_free(pose.position, p.clear_extent) {
            continue;
        }
        let Ok(map) = OccupancyMap::init(*grid, cfg.map, pose.position, p.clear_extent) else {
            continue;
        };
        let ok = collision_free(&map, pose.position, p.collision_extent)
            && neighbors(&pose, p).iter().all(|n| collision_free(&map, n.position, p.collision_extent));
        if ok {
            return Ok(pose);
        }
    }
    Err(Error::NoValidStart(p.max_start_attempts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub t: usize,
    pub pose: Pose,
    /// Utility of the chosen viewpoint at selection time; NaN at t = 0.
    pub chosen_score: f64,
    pub obs_surf: f64,
    pub candidate_count: usize,
    pub evals: usize,
    /// Collision-free neighbors of the previous pose still below the visit
    /// limit.
    pub eligible_neighbors: usize,
    pub select_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub steps: Vec<EpisodeStep>,
    /// True if the candidate set ran empty before `t_end`.
    pub terminated_early: bool,
}

impl EpisodeTrace {
    pub fn start(&self) -> Pose {
        self.steps[0].pose
    }

    pub fn obs_surf_curve(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.obs_surf).collect()
    }

    /// Poses moved to after the start, in order.
    pub fn moves(&self) -> Vec<Pose> {
        self.steps[1..].iter().map(|s| s.pose).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,z,yaw,chosen_score,obs_surf,candidate_count,evals_this_step\n");
        for e in &self.steps {
            let p = e.pose.position;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.t, p[0], p[1], p[2], e.pose.yaw, e.chosen_score, e.obs_surf, e.candidate_count, e.evals
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Called once per step before selection with the map the policy sees.
pub trait EpisodeObserver {
    /// `eligible` pairs each usable neighbor with its slot in [`neighbors`].
    fn on_step(&mut self, t: usize, map: &OccupancyMap, current: &Pose, eligible: &[(usize, &Viewpoint)]) -> Result<()>;
}

pub struct EpisodeResult {
    pub trace: EpisodeTrace,
    pub map: OccupancyMap,
}

fn measure(ctx: &OracleContext, cfg: &EpisodeConfig, map: &mut OccupancyMap, pose: &Pose, t: usize) -> Result<()> {
    let clean = render_depth(ctx.scene, pose, &cfg.camera)?;
    let depth = match &cfg.noise {
        Some(n) if !n.is_noise_free() => apply_noise(&clean, &n.for_measurement(t as u64), cfg.camera.max_range),
        _ => clean,
    };
    map.integrate(pose, &depth, &cfg.camera)?;
    Ok(())
}

/// Runs one greedy exploration episode from `start` for `t_end` steps.
pub fn run_episode(
    ctx: &OracleContext,
    utility: &dyn Utility,
    start: &Pose,
    cfg: &EpisodeConfig,
    mut observer: Option<&mut dyn EpisodeObserver>,
) -> Result<EpisodeResult> {
    let p = &cfg.planner;
    p.validate()?;
    if cfg.camera != ctx.camera {
        return Err(Error::InvalidParameter("episode camera differs from the oracle camera".into()));
    }
    let mut map = OccupancyMap::init(*ctx.scene.grid(), cfg.map, start.position, p.clear_extent)?;
    let mut graph = ViewGraph::default();
    let mut current = graph.get_or_insert(*start);
    let mut candidates = CandidateSet::default();
    let mut steps = vec![EpisodeStep {
        t: 0,
        pose: *start,
        chosen_score: f64::NAN,
        obs_surf: obs_surf(&map, ctx)?,
        candidate_count: 0,
        evals: 0,
        eligible_neighbors: 0,
        select_seconds: 0.0,
    }];
    let mut terminated_early = false;
    for t in 1..=p.t_end {
        let pose = graph.get(current).pose;
        let mut eligible = Vec::with_capacity(9);
        for (slot, n) in neighbors(&pose, p).into_iter().enumerate() {
            let id = graph.get_or_insert(n);
            let v = graph.get(id);
            if v.visit_count < p.max_visits && collision_free(&map, v.pose.position, p.collision_extent) {
                eligible.push((slot, id));
                candidates.insert(id);
            }
        }
        candidates.retain(|id| collision_free(&map, graph.get(id).pose.position, p.collision_extent));
        if let Some(obs) = observer.as_deref_mut() {
            let views: Vec<(usize, &Viewpoint)> = eligible.iter().map(|&(s, i)| (s, graph.get(i))).collect();
            obs.on_step(t, &map, &pose, &views)?;
        }
        if candidates.is_empty() {
            terminated_early = true;
            break;
        }
        let candidate_count = candidates.len();
        let timer = Instant::now();
        let sel = candidates.select(utility, &map, &graph, p.exhaustive)?;
        let select_seconds = timer.elapsed().as_secs_f64();
        current = sel.id;
        let next = graph.get(current).pose;
        measure(ctx, cfg, &mut map, &next, t)?;
        let v = graph.get_mut(current);
        v.visit_count += 1;
        if v.visit_count < p.max_visits {
            candidates.reinsert(sel.id, sel.score, sel.version);
        }
        steps.push(EpisodeStep {
            t,
            pose: next,
            chosen_score: sel.score,
            obs_surf: obs_surf(&map, ctx)?,
            candidate_count,
            evals: sel.evals,
            eligible_neighbors: eligible.len(),
            select_seconds,
        });
    }
    Ok(EpisodeResult { trace: EpisodeTrace { steps, terminated_early }, map })
}

/// Rebuilds the map along a fixed pose sequence with noise-free depth and
/// returns the ObsSurf curve, starting with the initial map.
pub fn replay(ctx: &OracleContext, cfg: &EpisodeConfig, start: &Pose, moves: &[Pose]) -> Result<Vec<f64>> {
    let clean = EpisodeConfig { noise: None, ..cfg.clone() };
    let mut map = OccupancyMap::init(*ctx.scene.grid(), cfg.map, start.position, cfg.planner.clear_extent)?;
    let mut curve = vec![obs_surf(&map, ctx)?];
    for (i, pose) in moves.iter().enumerate() {
        measure(ctx, &clean, &mut map, pose, i + 1)?;
        curve.push(obs_surf(&map, ctx)?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn neighbors_at_origin() {
        let cfg = PlannerConfig::default();
        let n = neighbors(&Pose::new([0.0; 3], 0.0), &cfg);
        assert_eq!(n.len(), 9);
        assert!((n[0].position[0] - 2.5).abs() < 1e-12);
        assert!((n[2].position[1] - 2.5).abs() < 1e-12);
        assert!((n[4].position[2] - 2.5).abs() < 1e-12);
        assert!((n[8].yaw - PI).abs() < 1e-12);
        assert_eq!(n[6].position, [0.0; 3]);
    }

    #[test]
    fn neighbors_rotated() {
        let cfg = PlannerConfig::default();
        let n = neighbors(&Pose::new([0.0; 3], PI / 2.0), &cfg);
        assert!(n[0].position[0].abs() < 1e-12 && (n[0].position[1] - 2.5).abs() < 1e-12);
        assert!((n[1].position[1] + 2.5).abs() < 1e-12);
        assert!((n[2].position[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn keys_merge_round_trips() {
        let cfg = PlannerConfig::default();
        let p = Pose::new([1.2, 3.4, 5.6], 0.3);
        let fwd = neighbors(&p, &cfg)[0];
        let back = neighbors(&fwd, &cfg)[1];
        assert_eq!(ViewKey::of(&p), ViewKey::of(&back));
        let mut turned = p;
        for _ in 0..2 {
            turned = neighbors(&turned, &cfg)[8];
        }
        assert_eq!(ViewKey::of(&p), ViewKey::of(&turned));
        let mut g = ViewGraph::default();
        let a = g.get_or_insert(p);
        assert_eq!(g.get_or_insert(back), a);
        assert_eq!(g.len(), 1);
    }
}
