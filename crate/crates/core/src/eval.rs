//! Efficiency and rank-correlation metrics, multi-method benchmarks with
//! shared start poses, and noise-robustness replays.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::episode_start_seed;
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::occupancy::OccupancyMap;
use crate::oracle::{oracle_score, OracleContext};
use crate::planner::{replay, run_episode, sample_start, EpisodeConfig, EpisodeObserver, EpisodeTrace, Utility, Viewpoint};
use crate::scene::GroundTruthScene;
use crate::seed;
use crate::sensor::NoiseModel;

/// Area under the ObsSurf curve: `Σ_{t=0}^{t_end} ObsSurf(M_t)`.
pub fn efficiency(curve: &[f64], t_end: usize) -> Result<f64> {
    if curve.len() != t_end + 1 {
        return Err(Error::LengthMismatch(t_end + 1, curve.len()));
    }
    Ok(curve.iter().sum())
}

/// Pads an early-terminated curve with its last value up to `t_end`.
pub fn flat_extend(curve: &[f64], t_end: usize) -> Vec<f64> {
    let mut c = curve[..curve.len().min(t_end + 1)].to_vec();
    let last = *c.last().expect("curve has the initial entry");
    c.resize(t_end + 1, last);
    c
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation with average ranks for ties (Pearson
/// correlation of the rank vectors).
pub fn spearman_rho(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(pred.len(), target.len()));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidParameter("spearman needs at least 2 pairs".into()));
    }
    let (a, b) = (average_ranks(pred), average_ranks(target));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub episodes: usize,
    pub seed: u64,
    pub episode: EpisodeConfig,
    /// Pair each method's score with the oracle score on every eligible
    /// neighbor visited, for rank correlation.
    pub spearman: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { episodes: 50, seed: 1, episode: EpisodeConfig::default(), spearman: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub name: String,
    /// Flat-extended ObsSurf curves of the kept episodes.
    pub curves: Vec<Vec<f64>>,
    pub efficiencies: Vec<f64>,
    pub eff_mean: f64,
    pub eff_std: f64,
    /// `eff_mean` divided by the oracle's; NaN without an oracle method.
    pub eff_normalized: f64,
    pub s_per_step: f64,
    pub evals_per_step: f64,
    pub spearman: Option<f64>,
    pub spearman_pairs: usize,
    pub early_terminations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub t_end: usize,
    /// Episode index and start pose shared by every method.
    pub starts: Vec<(usize, Pose)>,
    /// Episodes dropped for every method, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub methods: Vec<MethodReport>,
}

struct PairRecorder<'a> {
    ctx: &'a OracleContext<'a>,
    utility: &'a dyn Utility,
    pred: Vec<f64>,
    target: Vec<f64>,
}

impl EpisodeObserver for PairRecorder<'_> {
    fn on_step(&mut self, _t: usize, map: &OccupancyMap, _current: &Pose, eligible: &[(usize, &Viewpoint)]) -> Result<()> {
        let views: Vec<&Viewpoint> = eligible.iter().map(|&(_, v)| v).collect();
        self.pred.extend(self.utility.score(map, &views)?);
        for v in views {
            self.target.push(oracle_score(map, &v.pose, self.ctx)?);
        }
        Ok(())
    }
}

struct EpisodeOutcome {
    trace: EpisodeTrace,
    pred: Vec<f64>,
    target: Vec<f64>,
}

/// Draws the start pose of every episode index; failures are kept as
/// per-episode errors.
pub fn draw_starts(scene: &GroundTruthScene, cfg: &BenchmarkConfig) -> Vec<Result<Pose>> {
    (0..cfg.episodes)
        .map(|e| sample_start(scene, &cfg.episode, episode_start_seed(cfg.seed, e)))
        .collect()
}

fn episode_config(cfg: &BenchmarkConfig, e: usize) -> EpisodeConfig {
    let mut ep = cfg.episode.clone();
    if let Some(n) = ep.noise.as_mut() {
        n.seed = seed::child(seed::substream(cfg.seed, "noise"), e as u64);
    }
    ep
}

/// Runs every method on the same start poses. An episode that fails for
/// any method is dropped for all of them.
pub fn run_benchmark(scene: &GroundTruthScene, cfg: &BenchmarkConfig, methods: &[&dyn Utility]) -> Result<BenchmarkReport> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be >= 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods to compare".into()));
    }
    let ctx = OracleContext::new(scene, cfg.episode.camera);
    let t_end = cfg.episode.planner.t_end;
    let mut skipped = Vec::new();
    let mut starts = Vec::new();
    for (e, s) in draw_starts(scene, cfg).into_iter().enumerate() {
        match s {
            Ok(p) => starts.push((e, p)),
            Err(err) => skipped.push((e, err.to_string())),
        }
    }
    let mut outcomes: Vec<Vec<Result<EpisodeOutcome>>> = Vec::with_capacity(methods.len());
    for &u in methods {
        let runs = starts
            .par_iter()
            .map(|&(e, start)| {
                let ep = episode_config(cfg, e);
                let mut rec = PairRecorder { ctx: &ctx, utility: u, pred: Vec::new(), target: Vec::new() };
                let obs: Option<&mut dyn EpisodeObserver> = if cfg.spearman { Some(&mut rec) } else { None };
                let res = run_episode(&ctx, u, &start, &ep, obs)?;
                if res.trace.start() != start {
                    return Err(Error::InvalidParameter("episode did not use the shared start".into()));
                }
                Ok(EpisodeOutcome { trace: res.trace, pred: rec.pred, target: rec.target })
            })
            .collect();
        outcomes.push(runs);
    }
    let mut keep = vec![true; starts.len()];
    for runs in &outcomes {
        for (k, r) in runs.iter().enumerate() {
            if let Err(err) = r {
                if keep[k] {
                    keep[k] = false;
                    skipped.push((starts[k].0, err.to_string()));
                }
            }
        }
    }
    skipped.sort_by_key(|s| s.0);
    let mut reports = Vec::with_capacity(methods.len());
    for (&u, runs) in methods.iter().zip(outcomes) {
        let mut m = MethodReport {
            name: u.name().to_string(),
            curves: Vec::new(),
            efficiencies: Vec::new(),
            eff_mean: f64::NAN,
            eff_std: f64::NAN,
            eff_normalized: f64::NAN,
            s_per_step: f64::NAN,
            evals_per_step: f64::NAN,
            spearman: None,
            spearman_pairs: 0,
            early_terminations: 0,
        };
        let (mut secs, mut evals, mut steps) = (0.0, 0usize, 0usize);
        let (mut pred, mut target) = (Vec::new(), Vec::new());
        for (k, r) in runs.into_iter().enumerate() {
            if !keep[k] {
                continue;
            }
            let o = r.expect("kept episodes succeeded");
            let curve = flat_extend(&o.trace.obs_surf_curve(), t_end);
            m.efficiencies.push(efficiency(&curve, t_end)?);
            m.curves.push(curve);
            m.early_terminations += o.trace.terminated_early as usize;
            for s in &o.trace.steps[1..] {
                secs += s.select_seconds;
                evals += s.evals;
                steps += 1;
            }
            pred.extend(o.pred);
            target.extend(o.target);
        }
        (m.eff_mean, m.eff_std) = mean_std(&m.efficiencies);
        if steps > 0 {
            m.s_per_step = secs / steps as f64;
            m.evals_per_step = evals as f64 / steps as f64;
        }
        m.spearman_pairs = pred.len();
        m.spearman = spearman_rho(&pred, &target).ok();
        reports.push(m);
    }
    if let Some(oracle) = reports.iter().find(|m| m.name == "oracle").map(|m| m.eff_mean) {
        for m in &mut reports {
            m.eff_normalized = m.eff_mean / oracle;
        }
    }
    Ok(BenchmarkReport { t_end, starts: starts.into_iter().filter(|(e, _)| !skipped.iter().any(|s| s.0 == *e)).collect(), skipped, methods: reports })
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("method,episode,t,obs_surf\n");
        for m in &self.methods {
            for ((e, _), c) in self.starts.iter().zip(&m.curves) {
                for (t, v) in c.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{},{}", m.name, e, t, v);
                }
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,eff_mean,eff_std,eff_normalized,s_per_step,evals_per_step\n");
        for m in &self.methods {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.name, m.eff_mean, m.eff_std, m.eff_normalized, m.s_per_step, m.evals_per_step);
        }
        s
    }

    pub fn spearman_csv(&self) -> String {
        let mut s = String::from("method,rho,pairs\n");
        for m in &self.methods {
            let rho = m.spearman.map_or("nan".to_string(), |r| r.to_string());
            let _ = writeln!(s, "{},{},{}", m.name, rho, m.spearman_pairs);
        }
        s
    }

    pub fn starts_csv(&self) -> String {
        let mut s = String::from("episode,x,y,z,yaw\n");
        for (e, p) in &self.starts {
            let _ = writeln!(s, "{},{},{},{},{}", e, p.position[0], p.position[1], p.position[2], p.yaw);
        }
        s
    }

    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("curves.csv"), self.curves_csv())?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        std::fs::write(dir.join("spearman.csv"), self.spearman_csv())?;
        std::fs::write(dir.join("starts.csv"), self.starts_csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLevelReport {
    pub noise: NoiseModel,
    pub efficiencies: Vec<f64>,
    /// Mean replayed efficiency over the mean noise-free efficiency.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub episodes: Vec<usize>,
    pub clean_efficiencies: Vec<f64>,
    pub levels: Vec<NoiseLevelReport>,
}

fn replayed_efficiency(ctx: &OracleContext, ep: &EpisodeConfig, trace: &EpisodeTrace) -> Result<f64> {
    let moves = trace.moves();
    let curve = replay(ctx, ep, &trace.start(), &moves)?;
    if curve.len() != moves.len() + 1 {
        return Err(Error::LengthMismatch(moves.len() + 1, curve.len()));
    }
    efficiency(&flat_extend(&curve, ep.planner.t_end), ep.planner.t_end)
}

/// For every noise model: drive the policy with noisy depth, replay the
/// chosen pose sequence with clean depth, and compare the replayed
/// efficiency with a noise-free run from the same start.
pub fn noise_replay(scene: &GroundTruthScene, utility: &dyn Utility, noises: &[NoiseModel], cfg: &BenchmarkConfig) -> Result<NoiseReport> {
    let ctx = OracleContext::new(scene, cfg.episode.camera);
    let starts: Vec<(usize, Pose)> = draw_starts(scene, cfg).into_iter().enumerate().filter_map(|(e, s)| s.ok().map(|p| (e, p))).collect();
    if starts.is_empty() {
        return Err(Error::NoValidStart(cfg.episode.planner.max_start_attempts));
    }
    let run = |noise: Option<NoiseModel>| -> Result<Vec<f64>> {
        starts
            .par_iter()
            .map(|&(e, start)| {
                let mut ep = EpisodeConfig { noise, ..cfg.episode.clone() };
                if let Some(n) = ep.noise.as_mut() {
                    n.seed = seed::child(seed::substream(n.seed ^ cfg.seed, "noise"), e as u64);
                }
                let res = run_episode(&ctx, utility, &start, &ep, None)?;
                replayed_efficiency(&ctx, &ep, &res.trace)
            })
            .collect()
    };
    let clean = run(None)?;
    let clean_mean = clean.iter().sum::<f64>() / clean.len() as f64;
    let mut levels = Vec::with_capacity(noises.len());
    for &n in noises {
        let effs = run(Some(n))?;
        let mean = effs.iter().sum::<f64>() / effs.len() as f64;
        levels.push(NoiseLevelReport { noise: n, efficiencies: effs, normalized: mean / clean_mean });
    }
    Ok(NoiseReport { episodes: starts.iter().map(|s| s.0).collect(), clean_efficiencies: clean, levels })
}
