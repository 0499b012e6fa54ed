//! Oracle-labeled training samples: generation, splits, summaries and the
//! binary container.
//!
//! File layout (little-endian): magic "NBVD", version u32, dims 3×u32,
//! levels u32, count u64, then `count` records of `Dx·Dy·Dz·2L` f32 inputs,
//! the f32 target, and episode, step and neighbor slot as u32.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::features::{extract_into, FeatureConfig};
use crate::geom::Pose;
use crate::net::SampleView;
use crate::occupancy::OccupancyMap;
use crate::oracle::{oracle_score, OracleContext};
use crate::planner::{run_episode, sample_start, EpisodeConfig, EpisodeObserver, EpisodeTrace, OracleUtility, Viewpoint};
use crate::scene::GroundTruthScene;
use crate::seed;

const MAGIC: &[u8; 4] = b"NBVD";
const VERSION: u32 = 1;
const META_BYTES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleMeta {
    pub episode: u32,
    pub step: u32,
    pub neighbor: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureConfig,
    inputs: Vec<f32>,
    targets: Vec<f32>,
    meta: Vec<SampleMeta>,
}

impl Dataset {
    pub fn new(features: FeatureConfig) -> Self {
        Self { features, inputs: Vec::new(), targets: Vec::new(), meta: Vec::new() }
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.features.len()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.input_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn view(&self) -> SampleView<'_> {
        SampleView { inputs: &self.inputs, targets: &self.targets }
    }

    pub fn push(&mut self, input: &[f32], target: f32, meta: SampleMeta) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::LengthMismatch(self.input_len(), input.len()));
        }
        self.inputs.extend_from_slice(input);
        self.targets.push(target);
        self.meta.push(meta);
        Ok(())
    }

    pub fn append(&mut self, other: Dataset) -> Result<()> {
        if other.features.dims != self.features.dims || other.features.levels != self.features.levels {
            return Err(Error::DimensionMismatch("datasets have different sample shapes".into()));
        }
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        self.meta.extend(other.meta);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut d = Dataset::new(self.features);
        d.inputs.reserve(indices.len() * self.input_len());
        for &i in indices {
            d.inputs.extend_from_slice(self.input(i));
            d.targets.push(self.targets[i]);
            d.meta.push(self.meta[i]);
        }
        d
    }

    /// Bytes per record.
    pub fn stride(&self) -> usize {
        self.input_len() * 4 + 4 + META_BYTES
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        for d in self.features.dims {
            write_u32(&mut w, d as u32)?;
        }
        write_u32(&mut w, self.features.levels as u32)?;
        write_u64(&mut w, self.len() as u64)?;
        for i in 0..self.len() {
            write_f32_slice(&mut w, self.input(i))?;
            write_f32(&mut w, self.targets[i])?;
            let m = self.meta[i];
            write_u32(&mut w, m.episode)?;
            write_u32(&mut w, m.step)?;
            write_u32(&mut w, m.neighbor)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read(&mut r)
    }

    fn read<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        expect_version(r, VERSION)?;
        let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let levels = read_u32(r)? as usize;
        let features = FeatureConfig { dims, levels, ..FeatureConfig::default() };
        features.validate().map_err(|e| Error::Format(e.to_string()))?;
        let count = read_u64(r)? as usize;
        let mut d = Dataset::new(features);
        let n = d.input_len();
        for _ in 0..count {
            let x = read_f32_vec(r, n)?;
            let t = read_f32(r)?;
            let meta = SampleMeta { episode: read_u32(r)?, step: read_u32(r)?, neighbor: read_u32(r)? };
            d.inputs.extend(x);
            d.targets.push(t);
            d.meta.push(meta);
        }
        expect_eof(r)?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub episodes: usize,
    pub episode: EpisodeConfig,
    pub features: FeatureConfig,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { episodes: 1, episode: EpisodeConfig::default(), features: FeatureConfig::default(), seed: 1 }
    }
}

struct Recorder<'a> {
    ctx: &'a OracleContext<'a>,
    features: FeatureConfig,
    episode: u32,
    data: Dataset,
    buf: Vec<f32>,
}

impl EpisodeObserver for Recorder<'_> {
    fn on_step(&mut self, t: usize, map: &OccupancyMap, _current: &Pose, eligible: &[(usize, &Viewpoint)]) -> Result<()> {
        for &(slot, v) in eligible {
            extract_into(map, &v.pose, &self.features, &mut self.buf);
            let target = oracle_score(map, &v.pose, self.ctx)?;
            let meta = SampleMeta { episode: self.episode, step: t as u32, neighbor: slot as u32 };
            self.data.push(&self.buf, target as f32, meta)?;
        }
        Ok(())
    }
}

/// Start-pose seed of episode `index` under a root seed.
pub fn episode_start_seed(root: u64, index: usize) -> u64 {
    seed::child(seed::substream(root, "start"), index as u64)
}

/// Runs oracle-driven episodes and records, at every step, one sample per
/// eligible neighbor of the current pose. Episodes run in parallel and are
/// merged in episode order.
pub fn generate(scene: &GroundTruthScene, cfg: &GenerateConfig) -> Result<(Dataset, Vec<EpisodeTrace>)> {
    if cfg.episodes == 0 {
        return Err(Error::InvalidParameter("episodes must be >= 1".into()));
    }
    cfg.features.validate()?;
    if cfg.features.levels > cfg.episode.map.pyramid_levels {
        return Err(Error::InvalidParameter("feature levels exceed map pyramid levels".into()));
    }
    let ctx = OracleContext::new(scene, cfg.episode.camera);
    let parts: Vec<Result<(Dataset, EpisodeTrace)>> = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let start = sample_start(scene, &cfg.episode, episode_start_seed(cfg.seed, e))?;
            let mut rec = Recorder {
                ctx: &ctx,
                features: cfg.features,
                episode: e as u32,
                data: Dataset::new(cfg.features),
                buf: vec![0.0; cfg.features.len()],
            };
            let oracle = OracleUtility::new(&ctx);
            let mut ep = cfg.episode.clone();
            if let Some(n) = ep.noise.as_mut() {
                n.seed = seed::child(seed::substream(cfg.seed, "noise"), e as u64);
            }
            let res = run_episode(&ctx, &oracle, &start, &ep, Some(&mut rec))?;
            Ok((rec.data, res.trace))
        })
        .collect();
    let mut data = Dataset::new(cfg.features);
    let mut traces = Vec::with_capacity(cfg.episodes);
    for p in parts {
        let (d, t) = p?;
        data.append(d)?;
        traces.push(t);
    }
    Ok((data, traces))
}

/// Shuffled, disjoint, exhaustive split. By sample, the first part gets
/// `round(n · fraction)` samples; by episode, it gets
/// `round(episodes · fraction)` whole episodes.
pub fn split(data: &Dataset, fraction: f64, seed: u64, by_episode: bool) -> Result<(Dataset, Dataset)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = seed::rng(seed);
    let (mut first, mut second): (Vec<usize>, Vec<usize>);
    if by_episode {
        let mut episodes: Vec<u32> = data.meta.iter().map(|m| m.episode).collect();
        episodes.sort_unstable();
        episodes.dedup();
        episodes.shuffle(&mut rng);
        let k = (episodes.len() as f64 * fraction).round() as usize;
        let train: std::collections::HashSet<u32> = episodes[..k].iter().copied().collect();
        (first, second) = (0..data.len()).partition(|&i| train.contains(&data.meta[i].episode));
        first.shuffle(&mut rng);
        second.shuffle(&mut rng);
    } else {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut rng);
        let k = (data.len() as f64 * fraction).round() as usize;
        second = idx.split_off(k);
        first = idx;
    }
    Ok((data.subset(&first), data.subset(&second)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub count: usize,
    pub target_mean: f64,
    pub target_std: f64,
    pub target_min: f64,
    pub target_max: f64,
    pub channel_means: Vec<f64>,
}

impl DatasetStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("statistic,value\n");
        let _ = writeln!(s, "count,{}", self.count);
        let _ = writeln!(s, "target_mean,{}", self.target_mean);
        let _ = writeln!(s, "target_std,{}", self.target_std);
        let _ = writeln!(s, "target_min,{}", self.target_min);
        let _ = writeln!(s, "target_max,{}", self.target_max);
        for (c, m) in self.channel_means.iter().enumerate() {
            let kind = if c % 2 == 0 { "occ" } else { "unc" };
            let _ = writeln!(s, "{}_l{}_mean,{}", kind, c / 2 + 1, m);
        }
        s
    }
}

pub fn stats(data: &Dataset) -> Result<DatasetStats> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let t = || data.targets.iter().map(|&v| v as f64);
    let mean = t().sum::<f64>() / n;
    let var = t().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let ch = data.features.channels();
    let mut sums = vec![0.0; ch];
    for (i, &v) in data.inputs.iter().enumerate() {
        sums[i % ch] += v as f64;
    }
    let per_channel = n * data.features.points() as f64;
    Ok(DatasetStats {
        count: data.len(),
        target_mean: mean,
        target_std: var.sqrt(),
        target_min: t().fold(f64::INFINITY, f64::min),
        target_max: t().fold(f64::NEG_INFINITY, f64::max),
        channel_means: sums.into_iter().map(|s| s / per_channel).collect(),
    })
}
