//! JSON run configuration shared by the command-line workflows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::GenerateConfig;
use crate::error::{Error, Result};
use crate::eval::BenchmarkConfig;
use crate::features::FeatureConfig;
use crate::net::NetConfig;
use crate::occupancy::MapParams;
use crate::planner::{EpisodeConfig, PlannerConfig};
use crate::scene::CityParams;
use crate::seed;
use crate::sensor::{CameraModel, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub episodes: usize,
    pub split_fraction: f64,
    /// Keep whole episodes on one side of the split.
    pub split_by_episode: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { episodes: 10, split_fraction: 0.8, split_by_episode: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { patience: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSection {
    pub episodes: usize,
    pub methods: Vec<String>,
    pub spearman: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            episodes: 50,
            methods: ["oracle", "learned", "frontier", "random"].map(String::from).to_vec(),
            spearman: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; every component draws from a named sub-stream of it.
    pub seed: u64,
    pub scene: CityParams,
    pub camera: CameraModel,
    pub map: MapParams,
    pub features: FeatureConfig,
    pub net: NetConfig,
    pub planner: PlannerConfig,
    pub noise: Option<NoiseModel>,
    pub data: DataSection,
    pub train: TrainSection,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.features.validate()?;
        self.net.validate()?;
        self.planner.validate()?;
        if !self.net.matches_features(&self.features) {
            return Err(Error::InvalidParameter("net input shape must match the feature config".into()));
        }
        if self.features.levels > self.map.pyramid_levels {
            return Err(Error::InvalidParameter("feature levels exceed map pyramid levels".into()));
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig { planner: self.planner.clone(), camera: self.camera, map: self.map, noise: self.noise }
    }

    pub fn generate(&self, episodes: usize) -> GenerateConfig {
        GenerateConfig { episodes, episode: self.episode(), features: self.features, seed: seed::substream(self.seed, "data") }
    }

    pub fn benchmark(&self, episodes: usize) -> BenchmarkConfig {
        BenchmarkConfig { episodes, seed: seed::substream(self.seed, "benchmark"), episode: self.episode(), spearman: self.benchmark.spearman }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig { seed: seed::substream(self.seed, "net"), ..self.net.clone() }
    }

    pub fn split_seed(&self) -> u64 {
        seed::substream(self.seed, "split")
    }
}
