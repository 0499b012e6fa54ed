//! Next-best-view exploration of voxelized scenes with oracle, frontier,
//! random and learned view-utility functions.

pub mod binio;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod grid;
pub mod net;
pub mod occupancy;
pub mod planner;
pub mod oracle;
pub mod raycast;
pub mod scene;
pub mod seed;
pub mod sensor;

pub use error::{Error, Result};
pub use geom::{Pose, Vec3};
pub use grid::GridSpec;
pub use occupancy::{MapParams, OccupancyMap, VoxelClass};
pub use scene::{generate_city_scene, surface_set, CityParams, GroundTruthScene, SurfaceSet};
pub use sensor::{apply_noise, render_depth, CameraModel, DepthImage, NoiseModel};
