//! Adaptive implicit-surface meshing for tunnel and cave LiDAR scans.
//!
//! The pipeline fuses consecutive scans into scanblocks, smooths point
//! normals with an L0 regularizer, trains a point-based neural signed
//! distance field with normal-guided sampling, and extracts triangle
//! meshes with marching cubes. A PPO agent picks the six reconstruction
//! parameters per scanblock; a built-in synthetic tunnel/cave simulator
//! provides training and evaluation scenes.

pub mod agent;
pub mod cli;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod mesh;
pub mod metrics;
pub mod normals;
pub mod optim;
pub mod rng;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};
