//! Synthetic scene-flow sandbox: scene generators, set distances, metrics,
//! non-learning baselines and a small reverse-mode engine for toy networks.

pub mod assignment;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod report;
pub mod rng;
pub mod scene_gen;
pub mod set_distances;
pub mod spatial;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{FlowField, Mechanism, PointCloud, RigidScaleTransform, ScenePair, Vec3};
pub use rng::SceneRng;
