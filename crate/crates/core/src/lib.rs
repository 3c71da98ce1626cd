//! Self-similar part decomposition of point clouds: superquadric primitives,
//! stochastic part-to-shape assignment, per-object fitting, shape completion
//! and evaluation metrics.

pub mod cli;
pub mod complete;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod spa;
pub mod synth;

pub use error::{Error, Result};
pub use fit::{assemble, fit, FitConfig, PartsModel};
pub use geometry::{PointCloud, Pose, Superquadric};
