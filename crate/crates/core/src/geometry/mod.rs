//! Rigid poses, superquadric primitives and point clouds.

mod cloud;
mod pose;
mod superquadric;

pub use cloud::PointCloud;
pub use pose::{quat_rotation_grad, quat_to_rotation, Pose, PoseGrad};
pub use superquadric::{
    sample_angles, SqParams, Superquadric, ALPHA_MIN, EPS_MAX, EPS_MIN, N_PARAMS, TAPER_LIMIT,
};

pub type Vec3 = nalgebra::Vector3<f64>;
