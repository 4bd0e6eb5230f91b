//! Inverse-rendering video coding against a known 3D Gaussian scene.
//!
//! A frame is described by the camera pose that best re-renders it from the shared scene,
//! plus an optional compressed residual. The math core is generic over `f32`/`f64`; the
//! aliases below fix the precision used by the pipeline.

pub mod codec;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod linalg;
pub mod objectives;
pub mod optimize;
pub mod protocol;
pub mod render;
pub mod scalar;
pub mod scene;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Twist64 = geometry::Twist<f64>;
pub type Twist32 = geometry::Twist<f32>;
pub type Intrinsics64 = geometry::Intrinsics<f64>;
pub type Intrinsics32 = geometry::Intrinsics<f32>;
pub type Image64 = image::Image<f64>;
pub type Image32 = image::Image<f32>;
pub type Vec3f64 = linalg::Vec3<f64>;
pub type Quat64 = linalg::Quat<f64>;
