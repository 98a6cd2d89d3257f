//! A PointNet++-style network that regresses a 6-DoF pose from a
//! single LiDAR point cloud, together with the small reverse-mode autodiff
//! engine, sampling kernels, synthetic LiDAR data and training/evaluation
//! machinery needed to train it on a desktop CPU.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). Training
//! and gradient checking use `f64`; the `*64` aliases below name those
//! instantiations.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Pose64 = geometry::Pose<f64>;
pub type LogPose64 = geometry::LogPose<f64>;
pub type PointCloud64 = sampling::PointCloud<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type AdamState64 = optim::AdamState<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Pose32 = geometry::Pose<f32>;
pub type PointCloud32 = sampling::PointCloud<f32>;
