//! Pressure- and text-conditioned human motion reconstruction with a controlled diffusion model.

pub mod config;
pub mod control;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod fixtures;
pub mod io;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod pressure;
pub mod scalar;
pub mod selftest;
pub mod synth;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Real;

pub type PoseSequence32 = motion::PoseSequence<f32>;
pub type PoseSequence64 = motion::PoseSequence<f64>;
pub type JointSequence32 = motion::JointSequence<f32>;
pub type JointSequence64 = motion::JointSequence<f64>;
pub type PressureSequence32 = pressure::PressureSequence<f32>;
pub type PressureSequence64 = pressure::PressureSequence<f64>;
pub type Skeleton32 = motion::Skeleton<f32>;
pub type Skeleton64 = motion::Skeleton<f64>;
