//! Motion representation, conditional diffusion and evaluation for
//! text/audio/trajectory-driven character animation.
//!
//! The crate is `no_std` with `alloc`; enable the default `std` feature for
//! runtime SIMD detection in the GEMM kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod benchmark;
pub mod condition;
pub mod curriculum;
pub mod embedder;
pub mod error;
pub mod features;
pub mod fk;
pub mod graph;
pub mod linalg;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod rotation;
pub mod sampler;
pub mod schedule;
pub mod session;
pub mod skeleton;
pub mod synth;
pub mod task;
pub mod tensor;

pub use error::{Error, Result};
pub use features::{Anchor, FeatureLayout, MotionFeatures};
pub use math::{Mat3, Quat, Vec3};
pub use motion::GlobalMotion;
pub use rotation::{EulerOrder, Rotation, RotationForm};
pub use skeleton::{SignedAxis, SkeletonSpec};
pub use tensor::Matrix;
