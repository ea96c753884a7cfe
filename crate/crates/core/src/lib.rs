//! Proposal-level unsupervised domain adaptation for open-world detection
//! pseudo-labeling, on a seeded synthetic proposal benchmark.
//!
//! The numeric core is generic over the scalar type (see [`scalar::Scalar`]);
//! the aliases below pin the common `f64` and `f32` instantiations.

pub mod audits;
pub mod config;
pub mod dataset;
pub mod geometry;
pub mod head;
pub mod metrics;
pub mod predictor;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod seed;
pub mod selection;
pub mod uda;
pub mod world;

pub use scalar::Scalar;

/// Default-precision instantiations. The pipeline runs in `f64`; `f32`
/// variants exist for memory-bound experiments and consume the identical
/// random stream.
pub type BBox = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
pub type Scene = world::Scene<f64>;
pub type Scene32 = world::Scene<f32>;
pub type Predictor = predictor::Predictor<f64>;
pub type Predictor32 = predictor::Predictor<f32>;
pub type PluConfig = uda::PluConfig<f64>;
pub type PluConfig32 = uda::PluConfig<f32>;
pub type RunConfig = config::RunConfig<f64>;
pub type RunConfig32 = config::RunConfig<f32>;
pub type DatasetFile = dataset::DatasetFile<f64>;
pub type DatasetFile32 = dataset::DatasetFile<f32>;
