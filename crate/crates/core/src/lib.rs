//! Core of the spatial tool sandbox.
//!
//! The reward and scoring code is generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, which the rest of the crate uses.

pub mod data;
pub mod eval;
pub mod grammar;
pub mod image;
pub mod protocol;
pub mod reward;
pub mod samples;
pub mod scalar;
pub mod skills;
pub mod tools;
pub mod world;

pub use scalar::Scalar;

pub type RewardWeights = reward::RewardWeights<f64>;
pub type RewardParts = reward::RewardParts<f64>;
pub type RewardBreakdown = reward::RewardBreakdown<f64>;
pub type GrpoSequence = reward::GrpoSequence<f64>;
pub type GrpoBatch = reward::GrpoBatch<f64>;
pub type GrpoOutput = reward::GrpoOutput<f64>;
