//! Dual-branch image complexity assessment.
//!
//! A complexity-regression branch scores images against complexity-level
//! prompts; a scene-alignment branch aligns images with their scene
//! descriptions. Both share one image encoder and are trained with a weighted
//! sum of their losses.

pub mod alignment;
pub mod audit;
pub mod autograd;
pub mod caption;
pub mod config;
pub mod datamodel;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
