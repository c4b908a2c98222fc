//! Two-stage zero-shot cross-domain slot filling with prototypical
//! contrastive learning and label confusion.

pub mod autodiff;
pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod exec;
pub mod model;
pub mod rng;
pub mod tagger;
pub mod testkit;
pub mod trainer;

pub use error::{Error, Result};
