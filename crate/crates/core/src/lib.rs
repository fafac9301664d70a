//! Numeric core for the DaHyF hand motion-capture pipeline: a parametric
//! hand model, crop geometry, coordinate classification, feature fusion,
//! camera conversion, contrastive confidence, training losses, temporal
//! filtering and evaluation metrics, plus the file formats and pipeline
//! behind the `dahyf` command line tool.

pub mod binio;
pub mod camera;
pub mod codec;
pub mod confidence;
pub mod config;
pub mod error;
pub mod freihand;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod hand_model;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod records;
pub mod synth;
pub mod tempfilter;

pub use error::{Error, Result};
