//! Incomplete multi-modal segmentation with dynamic modality-aware fusion,
//! relation and prototype distillation, and a dynamic training monitor.

pub mod datagen;
pub mod distill;
pub mod dtm;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod objective;

pub use error::{Error, Result};
