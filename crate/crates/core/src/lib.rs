//! Semantic-discriminative Mixup for cross-domain classification of
//! windowed multichannel sensor data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod margin;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod semantics;
pub mod training;

pub use error::{Error, Result};
