//! Dynamic dual patch embedding, spatiotemporal patch-size selection and
//! entropy-guided cross-granularity enhancement for ViT-based multi-view
//! 3D detection, together with an analytical cost model and a budget-aware
//! patch-size search.

pub mod budget;
pub mod cli;
pub mod cost;
pub mod error;
pub mod embedding;
pub mod encoder;
pub mod enhancement;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod kv;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod spss;

pub use error::{Error, Result};
