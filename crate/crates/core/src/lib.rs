//! Evolutionary search over per-layer attention configurations for
//! unsupervised domain adaptation.

pub mod attention;
pub mod backbone;
pub mod blob;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod evo;
pub mod gradcheck;
pub mod objectives;
pub mod report;
pub mod rng;
pub mod space;
pub mod stats;
pub mod studies;
pub mod tensor;

pub use error::{Error, Result};
