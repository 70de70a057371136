//! Unsupervised text style transfer between two non-parallel corpora with a
//! shared attentional encoder/decoder and a collaborative CNN classifier,
//! built on a small reverse-mode autodiff core.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
