//! Unsupervised person re-identification by clustering with part-aware
//! contrastive objectives over momentum memory banks.

// `!(x > 0.0)` is used on purpose: it rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod data;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod memory;
pub mod numerics;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
