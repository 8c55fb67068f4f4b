//! Map matching of sparse GNSS probe trajectories onto a road network.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod history;
pub mod matcher;
pub mod network;
pub mod scoring;
pub mod search;
pub mod synth;
pub mod traffic;
pub mod trajectory;

pub use error::{Error, Result};
