//! Core library for out-of-distribution detection with few labels and a
//! large mixed unlabeled pool: a small MLP with analytic gradients,
//! temperature calibration of confidence scores, GMM-based dynamic
//! thresholding, feature-space augmentation with modified mixup, the
//! two-stage entropy training loop, and detection metrics.
//!
//! The crate is `no_std` + `alloc`; all IO lives in the companion `aiol`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod error;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod selection;
pub mod temperature;
pub mod trainer;

pub use error::{Error, Result};
