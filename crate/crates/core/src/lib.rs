//! Unsupervised removal of water-surface refraction distortion.
//!
//! A short sequence of frames observed through a wavy water surface is the
//! only training signal. Two coordinate networks are fit jointly: a
//! spatio-temporal surface-height field and a static underlying-image field.
//! The height field's spatial gradient drives a first-order refraction model
//! that warps the image field to re-render each observed frame; minimizing
//! the re-rendering error recovers both the undistorted image and the
//! surface height. A synthetic-wave simulator generates ground-truth
//! sequences for evaluation, and standard image/height metrics close the
//! loop.

pub mod autodiff;
pub mod error;
pub mod fields;
pub mod metrics;
pub mod refraction;
pub mod wavesim;

pub use error::{Error, Result};
