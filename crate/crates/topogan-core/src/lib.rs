//! Training core for corneal-topography image synthesis and diagnosis.
//!
//! The crate is `no_std` (alloc only) and fully deterministic: tensors,
//! a reverse-mode autodiff tape, the layers and Adam optimizer behind the
//! generator/discriminator/classifier networks, image quality metrics,
//! and the phantom corpus with its resampling and patient-level splits.
//! File formats, the CLI, and wall-clock timing live in the companion
//! `topogan-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adam;
pub mod classifier;
pub mod error;
pub mod fid;
pub mod gan;
pub mod gradcheck;
pub mod img;
pub mod kernels;
pub mod layers;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod resample;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{CoreError, Result};
pub use rng::{derive_seed, SeedStream};
pub use tensor::{Scalar, Tensor};
