//! Scoring kernels for holistic reliability evaluation of classifiers.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithm the
//! evaluation engine relies on:
//!
//! - [`metrics`]: accuracy, softmax, expected calibration error, AUROC and the
//!   five property scores plus their weighted combination.
//! - [`detectors`]: max-softmax, max-logit, energy and ODIN OOD scores.
//! - [`posthoc`]: temperature scaling and validation-fitted logit ensembles.
//! - [`runtime`]: a tiny differentiable classifier with FGSM/PGD attacks and
//!   ERM/adversarial training.
//! - [`analysis`]: group-centred correlation analysis across evaluated models.
//!
//! File formats, manifests and the command line live in the `reliascore`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod detectors;
mod error;
mod math;
pub mod matrix;
pub mod metrics;
pub mod posthoc;
pub mod runtime;
pub mod sampling;

pub use error::{Error, Result};
pub use matrix::Matrix;
