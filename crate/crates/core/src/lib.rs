//! A desk-scale laboratory for preference optimization of diffusion models.
//!
//! The crate trains small MLP noise predictors on low-dimensional synthetic
//! data and compares preference-tuning objectives under exact, reproducible
//! numerics: deterministic seeded RNG streams, `f64` everywhere, and a
//! tape-based reverse-mode autodiff that is cross-checked against finite
//! differences. The centerpiece is a smoothed preference objective that
//! derives soft labels from reward gaps and scores pairs at latents
//! recovered by DDIM inversion, alongside its hard-label counterpart.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod objectives;
pub mod preference;

pub use error::{Error, Result};
