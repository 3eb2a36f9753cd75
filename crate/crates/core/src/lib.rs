//! Generative radiance-field restoration at desk scale.
//!
//! A coarse tri-plane radiance field is fit to degraded multi-view images,
//! then a latent-conditioned generator learns residual tri-planes that are
//! trained adversarially against independently restored (and therefore
//! mutually inconsistent) views. Sampling the latent code yields a
//! distribution of restored 3D fields.
//!
//! Modules, bottom up:
//!
//! * [`numerics`]: dense tensors, a reverse-mode tape with forward-mode
//!   tangents for gradient penalties, Adam, gradient checking, checkpoints.
//! * [`field`]: tri-planes, residual composition and the density/color decoder.
//! * [`render`]: cameras, NDC, stratified/importance sampling, volume rendering,
//!   patch sampling.
//! * [`degrade`]: seeded degradation simulators and the oracle restorer.
//! * [`metrics`]: PSNR, SSIM, perceptual proxy, diversity score, HF energy.
//! * [`training`]: coarse fitting and generative restoration training.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and a plain sequential loop otherwise. Both
//! paths produce bit-identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod degrade;
pub mod error;
pub mod field;
pub mod metrics;
pub mod numerics;
pub mod par;
pub mod render;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
