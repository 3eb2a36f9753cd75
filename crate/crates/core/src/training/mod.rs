//! Coarse-field fitting and generative restoration training.

mod coarse;
mod losses;
mod networks;
mod restore;

pub use coarse::{fit_coarse, fit_coarse_with, patch_pixels, plane_bytes, CoarseConfig, CoarseStep, MultiViewSet};
pub use losses::{
    adversarial_losses, blur_anneal, density_reg, distortion_loss, geometry_loss, normalized_intervals, tv_loss,
    tv_value, AdversarialLosses, BlurAnneal,
};
pub use networks::{sample_latents, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
pub use restore::{train_restoration, LogRow, RestorationModel, TrainConfig};
