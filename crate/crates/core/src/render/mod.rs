//! Pinhole cameras, NDC, ray sampling, volume rendering and patch selection.

mod camera;
mod sampling;
mod volume;

pub use camera::{
    generate_rays, ndc_project, ndc_unproject, rays_for_pixels, to_ndc, Camera, PatchSpec, RayBundle,
};
pub use sampling::{
    bin_edges, importance_samples, merge_samples, sample_patch_origin, stratified_samples, PatchMode,
    PatchSchedule,
};
pub use volume::{render_image, render_patch, volume_render, RenderConfig, RenderOutput, RenderSpace};

pub use camera::{cross, dot, norm, normalize};
