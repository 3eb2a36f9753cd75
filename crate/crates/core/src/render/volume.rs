use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::camera::{generate_rays, rays_for_pixels, to_ndc, Camera, PatchSpec, RayBundle};
use super::sampling::{bin_edges, importance_samples, merge_samples, stratified_samples};
use crate::field::{BoundField, TwoLevelField};
use crate::numerics::{Tape, Var};
use crate::{par, rng, Error, Result};

/// Space in which rays are marched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RenderSpace {
    /// World coordinates, `t` in `[near, far]` of each camera.
    World,
    /// NDC of a shared reference camera, `t` in `[0, 1]`.
    Ndc { reference: Camera },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub n_strat: usize,
    pub n_imp: usize,
    /// Jitter stratified samples within their bins.
    pub jitter: bool,
    pub background: [f64; 3],
    pub space: RenderSpace,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_strat: 128,
            n_imp: 48,
            jitter: true,
            background: [0.0; 3],
            space: RenderSpace::World,
        }
    }
}

/// Rendered rays together with the quantities regularizers need.
pub struct RenderOutput {
    /// `[rays, 3]`.
    pub rgb: Var,
    /// `[rays * per_ray]` compositing weights.
    pub weights: Var,
    /// `[rays * per_ray]` densities.
    pub sigma: Var,
    pub rays: RayBundle,
}

/// Quadrature of the emission-absorption integral along sampled rays.
pub fn volume_render(
    tape: &mut Tape,
    field: &BoundField,
    rays: RayBundle,
    background: [f64; 3],
) -> Result<RenderOutput> {
    if rays.per_ray == 0 {
        return Err(Error::invalid("volume_render: rays carry no samples"));
    }
    let points = rays.points();
    let dirs = rays.sample_dirs();
    let decoded = field.eval(tape, &points, &dirs);
    let deltas = Arc::new(rays.deltas());
    let weights = tape.render_weights(decoded.sigma, deltas, rays.per_ray);
    let rgb = tape.composite(weights, decoded.rgb, background, rays.per_ray);
    Ok(RenderOutput {
        rgb,
        weights,
        sigma: decoded.sigma,
        rays,
    })
}

fn prepare(rays: RayBundle, cfg: &RenderConfig) -> Result<RayBundle> {
    match &cfg.space {
        RenderSpace::World => Ok(rays),
        RenderSpace::Ndc { reference } => to_ndc(&rays, reference),
    }
}

/// Stratified pass on a frozen copy, then importance samples from its weights,
/// then the tracked render over the merged sample set.
fn render_rays(
    tape: &mut Tape,
    field: &BoundField,
    rays: RayBundle,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    if cfg.n_strat == 0 {
        return Err(Error::invalid("n_strat must be at least 1"));
    }
    let mut r = rng::stream(seed, &[0x7261_7973]);
    let (near, far, n) = (rays.near, rays.far, rays.len());
    let strat: Vec<f64> = (0..n)
        .flat_map(|_| stratified_samples(near, far, cfg.n_strat, cfg.jitter, &mut r))
        .collect();
    if cfg.n_imp == 0 {
        let rays = rays.with_samples(strat, cfg.n_strat)?;
        return volume_render(tape, field, rays, cfg.background);
    }
    let coarse = rays.clone().with_samples(strat, cfg.n_strat)?;
    let weights = {
        let mut scratch = Tape::new();
        let frozen = field.freeze_onto(tape, &mut scratch);
        let out = volume_render(&mut scratch, &frozen, coarse.clone(), cfg.background)?;
        scratch.value(out.weights).data().to_vec()
    };
    let per_ray = cfg.n_strat + cfg.n_imp;
    let mut merged = Vec::with_capacity(n * per_ray);
    for (t, w) in coarse.t.chunks(cfg.n_strat).zip(weights.chunks(cfg.n_strat)) {
        let imp = importance_samples(&bin_edges(t, near, far), w, cfg.n_imp, &mut r);
        merged.extend(merge_samples(t, &imp));
    }
    volume_render(tape, field, rays.with_samples(merged, per_ray)?, cfg.background)
}

/// Renders an `S x S` patch; `rgb` is `[S^2, 3]` in row-major pixel order and
/// differentiable w.r.t. every tracked input of `field`.
pub fn render_patch(
    tape: &mut Tape,
    field: &BoundField,
    cam: &Camera,
    patch: &PatchSpec,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    let rays = prepare(generate_rays(cam, patch)?, cfg)?;
    render_rays(tape, field, rays, cfg, seed)
}

/// Renders a full `H x W x 3` image without gradients, in parallel row
/// blocks. The result does not depend on the number of worker threads.
pub fn render_image(field: &TwoLevelField, cam: &Camera, cfg: &RenderConfig, seed: u64) -> Result<Vec<f64>> {
    cam.validate()?;
    const ROWS: usize = 4;
    let blocks = cam.height.div_ceil(ROWS);
    let parts = par::map(blocks, |b| -> Result<Vec<f64>> {
        let rows = b * ROWS..((b + 1) * ROWS).min(cam.height);
        let pixels = rows.flat_map(|j| (0..cam.width).map(move |i| (i, j)));
        let rays = prepare(rays_for_pixels(cam, pixels), cfg)?;
        let mut tape = Tape::new();
        let bound = field.bind_frozen(&mut tape);
        let out = render_rays(&mut tape, &bound, rays, cfg, rng::derive(seed, &[b as u64]))?;
        Ok(tape.value(out.rgb).data().to_vec())
    });
    let mut img = Vec::with_capacity(cam.width * cam.height * 3);
    for p in parts {
        img.extend(p?);
    }
    Ok(img)
}
