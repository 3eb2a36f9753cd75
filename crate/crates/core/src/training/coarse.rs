use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::losses::{distortion_loss, normalized_intervals, tv_loss};
use crate::degrade::ImageBuffer;
use crate::field::{init_triplane, Bounds, DecoderConfig, FieldDecoder, PlaneRef, TwoLevelField, BoundField};
use crate::numerics::{nn::mse, AdamConfig, AdamState, DiffTensor, Tape, Tensor, Var};
use crate::render::{render_patch, Camera, PatchMode, PatchSchedule, PatchSpec, RenderConfig};
use crate::{rng, Error, Result};

/// Images with their cameras.
#[derive(Clone, Debug, Default)]
pub struct MultiViewSet {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageBuffer>,
}

impl MultiViewSet {
    pub fn new(cameras: Vec<Camera>, images: Vec<ImageBuffer>) -> Result<Self> {
        let set = MultiViewSet { cameras, images };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() {
            return Err(Error::invalid(format!(
                "{} cameras for {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            c.validate()?;
            if c.width != img.width || c.height != img.height {
                return Err(Error::invalid(format!(
                    "view {i}: camera is {}x{} but image is {}x{}",
                    c.width, c.height, img.width, img.height
                )));
            }
        }
        Ok(())
    }
}

/// Image patch as a `[S*S, 3]` tensor matching rendered ray order.
pub fn patch_pixels(img: &ImageBuffer, patch: &PatchSpec) -> Tensor {
    let mut data = Vec::with_capacity(patch.side * patch.side * 3);
    for (x, y) in patch.pixels() {
        data.extend(img.pixel(x, y));
    }
    Tensor::from_parts(vec![patch.side * patch.side, 3], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub resolution: usize,
    pub channels: usize,
    pub init_scale: f64,
    pub bounds: Bounds,
    pub decoder: DecoderConfig,
    pub render: RenderConfig,
    pub iterations: usize,
    pub lr: f64,
    pub patch_size: usize,
    /// Patches per step.
    pub batch: usize,
    pub lambda_rec: f64,
    pub lambda_tv: f64,
    pub lambda_dis: f64,
    /// Written with the last finite state when the loss diverges.
    #[serde(skip)]
    pub dump_path: Option<PathBuf>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            resolution: 64,
            channels: 16,
            init_scale: 0.1,
            bounds: Bounds::object(),
            decoder: DecoderConfig::default(),
            render: RenderConfig::default(),
            iterations: 2000,
            lr: 1e-2,
            patch_size: 32,
            batch: 1,
            lambda_rec: 1.0,
            lambda_tv: 0.01,
            lambda_dis: 0.001,
            dump_path: None,
        }
    }
}

/// Loss values of one coarse-fitting step.
#[derive(Clone, Copy, Debug, Default)]
pub struct CoarseStep {
    pub iteration: usize,
    pub rec: f64,
    pub tv: f64,
    pub distortion: f64,
    pub total: f64,
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, v: Var) -> Var {
    match acc {
        Some(a) => tape.add(a, v),
        None => v,
    }
}

/// Fits coarse planes and the decoder to `views`: L2 reconstruction of
/// random patches plus TV on the planes and the distortion loss.
pub fn fit_coarse(views: &MultiViewSet, cfg: &CoarseConfig, seed: u64) -> Result<TwoLevelField> {
    fit_coarse_with(views, cfg, seed, |_| {})
}

/// [`fit_coarse`] reporting every step to `observe`.
pub fn fit_coarse_with(
    views: &MultiViewSet,
    cfg: &CoarseConfig,
    seed: u64,
    mut observe: impl FnMut(&CoarseStep),
) -> Result<TwoLevelField> {
    views.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("fit_coarse needs at least one view"));
    }
    let planes = init_triplane(cfg.resolution, cfg.channels, cfg.init_scale, rng::derive(seed, &[1]), cfg.bounds)?;
    let decoder = FieldDecoder::new(cfg.channels, cfg.decoder.clone(), rng::derive(seed, &[2]));
    let mut field = TwoLevelField::new(planes, decoder)?;
    if cfg.iterations == 0 {
        return Ok(field);
    }
    let adam_cfg = AdamConfig::default().with_lr(cfg.lr);
    let mut plane_opt = AdamState::new(adam_cfg, std::slice::from_ref(&field.coarse.planes));
    let mut dec_opt = AdamState::for_set(adam_cfg, &field.decoder.params);
    let uniform = PatchSchedule {
        mode: PatchMode::Uniform,
        ..PatchSchedule::default()
    };
    let mut tape = Tape::new();
    for it in 0..cfg.iterations {
        tape.clear();
        let mut r = rng::stream(seed, &[3, it as u64]);
        let pv = tape.leaf(&field.coarse.planes);
        let bound = BoundField {
            coarse: PlaneRef {
                var: pv,
                set: 0,
                resolution: field.coarse.resolution,
                bounds: field.coarse.bounds,
            },
            fine: None,
            decoder: &field.decoder,
            decoder_params: field.decoder.params.bind(&mut tape),
        };
        let mut rec = None;
        let mut dis = None;
        for slot in 0..cfg.batch.max(1) {
            let v = r.random_range(0..views.len());
            let cam = &views.cameras[v];
            let side = cfg.patch_size.min(cam.width).min(cam.height);
            let patch = crate::render::sample_patch_origin(cam.width, cam.height, side, 0.0, &uniform, v, &mut r)?;
            let out = render_patch(&mut tape, &bound, cam, &patch, &cfg.render, rng::derive(seed, &[4, it as u64, slot as u64]))?;
            let target = tape.constant(patch_pixels(&views.images[v], &patch));
            let l = mse(&mut tape, out.rgb, target);
            rec = Some(add_opt(&mut tape, rec, l));
            let (s, w) = normalized_intervals(&out.rays);
            let d = distortion_loss(&mut tape, out.weights, s, w, out.rays.per_ray);
            dis = Some(add_opt(&mut tape, dis, d));
        }
        let inv_b = 1.0 / cfg.batch.max(1) as f64;
        let rec = tape.scale(rec.unwrap(), inv_b);
        let dis = tape.scale(dis.unwrap(), inv_b);
        let tv = tv_loss(&mut tape, pv);
        let a = tape.scale(rec, cfg.lambda_rec);
        let b = tape.scale(tv, cfg.lambda_tv);
        let c = tape.scale(dis, cfg.lambda_dis);
        let ab = tape.add(a, b);
        let total = tape.add(ab, c);
        let step = CoarseStep {
            iteration: it,
            rec: tape.value(rec).item(),
            tv: tape.value(tv).item(),
            distortion: tape.value(dis).item(),
            total: tape.value(total).item(),
        };
        if !step.total.is_finite() {
            if let Some(p) = &cfg.dump_path {
                field.save(p)?;
            }
            return Err(Error::Diverged {
                iteration: it,
                what: "coarse loss".into(),
            });
        }
        let dec_bound = bound.decoder_params.clone();
        let grads = tape.backward(total)?;
        field.coarse.planes.zero_grad();
        grads.accumulate_into(pv, &mut field.coarse.planes)?;
        field.decoder.params.zero_grad();
        field.decoder.params.accumulate(&grads, &dec_bound)?;
        plane_opt.step(std::slice::from_mut(&mut field.coarse.planes))?;
        dec_opt.step_set(&mut field.decoder.params)?;
        observe(&step);
    }
    field.coarse.planes.requires_grad = false;
    Ok(field)
}

/// Flat copy of planes for bit-level comparisons.
pub fn plane_bytes(t: &DiffTensor) -> Vec<u8> {
    t.value.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}
