use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::coarse::{patch_pixels, MultiViewSet};
use super::losses::{adversarial_losses, density_reg, geometry_loss, BlurAnneal};
use super::networks::{sample_latents, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::field::{init_triplane, BoundField, FieldDecoder, PlaneRef, TriPlaneSet, TwoLevelField};
use crate::numerics::{checkpoint, nn::mse, AdamConfig, AdamState, DiffTensor, ParamSet, ScalarNet, Tape, Tensor, Var};
use crate::render::{render_patch, sample_patch_origin, PatchMode, PatchSchedule, PatchSpec, RenderConfig};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub fine_resolution: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Learning rate of the shared decoder; `None` uses `lr_g`, `0` freezes it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_decoder: Option<f64>,
    pub lambda_geometry: f64,
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lambda_r1: f64,
    pub lambda_dreg: f64,
    pub blur: BlurAnneal,
    pub patch_schedule: PatchSchedule,
    pub render: RenderConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Ablation: build on the pretrained coarse field (on) or on a random
    /// frozen field with a fresh decoder (off).
    pub use_residual_coarse: bool,
    pub use_viewdir: bool,
    /// Ablation: Beta-annealed patch origins (on) or uniform crops (off).
    pub beta_sampling: bool,
    /// Generated planes with mean variance across latents below this trigger
    /// a mode-collapse warning.
    pub collapse_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            patch_size: 32,
            fine_resolution: 64,
            lr_g: 0.0025,
            lr_d: 0.002,
            lr_decoder: None,
            lambda_geometry: 0.5,
            lambda_adv: 1.0,
            lambda_rec: 1.0,
            lambda_r1: 0.01,
            lambda_dreg: 1e-4,
            blur: BlurAnneal::default(),
            patch_schedule: PatchSchedule::default(),
            render: RenderConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            use_residual_coarse: true,
            use_viewdir: true,
            beta_sampling: true,
            collapse_threshold: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn decoder_lr(&self) -> f64 {
        self.lr_decoder.unwrap_or(self.lr_g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decoder_lr() >= 0.0) {
            return Err(Error::invalid("decoder learning rate must be >= 0"));
        }
        let lambdas = [
            self.lambda_geometry,
            self.lambda_adv,
            self.lambda_rec,
            self.lambda_r1,
            self.lambda_dreg,
        ];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::invalid("loss weights must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let g = self.discriminator.mbstd_group.min(self.batch_size).max(1);
        if !self.batch_size.is_multiple_of(g) {
            return Err(Error::invalid(format!(
                "batch size {} not divisible by minibatch-std group {g}",
                self.batch_size
            )));
        }
        if self.patch_size < 8 || !self.patch_size.is_power_of_two() {
            return Err(Error::invalid("patch size must be a power of two >= 8"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_geometry: f64,
    pub loss_rec: f64,
    pub r1: f64,
    pub wall_time: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "iteration,L_D,L_G,L_geometry,L_rec,R1,wall_time";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.iteration, self.loss_d, self.loss_g, self.loss_geometry, self.loss_rec, self.r1, self.wall_time
        )
    }
}

/// Trained restoration model: frozen base planes, shared decoder and the
/// residual generator. Sampling a latent code yields a restored field.
#[derive(Clone, Debug)]
pub struct RestorationModel {
    pub base: TriPlaneSet,
    pub decoder: FieldDecoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl RestorationModel {
    /// Field for latent `z`: base planes plus the generated residual.
    pub fn sample_field(&self, z: &[f64]) -> Result<TwoLevelField> {
        let fine = TriPlaneSet::from_tensor(self.generator.generate(z)?, self.base.bounds)?;
        TwoLevelField::new(self.base.clone(), self.decoder.clone())?.with_fine(fine)
    }

    /// Field for the `index`-th latent drawn from `seed`.
    pub fn sample_field_seeded(&self, seed: u64, index: usize) -> Result<TwoLevelField> {
        let z = sample_latents(1, self.generator.config.z_dim, rng::derive(seed, &[index as u64]));
        self.sample_field(z.data())
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let base = TwoLevelField::new(self.base.clone(), self.decoder.clone()).expect("consistent model");
        let mut out = base.to_tensors();
        let g = &self.generator;
        let c = &g.config;
        out.push((
            "gen.meta".into(),
            Tensor::from_vec(vec![
                c.z_dim as f64,
                c.w_dim as f64,
                c.mapping_layers as f64,
                c.base_resolution as f64,
                c.hidden as f64,
                c.output_gain,
                g.resolution as f64,
                g.channels as f64,
            ]),
        ));
        for t in &g.params.tensors {
            out.push((t.name.clone(), t.value.clone()));
        }
        let d = &self.discriminator;
        out.push((
            "disc.meta".into(),
            Tensor::from_vec(vec![
                d.config.channels as f64,
                d.config.mbstd_group as f64,
                d.patch as f64,
            ]),
        ));
        for t in &d.params.tensors {
            out.push((t.name.clone(), t.value.clone()));
        }
        out
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let base = TwoLevelField::from_tensors(tensors)?;
        let m = checkpoint::find(tensors, "gen.meta")?.data();
        if m.len() != 8 {
            return Err(Error::Format("gen.meta must hold 8 values".into()));
        }
        let cfg = GeneratorConfig {
            z_dim: m[0] as usize,
            w_dim: m[1] as usize,
            mapping_layers: m[2] as usize,
            base_resolution: m[3] as usize,
            hidden: m[4] as usize,
            output_gain: m[5],
        };
        let mut generator = Generator::new(cfg, m[6] as usize, m[7] as usize, 0)?;
        load_params(&mut generator.params, tensors)?;
        let dm = checkpoint::find(tensors, "disc.meta")?.data();
        if dm.len() != 3 {
            return Err(Error::Format("disc.meta must hold 3 values".into()));
        }
        let dcfg = DiscriminatorConfig {
            channels: dm[0] as usize,
            mbstd_group: dm[1] as usize,
            ..DiscriminatorConfig::default()
        };
        let mut discriminator = Discriminator::new(dcfg, dm[2] as usize, 0)?;
        load_params(&mut discriminator.params, tensors)?;
        Ok(RestorationModel {
            base: base.coarse,
            decoder: base.decoder,
            generator,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        RestorationModel::from_tensors(&checkpoint::load(path)?)
    }
}

fn load_params(params: &mut ParamSet, tensors: &[(String, Tensor)]) -> Result<()> {
    for t in &mut params.tensors {
        let v = checkpoint::find(tensors, &t.name)?;
        if v.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                expected: t.shape().to_vec(),
                actual: v.shape().to_vec(),
            });
        }
        t.value = v.clone();
    }
    Ok(())
}

/// `[S*S, 3]` render to a `[3, S, S]` image.
fn to_chw(tape: &mut Tape, rgb: Var, side: usize) -> Var {
    let t = tape.transpose2(rgb);
    tape.reshape(t, &[3, side, side])
}

fn crop_chw(img: &crate::degrade::ImageBuffer, p: &PatchSpec) -> Vec<f64> {
    let px = patch_pixels(img, p);
    let n = p.side * p.side;
    let mut out = vec![0.0; 3 * n];
    for (i, rgb) in px.data().chunks(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = rgb[c];
        }
    }
    out
}

fn check_finite(v: f64, iteration: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            what: what.into(),
        })
    }
}

/// Alternating G/D training of the residual generator against restored
/// views, with the coarse branch supervised by the degraded views.
pub fn train_restoration(
    coarse: &TwoLevelField,
    restored: &MultiViewSet,
    degraded: &MultiViewSet,
    cfg: &TrainConfig,
    seed: u64,
    mut observe: impl FnMut(&LogRow, &RestorationModel),
) -> Result<RestorationModel> {
    cfg.validate()?;
    restored.validate()?;
    degraded.validate()?;
    if restored.is_empty() || restored.len() != degraded.len() {
        return Err(Error::invalid("restored and degraded sets must be non-empty and aligned"));
    }
    let s = cfg.patch_size;
    if restored.images.iter().any(|i| i.width < s || i.height < s) {
        return Err(Error::invalid(format!("restored views must be at least {s}x{s}")));
    }
    let channels = coarse.channels();
    let (base, mut decoder) = if cfg.use_residual_coarse {
        (coarse.coarse.clone(), coarse.decoder.clone())
    } else {
        let b = coarse.coarse.bounds;
        let planes = init_triplane(coarse.coarse.resolution, channels, 0.1, rng::derive(seed, &[20]), b)?;
        let dec = FieldDecoder::new(channels, coarse.decoder.config.clone(), rng::derive(seed, &[21]));
        (planes, dec)
    };
    decoder.config.use_viewdir = cfg.use_viewdir;
    let mut base = base;
    base.planes.requires_grad = false;
    let generator = Generator::new(cfg.generator.clone(), cfg.fine_resolution, channels, rng::derive(seed, &[22]))?;
    let discriminator = Discriminator::new(cfg.discriminator.clone(), s, rng::derive(seed, &[23]))?;
    let mut model = RestorationModel {
        base,
        decoder,
        generator,
        discriminator,
    };
    let mut g_opt = AdamState::for_set(AdamConfig::default().with_lr(cfg.lr_g), &model.generator.params);
    let mut dec_opt = AdamState::for_set(AdamConfig::default().with_lr(cfg.decoder_lr()), &model.decoder.params);
    let mut d_opt = AdamState::for_set(AdamConfig::default().with_lr(cfg.lr_d), &model.discriminator.params);
    let schedule = if cfg.beta_sampling {
        cfg.patch_schedule
    } else {
        PatchSchedule {
            mode: PatchMode::Uniform,
            ..cfg.patch_schedule
        }
    };
    let uniform = PatchSchedule {
        mode: PatchMode::Uniform,
        ..PatchSchedule::default()
    };
    let bsz = cfg.batch_size;
    let z_dim = cfg.generator.z_dim;
    let start = Instant::now();
    let mut warned = false;
    let mut tape = Tape::new();
    for it in 0..cfg.iterations {
        let t = it as f64 / cfg.iterations as f64;
        let mut r = rng::stream(seed, &[24, it as u64]);
        let views: Vec<usize> = (0..bsz).map(|_| r.random_range(0..restored.len())).collect();
        let mut patches = Vec::with_capacity(bsz);
        for (slot, &v) in views.iter().enumerate() {
            let cam = &restored.cameras[v];
            let mut pr = rng::stream(seed, &[25, it as u64, slot as u64]);
            patches.push(sample_patch_origin(cam.width, cam.height, s, t, &schedule, v, &mut pr)?);
        }
        let z = sample_latents(bsz, z_dim, rng::derive(seed, &[26, it as u64]));
        let real_data: Vec<f64> = patches
            .iter()
            .flat_map(|p| crop_chw(&restored.images[p.camera], p))
            .collect();
        let real = Tensor::from_parts(vec![bsz, 3, s, s], real_data);
        model.discriminator.set_blur(cfg.blur.kernel(t));

        // Generator step.
        tape.clear();
        let gb = model.generator.params.bind(&mut tape);
        let zv = tape.constant(z);
        let planes = model.generator.forward(&mut tape, &gb, zv);
        let planes_val = tape.value(planes).clone();
        let base_var = tape.constant(model.base.planes.value.clone());
        let dec_b = model.decoder.params.bind(&mut tape);
        let mut fakes = Vec::with_capacity(bsz);
        let mut dreg: Option<Var> = None;
        for (slot, p) in patches.iter().enumerate() {
            let field = BoundField {
                coarse: PlaneRef {
                    var: base_var,
                    set: 0,
                    resolution: model.base.resolution,
                    bounds: model.base.bounds,
                },
                fine: Some(PlaneRef {
                    var: planes,
                    set: slot,
                    resolution: cfg.fine_resolution,
                    bounds: model.base.bounds,
                }),
                decoder: &model.decoder,
                decoder_params: dec_b.clone(),
            };
            let out = render_patch(
                &mut tape,
                &field,
                &restored.cameras[p.camera],
                p,
                &cfg.render,
                rng::derive(seed, &[27, it as u64, slot as u64]),
            )?;
            fakes.push(to_chw(&mut tape, out.rgb, s));
            let d = density_reg(&mut tape, out.sigma, out.rays.per_ray);
            dreg = Some(match dreg {
                Some(a) => tape.add(a, d),
                None => d,
            });
        }
        let fake = tape.stack(&fakes, 0);
        let fake_val = tape.value(fake).clone();
        let real_c = tape.constant(real.clone());
        let geom = geometry_loss(&mut tape, fake, real_c)?;
        let db = model.discriminator.params.bind_frozen(&mut tape);
        let d_fake = model.discriminator.forward(&mut tape, &db, fake)?;
        let neg = tape.neg(d_fake);
        let sp = tape.softplus(neg);
        let loss_g = tape.mean(sp);
        // Coarse branch against a degraded view.
        let rv = views[0];
        let dcam = &degraded.cameras[rv];
        let rside = s.min(dcam.width).min(dcam.height);
        let mut rr = rng::stream(seed, &[28, it as u64]);
        let rp = sample_patch_origin(dcam.width, dcam.height, rside, 0.0, &uniform, rv, &mut rr)?;
        let coarse_only = BoundField {
            coarse: PlaneRef {
                var: base_var,
                set: 0,
                resolution: model.base.resolution,
                bounds: model.base.bounds,
            },
            fine: None,
            decoder: &model.decoder,
            decoder_params: dec_b.clone(),
        };
        let rec_out = render_patch(&mut tape, &coarse_only, dcam, &rp, &cfg.render, rng::derive(seed, &[29, it as u64]))?;
        let target = tape.constant(patch_pixels(&degraded.images[rv], &rp));
        let rec = mse(&mut tape, rec_out.rgb, target);
        let dreg = tape.scale(dreg.unwrap(), 1.0 / bsz as f64);
        let terms = [
            (geom, cfg.lambda_geometry),
            (loss_g, cfg.lambda_adv),
            (rec, cfg.lambda_rec),
            (dreg, cfg.lambda_dreg),
        ];
        let mut total: Option<Var> = None;
        for (v, w) in terms {
            let sv = tape.scale(v, w);
            total = Some(match total {
                Some(a) => tape.add(a, sv),
                None => sv,
            });
        }
        let total = total.unwrap();
        let mut row = LogRow {
            iteration: it,
            loss_g: tape.value(loss_g).item(),
            loss_geometry: tape.value(geom).item(),
            loss_rec: tape.value(rec).item(),
            ..LogRow::default()
        };
        check_finite(tape.value(total).item(), it, "generator loss")?;
        let grads = tape.backward(total)?;
        model.generator.params.zero_grad();
        model.generator.params.accumulate(&grads, &gb)?;
        model.decoder.params.zero_grad();
        model.decoder.params.accumulate(&grads, &dec_b)?;
        g_opt.step_set(&mut model.generator.params)?;
        if cfg.decoder_lr() > 0.0 {
            dec_opt.step_set(&mut model.decoder.params)?;
        }

        // Discriminator step.
        if cfg.lambda_adv > 0.0 {
            tape.clear();
            let db = model.discriminator.params.bind(&mut tape);
            let real_d = DiffTensor::new("real", real);
            let fake_c = tape.constant(fake_val);
            let adv = adversarial_losses(&mut tape, &model.discriminator, &db, &real_d, fake_c, cfg.lambda_r1)?;
            row.loss_d = tape.value(adv.d_loss).item();
            row.r1 = tape.value(adv.r1).item();
            check_finite(row.loss_d, it, "discriminator loss")?;
            let grads = tape.backward(adv.d_loss)?;
            model.discriminator.params.zero_grad();
            model.discriminator.params.accumulate(&grads, &db)?;
            d_opt.step_set(&mut model.discriminator.params)?;
        }

        if bsz >= 2 && !warned {
            let var = latent_variance(&planes_val, bsz);
            if var < cfg.collapse_threshold {
                log::warn!("possible mode collapse at iteration {it}: variance across latents {var:e}");
                warned = true;
            }
        }
        row.wall_time = start.elapsed().as_secs_f64();
        observe(&row, &model);
    }
    Ok(model)
}

/// Mean over entries of the variance across the leading (latent) axis.
fn latent_variance(t: &Tensor, b: usize) -> f64 {
    let n = t.len() / b;
    let d = t.data();
    let mut total = 0.0;
    for j in 0..n {
        let mean = (0..b).map(|i| d[i * n + j]).sum::<f64>() / b as f64;
        total += (0..b).map(|i| (d[i * n + j] - mean).powi(2)).sum::<f64>() / b as f64;
    }
    total / n as f64
}
