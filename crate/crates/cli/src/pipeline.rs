//! Staged, cached experiment pipeline.
//!
//! Every stage writes into `<out>/<stage>/` and finishes by writing a
//! `.stamp` file holding a hash of its configuration, the global seed and
//! the stamps of the stages it reads. A stage whose stamp already matches is
//! skipped, so changing a downstream parameter never re-runs upstream work.
//! Wall-clock logs go to `<out>/logs/` and are the only non-deterministic
//! output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rafe_core::degrade::{oracle_restore, DegradationConfig, ImageBuffer, Stage};
use rafe_core::field::TwoLevelField;
use rafe_core::metrics::{diversity_score_by, hf_energy, perceptual_proxy, psnr, ssim};
use rafe_core::render::{render_image, Camera};
use rafe_core::rng;
use rafe_core::training::{fit_coarse_with, train_restoration, CoarseConfig, LogRow, MultiViewSet, RestorationModel};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DegradeMode, ExperimentConfig};
use crate::io::{load_image, resize, save_image};
use crate::report::write_report;
use crate::rig::{read_transforms, write_transforms};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageId {
    Synth,
    Degrade,
    Restore2d,
    FitCoarse,
    Perframe,
    Train,
    Render,
    Eval,
    Report,
}

impl StageId {
    pub const ALL: [StageId; 9] = [
        StageId::Synth,
        StageId::Degrade,
        StageId::Restore2d,
        StageId::FitCoarse,
        StageId::Perframe,
        StageId::Train,
        StageId::Render,
        StageId::Eval,
        StageId::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageId::Synth => "synth",
            StageId::Degrade => "degrade",
            StageId::Restore2d => "restore-2d",
            StageId::FitCoarse => "fit-coarse",
            StageId::Perframe => "perframe",
            StageId::Train => "train",
            StageId::Render => "render",
            StageId::Eval => "eval",
            StageId::Report => "report",
        }
    }

    fn upstream(self) -> &'static [StageId] {
        use StageId::*;
        match self {
            Synth => &[],
            Degrade => &[Synth],
            Restore2d => &[Synth, Degrade],
            FitCoarse => &[Degrade],
            Perframe => &[Restore2d],
            Train => &[Degrade, Restore2d, FitCoarse],
            Render => &[Synth, FitCoarse, Perframe, Train],
            Eval => &[Synth, Degrade, Restore2d, Render],
            Report => &[Synth, Degrade, Restore2d, Render, Eval],
        }
    }
}

/// Failure of one stage; partial outputs stay on disk.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {:#}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub executed: Vec<&'static str>,
    pub cached: Vec<&'static str>,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    keys: Vec<Option<String>>,
}

fn hash_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn toml_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    Ok(toml::to_string(v)?.into_bytes())
}

/// Tag of each stage in seed derivation.
fn stage_seed(seed: u64, stage: StageId, tags: &[u64]) -> u64 {
    let mut path = vec![stage as u64];
    path.extend_from_slice(tags);
    rng::derive(seed, &path)
}

pub fn view_stem(split: &str, i: usize) -> String {
    format!("{split}/{i:03}")
}

/// Writes `set` as `transforms_<split>.json` plus RAFF and PNG images.
pub fn save_set(dir: &Path, split: &str, set: &MultiViewSet) -> Result<()> {
    let stems: Vec<String> = (0..set.len()).map(|i| view_stem(split, i)).collect();
    for (img, stem) in set.images.iter().zip(&stems) {
        save_image(&dir.join(format!("{stem}.raff")), img)?;
        save_image(&dir.join(format!("{stem}.png")), img)?;
    }
    write_transforms(&dir.join(format!("transforms_{split}.json")), &set.cameras, &stems)
}

/// Reads a set written by [`save_set`] or a Blender-layout dataset; RAFF
/// images are preferred over PNG.
pub fn load_set(dir: &Path, split: &str) -> Result<MultiViewSet> {
    let frames = read_transforms(&dir.join(format!("transforms_{split}.json")), None)?;
    let mut cameras = Vec::with_capacity(frames.len());
    let mut images = Vec::with_capacity(frames.len());
    for (cam, stem) in frames {
        let stem = stem.trim_start_matches("./");
        let raff = dir.join(format!("{stem}.raff"));
        let img = if raff.exists() {
            load_image(&raff)?
        } else {
            load_image(&dir.join(format!("{stem}.png")))?
        };
        cameras.push(cam);
        images.push(img);
    }
    Ok(MultiViewSet::new(cameras, images)?)
}

/// Camera seeing the same frustum as `cam` at the extent of a degraded
/// image. Downsampling center-crops to a multiple of the factor, which
/// narrows the field of view slightly.
fn rescaled_camera(cam: &Camera, img: &ImageBuffer, cfg: &DegradationConfig) -> Result<Camera> {
    if (img.width, img.height) == (cam.width, cam.height) {
        return Ok(*cam);
    }
    let factor: usize = cfg
        .stages
        .iter()
        .map(|s| match *s {
            Stage::Downsample { factor } => factor,
            _ => 1,
        })
        .product();
    let kept = (img.width * factor) as f64 / cam.width as f64;
    let fov = 2.0 * ((0.5 * cam.fov_x).tan() * kept).atan();
    Ok(Camera::new(cam.c2w, fov, img.width, img.height, cam.near, cam.far)?)
}

fn render_view(field: &TwoLevelField, cam: &Camera, cfg: &ExperimentConfig, seed: u64) -> Result<ImageBuffer> {
    let data = render_image(field, cam, &cfg.eval_render(), seed)?;
    Ok(ImageBuffer::new(cam.width, cam.height, data)?.clamp())
}

struct CsvLog {
    file: fs::File,
}

impl CsvLog {
    fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        let mut file = fs::File::create(path)?;
        writeln!(file, "{header}")?;
        Ok(CsvLog { file })
    }

    fn row(&mut self, line: &str) {
        let _ = writeln!(self.file, "{line}");
    }
}

/// Scene label of the metrics table.
pub fn scene_name(cfg: &ExperimentConfig) -> String {
    if let Some(d) = &cfg.scene.dataset {
        return d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    }
    cfg.scene.preset.clone().unwrap_or_else(|| "custom".into())
}

/// Methods evaluated on the test views, in report order.
pub const METHODS: [&str; 5] = ["degraded", "restored_2d", "coarse", "perframe", "rafe"];

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            out: out.into(),
            keys: vec![None; StageId::ALL.len()],
        })
    }

    pub fn stage_dir(&self, s: StageId) -> PathBuf {
        self.out.join(s.name())
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.out.join("logs")
    }

    /// Hash of everything stage `s` depends on.
    fn key(&mut self, s: StageId) -> Result<String> {
        if let Some(k) = &self.keys[s as usize] {
            return Ok(k.clone());
        }
        let c = &self.cfg;
        let own: Vec<u8> = match s {
            StageId::Synth => {
                let mut b = toml_bytes(&c.scene)?;
                b.extend(toml_bytes(&c.rig)?);
                if let Some(d) = &c.scene.dataset {
                    for split in ["train", "test"] {
                        b.extend(fs::read(d.join(format!("transforms_{split}.json"))).unwrap_or_default());
                    }
                }
                b
            }
            StageId::Degrade => {
                let mut b = toml_bytes(&c.degradation)?;
                if c.degradation.mode == DegradeMode::NerfLike {
                    b.extend(toml_bytes(&c.coarse)?);
                    b.extend(toml_bytes(&c.eval_render())?);
                }
                b
            }
            StageId::Restore2d => toml_bytes(&c.restore)?,
            StageId::FitCoarse | StageId::Perframe => toml_bytes(&c.coarse)?,
            StageId::Train => toml_bytes(&c.train)?,
            StageId::Render => {
                let mut b = toml_bytes(&c.eval_render())?;
                b.extend(c.eval.samples.to_le_bytes());
                b
            }
            StageId::Eval | StageId::Report => {
                let mut b = c.eval.metrics.join(",").into_bytes();
                b.extend(c.task.as_bytes());
                b.extend(scene_name(c).as_bytes());
                b
            }
        };
        let mut parts: Vec<Vec<u8>> = vec![s.name().as_bytes().to_vec(), c.seed.to_le_bytes().to_vec(), own];
        for &u in s.upstream() {
            parts.push(self.key(u)?.into_bytes());
        }
        let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
        let k = hash_hex(&refs);
        self.keys[s as usize] = Some(k.clone());
        Ok(k)
    }

    fn stamp_path(&self, s: StageId) -> PathBuf {
        self.stage_dir(s).join(".stamp")
    }

    pub fn is_cached(&mut self, s: StageId) -> Result<bool> {
        let key = self.key(s)?;
        Ok(fs::read_to_string(self.stamp_path(s)).is_ok_and(|t| t.trim() == key))
    }

    /// Runs every stage up to and including `target`, skipping cached ones.
    pub fn run_until(&mut self, target: StageId) -> Result<RunSummary, StageError> {
        let mut summary = RunSummary::default();
        for s in StageId::ALL.into_iter().filter(|&s| s <= target) {
            let wrap = |e: anyhow::Error| StageError { stage: s.name(), source: e };
            if self.is_cached(s).map_err(wrap)? {
                info!("{}: cached", s.name());
                summary.cached.push(s.name());
                continue;
            }
            info!("{}: running", s.name());
            let dir = self.stage_dir(s);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| wrap(e.into()))?;
            }
            fs::create_dir_all(&dir).map_err(|e| wrap(e.into()))?;
            self.run_stage(s).map_err(wrap)?;
            let key = self.key(s).map_err(wrap)?;
            fs::write(self.stamp_path(s), key + "\n").map_err(|e| wrap(e.into()))?;
            summary.executed.push(s.name());
        }
        Ok(summary)
    }

    fn run_stage(&mut self, s: StageId) -> Result<()> {
        match s {
            StageId::Synth => self.synth(),
            StageId::Degrade => self.degrade(),
            StageId::Restore2d => self.restore_2d(),
            StageId::FitCoarse => self.fit(StageId::FitCoarse),
            StageId::Perframe => self.fit(StageId::Perframe),
            StageId::Train => self.train(),
            StageId::Render => self.render(),
            StageId::Eval => self.eval(),
            StageId::Report => write_report(&self.out).map(|_| ()),
        }
    }

    pub fn load(&self, s: StageId, split: &str) -> Result<MultiViewSet> {
        load_set(&self.stage_dir(s), split).with_context(|| format!("loading {} {split} views", s.name()))
    }

    fn synth(&self) -> Result<()> {
        let dir = self.stage_dir(StageId::Synth);
        if let Some(ds) = &self.cfg.scene.dataset {
            for split in ["train", "test"] {
                save_set(&dir, split, &load_set(ds, split)?)?;
            }
            return Ok(());
        }
        let scene = self.cfg.scene.scene()?;
        scene.validate(&self.cfg.rig.domain())?;
        let (train, test) = self.cfg.rig.cameras()?;
        let seed = stage_seed(self.cfg.seed, StageId::Synth, &[]);
        for (split, cams) in [("train", train), ("test", test)] {
            let images = cams.iter().map(|c| scene.render(c, seed)).collect();
            save_set(&dir, split, &MultiViewSet::new(cams, images)?)?;
        }
        Ok(())
    }

    /// Degradation stages with their seeds mixed with the global seed.
    pub fn seeded_degradation(&self) -> DegradationConfig {
        let mut d = self.cfg.degradation.config.clone();
        let g = stage_seed(self.cfg.seed, StageId::Degrade, &[]);
        for st in &mut d.stages {
            match st {
                Stage::MotionBlur { seed, .. } | Stage::ShotReadNoise { seed, .. } => *seed = rng::derive(g, &[*seed]),
                _ => {}
            }
        }
        d
    }

    fn degrade(&self) -> Result<()> {
        let clean_train = self.load(StageId::Synth, "train")?;
        let clean_test = self.load(StageId::Synth, "test")?;
        let dir = self.stage_dir(StageId::Degrade);
        match self.cfg.degradation.mode {
            DegradeMode::Stages => {
                let d = self.seeded_degradation();
                let offset = clean_train.len();
                for (split, set, first) in [("train", &clean_train, 0), ("test", &clean_test, offset)] {
                    let mut out = MultiViewSet::default();
                    for (i, (cam, img)) in set.cameras.iter().zip(&set.images).enumerate() {
                        let deg = d.apply(img, first + i)?.clamp();
                        out.cameras.push(rescaled_camera(cam, &deg, &d)?);
                        out.images.push(deg);
                    }
                    save_set(&dir, split, &out)?;
                }
            }
            DegradeMode::NerfLike => {
                let cfg = CoarseConfig {
                    iterations: self.cfg.degradation.nerf_like_iterations,
                    ..self.cfg.coarse.clone()
                };
                let seed = stage_seed(self.cfg.seed, StageId::Degrade, &[1]);
                let field = fit_coarse_with(&clean_train, &cfg, seed, |_| {})?;
                for (split, set) in [("train", &clean_train), ("test", &clean_test)] {
                    let mut out = MultiViewSet::default();
                    for (i, cam) in set.cameras.iter().enumerate() {
                        out.images.push(render_view(&field, cam, &self.cfg, stage_seed(seed, StageId::Degrade, &[i as u64]))?);
                        out.cameras.push(*cam);
                    }
                    save_set(&dir, split, &out)?;
                }
            }
        }
        Ok(())
    }

    fn restore_2d(&self) -> Result<()> {
        let dir = self.stage_dir(StageId::Restore2d);
        let a = self.cfg.restore.amplitude;
        for (split, per_view) in [("train", self.cfg.restore.per_view), ("test", 1)] {
            let clean = self.load(StageId::Synth, split)?;
            let deg = self.load(StageId::Degrade, split)?;
            let mut out = MultiViewSet::default();
            for (i, (cam, img)) in clean.cameras.iter().zip(&clean.images).enumerate() {
                let lq = resize(&deg.images[i], img.width, img.height);
                for k in 0..per_view {
                    let seed = stage_seed(self.cfg.seed, StageId::Restore2d, &[(split == "test") as u64, i as u64, k as u64]);
                    out.images.push(oracle_restore(img, &lq, a, seed)?);
                    out.cameras.push(*cam);
                }
            }
            save_set(&dir, split, &out)?;
        }
        Ok(())
    }

    fn fit(&self, s: StageId) -> Result<()> {
        let views = match s {
            StageId::FitCoarse => self.load(StageId::Degrade, "train")?,
            _ => self.load(StageId::Restore2d, "train")?,
        };
        let mut log = CsvLog::create(&self.logs_dir().join(format!("{}.csv", s.name())), "iteration,rec,tv,distortion,total")?;
        let seed = stage_seed(self.cfg.seed, s, &[]);
        let field = fit_coarse_with(&views, &self.cfg.coarse, seed, |st| {
            log.row(&format!("{},{},{},{},{}", st.iteration, st.rec, st.tv, st.distortion, st.total));
        })?;
        field.save(&self.stage_dir(s).join("field.bin"))?;
        Ok(())
    }

    fn train(&self) -> Result<()> {
        let coarse = TwoLevelField::load(&self.stage_dir(StageId::FitCoarse).join("field.bin"))?;
        let restored = self.load(StageId::Restore2d, "train")?;
        let deg = self.load(StageId::Degrade, "train")?;
        let per_view = self.cfg.restore.per_view;
        // One degraded view per restoration, aligned by index.
        let mut degraded = MultiViewSet::default();
        for i in 0..restored.len() {
            degraded.cameras.push(deg.cameras[i / per_view]);
            degraded.images.push(deg.images[i / per_view].clone());
        }
        let mut log = CsvLog::create(&self.logs_dir().join("train.csv"), LogRow::HEADER)?;
        let seed = stage_seed(self.cfg.seed, StageId::Train, &[]);
        let model = train_restoration(&coarse, &restored, &degraded, &self.cfg.train, seed, |row, _| {
            log.row(&row.csv());
        })?;
        model.save(&self.stage_dir(StageId::Train).join("model.bin"))?;
        Ok(())
    }

    /// Latent-sample fields of the trained model.
    pub fn sample_fields(&self, model: &RestorationModel) -> Result<Vec<TwoLevelField>> {
        let seed = stage_seed(self.cfg.seed, StageId::Render, &[0]);
        (0..self.cfg.eval.samples)
            .map(|j| Ok(model.sample_field_seeded(seed, j)?))
            .collect()
    }

    fn render(&self) -> Result<()> {
        let dir = self.stage_dir(StageId::Render);
        let test = self.load(StageId::Synth, "test")?;
        let coarse = TwoLevelField::load(&self.stage_dir(StageId::FitCoarse).join("field.bin"))?;
        let perframe = TwoLevelField::load(&self.stage_dir(StageId::Perframe).join("field.bin"))?;
        let model = RestorationModel::load(&self.stage_dir(StageId::Train).join("model.bin"))?;
        let mut fields: Vec<(String, TwoLevelField)> = vec![("coarse".into(), coarse), ("perframe".into(), perframe)];
        for (j, f) in self.sample_fields(&model)?.into_iter().enumerate() {
            fields.push((format!("rafe/z{j}"), f));
        }
        for (name, field) in &fields {
            let mut set = MultiViewSet::default();
            for (i, cam) in test.cameras.iter().enumerate() {
                let seed = stage_seed(self.cfg.seed, StageId::Render, &[1, i as u64]);
                set.images.push(render_view(field, cam, &self.cfg, seed)?);
                set.cameras.push(*cam);
            }
            save_set(&dir.join(name), "test", &set)?;
        }
        Ok(())
    }

    /// Test-view images of one method; RaFE yields one set per latent sample.
    pub fn method_views(&self, method: &str) -> Result<Vec<Vec<ImageBuffer>>> {
        let clean = self.load(StageId::Synth, "test")?;
        let fit = |set: MultiViewSet| -> Vec<ImageBuffer> {
            set.images
                .iter()
                .zip(&clean.images)
                .map(|(img, c)| resize(img, c.width, c.height))
                .collect()
        };
        let render = self.stage_dir(StageId::Render);
        Ok(match method {
            "degraded" => vec![fit(self.load(StageId::Degrade, "test")?)],
            "restored_2d" => vec![fit(self.load(StageId::Restore2d, "test")?)],
            "coarse" | "perframe" => vec![fit(load_set(&render.join(method), "test")?)],
            "rafe" => (0..self.cfg.eval.samples)
                .map(|j| Ok(fit(load_set(&render.join(format!("rafe/z{j}")), "test")?)))
                .collect::<Result<_>>()?,
            other => bail!("unknown method `{other}`"),
        })
    }

    fn eval(&self) -> Result<()> {
        let dir = self.stage_dir(StageId::Eval);
        let clean = self.load(StageId::Synth, "test")?.images;
        let scene = scene_name(&self.cfg);
        let task = &self.cfg.task;
        let mut rows = String::from("scene,task,metric,value\n");
        let mut per_view = String::from("scene,task,method,sample,view,psnr,ssim,proxy,hf_energy\n");
        for method in METHODS {
            let sets = self.method_views(method)?;
            let mut sums = [0.0; 4];
            let mut count = 0.0;
            for (j, set) in sets.iter().enumerate() {
                for (i, (img, gt)) in set.iter().zip(&clean).enumerate() {
                    let v = [psnr(img, gt)?, ssim(img, gt)?, perceptual_proxy(img, gt)?, hf_energy(img)];
                    let _ = writeln!(per_view, "{scene},{task},{method},{j},{i},{},{},{},{}", v[0], v[1], v[2], v[3]);
                    for (s, x) in sums.iter_mut().zip(v) {
                        *s += x;
                    }
                    count += 1.0;
                }
            }
            for (name, s) in ["psnr", "ssim", "proxy", "hf_energy"].iter().zip(sums) {
                if self.cfg.wants(name) {
                    let _ = writeln!(rows, "{scene},{task},{method}.{name},{}", s / count);
                }
            }
            if method == "rafe" && self.cfg.wants("diversity") && sets.len() >= 2 {
                let _ = writeln!(rows, "{scene},{task},rafe.diversity,{}", set_diversity(&sets)?);
            }
        }
        fs::write(dir.join("metrics.csv"), rows)?;
        fs::write(dir.join("per_view.csv"), per_view)?;
        Ok(())
    }
}

/// Diversity score over sample sets, with the distance between two sets
/// the mean perceptual-proxy distance over their views.
pub fn set_diversity(sets: &[Vec<ImageBuffer>]) -> Result<f64> {
    Ok(diversity_score_by(sets, |a, b| {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            s += perceptual_proxy(x, y)?;
        }
        Ok(s / a.len() as f64)
    })?)
}

/// Runs every stage, reusing cached ones.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary, StageError> {
    let mut p = Pipeline::new(cfg.clone(), out).map_err(|e| StageError {
        stage: "config",
        source: e,
    })?;
    p.run_until(StageId::Report)
}
