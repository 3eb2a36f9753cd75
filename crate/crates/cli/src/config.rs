//! Experiment configuration and the committed task presets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rafe_core::degrade::DegradationConfig;
use rafe_core::render::RenderConfig;
use rafe_core::training::{CoarseConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::rig::RigConfig;
use crate::scene::{preset_scene, SyntheticScene};

/// Where the clean views come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSource {
    /// Built-in scene name.
    pub preset: Option<String>,
    /// Inline scene description.
    pub custom: Option<SyntheticScene>,
    /// Directory with `transforms_train.json` / `transforms_test.json` and
    /// images; replaces synthesis.
    pub dataset: Option<PathBuf>,
}

impl SceneSource {
    pub fn scene(&self) -> Result<SyntheticScene> {
        match (&self.preset, &self.custom) {
            (_, Some(s)) => Ok(s.clone()),
            (Some(name), None) => preset_scene(name),
            (None, None) => bail!("scene needs `preset`, `custom` or `dataset`"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeMode {
    /// Apply the configured degradation stages.
    #[default]
    Stages,
    /// Fit a briefly trained field on the clean views and use its renders.
    NerfLike,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    pub mode: DegradeMode,
    #[serde(flatten)]
    pub config: DegradationConfig,
    /// Coarse-fit iterations of the nerf-like mode.
    pub nerf_like_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RestoreSpec {
    /// Inconsistency amplitude of the oracle restorer, in pixels.
    pub amplitude: f64,
    /// Independent restorations drawn per training view.
    pub per_view: usize,
}

impl Default for RestoreSpec {
    fn default() -> Self {
        RestoreSpec {
            amplitude: 1.0,
            per_view: 1,
        }
    }
}

pub const ALL_METRICS: [&str; 5] = ["psnr", "ssim", "proxy", "hf_energy", "diversity"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Latent samples rendered per test view.
    pub samples: usize,
    pub metrics: Vec<String>,
    /// Renderer for test views; the coarse renderer when absent.
    pub render: Option<RenderConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 3,
            metrics: ALL_METRICS.iter().map(|s| s.to_string()).collect(),
            render: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Task label written to the metrics table.
    pub task: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub scene: SceneSource,
    pub rig: RigConfig,
    pub degradation: DegradeSpec,
    pub restore: RestoreSpec,
    pub coarse: CoarseConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            task: "custom".into(),
            seed: 0,
            out: None,
            scene: SceneSource {
                preset: Some("two_primitives".into()),
                ..SceneSource::default()
            },
            rig: RigConfig::object(),
            degradation: DegradeSpec::default(),
            restore: RestoreSpec::default(),
            coarse: CoarseConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Committed presets, one per task.
pub const PRESETS: [(&str, &str); 8] = [
    ("sr", include_str!("../presets/sr.toml")),
    ("deblur", include_str!("../presets/deblur.toml")),
    ("denoise", include_str!("../presets/denoise.toml")),
    ("mixed", include_str!("../presets/mixed.toml")),
    ("mixed_forward", include_str!("../presets/mixed_forward.toml")),
    ("nerf_like", include_str!("../presets/nerf_like.toml")),
    ("coarse_fit", include_str!("../presets/coarse_fit.toml")),
    ("smoke", include_str!("../presets/smoke.toml")),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.harmonize()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .with_context(|| format!("unknown preset `{name}`"))?;
        Self::from_toml(text).with_context(|| format!("preset `{name}`"))
    }

    /// Loads a TOML file, or a built-in preset when `arg` names one and no
    /// such file exists.
    pub fn load(arg: &Path) -> Result<Self> {
        if arg.exists() {
            let text = std::fs::read_to_string(arg).with_context(|| format!("reading {}", arg.display()))?;
            let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", arg.display()))?;
            if let Some(d) = cfg.scene.dataset.as_mut() {
                if d.is_relative() {
                    *d = arg.parent().unwrap_or(Path::new(".")).join(&*d);
                }
            }
            return Ok(cfg);
        }
        match arg.to_str() {
            Some(name) if PRESETS.iter().any(|(n, _)| *n == name) => Self::preset(name),
            _ => bail!("config {} not found", arg.display()),
        }
    }

    /// Points the field bounds and render spaces at the rig's coordinate
    /// frame so the sections cannot disagree.
    pub fn harmonize(&mut self) -> Result<()> {
        let space = self.rig.render_space()?;
        self.coarse.bounds = self.rig.field_bounds();
        self.coarse.render.space = space;
        self.train.render.space = space;
        if let Some(r) = self.eval.render.as_mut() {
            r.space = space;
        }
        Ok(())
    }

    pub fn eval_render(&self) -> RenderConfig {
        let mut r = self.eval.render.unwrap_or(self.coarse.render);
        r.jitter = false;
        r
    }

    pub fn wants(&self, metric: &str) -> bool {
        self.eval.metrics.iter().any(|m| m == metric)
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.degradation.config.validate()?;
        self.train.validate()?;
        if self.restore.per_view == 0 {
            bail!("restore.per_view must be at least 1");
        }
        if self.eval.samples == 0 {
            bail!("eval.samples must be at least 1");
        }
        for m in &self.eval.metrics {
            if !ALL_METRICS.contains(&m.as_str()) {
                bail!("unknown metric `{m}`; known: {}", ALL_METRICS.join(", "));
            }
        }
        if self.scene.dataset.is_none() {
            self.scene.scene()?.validate(&self.rig.domain())?;
        }
        Ok(())
    }
}
