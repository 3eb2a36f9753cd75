//! Camera rigs and Blender-style `transforms_*.json` camera files.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use rafe_core::field::Bounds;
use rafe_core::render::{Camera, RenderSpace};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    /// Poses spread over the upper hemisphere, looking at the origin.
    Object,
    /// Poses with small lateral offsets, all looking down -z.
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub kind: RigKind,
    pub train: usize,
    pub test: usize,
    /// Hemisphere radius (object rigs).
    pub radius: f64,
    /// Spacing of the lateral offset grid (forward rigs).
    pub spread: f64,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig::object()
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

impl RigConfig {
    /// 20 train + 5 test poses on a hemisphere of radius 4.
    pub fn object() -> Self {
        RigConfig {
            kind: RigKind::Object,
            train: 20,
            test: 5,
            radius: 4.0,
            spread: 0.0,
            width: 64,
            height: 64,
            fov: 0.69,
            near: 2.0,
            far: 6.0,
        }
    }

    /// 12 train + 3 test poses offset laterally from the origin.
    pub fn forward() -> Self {
        RigConfig {
            kind: RigKind::Forward,
            train: 12,
            test: 3,
            radius: 0.0,
            spread: 0.15,
            width: 64,
            height: 48,
            fov: 1.0,
            near: 1.0,
            far: 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.train >= 1, "rig needs at least one training view");
        ensure!(self.width >= 1 && self.height >= 1, "rig image extent must be positive");
        if self.kind == RigKind::Object {
            ensure!(self.radius > 0.0, "hemisphere radius must be positive");
        }
        Ok(())
    }

    /// World-space box that scene primitives must occupy.
    pub fn domain(&self) -> Bounds {
        match self.kind {
            RigKind::Object => Bounds::object(),
            RigKind::Forward => Bounds {
                min: [-8.0, -8.0, -self.far],
                max: [8.0, 8.0, -self.near],
            },
        }
    }

    /// Domain of the radiance field.
    pub fn field_bounds(&self) -> Bounds {
        match self.kind {
            RigKind::Object => Bounds::object(),
            RigKind::Forward => Bounds::ndc(),
        }
    }

    /// Camera at the rig origin; forward rigs march rays in its NDC.
    pub fn reference(&self) -> Result<Camera> {
        self.camera_at([0.0, 0.0, 0.0], [0.0, 0.0, -1.0])
    }

    pub fn render_space(&self) -> Result<RenderSpace> {
        Ok(match self.kind {
            RigKind::Object => RenderSpace::World,
            RigKind::Forward => RenderSpace::Ndc {
                reference: self.reference()?,
            },
        })
    }

    fn camera_at(&self, eye: [f64; 3], target: [f64; 3]) -> Result<Camera> {
        Ok(Camera::look_at(
            eye,
            target,
            [0.0, 1.0, 0.0],
            self.fov,
            self.width,
            self.height,
            self.near,
            self.far,
        )?)
    }

    /// `(train, test)` cameras.
    pub fn cameras(&self) -> Result<(Vec<Camera>, Vec<Camera>)> {
        self.validate()?;
        let n = self.train + self.test;
        let test_slots: Vec<usize> = (0..self.test).map(|j| ((2 * j + 1) * n) / (2 * self.test)).collect();
        let mut train = Vec::with_capacity(self.train);
        let mut test = Vec::with_capacity(self.test);
        match self.kind {
            RigKind::Object => {
                // Height uniform in [0.1, 0.9] r gives an area-uniform band of
                // the hemisphere; golden-angle azimuths spread the poses.
                for i in 0..n {
                    let h = 0.1 + 0.8 * (i as f64 + 0.5) / n as f64;
                    let ring = (1.0 - h * h).sqrt();
                    let phi = i as f64 * GOLDEN_ANGLE;
                    let eye = [ring * phi.cos(), h, ring * phi.sin()].map(|v| v * self.radius);
                    let cam = self.camera_at(eye, [0.0; 3])?;
                    if test_slots.contains(&i) {
                        test.push(cam);
                    } else {
                        train.push(cam);
                    }
                }
            }
            RigKind::Forward => {
                let cols = (self.train as f64).sqrt().ceil() as usize;
                let rows = self.train.div_ceil(cols);
                let grid = |c: f64, r: f64| {
                    let x = (c - 0.5 * (cols as f64 - 1.0)) * self.spread;
                    let y = (r - 0.5 * (rows as f64 - 1.0)) * self.spread;
                    [x, y, 0.0]
                };
                for i in 0..self.train {
                    let eye = grid((i % cols) as f64, (i / cols) as f64);
                    train.push(self.camera_at(eye, [eye[0], eye[1], -1.0])?);
                }
                // Test poses sit between grid columns on the middle row.
                for j in 0..self.test {
                    let c = (j as f64 + 0.5) * (cols.max(2) - 1) as f64 / self.test as f64;
                    let eye = grid(c, 0.5 * (rows as f64 - 1.0));
                    test.push(self.camera_at(eye, [eye[0], eye[1], -1.0])?);
                }
            }
        }
        Ok((train, test))
    }
}

#[derive(Serialize, Deserialize)]
struct Frame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct Transforms {
    camera_angle_x: f64,
    #[serde(default)]
    w: Option<usize>,
    #[serde(default)]
    h: Option<usize>,
    #[serde(default)]
    near: Option<f64>,
    #[serde(default)]
    far: Option<f64>,
    frames: Vec<Frame>,
}

/// Writes cameras in the Blender NeRF layout; `stems` are image paths
/// without extension, relative to the JSON file.
pub fn write_transforms(path: &Path, cameras: &[Camera], stems: &[String]) -> Result<()> {
    ensure!(!cameras.is_empty(), "no cameras to write");
    let c0 = cameras[0];
    let t = Transforms {
        camera_angle_x: c0.fov_x,
        w: Some(c0.width),
        h: Some(c0.height),
        near: Some(c0.near),
        far: Some(c0.far),
        frames: cameras
            .iter()
            .zip(stems)
            .map(|(c, s)| Frame {
                file_path: s.clone(),
                transform_matrix: c.c2w,
            })
            .collect(),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&t)? + "\n")?;
    Ok(())
}

/// Reads a Blender NeRF camera file. Missing extents come from
/// `default_extent`; missing clip planes default to 2 and 6.
pub fn read_transforms(path: &Path, default_extent: Option<(usize, usize)>) -> Result<Vec<(Camera, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let t: Transforms = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (w, h) = match (t.w, t.h, default_extent) {
        (Some(w), Some(h), _) => (w, h),
        (_, _, Some(e)) => e,
        _ => anyhow::bail!("{} gives no image extent", path.display()),
    };
    t.frames
        .into_iter()
        .map(|f| {
            let cam = Camera::new(
                f.transform_matrix,
                t.camera_angle_x,
                w,
                h,
                t.near.unwrap_or(2.0),
                t.far.unwrap_or(6.0),
            )?;
            Ok((cam, f.file_path))
        })
        .collect()
}
