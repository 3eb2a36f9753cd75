//! Seeded degradation simulators and the oracle restorer.

mod blur;
mod image;
mod jpeg;
mod noise;
mod oracle;

use serde::{Deserialize, Serialize};

pub use blur::{convolve_blur, downsample, motion_kernel, Kernel};
pub use image::ImageBuffer;
pub use jpeg::{jpeg_codec, quant_table};
pub use noise::{shot_read_noise, shot_read_noise_raw, GAIN8};
pub use oracle::{displacement_field, oracle_restore, TEXTURE_PER_PIXEL};

use crate::{rng, Error, Result};

/// Blur radius of the mixed task for object scenes.
pub const MIXED_RADIUS_OBJECT: usize = 7;
/// Blur radius of the mixed task for forward-facing scenes.
pub const MIXED_RADIUS_FORWARD: usize = 3;
/// Noise std of the mixed task on the 0..255 scale.
pub const MIXED_NOISE_STD: f64 = 25.0 / 255.0;
pub const MIXED_JPEG_QUALITY: u8 = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    Downsample { factor: usize },
    GaussianBlur { radius: usize },
    MotionBlur { size: usize, seed: u64 },
    ShotReadNoise { read: f64, shot: f64, seed: u64 },
    Jpeg { quality: u8 },
}

/// Ordered stage list applied to every view.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    pub stages: Vec<Stage>,
    /// Draw a fresh motion kernel per view instead of sharing one.
    pub per_view_kernel: bool,
}

impl Stage {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Stage::Downsample { factor } if factor < 1 => Err(Error::invalid("downsample factor must be >= 1")),
            Stage::MotionBlur { size, .. } if size < 3 || size % 2 == 0 => {
                Err(Error::invalid("motion kernel size must be odd and >= 3"))
            }
            Stage::ShotReadNoise { read, shot, .. } if !(read >= 0.0 && shot >= 0.0) => {
                Err(Error::invalid("noise parameters must be >= 0"))
            }
            Stage::Jpeg { quality } if !(1..=100).contains(&quality) => {
                Err(Error::invalid("JPEG quality must be in 1..=100"))
            }
            _ => Ok(()),
        }
    }
}

impl DegradationConfig {
    pub fn super_resolution(factor: usize) -> Self {
        DegradationConfig {
            stages: vec![Stage::Downsample { factor }],
            per_view_kernel: false,
        }
    }

    pub fn deblur(size: usize, seed: u64, per_view_kernel: bool) -> Self {
        DegradationConfig {
            stages: vec![Stage::MotionBlur { size, seed }],
            per_view_kernel,
        }
    }

    pub fn denoise(read: f64, shot: f64, seed: u64) -> Self {
        DegradationConfig {
            stages: vec![Stage::ShotReadNoise { read, shot, seed }],
            per_view_kernel: false,
        }
    }

    pub fn denoise_gain8(seed: u64) -> Self {
        DegradationConfig::denoise(GAIN8.0, GAIN8.1, seed)
    }

    /// Gaussian blur, then read noise of std 25/255, then JPEG at quality 50.
    pub fn mixed(radius: usize, seed: u64) -> Self {
        DegradationConfig {
            stages: vec![
                Stage::GaussianBlur { radius },
                Stage::ShotReadNoise {
                    read: MIXED_NOISE_STD,
                    shot: 0.0,
                    seed,
                },
                Stage::Jpeg {
                    quality: MIXED_JPEG_QUALITY,
                },
            ],
            per_view_kernel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.iter().try_for_each(Stage::validate)
    }

    /// Applies every stage in order to view number `view`.
    pub fn apply(&self, img: &ImageBuffer, view: usize) -> Result<ImageBuffer> {
        self.validate()?;
        let mut out = img.clone();
        for stage in &self.stages {
            out = match *stage {
                Stage::Downsample { factor } => downsample(&out, factor)?,
                Stage::GaussianBlur { radius } => convolve_blur(&out, &Kernel::gaussian(radius))?,
                Stage::MotionBlur { size, seed } => {
                    let s = if self.per_view_kernel {
                        rng::derive(seed, &[view as u64])
                    } else {
                        seed
                    };
                    convolve_blur(&out, &motion_kernel(size, s)?)?
                }
                Stage::ShotReadNoise { read, shot, seed } => {
                    shot_read_noise(&out, read, shot, rng::derive(seed, &[view as u64]))
                }
                Stage::Jpeg { quality } => jpeg_codec(&out, quality)?,
            };
        }
        Ok(out)
    }
}

/// The mixed-degradation task with the given blur radius.
pub fn mixed_pipeline(img: &ImageBuffer, radius: usize, seed: u64) -> Result<ImageBuffer> {
    DegradationConfig::mixed(radius, seed).apply(img, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ImageBuffer {
        ImageBuffer::from_fn(32, 24, |x, y| {
            [
                0.5 + 0.4 * (x as f64 * 0.7).sin(),
                0.5 + 0.4 * (y as f64 * 0.5).cos(),
                ((x + 2 * y) % 7) as f64 / 7.0,
            ]
        })
    }

    #[test]
    fn empty_config_is_identity() {
        let i = img();
        assert_eq!(DegradationConfig::default().apply(&i, 3).unwrap(), i);
    }

    #[test]
    fn zero_strength_stages_are_identity() {
        let i = img();
        let cfg = DegradationConfig {
            stages: vec![
                Stage::Downsample { factor: 1 },
                Stage::GaussianBlur { radius: 0 },
                Stage::ShotReadNoise {
                    read: 0.0,
                    shot: 0.0,
                    seed: 1,
                },
            ],
            per_view_kernel: false,
        };
        assert_eq!(cfg.apply(&i, 0).unwrap(), i);
    }

    #[test]
    fn shared_vs_per_view_kernels() {
        let i = img();
        let shared = DegradationConfig::deblur(7, 5, false);
        assert_eq!(shared.apply(&i, 0).unwrap(), shared.apply(&i, 1).unwrap());
        let per = DegradationConfig::deblur(7, 5, true);
        assert_ne!(per.apply(&i, 0).unwrap(), per.apply(&i, 1).unwrap());
    }

    #[test]
    fn mixed_is_deterministic_and_ordered() {
        let i = img();
        let a = mixed_pipeline(&i, 3, 9).unwrap();
        assert_eq!(a, mixed_pipeline(&i, 3, 9).unwrap());
        let cfg = DegradationConfig::mixed(7, 0);
        assert!(matches!(cfg.stages[0], Stage::GaussianBlur { radius: 7 }));
        assert!(matches!(cfg.stages[2], Stage::Jpeg { quality: 50 }));
    }

    #[test]
    fn invalid_stages_rejected() {
        let i = img();
        let cfg = DegradationConfig {
            stages: vec![Stage::Jpeg { quality: 0 }],
            per_view_kernel: false,
        };
        assert!(cfg.apply(&i, 0).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = DegradationConfig::mixed(7, 42);
        let s = toml::to_string(&cfg).unwrap();
        let back: DegradationConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
