#![allow(dead_code)]

pub mod oracles;

use rafe_core::degrade::ImageBuffer;
use rafe_core::field::{Bounds, DecoderConfig};
use rafe_core::render::{Camera, RenderConfig};
use rafe_core::training::{CoarseConfig, DiscriminatorConfig, GeneratorConfig, MultiViewSet, TrainConfig};

/// Cameras on a ring of radius 4 around the origin, slightly above it.
pub fn ring(n: usize, side: usize) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = [4.0 * a.cos(), 1.0, 4.0 * a.sin()];
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 0.7, side, side, 2.0, 6.0).unwrap()
        })
        .collect()
}

pub fn constant_views(n: usize, side: usize, rgb: [f64; 3]) -> MultiViewSet {
    let cams = ring(n, side);
    let imgs = cams.iter().map(|_| ImageBuffer::filled(side, side, rgb)).collect();
    MultiViewSet::new(cams, imgs).unwrap()
}

/// Views with a per-view stripe pattern, for generator tests.
pub fn striped_views(n: usize, side: usize, phase: f64) -> MultiViewSet {
    let cams = ring(n, side);
    let imgs = (0..n)
        .map(|v| {
            ImageBuffer::from_fn(side, side, |x, y| {
                let s = 0.5 + 0.4 * ((x as f64 + phase * v as f64) * 0.9).sin();
                [s, 0.3 + 0.02 * y as f64, 0.5]
            })
        })
        .collect();
    MultiViewSet::new(cams, imgs).unwrap()
}

pub fn tiny_decoder() -> DecoderConfig {
    DecoderConfig {
        density_hidden: vec![16],
        color_hidden: vec![16],
        color_features: 7,
        dir_frequencies: 2,
        ..DecoderConfig::default()
    }
}

pub fn tiny_render() -> RenderConfig {
    RenderConfig {
        n_strat: 16,
        n_imp: 8,
        ..RenderConfig::default()
    }
}

pub fn tiny_coarse(iterations: usize) -> CoarseConfig {
    CoarseConfig {
        resolution: 8,
        channels: 4,
        bounds: Bounds::object(),
        decoder: tiny_decoder(),
        render: tiny_render(),
        iterations,
        patch_size: 8,
        ..CoarseConfig::default()
    }
}

pub fn tiny_train(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 2,
        patch_size: 8,
        fine_resolution: 8,
        render: tiny_render(),
        generator: GeneratorConfig {
            z_dim: 8,
            w_dim: 8,
            mapping_layers: 1,
            base_resolution: 4,
            hidden: 8,
            output_gain: 0.1,
        },
        discriminator: DiscriminatorConfig {
            channels: 4,
            mbstd_group: 2,
            ..DiscriminatorConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Field with constant density and color everywhere: zero decoder weights,
/// output biases chosen so that softplus gives `sigma` and sigmoid `color`.
pub fn homogeneous(sigma: f64, color: [f64; 3]) -> rafe_core::field::TwoLevelField {
    use rafe_core::field::{FieldDecoder, TriPlaneSet, TwoLevelField};
    let cfg = DecoderConfig {
        density_hidden: vec![4],
        color_hidden: vec![4],
        color_features: 2,
        dir_frequencies: 1,
        ..DecoderConfig::default()
    };
    let mut dec = FieldDecoder::new(2, cfg, 0);
    dec.zero();
    for t in dec.params.tensors.iter_mut() {
        if t.name == "decoder.density.out.bias" {
            t.value.data_mut()[0] = sigma.exp_m1().ln();
        }
        if t.name == "decoder.color.out.bias" {
            for (b, c) in t.value.data_mut().iter_mut().zip(color) {
                *b = (c / (1.0 - c)).ln();
            }
        }
    }
    let planes = TriPlaneSet::zeros(2, 2, Bounds::cube(10.0)).unwrap();
    TwoLevelField::new(planes, dec).unwrap()
}

/// Camera on the +z axis at distance 4 looking at the origin.
pub fn axis_camera(side: usize) -> Camera {
    Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 0.7, side, side, 2.0, 6.0).unwrap()
}
