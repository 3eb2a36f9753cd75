mod common;

use rafe_core::degrade::{
    convolve_blur, downsample, jpeg_codec, motion_kernel, oracle_restore, shot_read_noise_raw, DegradationConfig,
    ImageBuffer, Kernel, Stage, GAIN8,
};
use rafe_core::metrics::{perceptual_proxy, psnr, PSNR_CAP};

/// Smooth shading with a soft-edged disc, standing in for natural content:
/// chroma varies slowly, detail sits mostly in luminance.
fn natural(w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let r = ((u - 0.4).powi(2) + (v - 0.5).powi(2)).sqrt();
        let disc = 0.25 / (1.0 + ((r - 0.25) * 60.0).exp());
        let base = 0.35 + 0.2 * (6.0 * u).sin() * (4.0 * v).cos() + disc;
        [base + 0.1 * v, base + 0.05 * (3.0 * u).sin(), base - 0.1 * u]
    })
}

fn random_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
    use rand::Rng as _;
    let mut r = rafe_core::rng::seeded(seed);
    let data = (0..w * h * 3).map(|_| r.random::<f64>()).collect();
    ImageBuffer::new(w, h, data).unwrap()
}

#[test]
fn shot_read_noise_variance() {
    let n = 1_000_000;
    let out = shot_read_noise_raw(&vec![0.5; n], 0.1, 0.2, 3);
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    assert!((var - 0.02).abs() < 0.02 * 0.02, "{var}");
    assert!((mean - 0.5).abs() < 1e-3);
}

#[test]
fn gain8_lands_near_twenty_db() {
    let img = ImageBuffer::filled(128, 128, [0.5; 3]);
    let out = DegradationConfig::denoise_gain8(4).apply(&img, 0).unwrap();
    let p = psnr(&out, &img).unwrap();
    assert!((19.0..24.0).contains(&p), "{p}");
    assert_eq!(GAIN8, (0.08, 0.04));
}

#[test]
fn delta_kernel_is_bit_exact_identity() {
    let img = random_image(17, 11, 5);
    for size in [1, 3, 5] {
        assert_eq!(convolve_blur(&img, &Kernel::delta(size)).unwrap(), img);
    }
}

#[test]
fn jpeg_quality_ordering() {
    let img = natural(64, 48);
    let q100 = psnr(&jpeg_codec(&img, 100).unwrap(), &img).unwrap();
    let q50 = psnr(&jpeg_codec(&img, 50).unwrap(), &img).unwrap();
    assert!(q100 >= 40.0, "{q100}");
    assert!(q50 < q100);
}

/// Mean squared horizontal jump across 8-pixel block boundaries divided by
/// the mean squared jump between pixels of the same block.
fn blockiness(img: &ImageBuffer) -> f64 {
    let (mut edge, mut ne, mut inner, mut ni) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..img.height {
        for x in 1..img.width {
            let d: f64 = (0..3).map(|c| (img.get(x, y, c) - img.get(x - 1, y, c)).powi(2)).sum();
            if x % 8 == 0 {
                edge += d;
                ne += 1;
            } else {
                inner += d;
                ni += 1;
            }
        }
    }
    (edge / ne as f64) / (inner / ni as f64)
}

#[test]
fn jpeg_block_artifacts() {
    // Random low-frequency content: coarse noise upsampled bilinearly.
    let coarse = random_image(9, 9, 6);
    let img = ImageBuffer::from_fn(64, 64, |x, y| coarse.sample_bilinear(x as f64 / 8.0, y as f64 / 8.0));
    let q50 = blockiness(&jpeg_codec(&img, 50).unwrap());
    let q100 = blockiness(&jpeg_codec(&img, 100).unwrap());
    assert!(q50 > q100, "{q50} vs {q100}");
}

#[test]
fn degradation_lowers_psnr_and_zero_strength_is_identity() {
    let img = natural(64, 64);
    let stages = [
        Stage::Downsample { factor: 1 },
        Stage::GaussianBlur { radius: 0 },
        Stage::ShotReadNoise { read: 0.0, shot: 0.0, seed: 1 },
    ];
    for s in stages {
        let cfg = DegradationConfig { stages: vec![s], per_view_kernel: false };
        assert_eq!(cfg.apply(&img, 0).unwrap(), img);
    }
    let strong = [
        Stage::GaussianBlur { radius: 3 },
        Stage::MotionBlur { size: 13, seed: 2 },
        Stage::ShotReadNoise { read: 0.05, shot: 0.02, seed: 3 },
        Stage::Jpeg { quality: 50 },
    ];
    for s in strong {
        let cfg = DegradationConfig { stages: vec![s.clone()], per_view_kernel: false };
        let p = psnr(&cfg.apply(&img, 0).unwrap(), &img).unwrap();
        assert!(p < PSNR_CAP, "{s:?}: {p}");
    }
}

#[test]
fn super_resolution_sizes() {
    let img = natural(256, 256);
    assert_eq!(downsample(&img, 4).unwrap().width, 64);
    let ff = natural(252, 188);
    let lr = downsample(&ff, 4).unwrap();
    assert_eq!((lr.width, lr.height), (63, 47));
}

#[test]
fn motion_kernels_are_normalized() {
    for seed in 0..20 {
        let k = motion_kernel(13, seed).unwrap();
        assert_eq!(k.size, 13);
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert!(k.data.iter().all(|&v| v >= 0.0));
    }
    assert_ne!(motion_kernel(13, 0).unwrap().data, motion_kernel(13, 1).unwrap().data);
    assert!(motion_kernel(12, 0).is_err());
}

#[test]
fn mixed_preset_parameters() {
    let cfg = DegradationConfig::mixed(7, 9);
    match cfg.stages.as_slice() {
        [Stage::GaussianBlur { radius: 7 }, Stage::ShotReadNoise { read, shot, .. }, Stage::Jpeg { quality: 50 }] => {
            assert!((read - 25.0 / 255.0).abs() < 1e-15);
            assert_eq!(*shot, 0.0);
        }
        other => panic!("unexpected stages {other:?}"),
    }
    let img = natural(32, 32);
    assert_eq!(cfg.apply(&img, 2).unwrap(), cfg.apply(&img, 2).unwrap());
}

#[test]
fn oracle_inconsistency_grows_with_amplitude() {
    let clean = natural(48, 48);
    let degraded = clean.clone();
    let mut prev = -1.0;
    for a in [0.0, 0.5, 1.0, 2.0] {
        let mut total = 0.0;
        for s in 0..3u64 {
            let x = oracle_restore(&clean, &degraded, a, 2 * s).unwrap();
            let y = oracle_restore(&clean, &degraded, a, 2 * s + 1).unwrap();
            total += perceptual_proxy(&x, &y).unwrap();
        }
        assert!(total > prev, "a = {a}: {total} <= {prev}");
        prev = total;
    }
    assert_eq!(oracle_restore(&clean, &degraded, 0.0, 5).unwrap(), clean);
}
