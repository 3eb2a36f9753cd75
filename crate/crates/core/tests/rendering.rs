mod common;

use common::oracles::ks_uniform_p;
use common::{axis_camera, homogeneous};
use rafe_core::field::{init_triplane, Bounds, DecoderConfig, FieldDecoder, TwoLevelField};
use rafe_core::numerics::{Activation, Tape};
use rafe_core::render::{
    generate_rays, importance_samples, render_image, render_patch, sample_patch_origin, stratified_samples, PatchMode,
    PatchSchedule, PatchSpec, RenderConfig,
};
use rafe_core::rng;

fn strat(n: usize, jitter: bool) -> RenderConfig {
    RenderConfig {
        n_strat: n,
        n_imp: 0,
        jitter,
        ..RenderConfig::default()
    }
}

const COLOR: [f64; 3] = [0.2, 0.5, 0.8];

/// Per-pixel color errors against `c (1 - e^-4)` for the homogeneous
/// medium between near 2 and far 6.
fn homogeneous_errors(cfg: &RenderConfig, seed: u64) -> Vec<f64> {
    let f = homogeneous(1.0, COLOR);
    let img = render_image(&f, &axis_camera(16), cfg, seed).unwrap();
    let k = 1.0 - (-4.0f64).exp();
    img.chunks(3)
        .flat_map(|px| px.iter().zip(COLOR).map(move |(v, c)| v - c * k).collect::<Vec<_>>())
        .collect()
}

fn rms(e: &[f64]) -> f64 {
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

#[test]
fn homogeneous_medium_matches_transmittance_integral() {
    let max = |e: Vec<f64>| e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max(homogeneous_errors(&strat(192, false), 0)) < 1e-12);
    assert!(max(homogeneous_errors(&strat(192, true), 1)) < 1e-3);
    let default = RenderConfig::default();
    assert!(max(homogeneous_errors(&default, 2)) < 1e-3);
    // Jittered error shrinks as the sample count doubles.
    let errs: Vec<f64> = [24, 48, 96, 192].iter().map(|&n| rms(&homogeneous_errors(&strat(n, true), 3))).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

fn smooth_field(seed: u64) -> TwoLevelField {
    let cfg = DecoderConfig {
        density_hidden: vec![8],
        color_hidden: vec![8],
        color_features: 4,
        dir_frequencies: 1,
        activation: Activation::Tanh,
        density_bias: 0.0,
        ..DecoderConfig::default()
    };
    let planes = init_triplane(6, 4, 0.8, seed, Bounds::object()).unwrap();
    TwoLevelField::new(planes, FieldDecoder::new(4, cfg, seed + 1)).unwrap()
}

#[test]
fn quadrature_converges_for_smooth_fields() {
    let f = smooth_field(3);
    let cam = axis_camera(6);
    let reference = render_image(&f, &cam, &strat(8192, false), 0).unwrap();
    let err = |n: usize| {
        let img = render_image(&f, &cam, &strat(n, false), 0).unwrap();
        img.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [32, 64, 128, 256].iter().map(|&n| err(n)).collect();
    for w in errs.windows(2) {
        // At least first order: halving the step at least ~halves the error.
        assert!(w[1] < 0.6 * w[0], "{errs:?}");
    }
}

#[test]
fn transmittance_invariants_on_random_fields() {
    let mut violations = 0;
    let mut rays = 0;
    for k in 0..40u64 {
        let f = smooth_field(100 + k);
        let cam = rafe_core::render::Camera::look_at(
            [4.0 * (k as f64).cos(), 1.5, 4.0 * (k as f64).sin()],
            [0.0; 3],
            [0.0, 1.0, 0.0],
            0.9,
            16,
            16,
            2.0,
            6.0,
        )
        .unwrap();
        let mut tape = Tape::new();
        let b = f.bind_frozen(&mut tape);
        let cfg = RenderConfig {
            n_strat: 24,
            n_imp: 8,
            ..RenderConfig::default()
        };
        let out = render_patch(&mut tape, &b, &cam, &PatchSpec::full(&cam, 0).unwrap(), &cfg, k).unwrap();
        for w in tape.value(out.weights).data().chunks(out.rays.per_ray) {
            rays += 1;
            // T_i = 1 - sum_{j<i} w_j is non-increasing iff every w_i >= 0.
            let mut t = 1.0;
            for &wi in w {
                let next = t - wi;
                if wi < 0.0 || next > t {
                    violations += 1;
                }
                t = next;
            }
            if w.iter().sum::<f64>() > 1.0 + 1e-12 {
                violations += 1;
            }
        }
    }
    assert!(rays >= 10_000);
    assert_eq!(violations, 0);
}

#[test]
fn stratified_samples_are_uniform() {
    let mut r = rng::seeded(5);
    let mut all = Vec::new();
    while all.len() < 100_000 {
        all.extend(stratified_samples(2.0, 6.0, 10, true, &mut r).into_iter().map(|t| (t - 2.0) / 4.0));
    }
    assert!(ks_uniform_p(&all) > 0.01);
    // Each pass keeps one sample per bin in increasing order.
    let t = stratified_samples(2.0, 6.0, 10, true, &mut r);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn importance_sampling_statistics() {
    let mut r = rng::seeded(6);
    let n = 10_000;
    let t = importance_samples(&[0.0, 1.0, 2.0], &[1.0, 3.0], n, &mut r);
    let in_second = t.iter().filter(|&&v| v >= 1.0).count() as f64;
    let sd = (n as f64 * 0.75 * 0.25).sqrt();
    assert!((in_second - 0.75 * n as f64).abs() < 3.0 * sd, "{in_second}");
    // Uniform weights give marginally uniform draws.
    let u = importance_samples(&[0.0, 0.25, 0.5, 0.75, 1.0], &[1.0; 4], n, &mut r);
    assert!(ks_uniform_p(&u) > 0.01);
}

#[test]
fn beta_patch_statistics() {
    let s = PatchSchedule::default();
    let mut r = rng::seeded(7);
    // t = 0: uniform origins.
    let span = 10_000usize;
    let origins: Vec<f64> = (0..10_000)
        .map(|_| sample_patch_origin(span + 8, span + 8, 8, 0.0, &s, 0, &mut r).unwrap().px as f64 / span as f64)
        .collect();
    assert!(ks_uniform_p(&origins) > 0.01);
    // β = 0.5: variance 1 / (4 (2β + 1)) = 1/8, mean 1/2.
    let t = 0.5 / 0.7;
    assert!((s.beta_at(t) - 0.5).abs() < 1e-12);
    let d: Vec<f64> = (0..100_000).map(|_| s.offsets(t, &mut r).0).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
    assert!((mean - 0.5).abs() < 0.01);
    assert!((var - 0.125).abs() < 0.05 * 0.125, "{var}");
}

#[test]
fn beta_patches_touch_the_border_more_often() {
    let beta = PatchSchedule::default();
    let uniform = PatchSchedule {
        mode: PatchMode::Uniform,
        ..beta
    };
    let touch = |s: &PatchSchedule, seed: u64| {
        let mut r = rng::seeded(seed);
        (0..100_000)
            .filter(|_| {
                let p = sample_patch_origin(64, 64, 16, 1.0, s, 0, &mut r).unwrap();
                p.px == 0 || p.py == 0 || p.px == 48 || p.py == 48
            })
            .count()
    };
    assert!(touch(&beta, 8) > touch(&uniform, 8));
}

#[test]
fn empty_field_renders_background() {
    let f = homogeneous(0.0, [0.5; 3]);
    let cfg = RenderConfig {
        n_strat: 8,
        n_imp: 4,
        background: [0.1, 0.2, 0.3],
        ..RenderConfig::default()
    };
    let img = render_image(&f, &axis_camera(5), &cfg, 0).unwrap();
    for px in img.chunks(3) {
        assert_eq!(px, &[0.1, 0.2, 0.3]);
    }
}

#[test]
fn rays_are_unit_and_samples_increase() {
    let cam = axis_camera(9);
    let rays = generate_rays(&cam, &PatchSpec { px: 0, py: 0, side: 9, camera: 0 }).unwrap();
    for d in &rays.directions {
        assert!((rafe_core::render::norm(*d) - 1.0).abs() < 1e-12);
    }
    let (o, d) = cam.ray(4, 4);
    assert_eq!(o, [0.0, 0.0, 4.0]);
    assert!((d[2] + 1.0).abs() < 1e-15);
}
