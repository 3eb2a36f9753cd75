use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::image::ImageBuffer;
use crate::{rng, Error, Result};

/// Amplitude of the texture perturbation per pixel of displacement.
pub const TEXTURE_PER_PIXEL: f64 = 0.03;

const WAVES: usize = 4;

/// Smooth seeded displacement field `(dx, dy)` per pixel, a sum of
/// low-frequency sinusoids rescaled to RMS magnitude `amplitude` pixels.
pub fn displacement_field(width: usize, height: usize, amplitude: f64, seed: u64) -> Vec<[f64; 2]> {
    let n = width * height;
    if amplitude == 0.0 {
        return vec![[0.0; 2]; n];
    }
    let mut r = rng::stream(seed, &[0x7761_7270]);
    let mut waves = Vec::with_capacity(2 * WAVES);
    for _ in 0..2 * WAVES {
        let fx: f64 = r.random_range(-2.0..2.0);
        let fy: f64 = r.random_range(-2.0..2.0);
        let phase: f64 = r.random_range(0.0..TAU);
        let amp: f64 = r.random_range(0.5..1.0);
        waves.push((fx, fy, phase, amp));
    }
    let mut field = Vec::with_capacity(n);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let mut d = [0.0; 2];
            for (k, &(fx, fy, ph, a)) in waves.iter().enumerate() {
                d[k / WAVES] += a * (TAU * (fx * u + fy * v) + ph).sin();
            }
            field.push(d);
        }
    }
    let rms = (field.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / n as f64).sqrt();
    let s = if rms > 0.0 { amplitude / rms } else { 0.0 };
    field.iter_mut().for_each(|d| *d = [d[0] * s, d[1] * s]);
    field
}

/// Stand-in for a generative 2D restorer: the clean image warped by a smooth
/// random field with RMS `amplitude` pixels plus a zero-mean high-frequency
/// texture of strength proportional to `amplitude`.
pub fn oracle_restore(
    clean: &ImageBuffer,
    degraded: &ImageBuffer,
    amplitude: f64,
    seed: u64,
) -> Result<ImageBuffer> {
    if !clean.same_extent(degraded) {
        return Err(Error::ShapeMismatch {
            expected: vec![clean.height, clean.width, 3],
            actual: vec![degraded.height, degraded.width, 3],
        });
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::invalid("inconsistency amplitude must be finite and >= 0"));
    }
    if amplitude == 0.0 {
        return Ok(clean.clone());
    }
    let (w, h) = (clean.width, clean.height);
    let field = displacement_field(w, h, amplitude, seed);
    let mut r = rng::stream(seed, &[0x7465_7874]);
    let noise: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let d = field[y * w + x];
            let p = clean.sample_bilinear(x as f64 + d[0], y as f64 + d[1]);
            // High-pass: sample minus its 3x3 neighborhood mean.
            let mut local = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    local += noise[yy * w + xx];
                }
            }
            let cnt = ((y + 2).min(h) - y.saturating_sub(1)) * ((x + 2).min(w) - x.saturating_sub(1));
            let t = TEXTURE_PER_PIXEL * amplitude * (noise[y * w + x] - local / cnt as f64);
            out.extend(p.map(|v| (v + t).clamp(0.0, 1.0)));
        }
    }
    ImageBuffer::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> ImageBuffer {
        ImageBuffer::from_fn(24, 20, |x, y| {
            let c = ((x / 4 + y / 4) % 2) as f64;
            [0.2 + 0.6 * c, 0.5, 0.8 - 0.5 * c]
        })
    }

    #[test]
    fn zero_amplitude_is_exact() {
        let img = scene();
        assert_eq!(oracle_restore(&img, &img, 0.0, 3).unwrap(), img);
    }

    #[test]
    fn deterministic_and_view_dependent() {
        let img = scene();
        let a = oracle_restore(&img, &img, 1.0, 3).unwrap();
        assert_eq!(a, oracle_restore(&img, &img, 1.0, 3).unwrap());
        assert_ne!(a, oracle_restore(&img, &img, 1.0, 4).unwrap());
    }

    #[test]
    fn rms_displacement() {
        let f = displacement_field(320, 320, 1.0, 11);
        let rms = (f.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / f.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 0.05);
    }

    #[test]
    fn extent_mismatch() {
        let img = scene();
        let small = ImageBuffer::filled(4, 4, [0.0; 3]);
        assert!(oracle_restore(&img, &small, 1.0, 0).is_err());
    }
}
