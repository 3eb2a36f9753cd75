use rand_distr::{Distribution, StandardNormal};

use super::image::ImageBuffer;
use crate::rng;

/// Read/shot parameters of the "gain 8" setting.
pub const GAIN8: (f64, f64) = (0.08, 0.04);

/// Draws `N(I, δr² + δs² I²)` per value, without clamping.
pub fn shot_read_noise_raw(values: &[f64], read: f64, shot: f64, seed: u64) -> Vec<f64> {
    if read == 0.0 && shot == 0.0 {
        return values.to_vec();
    }
    let mut r = rng::stream(seed, &[0x6e6f_6973]);
    values
        .iter()
        .map(|&i| {
            let n: f64 = StandardNormal.sample(&mut r);
            i + (read * read + shot * shot * i * i).sqrt() * n
        })
        .collect()
}

/// Signal-dependent Gaussian noise clamped back to `[0, 1]`.
pub fn shot_read_noise(img: &ImageBuffer, read: f64, shot: f64, seed: u64) -> ImageBuffer {
    ImageBuffer {
        width: img.width,
        height: img.height,
        data: shot_read_noise_raw(&img.data, read, shot, seed),
    }
    .clamp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_identity() {
        let img = ImageBuffer::from_fn(4, 3, |x, y| [x as f64 * 0.2, y as f64 * 0.3, 0.5]);
        assert_eq!(shot_read_noise(&img, 0.0, 0.0, 7), img);
    }

    #[test]
    fn deterministic_and_clamped() {
        let img = ImageBuffer::filled(16, 16, [0.95; 3]);
        let a = shot_read_noise(&img, 0.2, 0.1, 3);
        assert_eq!(a, shot_read_noise(&img, 0.2, 0.1, 3));
        assert_ne!(a, shot_read_noise(&img, 0.2, 0.1, 4));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
