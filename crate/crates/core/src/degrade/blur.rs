use rand::Rng as _;

use super::image::ImageBuffer;
use crate::numerics::kernels::{gaussian_kernel, reflect_index};
use crate::{rng, Error, Result};

/// Square blur kernel with odd side.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn delta(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        data[size * size / 2] = 1.0;
        Kernel { size, data }
    }

    /// Isotropic Gaussian for blur radius `r`: `σ = r / 3`, side `2r + 1`.
    pub fn gaussian(radius: usize) -> Self {
        let k1 = gaussian_kernel(radius as f64 / 3.0, radius);
        let size = k1.len();
        let mut data = Vec::with_capacity(size * size);
        for a in &k1 {
            for b in &k1 {
                data.push(a * b);
            }
        }
        Kernel { size, data }.normalized()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn normalized(mut self) -> Self {
        let s = self.sum();
        self.data.iter_mut().for_each(|v| *v /= s);
        self
    }
}

/// Box-filter average over `factor x factor` blocks. Extents that are not
/// multiples of `factor` are center-cropped first.
pub fn downsample(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width / factor, img.height / factor);
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!(
            "cannot downsample {}x{} by {factor}",
            img.width, img.height
        )));
    }
    let (ox, oy) = ((img.width - w * factor) / 2, (img.height - h * factor) / 2);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += img.get(ox + x * factor + dx, oy + y * factor + dy, c);
                    }
                }
                out[(y * w + x) * 3 + c] = s * norm;
            }
        }
    }
    ImageBuffer::new(w, h, out)
}

/// 2D convolution with reflect padding. Negative entries are rejected; a
/// kernel not summing to one is normalized with a warning.
pub fn convolve_blur(img: &ImageBuffer, kernel: &Kernel) -> Result<ImageBuffer> {
    let k = kernel.size;
    if k.is_multiple_of(2) || kernel.data.len() != k * k {
        return Err(Error::invalid("blur kernel must be square with odd side"));
    }
    if kernel.data.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::invalid("blur kernel entries must be nonnegative"));
    }
    let s = kernel.sum();
    if !(s > 0.0) {
        return Err(Error::invalid("blur kernel sums to zero"));
    }
    let kernel = if (s - 1.0).abs() > 1e-12 {
        log::warn!("blur kernel sums to {s}, normalizing");
        kernel.clone().normalized()
    } else {
        kernel.clone()
    };
    let r = (k / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for i in 0..k {
                // Convolution: kernel row i hits source row y - (i - r).
                let sy = reflect_index(y as isize - (i as isize - r), h);
                for j in 0..k {
                    let kv = kernel.data[i * k + j];
                    if kv == 0.0 {
                        continue;
                    }
                    let sx = reflect_index(x as isize - (j as isize - r), w);
                    let p = img.pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += kv * p[c];
                    }
                }
            }
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    Ok(ImageBuffer::new(w, h, out)?.clamp())
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let (t2, t3) = (t * t, t * t * t);
    let mut out = [0.0; 2];
    for i in 0..2 {
        out[i] = 0.5
            * (2.0 * p1[i]
                + (p2[i] - p0[i]) * t
                + (2.0 * p0[i] - 5.0 * p1[i] + 4.0 * p2[i] - p3[i]) * t2
                + (3.0 * p1[i] - p0[i] - 3.0 * p2[i] + p3[i]) * t3);
    }
    out
}

/// Random smooth camera-motion path: a cubic spline through a seeded random
/// walk, splatted bilinearly into a `size x size` grid and normalized.
pub fn motion_kernel(size: usize, seed: u64) -> Result<Kernel> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!("motion kernel size must be odd and >= 3, got {size}")));
    }
    let mut r = rng::stream(seed, &[0x6d6f_7469]);
    let n_ctrl = 6;
    let mut pts = Vec::with_capacity(n_ctrl);
    let mut pos = [0.0f64; 2];
    let mut heading = r.random_range(0.0..std::f64::consts::TAU);
    for _ in 0..n_ctrl {
        pts.push(pos);
        heading += r.random_range(-1.2..1.2);
        let step = r.random_range(0.5..1.5);
        pos = [pos[0] + step * heading.cos(), pos[1] + step * heading.sin()];
    }
    let mut path = Vec::new();
    let steps = 64;
    for s in 0..n_ctrl - 1 {
        let p0 = pts[s.saturating_sub(1)];
        let p3 = pts[(s + 2).min(n_ctrl - 1)];
        for k in 0..steps {
            path.push(catmull_rom(p0, pts[s], pts[s + 1], p3, k as f64 / steps as f64));
        }
    }
    path.push(pts[n_ctrl - 1]);
    // Center on the centroid and fit into the grid.
    let n = path.len() as f64;
    let cx = path.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = path.iter().map(|p| p[1]).sum::<f64>() / n;
    let extent = path
        .iter()
        .map(|p| (p[0] - cx).abs().max((p[1] - cy).abs()))
        .fold(0.0, f64::max);
    let half = (size / 2) as f64 - 0.5;
    let scale = if extent > 0.0 { half / extent } else { 0.0 };
    let mut data = vec![0.0; size * size];
    let c = (size / 2) as f64;
    for p in &path {
        let x = c + (p[0] - cx) * scale;
        let y = c + (p[1] - cy) * scale;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dx, dy, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (xi, yi) = (x0 as isize + dx, y0 as isize + dy);
            if (0..size as isize).contains(&xi) && (0..size as isize).contains(&yi) {
                data[yi as usize * size + xi as usize] += w;
            }
        }
    }
    Ok(Kernel { size, data }.normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ImageBuffer {
        ImageBuffer::from_fn(9, 7, |x, y| [x as f64 / 9.0, y as f64 / 7.0, ((x * y) % 5) as f64 / 5.0])
    }

    #[test]
    fn delta_is_identity() {
        let img = ramp();
        for k in [1, 3, 7] {
            assert_eq!(convolve_blur(&img, &Kernel::delta(k)).unwrap(), img);
        }
    }

    #[test]
    fn constant_preserved() {
        let img = ImageBuffer::filled(6, 5, [0.3, 0.6, 0.9]);
        let out = convolve_blur(&img, &Kernel::gaussian(3)).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn box_on_step_edge() {
        // Step at x = 3 (0 left, 1 right); 3x3 box gives 0, 1/3, 2/3, 1 ramp.
        let img = ImageBuffer::from_fn(6, 4, |x, _| [if x >= 3 { 1.0 } else { 0.0 }; 3]);
        let k = Kernel {
            size: 3,
            data: vec![1.0 / 9.0; 9],
        };
        let out = convolve_blur(&img, &k).unwrap();
        let row: Vec<f64> = (0..6).map(|x| out.get(x, 1, 0)).collect();
        let expect = [0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0];
        for (a, b) in row.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{row:?}");
        }
    }

    #[test]
    fn asymmetric_kernel_is_convolution() {
        // Kernel weight right of center shifts content right.
        let img = ImageBuffer::from_fn(5, 1, |x, _| [if x == 2 { 1.0 } else { 0.0 }; 3]);
        let mut k = Kernel::delta(3);
        k.data = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let out = convolve_blur(&img, &k).unwrap();
        assert_eq!(out.get(3, 0, 0), 1.0);
    }

    #[test]
    fn unnormalized_kernel_is_normalized() {
        let img = ImageBuffer::filled(4, 4, [0.5; 3]);
        let k = Kernel {
            size: 3,
            data: vec![1.0; 9],
        };
        let out = convolve_blur(&img, &k).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn motion_kernel_properties() {
        let a = motion_kernel(13, 3).unwrap();
        assert_eq!(a.size, 13);
        assert!(a.data.iter().all(|&v| v >= 0.0));
        assert!((a.sum() - 1.0).abs() < 1e-12);
        assert_eq!(a, motion_kernel(13, 3).unwrap());
        assert_ne!(a, motion_kernel(13, 4).unwrap());
        assert!(motion_kernel(12, 3).is_err());
        // The path spreads over many texels.
        assert!(a.data.iter().filter(|&&v| v > 0.0).count() > 13);
    }

    #[test]
    fn gaussian_radius_semantics() {
        let k = Kernel::gaussian(7);
        assert_eq!(k.size, 15);
        assert!((k.sum() - 1.0).abs() < 1e-12);
        assert_eq!(Kernel::gaussian(0), Kernel::delta(1));
    }

    #[test]
    fn downsample_blocks() {
        let img = ImageBuffer::from_fn(4, 4, |x, y| [((x / 2) + 2 * (y / 2)) as f64 / 4.0; 3]);
        let d = downsample(&img, 2).unwrap();
        assert_eq!((d.width, d.height), (2, 2));
        assert_eq!(d.pixel(1, 1), [0.75; 3]);
        assert_eq!(downsample(&img, 1).unwrap(), img);
        assert!(downsample(&img, 0).is_err());
        let big = ImageBuffer::filled(256, 256, [0.1; 3]);
        let s = downsample(&big, 4).unwrap();
        assert_eq!((s.width, s.height), (64, 64));
    }
}
