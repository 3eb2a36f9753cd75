//! Image-quality and diversity metrics.

use std::sync::Arc;

use crate::degrade::ImageBuffer;
use crate::numerics::kernels::gaussian_kernel;
use crate::numerics::{Tape, Tensor, Var};
use crate::{par, Error, Result};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Pyramid depth of the perceptual proxy.
pub const PROXY_LEVELS: usize = 3;

fn check_extent(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_extent(b) {
        return Err(Error::ShapeMismatch {
            expected: vec![a.height, a.width, 3],
            actual: vec![b.height, b.width, 3],
        });
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)` over raw values, capped at [`PSNR_CAP`].
pub fn psnr_values(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_extent(a, b)?;
    psnr_values(&a.data, &b.data, 1.0)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (wo, ho) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..n).map(|i| k[i] * rows[(yo + i) * wo + xo]).sum();
        }
    }
    (out, wo, ho)
}

/// Single-scale SSIM with an 11x11 Gaussian window (σ = 1.5) over valid
/// window positions, averaged over positions and channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_extent(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let pa: Vec<f64> = a.data.iter().skip(c).step_by(3).copied().collect();
        let pb: Vec<f64> = b.data.iter().skip(c).step_by(3).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (mu_a, ..) = filter_valid(&pa, w, h, &k);
        let (mu_b, ..) = filter_valid(&pb, w, h, &k);
        let (aa, ..) = filter_valid(&prod(&pa, &pa), w, h, &k);
        let (bb, ..) = filter_valid(&prod(&pb, &pb), w, h, &k);
        let (ab, ..) = filter_valid(&prod(&pa, &pb), w, h, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

fn pyramid_kernel() -> Arc<Vec<f64>> {
    Arc::new(vec![1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0])
}

/// Differentiable perceptual proxy between `[B, 3, H, W]` batches: over a
/// 3-level Gaussian pyramid of `a - b`, the mean squared luminance and
/// luminance forward differences, each level weighted by 1/3.
pub fn perceptual_proxy_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            expected: sa,
            actual: sb,
        });
    }
    if sa.len() != 4 || sa[1] != 3 {
        return Err(Error::invalid(format!("perceptual proxy expects [B, 3, H, W], got {sa:?}")));
    }
    let min_side = 1 << PROXY_LEVELS;
    if sa[2] < min_side || sa[3] < min_side {
        return Err(Error::invalid(format!("perceptual proxy needs images of at least {min_side}x{min_side}")));
    }
    let kernel = pyramid_kernel();
    let mut diff = tape.sub(a, b);
    let mut total: Option<Var> = None;
    for level in 0..PROXY_LEVELS {
        if level > 0 {
            let blurred = tape.sep_filter(diff, kernel.clone());
            diff = tape.subsample2(blurred);
        }
        let lum = tape.luminance(diff);
        let gx = tape.forward_diff(lum, 1);
        let gy = tape.forward_diff(lum, 0);
        let mut term = None;
        for v in [lum, gx, gy] {
            let sq = tape.square(v);
            let m = tape.mean(sq);
            term = Some(match term {
                Some(t) => tape.add(t, m),
                None => m,
            });
        }
        let scaled = tape.scale(term.unwrap(), 1.0 / PROXY_LEVELS as f64);
        total = Some(match total {
            Some(t) => tape.add(t, scaled),
            None => scaled,
        });
    }
    Ok(total.unwrap())
}

fn batch_of(img: &ImageBuffer) -> Tensor {
    let t = img.to_chw();
    Tensor::from_parts(vec![1, 3, img.height, img.width], t.into_data())
}

/// [`perceptual_proxy_tape`] on two images.
pub fn perceptual_proxy(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_extent(a, b)?;
    let mut tape = Tape::new();
    let va = tape.constant(batch_of(a));
    let vb = tape.constant(batch_of(b));
    let d = perceptual_proxy_tape(&mut tape, va, vb)?;
    Ok(tape.value(d).item())
}

/// Named image distance used by [`diversity_score`].
pub struct DistanceFn {
    pub name: String,
    #[allow(clippy::type_complexity)]
    pub f: Box<dyn Fn(&ImageBuffer, &ImageBuffer) -> Result<f64> + Send + Sync>,
}

impl DistanceFn {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&ImageBuffer, &ImageBuffer) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        DistanceFn {
            name: name.into(),
            f: Box::new(f),
        }
    }

    pub fn perceptual() -> Self {
        DistanceFn::new("perceptual_proxy", perceptual_proxy)
    }

    pub fn eval(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        (self.f)(a, b)
    }
}

/// Mean over items of the minimum distance to any other item.
pub fn diversity_score_by<T: Sync>(
    items: &[T],
    d: impl Fn(&T, &T) -> Result<f64> + Sync + Send,
) -> Result<f64> {
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid("diversity score needs at least two items"));
    }
    let minima = par::map(n, |i| -> Result<f64> {
        let mut best = f64::INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            best = best.min(d(&items[i], &items[j])?);
        }
        Ok(best)
    });
    let mut sum = 0.0;
    for m in minima {
        sum += m?;
    }
    Ok(sum / n as f64)
}

pub fn diversity_score(images: &[ImageBuffer], d: &DistanceFn) -> Result<f64> {
    if let Some(first) = images.first() {
        for img in images {
            check_extent(first, img)?;
        }
    }
    diversity_score_by(images, |a, b| d.eval(a, b))
}

/// Mean squared response of the 3x3 Laplacian over valid positions and
/// channels; zero for images smaller than 3x3.
pub fn hf_energy(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for c in 0..3 {
                let l = img.get(x - 1, y, c) + img.get(x + 1, y, c) + img.get(x, y - 1, c) + img.get(x, y + 1, c)
                    - 4.0 * img.get(x, y, c);
                s += l * l;
            }
        }
    }
    s / ((w - 2) * (h - 2) * 3) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{convolve_blur, Kernel};

    fn pattern(seed: f64) -> ImageBuffer {
        ImageBuffer::from_fn(24, 20, |x, y| {
            let (x, y) = (x as f64, y as f64);
            [
                0.5 + 0.4 * (0.9 * x + seed).sin() * (0.4 * y).cos(),
                0.5 + 0.3 * (0.3 * x * y / 7.0 + seed).sin(),
                if (x as usize / 3 + y as usize / 3).is_multiple_of(2) { 0.8 } else { 0.2 },
            ]
        })
    }

    #[test]
    fn psnr_cases() {
        let a = pattern(0.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let v = psnr_values(&[0.0, 0.0], &[1.0, 1.0], 255.0).unwrap();
        assert!((v - 48.130_803_608_679_1).abs() < 1e-6);
        assert!(psnr(&a, &ImageBuffer::filled(3, 3, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_basics() {
        let a = pattern(0.0);
        let b = pattern(0.7);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 0.99);
        let small = ImageBuffer::filled(10, 10, [0.5; 3]);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn proxy_is_a_distance() {
        let a = pattern(0.0);
        let b = pattern(1.3);
        assert_eq!(perceptual_proxy(&a, &a).unwrap(), 0.0);
        let ab = perceptual_proxy(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab.to_bits(), perceptual_proxy(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn proxy_grows_with_blur() {
        let a = pattern(0.0);
        let mut last = 0.0;
        for r in 1..=5 {
            let d = perceptual_proxy(&a, &convolve_blur(&a, &Kernel::gaussian(r)).unwrap()).unwrap();
            assert!(d > last, "radius {r}: {d} <= {last}");
            last = d;
        }
    }

    #[test]
    fn diversity_cases() {
        let pts = [0usize, 1, 2];
        let table = [[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        let s = diversity_score_by(&pts, |&i, &j| Ok(table[i][j])).unwrap();
        assert!((s - 4.0 / 3.0).abs() < 1e-15);
        let two = [0.0f64, 2.5];
        assert_eq!(diversity_score_by(&two, |a, b| Ok((a - b).abs())).unwrap(), 2.5);
        assert!(diversity_score_by(&[1.0f64], |a, b| Ok(a - b)).is_err());
        let same = vec![pattern(0.0); 3];
        assert_eq!(diversity_score(&same, &DistanceFn::perceptual()).unwrap(), 0.0);
    }

    #[test]
    fn hf_energy_cases() {
        assert_eq!(hf_energy(&ImageBuffer::filled(8, 8, [0.3; 3])), 0.0);
        let checker = ImageBuffer::from_fn(8, 8, |x, y| [((x + y) % 2) as f64; 3]);
        assert_eq!(hf_energy(&checker), 16.0);
        let stripes = ImageBuffer::from_fn(8, 8, |x, _| [(x % 2) as f64; 3]);
        assert!(hf_energy(&stripes) < hf_energy(&checker));
        let a = pattern(0.0);
        let blurred = convolve_blur(&a, &Kernel::gaussian(2)).unwrap();
        assert!(hf_energy(&blurred) < hf_energy(&a));
    }
}
