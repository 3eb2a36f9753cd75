//! Baseline JPEG reconstruction: the lossy part of encode + decode, without
//! entropy coding.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::image::ImageBuffer;
use crate::{Error, Result};

#[rustfmt::skip]
const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Standard table scaled by the IJG quality formula.
pub fn quant_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward DCT, quantize, dequantize, inverse DCT of one level-shifted block.
fn code_block(block: &mut [f64; 64], q: &[f64; 64]) {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| b[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut coef = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let c: f64 = (0..8).map(|x| b[v][x] * tmp[u * 8 + x]).sum();
            let k = u * 8 + v;
            coef[k] = (c / q[k]).round() * q[k];
        }
    }
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| b[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| b[v][x] * tmp[y * 8 + v]).sum();
        }
    }
}

/// Codes one plane (values on the 0..255 scale) whose extents are
/// multiples of 8.
fn code_plane(plane: &mut [f64], w: usize, h: usize, q: &[f64; 64]) {
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            code_block(&mut block, q);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = (block[y * 8 + x] + 128.0).round().clamp(0.0, 255.0);
                }
            }
        }
    }
}

/// Encodes and decodes `img` at `quality`: 8-bit quantization, YCbCr,
/// 4:2:0 chroma, 8x8 DCT with IJG-scaled standard tables.
pub fn jpeg_codec(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    let (w, h) = (img.width, img.height);
    let (pw, ph) = (w.div_ceil(16) * 16, h.div_ceil(16) * 16);
    let (cw, ch) = (pw / 2, ph / 2);
    let mut yp = vec![0.0; pw * ph];
    let mut cb_full = vec![0.0; pw * ph];
    let mut cr_full = vec![0.0; pw * ph];
    for y in 0..ph {
        for x in 0..pw {
            let p = img.pixel(x.min(w - 1), y.min(h - 1));
            let [r, g, b] = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round());
            let i = y * pw + x;
            yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            cb_full[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            cr_full[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
        }
    }
    let sub = |full: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cw * ch];
        for y in 0..ch {
            for x in 0..cw {
                let i = 2 * y * pw + 2 * x;
                out[y * cw + x] = 0.25 * (full[i] + full[i + 1] + full[i + pw] + full[i + pw + 1]);
            }
        }
        out
    };
    let (mut cb, mut cr) = (sub(&cb_full), sub(&cr_full));
    let ql = quant_table(&LUMA_Q, quality);
    let qc = quant_table(&CHROMA_Q, quality);
    code_plane(&mut yp, pw, ph, &ql);
    code_plane(&mut cb, cw, ch, &qc);
    code_plane(&mut cr, cw, ch, &qc);
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let l = yp[y * pw + x];
            let ci = (y / 2) * cw + x / 2;
            let (u, v) = (cb[ci] - 128.0, cr[ci] - 128.0);
            let rgb = [l + 1.402 * v, l - 0.344_136 * u - 0.714_136 * v, l + 1.772 * u];
            out.extend(rgb.map(|c| c.round().clamp(0.0, 255.0) / 255.0));
        }
    }
    ImageBuffer::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ijg_scaling() {
        let q50 = quant_table(&LUMA_Q, 50);
        assert_eq!(q50[0], 16.0);
        let q100 = quant_table(&LUMA_Q, 100);
        assert!(q100.iter().all(|&v| v == 1.0));
        let q10 = quant_table(&LUMA_Q, 10);
        assert_eq!(q10[0], 80.0);
    }

    #[test]
    fn dct_basis_orthonormal() {
        let b = dct_basis();
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = (0..8).map(|k| b[i][k] * b[j][k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_image_survives() {
        let img = ImageBuffer::filled(19, 13, [100.0 / 255.0, 150.0 / 255.0, 200.0 / 255.0]);
        let out = jpeg_codec(&img, 50).unwrap();
        let first = out.pixel(0, 0);
        for y in 0..13 {
            for x in 0..19 {
                assert_eq!(out.pixel(x, y), first);
            }
        }
        for c in 0..3 {
            assert!((first[c] - img.pixel(0, 0)[c]).abs() <= 2.0 / 255.0);
        }
    }

    #[test]
    fn quality_range_checked() {
        let img = ImageBuffer::filled(8, 8, [0.5; 3]);
        assert!(jpeg_codec(&img, 0).is_err());
        assert!(jpeg_codec(&img, 101).is_err());
    }
}
