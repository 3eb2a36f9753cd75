//! Slice-level compute kernels shared by tape ops and plain image code.
//!
//! Reductions always run in a fixed order per output element, so parallel and
//! sequential execution give identical bits.

use crate::par;

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// `out[n, m] = sum_k a[n, k] * b[k, m]`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    let rows_per_chunk = (4096 / m.max(1)).max(1);
    par::for_each_chunk_mut(&mut out, rows_per_chunk * m, |ci, chunk| {
        let row0 = ci * rows_per_chunk;
        for (r, orow) in chunk.chunks_mut(m).enumerate() {
            let arow = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (kk, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b[kk * m..(kk + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
    out
}

/// Gradient of `matmul` w.r.t. `a`: `da[n, k] = sum_m g[n, m] * b[k, m]`.
pub fn matmul_grad_a(g: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut da = vec![0.0; n * k];
    let rows_per_chunk = (4096 / k.max(1)).max(1);
    par::for_each_chunk_mut(&mut da, rows_per_chunk * k, |ci, chunk| {
        let row0 = ci * rows_per_chunk;
        for (r, drow) in chunk.chunks_mut(k).enumerate() {
            let grow = &g[(row0 + r) * m..(row0 + r + 1) * m];
            for (kk, d) in drow.iter_mut().enumerate() {
                let brow = &b[kk * m..(kk + 1) * m];
                *d = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
    });
    da
}

/// Gradient of `matmul` w.r.t. `b`: `db[k, m] = sum_n a[n, k] * g[n, m]`.
pub fn matmul_grad_b(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut at = vec![0.0; k * n];
    for r in 0..n {
        for kk in 0..k {
            at[kk * n + r] = a[r * k + kk];
        }
    }
    let mut db = vec![0.0; k * m];
    par::for_each_chunk_mut(&mut db, m, |kk, drow| {
        let acol = &at[kk * n..(kk + 1) * n];
        for (r, &av) in acol.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let grow = &g[r * m..(r + 1) * m];
            for (d, &gv) in drow.iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    });
    db
}

/// Geometry of a stride-1 "same" 2D convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub ksize: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.ksize / 2) as isize
    }

    /// Range of output columns `x` for which `x + dx - pad` is in bounds.
    fn col_range(&self, dx: usize) -> (usize, usize) {
        let off = dx as isize - self.pad();
        let lo = (-off).max(0) as usize;
        let hi = (self.width as isize - off).min(self.width as isize).max(0) as usize;
        (lo, hi)
    }
}

pub fn conv2d(x: &[f64], w: &[f64], bias: Option<&[f64]>, d: ConvDims) -> Vec<f64> {
    let hw = d.height * d.width;
    let k = d.ksize;
    let pad = d.pad();
    let mut out = vec![0.0; d.batch * d.c_out * hw];
    par::for_each_chunk_mut(&mut out, hw, |bo, plane| {
        let (b, o) = (bo / d.c_out, bo % d.c_out);
        if let Some(bias) = bias {
            plane.iter_mut().for_each(|v| *v = bias[o]);
        }
        for i in 0..d.c_in {
            let xin = &x[(b * d.c_in + i) * hw..(b * d.c_in + i + 1) * hw];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = w[((o * d.c_in + i) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = d.col_range(dx);
                    let off = dx as isize - pad;
                    for y in 0..d.height {
                        let sy = y as isize + dy as isize - pad;
                        if sy < 0 || sy >= d.height as isize {
                            continue;
                        }
                        let srow = &xin[sy as usize * d.width..(sy as usize + 1) * d.width];
                        let orow = &mut plane[y * d.width..(y + 1) * d.width];
                        for xo in lo..hi {
                            orow[xo] += wv * srow[(xo as isize + off) as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

pub fn conv2d_grad_input(g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let hw = d.height * d.width;
    let k = d.ksize;
    let pad = d.pad();
    let mut dx_out = vec![0.0; d.batch * d.c_in * hw];
    par::for_each_chunk_mut(&mut dx_out, hw, |bi, plane| {
        let (b, i) = (bi / d.c_in, bi % d.c_in);
        for o in 0..d.c_out {
            let gp = &g[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = w[((o * d.c_in + i) * k + dy) * k + dx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = d.col_range(dx);
                    let off = dx as isize - pad;
                    for y in 0..d.height {
                        let sy = y as isize + dy as isize - pad;
                        if sy < 0 || sy >= d.height as isize {
                            continue;
                        }
                        let grow = &gp[y * d.width..(y + 1) * d.width];
                        let drow = &mut plane[sy as usize * d.width..(sy as usize + 1) * d.width];
                        for xo in lo..hi {
                            drow[(xo as isize + off) as usize] += wv * grow[xo];
                        }
                    }
                }
            }
        }
    });
    dx_out
}

/// Returns (weight gradient, bias gradient).
pub fn conv2d_grad_weight(g: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let hw = d.height * d.width;
    let k = d.ksize;
    let pad = d.pad();
    let per_out = d.c_in * k * k;
    let mut dw = vec![0.0; d.c_out * per_out];
    par::for_each_chunk_mut(&mut dw, per_out, |o, wslice| {
        for b in 0..d.batch {
            let gp = &g[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw];
            for i in 0..d.c_in {
                let xin = &x[(b * d.c_in + i) * hw..(b * d.c_in + i + 1) * hw];
                for dy in 0..k {
                    for dx in 0..k {
                        let (lo, hi) = d.col_range(dx);
                        let off = dx as isize - pad;
                        let mut acc = 0.0;
                        for y in 0..d.height {
                            let sy = y as isize + dy as isize - pad;
                            if sy < 0 || sy >= d.height as isize {
                                continue;
                            }
                            let grow = &gp[y * d.width..(y + 1) * d.width];
                            let srow = &xin[sy as usize * d.width..(sy as usize + 1) * d.width];
                            for xo in lo..hi {
                                acc += grow[xo] * srow[(xo as isize + off) as usize];
                            }
                        }
                        wslice[(i * k + dy) * k + dx] += acc;
                    }
                }
            }
        }
    });
    let mut db = vec![0.0; d.c_out];
    for b in 0..d.batch {
        for (o, dbo) in db.iter_mut().enumerate() {
            *dbo += g[(b * d.c_out + o) * hw..(b * d.c_out + o + 1) * hw]
                .iter()
                .sum::<f64>();
        }
    }
    (dw, db)
}

/// Correlates every row of each `height x width` plane with `kernel`
/// (odd length, centered), reflecting at the borders.
pub fn filter_rows(x: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; x.len()];
    par::for_each_chunk_mut(&mut out, width, |row, orow| {
        let src = &x[row * width..(row + 1) * width];
        for (xo, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * src[reflect_index(xo as isize + t as isize - r, width)];
            }
            *o = acc;
        }
    });
    let _ = height;
    out
}

/// Adjoint of [`filter_rows`].
pub fn filter_rows_adjoint(g: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; g.len()];
    par::for_each_chunk_mut(&mut out, width, |row, orow| {
        let grow = &g[row * width..(row + 1) * width];
        for (xo, &gv) in grow.iter().enumerate() {
            for (t, &kv) in kernel.iter().enumerate() {
                orow[reflect_index(xo as isize + t as isize - r, width)] += kv * gv;
            }
        }
    });
    let _ = height;
    out
}

/// Column counterpart of [`filter_rows`] on stacked planes.
pub fn filter_cols(x: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let hw = height * width;
    let mut out = vec![0.0; x.len()];
    par::for_each_chunk_mut(&mut out, hw, |p, plane| {
        let src = &x[p * hw..(p + 1) * hw];
        for y in 0..height {
            let orow = &mut plane[y * width..(y + 1) * width];
            for (t, &kv) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + t as isize - r, height);
                let srow = &src[sy * width..(sy + 1) * width];
                for (o, &s) in orow.iter_mut().zip(srow) {
                    *o += kv * s;
                }
            }
        }
    });
    out
}

pub fn filter_cols_adjoint(g: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let hw = height * width;
    let mut out = vec![0.0; g.len()];
    par::for_each_chunk_mut(&mut out, hw, |p, plane| {
        let src = &g[p * hw..(p + 1) * hw];
        for y in 0..height {
            let grow = &src[y * width..(y + 1) * width];
            for (t, &kv) in kernel.iter().enumerate() {
                let sy = reflect_index(y as isize + t as isize - r, height);
                let drow = &mut plane[sy * width..(sy + 1) * width];
                for (d, &gv) in drow.iter_mut().zip(grow) {
                    *d += kv * gv;
                }
            }
        }
    });
    out
}

/// Normalized sampled Gaussian of the given radius (length `2 * radius + 1`).
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 || radius == 0 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}
