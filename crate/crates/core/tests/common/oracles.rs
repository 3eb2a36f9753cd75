//! Independent reference implementations used by the integration tests and
//! the acceptance harness.
#![allow(dead_code, clippy::needless_range_loop)]

use rafe_core::degrade::ImageBuffer;
use rafe_core::numerics::{Activation, Bound, Dual, Linear, ParamSet, ScalarNet, Tape, Tensor};
use rafe_core::{rng, Result};

/// Fully connected net with one scalar output per input row.
pub struct Mlp {
    pub params: ParamSet,
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(widths: &[usize], activation: Activation, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut r = rng::seeded(seed);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut params, &format!("l{i}"), w[0], w[1], 1.0, &mut r))
            .collect();
        // Nonzero biases so every bias gradient path is exercised.
        for t in params.tensors.iter_mut().filter(|t| t.name.ends_with("bias")) {
            for (k, v) in t.value.data_mut().iter_mut().enumerate() {
                *v = 0.1 * ((seed as f64 + 1.3 * k as f64).sin());
            }
        }
        Mlp {
            params,
            layers,
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }
}

impl ScalarNet for Mlp {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn forward_dual(&self, tape: &mut Tape, b: &Bound, mut x: Dual) -> Result<Dual> {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward_dual(tape, b, x);
            if i < last {
                x = self.activation.apply_dual(tape, x);
            }
        }
        Ok(x)
    }
}

/// Deterministic pseudo-random tensor in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    use rand::Rng as _;
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-scale..=scale)).collect()).unwrap()
}

/// `Σ_b net(x_b)` with parameters taken from `params`.
fn net_sum<N: ScalarNet>(net: &N, params: &ParamSet, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = net.forward(&mut tape, &b, xv).unwrap();
    tape.value(y).data().iter().sum()
}

/// `mean_b ||∇_x net(x_b)||²` with the input gradient taken by central
/// differences; no reverse mode involved.
pub fn fd_penalty<N: ScalarNet>(net: &N, params: &ParamSet, x: &Tensor, hx: f64) -> f64 {
    let mut probe = x.clone();
    let mut total = 0.0;
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + hx;
        let up = net_sum(net, params, &probe);
        probe.data_mut()[i] = v - hx;
        let down = net_sum(net, params, &probe);
        probe.data_mut()[i] = v;
        let g = (up - down) / (2.0 * hx);
        total += g * g;
    }
    total / x.shape()[0] as f64
}

/// Parameter gradient of the input-gradient penalty by nested central
/// differences, at the flat parameter coordinates `coords`.
pub fn nested_fd_r1<N: ScalarNet>(net: &N, x: &Tensor, coords: &[usize], h: f64, hx: f64) -> Vec<f64> {
    let base = net.params().flat_values();
    let mut probe = net.params().clone();
    coords
        .iter()
        .map(|&k| {
            let mut v = base.clone();
            v[k] = base[k] + h;
            probe.set_flat_values(&v);
            let up = fd_penalty(net, &probe, x, hx);
            v[k] = base[k] - h;
            probe.set_flat_values(&v);
            let down = fd_penalty(net, &probe, x, hx);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// SSIM evaluated window by window with 2D Gaussian weights and centered
/// second moments.
pub fn reference_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    const N: usize = 11;
    let sigma: f64 = 1.5;
    let c1 = 0.0001;
    let c2 = 0.0009;
    let mut w = [[0.0; N]; N];
    let mut norm = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let mut total = 0.0;
    let mut count = 0;
    for c in 0..3 {
        for y0 in 0..=a.height - N {
            for x0 in 0..=a.width - N {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let k = w[i][j] / norm;
                        ma += k * a.get(x0 + j, y0 + i, c);
                        mb += k * b.get(x0 + j, y0 + i, c);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let k = w[i][j] / norm;
                        let da = a.get(x0 + j, y0 + i, c) - ma;
                        let db = b.get(x0 + j, y0 + i, c) - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Mean over images of the smallest distance to another image, from a
/// precomputed distance matrix.
pub fn brute_force_diversity(d: &[Vec<f64>]) -> f64 {
    let n = d.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut m = f64::INFINITY;
        for (j, row) in d.iter().enumerate() {
            if i != j {
                m = m.min(row[i].min(d[i][j]));
            }
        }
        s += m;
    }
    s / n as f64
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1); returns the p-value.
pub fn ks_uniform_p(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let x = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - x).max(x - i as f64 / n);
    }
    // Asymptotic Kolmogorov distribution with the Stephens correction.
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}
