use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::degrade::{convolve_blur, ImageBuffer, Kernel};
use crate::metrics::perceptual_proxy_tape;
use crate::numerics::kernels::gaussian_kernel;
use crate::numerics::{grad_norm_sq_wrt_input, Bound, DiffTensor, ScalarNet, Tape, Tensor, Var};
use crate::render::RayBundle;
use crate::{Error, Result};

/// Mean squared difference between horizontally and vertically adjacent
/// texels over every plane and channel of `[.., R, R]` features.
pub fn tv_loss(tape: &mut Tape, planes: Var) -> Var {
    let dx = tape.forward_diff(planes, 1);
    let dy = tape.forward_diff(planes, 0);
    let n = tape.value(dx).len() + tape.value(dy).len();
    let sx = tape.square(dx);
    let sy = tape.square(dy);
    let a = tape.sum(sx);
    let b = tape.sum(sy);
    let s = tape.add(a, b);
    tape.scale(s, 1.0 / n.max(1) as f64)
}

/// [`tv_loss`] on plain values.
pub fn tv_value(planes: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let p = tape.constant(planes.clone());
    let l = tv_loss(&mut tape, p);
    tape.value(l).item()
}

/// Ray coordinates normalized to `[0, 1]` and matching interval widths, as
/// consumed by the distortion loss.
pub fn normalized_intervals(rays: &RayBundle) -> (Vec<f64>, Vec<f64>) {
    let span = rays.far - rays.near;
    let cap = 1.0 / rays.per_ray as f64;
    let mut s = Vec::with_capacity(rays.t.len());
    let mut w = Vec::with_capacity(rays.t.len());
    for row in rays.t.chunks(rays.per_ray) {
        for i in 0..row.len() {
            s.push((row[i] - rays.near) / span);
            w.push(if i + 1 < row.len() { (row[i + 1] - row[i]) / span } else { cap });
        }
    }
    (s, w)
}

/// `Σ_ij w_i w_j |s_i − s_j| + 1/3 Σ_i w_i² Δ_i`, averaged over rays.
pub fn distortion_loss(tape: &mut Tape, weights: Var, s: Vec<f64>, widths: Vec<f64>, per_ray: usize) -> Var {
    tape.distortion(weights, Arc::new(s), Arc::new(widths), per_ray)
}

/// Mean squared difference of consecutive densities along each ray.
pub fn density_reg(tape: &mut Tape, sigma: Var, per_ray: usize) -> Var {
    tape.adjacent_sq_diff(sigma, per_ray)
}

/// Discriminator and generator objectives.
pub struct AdversarialLosses {
    /// `E[f(D(fake))] + E[f(−D(real))] + λ_R1 E[|∇D(real)|²]`.
    pub d_loss: Var,
    /// `E[f(−D(fake))]`.
    pub g_loss: Var,
    /// The unweighted R1 term.
    pub r1: Var,
}

fn mean_softplus(tape: &mut Tape, x: Var, negate: bool) -> Var {
    let x = if negate { tape.neg(x) } else { x };
    let s = tape.softplus(x);
    tape.mean(s)
}

/// Non-saturating logistic GAN losses with R1 on the real batch. `real`
/// must require gradients; `fake` is any tape value.
pub fn adversarial_losses<D: ScalarNet>(
    tape: &mut Tape,
    d: &D,
    d_params: &Bound,
    real: &DiffTensor,
    fake: Var,
    lambda_r1: f64,
) -> Result<AdversarialLosses> {
    let fs = tape.shape(fake).to_vec();
    if fs != real.shape() {
        return Err(Error::ShapeMismatch {
            expected: real.shape().to_vec(),
            actual: fs,
        });
    }
    let pen = grad_norm_sq_wrt_input(tape, d, d_params, real)?;
    let d_fake = d.forward(tape, d_params, fake)?;
    let a = mean_softplus(tape, d_fake, false);
    let b = mean_softplus(tape, pen.output, true);
    let ab = tape.add(a, b);
    let r1 = tape.scale(pen.penalty, lambda_r1);
    let d_loss = tape.add(ab, r1);
    let g_loss = mean_softplus(tape, d_fake, true);
    Ok(AdversarialLosses {
        d_loss,
        g_loss,
        r1: pen.penalty,
    })
}

/// Perceptual-proxy distance between aligned `[B, 3, S, S]` patches.
pub fn geometry_loss(tape: &mut Tape, rendered: Var, restored: Var) -> Result<Var> {
    perceptual_proxy_tape(tape, rendered, restored)
}

/// Blur-annealing schedule `σ(t) = σ0 max(0, 1 − t / t_cut)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurAnneal {
    pub sigma0: f64,
    pub t_cut: f64,
}

impl Default for BlurAnneal {
    fn default() -> Self {
        BlurAnneal {
            sigma0: 1.0,
            t_cut: 0.5,
        }
    }
}

impl BlurAnneal {
    pub fn sigma(&self, t: f64) -> f64 {
        if self.t_cut <= 0.0 {
            return 0.0;
        }
        self.sigma0 * (1.0 - t / self.t_cut).max(0.0)
    }

    /// Normalized 1D kernel for progress `t`; `[1.0]` once annealed away.
    pub fn kernel(&self, t: f64) -> Arc<Vec<f64>> {
        let s = self.sigma(t);
        let radius = (3.0 * s).ceil() as usize;
        Arc::new(gaussian_kernel(s, radius))
    }
}

/// Applies the annealed blur to an image patch.
pub fn blur_anneal(img: &ImageBuffer, t: f64, schedule: &BlurAnneal) -> Result<ImageBuffer> {
    let k = schedule.kernel(t);
    if k.len() == 1 {
        return Ok(img.clone());
    }
    let n = k.len();
    let mut data = Vec::with_capacity(n * n);
    for a in k.iter() {
        for b in k.iter() {
            data.push(a * b);
        }
    }
    convolve_blur(img, &Kernel { size: n, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamSet;

    #[test]
    fn tv_cases() {
        assert_eq!(tv_value(&Tensor::full(&[3, 2, 4, 4], 0.7)), 0.0);
        // Plane 0 of a 2x2 grid holds [[0, 1], [0, 1]]: two horizontal pairs
        // differ by 1, vertical pairs agree; 3 planes x 4 pairs = 12 pairs.
        let mut t = Tensor::zeros(&[3, 1, 2, 2]);
        t.data_mut()[1] = 1.0;
        t.data_mut()[3] = 1.0;
        assert!((tv_value(&t) - 2.0 / 12.0).abs() < 1e-15);
        let mut k = t.clone();
        k.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        assert!((tv_value(&k) - 9.0 * tv_value(&t)).abs() < 1e-14);
    }

    #[test]
    fn distortion_cases() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_vec(vec![0.0; 4]));
        let l = distortion_loss(&mut tape, w, vec![0.1, 0.2, 0.3, 0.4], vec![0.1; 4], 4);
        assert_eq!(tape.value(l).item(), 0.0);
        let w = tape.constant(Tensor::from_vec(vec![0.5, 0.5]));
        let l = distortion_loss(&mut tape, w, vec![0.2, 0.6], vec![0.0, 0.0], 2);
        assert!((tape.value(l).item() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn distortion_prefers_concentration() {
        let eval = |w: Vec<f64>| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::from_vec(w));
            let l = distortion_loss(&mut tape, v, vec![0.25, 0.5, 0.75], vec![0.25; 3], 3);
            tape.value(l).item()
        };
        let spread = eval(vec![0.3, 0.3, 0.3]);
        let two = eval(vec![0.45, 0.45, 0.0]);
        let one = eval(vec![0.9, 0.0, 0.0]);
        assert!(one <= two && two <= spread);
    }

    #[test]
    fn density_reg_cases() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(vec![2.0; 5]));
        let l = density_reg(&mut tape, c, 5);
        assert_eq!(tape.value(l).item(), 0.0);
        let s = tape.constant(Tensor::from_vec(vec![0.0, 1.0]));
        let l = density_reg(&mut tape, s, 2);
        assert_eq!(tape.value(l).item(), 1.0);
        let r = tape.constant(Tensor::from_vec((0..7).map(|i| 0.3 * i as f64).collect()));
        let l = density_reg(&mut tape, r, 7);
        assert!((tape.value(l).item() - 0.09).abs() < 1e-14);
    }

    struct LinearD(ParamSet);

    impl ScalarNet for LinearD {
        fn params(&self) -> &ParamSet {
            &self.0
        }

        fn forward_dual(
            &self,
            tape: &mut Tape,
            p: &Bound,
            x: crate::numerics::Dual,
        ) -> Result<crate::numerics::Dual> {
            let b = tape.shape(x.primal)[0];
            Ok(x.map_linear(tape, |t, v| {
                let flat = t.reshape(v, &[b, 3 * 2 * 2]);
                t.matmul(flat, p[0])
            }))
        }
    }

    #[test]
    fn zero_discriminator() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::zeros(&[12, 1]));
        let d = LinearD(ps);
        let mut tape = Tape::new();
        let b = d.params().bind(&mut tape);
        let real = DiffTensor::new("real", Tensor::full(&[2, 3, 2, 2], 0.3));
        let fake = tape.constant(Tensor::full(&[2, 3, 2, 2], 0.6));
        let l = adversarial_losses(&mut tape, &d, &b, &real, fake, 10.0).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.value(l.d_loss).item() - 2.0 * ln2).abs() < 1e-15);
        assert!((tape.value(l.g_loss).item() - ln2).abs() < 1e-15);
    }

    #[test]
    fn linear_r1_closed_form() {
        let w: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.5).collect();
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::new(vec![12, 1], w.clone()).unwrap());
        let d = LinearD(ps);
        let mut tape = Tape::new();
        let b = d.params().bind(&mut tape);
        let real = DiffTensor::new("real", Tensor::full(&[2, 3, 2, 2], 0.3));
        let fake = tape.constant(Tensor::full(&[2, 3, 2, 2], 0.6));
        let l = adversarial_losses(&mut tape, &d, &b, &real, fake, 0.5).unwrap();
        let norm: f64 = w.iter().map(|v| v * v).sum();
        assert!((tape.value(l.r1).item() - norm).abs() < 1e-12);
        let g = tape.backward(l.r1).unwrap();
        for (gi, wi) in g.get(b[0]).unwrap().iter().zip(&w) {
            assert!((gi - 2.0 * wi).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_schedule() {
        let s = BlurAnneal::default();
        assert_eq!(s.sigma(0.0), 1.0);
        assert_eq!(s.sigma(0.5), 0.0);
        assert_eq!(s.sigma(0.9), 0.0);
        let img = ImageBuffer::from_fn(9, 9, |x, y| [((x + y) % 2) as f64; 3]);
        assert_eq!(blur_anneal(&img, 0.7, &s).unwrap(), img);
        assert_ne!(blur_anneal(&img, 0.0, &s).unwrap(), img);
    }
}
