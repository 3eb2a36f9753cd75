//! Parameter sets and small layers that can run with forward-mode tangents.

use std::ops::Index;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::{DiffTensor, Tensor};
use crate::{rng::Rng, Error, Result};

/// Named collection of optimizable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    pub tensors: Vec<DiffTensor>,
}

/// Tape handles for a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.tensors.push(DiffTensor::new(name, value));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.tensors[i].value
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.leaf(t)).collect())
    }

    /// Binds every tensor as an untracked constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| tape.constant(t.value.clone()))
                .collect(),
        )
    }

    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) -> Result<()> {
        for (p, &v) in self.tensors.iter_mut().zip(bound.vars()) {
            grads.accumulate_into(v, p)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(DiffTensor::zero_grad);
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.tensors.iter_mut().for_each(|t| t.requires_grad = on);
    }

    /// Flattened copy of every value, in order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.value.len();
            t.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length");
    }
}

/// A primal value with an optional forward-mode tangent.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub primal: Var,
    pub tangent: Option<Var>,
}

impl Dual {
    pub fn primal(v: Var) -> Self {
        Dual {
            primal: v,
            tangent: None,
        }
    }

    pub fn new(primal: Var, tangent: Var) -> Self {
        Dual {
            primal,
            tangent: Some(tangent),
        }
    }

    /// Applies a linear map to both parts.
    pub fn map_linear(self, tape: &mut Tape, f: impl Fn(&mut Tape, Var) -> Var) -> Dual {
        Dual {
            primal: f(tape, self.primal),
            tangent: self.tangent.map(|t| f(tape, t)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Softplus,
    Tanh,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        self.apply_dual(tape, Dual::primal(x)).primal
    }

    pub fn apply_dual(self, tape: &mut Tape, x: Dual) -> Dual {
        let p = x.primal;
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu => {
                let out = tape.leaky_relu(p, LEAKY_SLOPE);
                let tangent = x.tangent.map(|t| {
                    let slope = tape.leaky_relu_slope(p, LEAKY_SLOPE);
                    tape.mul(t, slope)
                });
                Dual {
                    primal: out,
                    tangent,
                }
            }
            Activation::Softplus => {
                let out = tape.softplus(p);
                let tangent = x.tangent.map(|t| {
                    let d = tape.sigmoid(p);
                    tape.mul(t, d)
                });
                Dual {
                    primal: out,
                    tangent,
                }
            }
            Activation::Tanh => {
                let out = tape.tanh(p);
                let tangent = x.tangent.map(|t| {
                    let sq = tape.square(out);
                    let neg = tape.neg(sq);
                    let d = tape.add_scalar(neg, 1.0);
                    tape.mul(t, d)
                });
                Dual {
                    primal: out,
                    tangent,
                }
            }
            Activation::Sigmoid => {
                let out = tape.sigmoid(p);
                let tangent = x.tangent.map(|t| {
                    let neg = tape.neg(out);
                    let one_minus = tape.add_scalar(neg, 1.0);
                    let d = tape.mul(out, one_minus);
                    tape.mul(t, d)
                });
                Dual {
                    primal: out,
                    tangent,
                }
            }
        }
    }
}

/// Dense layer `x W + b` on `[N, in]` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform init in `±gain * sqrt(3 / fan_in)`; zero bias.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-1.0..=1.0) * bound)
            .collect();
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::from_parts(vec![fan_in, fan_out], w),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, b[self.weight]);
        tape.add_bias(y, b[self.bias])
    }

    pub fn forward_dual(&self, tape: &mut Tape, b: &Bound, x: Dual) -> Dual {
        Dual {
            primal: self.forward(tape, b, x.primal),
            tangent: x.tangent.map(|t| tape.matmul(t, b[self.weight])),
        }
    }
}

/// Stride-1 same-padded convolution on `[B, C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
}

impl Conv {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        ksize: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = c_in * ksize * ksize;
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        let w = (0..c_out * fan_in)
            .map(|_| rng.random_range(-1.0..=1.0) * bound)
            .collect();
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::from_parts(vec![c_out, c_in, ksize, ksize], w),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Conv { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        tape.conv2d(x, b[self.weight], Some(b[self.bias]))
    }

    pub fn forward_dual(&self, tape: &mut Tape, b: &Bound, x: Dual) -> Dual {
        Dual {
            primal: self.forward(tape, b, x.primal),
            tangent: x.tangent.map(|t| tape.conv2d(t, b[self.weight], None)),
        }
    }
}

/// Appends the minibatch standard-deviation channel: per group of `group`
/// consecutive samples, the mean over (C, H, W) of the across-group std.
pub fn minibatch_std(tape: &mut Tape, x: Dual, group: usize) -> Result<Dual> {
    const EPS: f64 = 1e-8;
    let shape = tape.shape(x.primal).to_vec();
    if shape.len() != 4 {
        return Err(Error::invalid("minibatch_std expects [B, C, H, W]"));
    }
    let g = group.min(shape[0]).max(1);
    if !shape[0].is_multiple_of(g) {
        return Err(Error::invalid(format!(
            "batch {} not divisible by group {g}",
            shape[0]
        )));
    }
    let p = x.primal;
    let m = tape.group_mean(p, g);
    let mu = tape.group_broadcast(m, g);
    let dev = tape.sub(p, mu);
    let sq = tape.square(dev);
    let var = tape.group_mean(sq, g);
    let var_eps = tape.add_scalar(var, EPS);
    let std = tape.sqrt(var_eps);
    let s = tape.row_mean(std);
    let s_b = tape.group_broadcast(s, g);
    let primal = tape.append_channel(p, s_b);
    let tangent = x.tangent.map(|t| {
        let mt = tape.group_mean(t, g);
        let mu_t = tape.group_broadcast(mt, g);
        let dev_t = tape.sub(t, mu_t);
        let prod = tape.mul(dev, dev_t);
        // d std = mean_g(dev * dev_t) / std
        let var_t = tape.group_mean(prod, g);
        let std_t = tape.div(var_t, std);
        let s_t = tape.row_mean(std_t);
        let s_tb = tape.group_broadcast(s_t, g);
        tape.append_channel(t, s_tb)
    });
    Ok(Dual { primal, tangent })
}

/// Separable blur applied to both parts of a dual.
pub fn blur_dual(tape: &mut Tape, x: Dual, kernel: Arc<Vec<f64>>) -> Dual {
    x.map_linear(tape, |t, v| t.sep_filter(v, kernel.clone()))
}

/// Mean squared error between two equally shaped tensors.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn param_flat_round_trip() {
        let mut r = rng::seeded(0);
        let mut ps = ParamSet::new();
        Linear::new(&mut ps, "l", 3, 2, 1.0, &mut r);
        let flat = ps.flat_values();
        assert_eq!(flat.len(), 8);
        let mut doubled: Vec<f64> = flat.iter().map(|v| 2.0 * v).collect();
        ps.set_flat_values(&doubled);
        assert_eq!(ps.flat_values(), doubled);
        doubled.clear();
    }

    #[test]
    fn minibatch_std_of_identical_samples_is_tiny() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[4, 2, 2, 2], 0.7));
        let out = minibatch_std(&mut tape, Dual::primal(x), 4).unwrap();
        let v = tape.value(out.primal);
        assert_eq!(v.shape(), &[4, 3, 2, 2]);
        let extra = v.data()[8];
        assert!((extra - 1e-4).abs() < 1e-9, "sqrt(eps) expected, got {extra}");
    }

    #[test]
    fn minibatch_std_matches_direct_formula() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..8).map(|i| (i * i) as f64 * 0.1).collect();
        let x = tape.constant(Tensor::new(vec![4, 2, 1, 1], vals.clone()).unwrap());
        let out = minibatch_std(&mut tape, Dual::primal(x), 2).unwrap();
        let v = tape.value(out.primal).data().to_vec();
        // group 0 = samples {0, 1}
        let mut expect = 0.0;
        for f in 0..2 {
            let (a, b) = (vals[f], vals[2 + f]);
            let mu = 0.5 * (a + b);
            expect += (0.5 * ((a - mu).powi(2) + (b - mu).powi(2)) + 1e-8).sqrt();
        }
        expect /= 2.0;
        assert!((v[2] - expect).abs() < 1e-12);
        assert!((v[5] - expect).abs() < 1e-12);
    }
}
