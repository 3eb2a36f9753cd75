//! Input-gradient penalty that stays differentiable w.r.t. the network.
//!
//! With `g = ∇_x Σ_b net(x_b)` computed on a scratch tape and frozen, the
//! parameter gradient of `||g||²` equals `2 ∂/∂θ (J_x net · g)`. The
//! directional derivative `J_x net · g` is obtained by pushing the tangent
//! `g` through the network on the main tape, so only first-order reverse
//! mode is needed.

use super::nn::{Bound, Dual, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::{DiffTensor, Tensor};
use crate::{Error, Result};

/// A network producing one scalar per sample (`[B, 1]` or `[B]`).
pub trait ScalarNet {
    fn params(&self) -> &ParamSet;

    fn forward_dual(&self, tape: &mut Tape, params: &Bound, x: Dual) -> Result<Dual>;

    fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_dual(tape, params, Dual::primal(x))?.primal)
    }
}

pub struct PenaltyOutput {
    /// `net(x)` on the main tape.
    pub output: Var,
    /// Batch mean of per-sample `||∇_x net||²`.
    pub penalty: Var,
}

fn check_scalar_per_sample(shape_in: &[usize], shape_out: &[usize]) -> Result<()> {
    let b = shape_in[0];
    let n: usize = shape_out.iter().product();
    if shape_out.first() != Some(&b) || n != b {
        return Err(Error::invalid(format!(
            "net must output one scalar per sample, got {shape_out:?} for batch {b}"
        )));
    }
    Ok(())
}

/// Plain input gradient `∇_x Σ_b net(x_b)` with frozen parameters.
pub fn input_gradient<N: ScalarNet>(net: &N, x: &Tensor) -> Result<Tensor> {
    let mut scratch = Tape::new();
    let b = net.params().bind_frozen(&mut scratch);
    let xv = scratch.param(x.clone());
    let y = net.forward(&mut scratch, &b, xv)?;
    check_scalar_per_sample(x.shape(), scratch.shape(y))?;
    let s = scratch.sum(y);
    let grads = scratch.backward(s)?;
    let g = grads
        .get(xv)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    Tensor::new(x.shape().to_vec(), g)
}

/// Evaluates `net(x)` on `tape` together with the R1-style penalty
/// `mean_b ||∇_{x_b} net||²`, differentiable w.r.t. the bound parameters.
pub fn grad_norm_sq_wrt_input<N: ScalarNet>(
    tape: &mut Tape,
    net: &N,
    params: &Bound,
    x: &DiffTensor,
) -> Result<PenaltyOutput> {
    if !x.requires_grad {
        return Err(Error::DetachedInput);
    }
    let batch = x.shape().first().copied().unwrap_or(1).max(1);
    let g = input_gradient(net, &x.value)?;
    let norm_sq: f64 = g.data().iter().map(|v| v * v).sum();
    let xv = tape.constant(x.value.clone());
    let tv = tape.constant(g);
    let out = net.forward_dual(tape, params, Dual::new(xv, tv))?;
    let penalty = match out.tangent {
        Some(ydot) => {
            let s = tape.sum(ydot);
            let surrogate = tape.scale(s, 2.0 / batch as f64);
            tape.with_value(surrogate, Tensor::scalar(norm_sq / batch as f64))
        }
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(PenaltyOutput {
        output: out.primal,
        penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// net(x) = x · w per sample.
    struct LinearNet(ParamSet);

    impl ScalarNet for LinearNet {
        fn params(&self) -> &ParamSet {
            &self.0
        }

        fn forward_dual(&self, tape: &mut Tape, p: &Bound, x: Dual) -> Result<Dual> {
            Ok(x.map_linear(tape, |t, v| t.matmul(v, p[0])))
        }
    }

    struct ConstNet(ParamSet);

    impl ScalarNet for ConstNet {
        fn params(&self) -> &ParamSet {
            &self.0
        }

        fn forward_dual(&self, tape: &mut Tape, p: &Bound, x: Dual) -> Result<Dual> {
            let b = tape.shape(x.primal)[0];
            let ones = tape.constant(Tensor::full(&[b, 1], 1.0));
            Ok(Dual::primal(tape.matmul(ones, p[0])))
        }
    }

    #[test]
    fn linear_closed_form() {
        let w = vec![0.3, -1.1, 2.0];
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::new(vec![3, 1], w.clone()).unwrap());
        let net = LinearNet(ps);
        let x = DiffTensor::new("x", Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap());
        let mut tape = Tape::new();
        let b = net.params().bind(&mut tape);
        let out = grad_norm_sq_wrt_input(&mut tape, &net, &b, &x).unwrap();
        let norm: f64 = w.iter().map(|v| v * v).sum();
        assert!((tape.value(out.penalty).item() - norm).abs() < 1e-12);
        let grads = tape.backward(out.penalty).unwrap();
        let gw = grads.get(b[0]).unwrap();
        for (g, wv) in gw.iter().zip(&w) {
            assert!((g - 2.0 * wv).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_net_has_zero_penalty() {
        let mut ps = ParamSet::new();
        ps.push("c", Tensor::full(&[1, 1], 0.4));
        let net = ConstNet(ps);
        let x = DiffTensor::new("x", Tensor::zeros(&[3, 2]));
        let mut tape = Tape::new();
        let b = net.params().bind(&mut tape);
        let out = grad_norm_sq_wrt_input(&mut tape, &net, &b, &x).unwrap();
        assert_eq!(tape.value(out.penalty).item(), 0.0);
        let grads = tape.backward(out.penalty).unwrap();
        assert!(grads.get(b[0]).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn detached_input_rejected() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::zeros(&[2, 1]));
        let net = LinearNet(ps);
        let x = DiffTensor::frozen("x", Tensor::zeros(&[1, 2]));
        let mut tape = Tape::new();
        let b = net.params().bind(&mut tape);
        assert!(matches!(
            grad_norm_sq_wrt_input(&mut tape, &net, &b, &x),
            Err(Error::DetachedInput)
        ));
    }

    #[test]
    fn non_scalar_net_rejected() {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::zeros(&[2, 2]));
        let net = LinearNet(ps);
        let x = DiffTensor::new("x", Tensor::zeros(&[3, 2]));
        let mut tape = Tape::new();
        let b = net.params().bind(&mut tape);
        assert!(grad_norm_sq_wrt_input(&mut tape, &net, &b, &x).is_err());
    }
}
