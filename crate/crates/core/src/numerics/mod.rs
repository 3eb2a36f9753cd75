//! Numeric substrate: tensors, the reverse-mode tape, layers, Adam, gradient
//! checking and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod r1;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FdOptions, FdReport};
pub use nn::{Activation, Bound, Conv, Dual, Linear, ParamSet};
pub use r1::{grad_norm_sq_wrt_input, input_gradient, PenaltyOutput, ScalarNet};
pub use tape::{Gradients, Tap, Tape, TriGather, Var};
pub use tensor::{DiffTensor, Tensor};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(3.0));
        let g = tape.backward(c).unwrap();
        assert!(g.get(x).is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let mut p = DiffTensor::new("p", Tensor::from_vec(vec![1.5]));
        let x = tape.leaf(&p);
        let sq = tape.square(x);
        let loss = tape.sum(sq);
        for _ in 0..2 {
            tape.backward(loss).unwrap().accumulate_into(x, &mut p).unwrap();
        }
        assert_eq!(p.grad, vec![6.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(crate::Error::NonScalarLoss(_))));
        let s = tape.sum(x);
        tape.clear();
        assert!(matches!(tape.backward(s), Err(crate::Error::DetachedTape)));
    }
}
