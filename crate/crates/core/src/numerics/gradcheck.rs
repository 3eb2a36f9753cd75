//! Central finite-difference gradient checking.

use super::nn::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct FdOptions {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// One-sided slopes disagreeing by more than this fraction mark a
    /// coordinate as sitting on a kink.
    pub kink_tolerance: f64,
    /// Coordinates to check; all when `None`.
    pub coords: Option<Vec<usize>>,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            floor: 1e-5,
            kink_tolerance: 1e-3,
            coords: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates where the function is not differentiable at the step scale;
    /// their errors are excluded from `max_rel_error`.
    pub unreliable: Vec<usize>,
}

fn eval<F>(f: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let v = f(&mut tape, &b)?;
    Ok(tape.value(v).item())
}

/// Compares tape gradients of the scalar `f` with central differences.
pub fn finite_diff_check<F>(f: F, params: &ParamSet, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let loss = f(&mut tape, &b)?;
    let f0 = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut flat_grad = Vec::with_capacity(params.num_scalars());
    for (t, &v) in params.tensors.iter().zip(b.vars()) {
        match grads.get(v) {
            Some(g) => flat_grad.extend_from_slice(g),
            None => flat_grad.extend(std::iter::repeat_n(0.0, t.value.len())),
        }
    }
    let again = eval(&f, params)?;
    if again.to_bits() != f0.to_bits() {
        return Err(Error::NonDeterministic(f0, again));
    }

    let base = params.flat_values();
    let coords: Vec<usize> = opts
        .coords
        .clone()
        .unwrap_or_else(|| (0..base.len()).collect());
    let mut probe = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_coord: 0,
        analytic: Vec::with_capacity(coords.len()),
        numeric: Vec::with_capacity(coords.len()),
        unreliable: Vec::new(),
    };
    let h = opts.step;
    for &c in &coords {
        let mut x = base.clone();
        x[c] = base[c] + h;
        probe.set_flat_values(&x);
        let fp = eval(&f, &probe)?;
        x[c] = base[c] - h;
        probe.set_flat_values(&x);
        let fm = eval(&f, &probe)?;
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = flat_grad[c];
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        let scale = fwd.abs().max(bwd.abs()).max(1.0);
        report.analytic.push(analytic);
        report.numeric.push(numeric);
        if (fwd - bwd).abs() > opts.kink_tolerance * scale {
            report.unreliable.push(c);
            continue;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(opts.floor);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coord = c;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one_param(vals: Vec<f64>) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("x", Tensor::from_vec(vals));
        ps
    }

    #[test]
    fn quadratic_is_exact() {
        let ps = one_param(vec![0.5, -1.5, 2.0]);
        let r = finite_diff_check(
            |t, b| {
                let sq = t.square(b[0]);
                let s = t.scale(sq, 3.0);
                Ok(t.sum(s))
            },
            &ps,
            &FdOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
        assert!(r.unreliable.is_empty());
    }

    #[test]
    fn relu_kink_is_flagged() {
        let ps = one_param(vec![0.0, 1.0]);
        let r = finite_diff_check(
            |t, b| {
                // leaky slope 0 is a plain ReLU
                let y = t.leaky_relu(b[0], 0.0);
                Ok(t.sum(y))
            },
            &ps,
            &FdOptions::default(),
        )
        .unwrap();
        assert_eq!(r.unreliable, vec![0]);
    }

    #[test]
    fn nondeterminism_detected() {
        use std::cell::Cell;
        let ps = one_param(vec![1.0]);
        let calls = Cell::new(0.0);
        let r = finite_diff_check(
            |t, b| {
                calls.set(calls.get() + 1.0);
                let c = t.constant(Tensor::from_vec(vec![calls.get()]));
                let y = t.mul(b[0], c);
                Ok(t.sum(y))
            },
            &ps,
            &FdOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonDeterministic(..))));
    }
}
