//! Reverse-mode tape over dense tensors.
//!
//! Every op evaluates eagerly and records its inputs; [`Tape::backward`]
//! replays the record in reverse. Second-order quantities (the R1 penalty) are
//! built from first-order ops by propagating forward-mode tangents on the tape
//! itself, see [`super::nn::Dual`].

use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims};
use super::tensor::{DiffTensor, Tensor};
use crate::{par, Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// One bilinear tap of a tri-plane gather.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub plane: u8,
    pub texel: u32,
    pub weight: f64,
}

/// Precomputed bilinear stencil: 3 planes x 4 corners per query point, with
/// the 1/3 plane average folded into the weights.
#[derive(Clone, Debug)]
pub struct TriGather {
    pub resolution: usize,
    pub taps: Vec<[Tap; 12]>,
}

impl TriGather {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Softplus(usize),
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    AddBias(usize, usize),
    MatMul(usize, usize),
    GroupMean(usize, usize),
    GroupBroadcast(usize, usize),
    RowMean(usize),
    Reshape(usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    AppendChannel(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        dims: ConvDims,
    },
    AvgPool2(usize),
    Upsample2(usize),
    ChannelAffine(usize, usize, usize),
    TriplaneSample {
        planes: usize,
        set: usize,
        gather: Arc<TriGather>,
    },
    RenderWeights {
        sigma: usize,
        deltas: Arc<Vec<f64>>,
        per_ray: usize,
    },
    Composite {
        w: usize,
        rgb: usize,
        background: [f64; 3],
        per_ray: usize,
    },
    SepFilter(usize, Arc<Vec<f64>>),
    Subsample2(usize),
    Luminance(usize),
    ForwardDiff(usize, usize),
    Distortion {
        w: usize,
        mid: Arc<Vec<f64>>,
        width: Arc<Vec<f64>>,
        per_ray: usize,
    },
    AdjacentSqDiff(usize, usize),
    WithValue(usize),
    Stack(Vec<usize>, usize),
    Transpose2(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of evaluated ops for one step.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients of a loss w.r.t. the leaves of a tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `param.grad`.
    pub fn accumulate_into(&self, v: Var, param: &mut DiffTensor) -> Result<()> {
        if v.tape != self.tape {
            return Err(Error::DetachedTape);
        }
        if let Some(g) = self.get(v) {
            if g.len() != param.grad.len() {
                return Err(Error::ShapeMismatch {
                    expected: param.shape().to_vec(),
                    actual: vec![g.len()],
                });
            }
            for (a, b) in param.grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn map_unary(t: &Tensor, f: impl Fn(f64) -> f64 + Sync + Send) -> Tensor {
    let mut out = t.data().to_vec();
    par::for_each_chunk_mut(&mut out, 16384, |_, c| c.iter_mut().for_each(|v| *v = f(*v)));
    Tensor::from_parts(t.shape().to_vec(), out)
}

fn zip_binary(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
    let out = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_parts(a.shape().to_vec(), out)
}

/// Splits `shape` into (leading, trailing H, trailing W).
fn planes_hw(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    assert!(r >= 2, "expected at least 2 dims, got {shape:?}");
    let (h, w) = (shape[r - 2], shape[r - 1]);
    (shape[..r - 2].iter().product(), h, w)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
        }
    }

    /// Drops all nodes. Vars created before the call become detached.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_id();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> usize {
        assert!(
            v.tape == self.id && v.idx < self.nodes.len(),
            "variable used on a foreign or cleared tape"
        );
        v.idx
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.push_with(value, op, needs_grad)
    }

    fn push_with(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v)].needs_grad
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_with(value, Op::Leaf, false)
    }

    /// Leaf for a [`DiffTensor`], tracked iff the tensor requires grad.
    pub fn leaf(&mut self, p: &DiffTensor) -> Var {
        self.push_with(p.value.clone(), Op::Leaf, p.requires_grad)
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let v = zip_binary(&self.nodes[ia].value, &self.nodes[ib].value, "add", |x, y| x + y);
        self.push(v, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let v = zip_binary(&self.nodes[ia].value, &self.nodes[ib].value, "sub", |x, y| x - y);
        self.push(v, Op::Sub(ia, ib), &[ia, ib])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let v = zip_binary(&self.nodes[ia].value, &self.nodes[ib].value, "mul", |x, y| x * y);
        self.push(v, Op::Mul(ia, ib), &[ia, ib])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let v = zip_binary(&self.nodes[ia].value, &self.nodes[ib].value, "div", |x, y| x / y);
        self.push(v, Op::Div(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, |x| c * x);
        self.push(v, Op::Scale(ia, c), &[ia])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, |x| x + c);
        self.push(v, Op::AddScalar(ia), &[ia])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, f64::exp);
        self.push(v, Op::Exp(ia), &[ia])
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, softplus);
        self.push(v, Op::Softplus(ia), &[ia])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, sigmoid);
        self.push(v, Op::Sigmoid(ia), &[ia])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, f64::tanh);
        self.push(v, Op::Tanh(ia), &[ia])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, |x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(ia, slope), &[ia])
    }

    /// Local slope of a leaky ReLU at `a` (1 or `slope`). Piecewise constant,
    /// so it carries no gradient.
    pub fn leaky_relu_slope(&mut self, a: Var, slope: f64) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, |x| if x > 0.0 { 1.0 } else { slope });
        self.push_with(v, Op::Leaf, false)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, f64::sqrt);
        self.push(v, Op::Sqrt(ia), &[ia])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let v = map_unary(&self.nodes[ia].value, |x| x * x);
        self.push(v, Op::Square(ia), &[ia])
    }

    // ---- reductions and reshaping -------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let s = self.nodes[ia].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let t = &self.nodes[ia].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(ia), &[ia])
    }

    /// `a[n, f] + b[f]`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let av = &self.nodes[ia].value;
        let bv = self.nodes[ib].value.data();
        let f = bv.len();
        assert_eq!(*av.shape().last().unwrap(), f, "add_bias: width mismatch");
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(f) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let v = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(v, Op::AddBias(ia, ib), &[ia, ib])
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!(av.rank(), 2, "matmul lhs must be 2-D");
        assert_eq!(bv.rank(), 2, "matmul rhs must be 2-D");
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        assert_eq!(bv.shape()[0], k, "matmul inner dims");
        let out = kernels::matmul(av.data(), bv.data(), n, k, m);
        self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(ia, ib), &[ia, ib])
    }

    /// Mean over consecutive groups of `group` rows along the leading axis.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Var {
        let ia = self.check(a);
        let av = &self.nodes[ia].value;
        let b = av.shape()[0];
        assert!(group > 0 && b.is_multiple_of(group), "group_mean: {b} rows, group {group}");
        let f = av.len() / b;
        let mut out = vec![0.0; b / group * f];
        for r in 0..b {
            let q = r / group;
            for j in 0..f {
                out[q * f + j] += av.data()[r * f + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= group as f64);
        let mut shape = av.shape().to_vec();
        shape[0] = b / group;
        self.push(Tensor::from_parts(shape, out), Op::GroupMean(ia, group), &[ia])
    }

    /// Repeats each leading row `group` times.
    pub fn group_broadcast(&mut self, a: Var, group: usize) -> Var {
        let ia = self.check(a);
        let av = &self.nodes[ia].value;
        let q = av.shape()[0];
        let f = av.len() / q.max(1);
        let mut out = Vec::with_capacity(q * group * f);
        for r in 0..q * group {
            let src = r / group;
            out.extend_from_slice(&av.data()[src * f..(src + 1) * f]);
        }
        let mut shape = av.shape().to_vec();
        shape[0] = q * group;
        self.push(Tensor::from_parts(shape, out), Op::GroupBroadcast(ia, group), &[ia])
    }

    /// Mean over everything but the leading axis: `[n, ...] -> [n, 1]`.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let av = &self.nodes[ia].value;
        let n = av.shape()[0];
        let f = av.len() / n;
        let out = av
            .data()
            .chunks(f)
            .map(|c| c.iter().sum::<f64>() / f as f64)
            .collect();
        self.push(Tensor::from_parts(vec![n, 1], out), Op::RowMean(ia), &[ia])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let ia = self.check(a);
        let v = self.nodes[ia]
            .value
            .clone()
            .reshape(shape)
            .expect("reshape: element count must match");
        self.push(v, Op::Reshape(ia), &[ia])
    }

    /// `[n, p] ++ [n, q] -> [n, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.check(a), self.check(b));
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let n = av.shape()[0];
        assert_eq!(bv.shape()[0], n, "concat_cols: row mismatch");
        let (p, q) = (av.len() / n, bv.len() / n);
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&av.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&bv.data()[r * q..(r + 1) * q]);
        }
        self.push(Tensor::from_parts(vec![n, p + q], out), Op::ConcatCols(ia, ib), &[ia, ib])
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.check(a);
        let av = &self.nodes[ia].value;
        let (n, w) = (av.shape()[0], av.shape()[1]);
        assert!(start + len <= w, "slice_cols out of range");
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&av.data()[r * w + start..r * w + start + len]);
        }
        self.push(Tensor::from_parts(vec![n, len], out), Op::SliceCols(ia, start, len), &[ia])
    }

    /// Appends one channel filled with `s[b]` to `x: [B, C, H, W]`.
    pub fn append_channel(&mut self, x: Var, s: Var) -> Var {
        let (ix, is) = (self.check(x), self.check(s));
        let (xv, sv) = (&self.nodes[ix].value, &self.nodes[is].value);
        let sh = xv.shape();
        assert_eq!(sh.len(), 4, "append_channel expects [B, C, H, W]");
        let (b, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
        assert_eq!(sv.len(), b, "append_channel: one value per sample");
        let mut out = Vec::with_capacity(b * (c + 1) * hw);
        for i in 0..b {
            out.extend_from_slice(&xv.data()[i * c * hw..(i + 1) * c * hw]);
            out.extend(std::iter::repeat_n(sv.data()[i], hw));
        }
        let v = Tensor::from_parts(vec![b, c + 1, sh[2], sh[3]], out);
        self.push(v, Op::AppendChannel(ix, is), &[ix, is])
    }

    /// Stacks equally shaped inputs along a new axis.
    pub fn stack(&mut self, items: &[Var], axis: usize) -> Var {
        assert!(!items.is_empty(), "stack of nothing");
        let idx: Vec<usize> = items.iter().map(|&v| self.check(v)).collect();
        let shape0 = self.nodes[idx[0]].value.shape().to_vec();
        assert!(axis <= shape0.len());
        for &i in &idx {
            assert_eq!(self.nodes[i].value.shape(), &shape0[..], "stack: shape mismatch");
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * inner * idx.len());
        for o in 0..outer {
            for &i in &idx {
                out.extend_from_slice(&self.nodes[i].value.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = shape0;
        shape.insert(axis, idx.len());
        let v = Tensor::from_parts(shape, out);
        self.push(v, Op::Stack(idx.clone(), axis), &idx)
    }

    /// Swaps the two trailing axes.
    pub fn transpose2(&mut self, a: Var) -> Var {
        let ia = self.check(a);
        let av = &self.nodes[ia].value;
        let (lead, h, w) = planes_hw(av.shape());
        let mut out = vec![0.0; av.len()];
        for p in 0..lead {
            for y in 0..h {
                for x in 0..w {
                    out[p * h * w + x * h + y] = av.data()[p * h * w + y * w + x];
                }
            }
        }
        let mut shape = av.shape().to_vec();
        let r = shape.len();
        shape.swap(r - 1, r - 2);
        self.push(Tensor::from_parts(shape, out), Op::Transpose2(ia), &[ia])
    }

    /// Node whose value is `value` but whose gradient flows into `a` unchanged.
    pub fn with_value(&mut self, a: Var, value: Tensor) -> Var {
        let ia = self.check(a);
        assert_eq!(value.shape(), self.nodes[ia].value.shape());
        self.push(value, Op::WithValue(ia), &[ia])
    }

    // ---- convolutional ------------------------------------------------------

    /// Stride-1 zero-padded convolution. `x: [B, Ci, H, W]`,
    /// `w: [Co, Ci, k, k]` with odd `k`, `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (ix, iw) = (self.check(x), self.check(w));
        let ib = b.map(|b| self.check(b));
        let (xv, wv) = (&self.nodes[ix].value, &self.nodes[iw].value);
        let (xs, ws) = (xv.shape(), wv.shape());
        assert_eq!(xs.len(), 4, "conv2d input must be [B, C, H, W]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [Co, Ci, k, k]");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        assert!(ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d kernel must be odd square");
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            c_out: ws[0],
            height: xs[2],
            width: xs[3],
            ksize: ws[2],
        };
        let bias = ib.map(|i| self.nodes[i].value.data());
        let out = kernels::conv2d(xv.data(), wv.data(), bias, dims);
        let v = Tensor::from_parts(vec![dims.batch, dims.c_out, dims.height, dims.width], out);
        let mut inputs = vec![ix, iw];
        inputs.extend(ib);
        self.push(
            v,
            Op::Conv2d {
                x: ix,
                w: iw,
                b: ib,
                dims,
            },
            &inputs,
        )
    }

    /// 2x2 average pooling over the trailing axes (even extents).
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let (lead, h, w) = planes_hw(xv.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even extents");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; lead * ho * wo];
        let d = xv.data();
        for p in 0..lead {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = p * h * w + 2 * y * w + 2 * xx;
                    out[(p * ho + y) * wo + xx] =
                        0.25 * (d[base] + d[base + 1] + d[base + w] + d[base + w + 1]);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        self.push(Tensor::from_parts(shape, out), Op::AvgPool2(ix), &[ix])
    }

    /// Nearest-neighbour 2x upsampling over the trailing axes.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let (lead, h, w) = planes_hw(xv.shape());
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0; lead * ho * wo];
        let d = xv.data();
        for p in 0..lead {
            for y in 0..ho {
                for xx in 0..wo {
                    out[(p * ho + y) * wo + xx] = d[p * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        self.push(Tensor::from_parts(shape, out), Op::Upsample2(ix), &[ix])
    }

    /// `x[b, c, :, :] * scale[b, c] + shift[b, c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (ix, isc, ish) = (self.check(x), self.check(scale), self.check(shift));
        let xv = &self.nodes[ix].value;
        let sh = xv.shape();
        assert_eq!(sh.len(), 4, "channel_affine expects [B, C, H, W]");
        let bc = sh[0] * sh[1];
        let hw = sh[2] * sh[3];
        let (s, t) = (self.nodes[isc].value.data(), self.nodes[ish].value.data());
        assert_eq!(s.len(), bc, "channel_affine scale must be [B, C]");
        assert_eq!(t.len(), bc, "channel_affine shift must be [B, C]");
        let mut out = xv.data().to_vec();
        for (p, plane) in out.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = *v * s[p] + t[p]);
        }
        let v = Tensor::from_parts(sh.to_vec(), out);
        self.push(v, Op::ChannelAffine(ix, isc, ish), &[ix, isc, ish])
    }

    /// Per-channel separable filter (rows then columns) with reflect padding
    /// over the trailing two axes.
    pub fn sep_filter(&mut self, x: Var, kernel: Arc<Vec<f64>>) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let (_, h, w) = planes_hw(xv.shape());
        let rows = kernels::filter_rows(xv.data(), h, w, &kernel);
        let out = kernels::filter_cols(&rows, h, w, &kernel);
        let v = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(v, Op::SepFilter(ix, kernel), &[ix])
    }

    /// Keeps even rows and columns of the trailing axes.
    pub fn subsample2(&mut self, x: Var) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let (lead, h, w) = planes_hw(xv.shape());
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Vec::with_capacity(lead * ho * wo);
        for p in 0..lead {
            for y in 0..ho {
                for xx in 0..wo {
                    out.push(xv.data()[p * h * w + 2 * y * w + 2 * xx]);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        self.push(Tensor::from_parts(shape, out), Op::Subsample2(ix), &[ix])
    }

    /// Rec. 601 luma of `[B, 3, H, W]` as `[B, 1, H, W]`.
    pub fn luminance(&mut self, x: Var) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let sh = xv.shape();
        assert!(sh.len() == 4 && sh[1] == 3, "luminance expects [B, 3, H, W]");
        let hw = sh[2] * sh[3];
        let d = xv.data();
        let mut out = vec![0.0; sh[0] * hw];
        for b in 0..sh[0] {
            for i in 0..hw {
                let base = b * 3 * hw + i;
                out[b * hw + i] =
                    LUMA[0] * d[base] + LUMA[1] * d[base + hw] + LUMA[2] * d[base + 2 * hw];
            }
        }
        let v = Tensor::from_parts(vec![sh[0], 1, sh[2], sh[3]], out);
        self.push(v, Op::Luminance(ix), &[ix])
    }

    /// Forward difference along trailing axis 0 (rows) or 1 (columns).
    pub fn forward_diff(&mut self, x: Var, axis: usize) -> Var {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let (lead, h, w) = planes_hw(xv.shape());
        let d = xv.data();
        let (ho, wo) = if axis == 0 { (h - 1, w) } else { (h, w - 1) };
        let mut out = Vec::with_capacity(lead * ho * wo);
        for p in 0..lead {
            for y in 0..ho {
                for xx in 0..wo {
                    let a = d[p * h * w + y * w + xx];
                    let b = if axis == 0 {
                        d[p * h * w + (y + 1) * w + xx]
                    } else {
                        d[p * h * w + y * w + xx + 1]
                    };
                    out.push(b - a);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        self.push(Tensor::from_parts(shape, out), Op::ForwardDiff(ix, axis), &[ix])
    }

    // ---- radiance-field specific ---------------------------------------------

    /// Bilinear tri-plane lookup. `planes` is `[3, C, R, R]` or
    /// `[S, 3, C, R, R]` (then `set` selects the plane set). Returns `[N, C]`.
    pub fn triplane_sample(&mut self, planes: Var, set: usize, gather: Arc<TriGather>) -> Var {
        let ip = self.check(planes);
        let pv = &self.nodes[ip].value;
        let sh = pv.shape();
        let (sets, c, r) = match sh.len() {
            4 => (1, sh[1], sh[2]),
            5 => (sh[0], sh[2], sh[3]),
            _ => panic!("triplane planes must be [3, C, R, R] or [S, 3, C, R, R]"),
        };
        assert!(set < sets, "plane set out of range");
        assert_eq!(r, gather.resolution, "gather resolution mismatch");
        let rr = r * r;
        let base = set * 3 * c * rr;
        let data = &pv.data()[base..base + 3 * c * rr];
        let n = gather.len();
        let mut out = vec![0.0; n * c];
        let chunk_pts = 256;
        par::for_each_chunk_mut(&mut out, chunk_pts * c, |ci, chunk| {
            for (j, orow) in chunk.chunks_mut(c).enumerate() {
                let taps = &gather.taps[ci * chunk_pts + j];
                for t in taps {
                    if t.weight == 0.0 {
                        continue;
                    }
                    let off = t.plane as usize * c * rr + t.texel as usize;
                    for (ch, o) in orow.iter_mut().enumerate() {
                        *o += t.weight * data[off + ch * rr];
                    }
                }
            }
        });
        let v = Tensor::from_parts(vec![n, c], out);
        self.push(
            v,
            Op::TriplaneSample {
                planes: ip,
                set,
                gather,
            },
            &[ip],
        )
    }

    /// Compositing weights `w_i = T_i (1 - exp(-sigma_i delta_i))` for rays of
    /// `per_ray` consecutive samples.
    pub fn render_weights(&mut self, sigma: Var, deltas: Arc<Vec<f64>>, per_ray: usize) -> Var {
        let is = self.check(sigma);
        let sv = self.nodes[is].value.data();
        assert_eq!(sv.len(), deltas.len(), "render_weights: one delta per sample");
        assert!(per_ray > 0 && sv.len().is_multiple_of(per_ray));
        let mut out = vec![0.0; sv.len()];
        par::for_each_chunk_mut(&mut out, per_ray, |ray, w| {
            let base = ray * per_ray;
            let mut acc = 0.0f64;
            for i in 0..per_ray {
                let tau = sv[base + i] * deltas[base + i];
                w[i] = (-acc).exp() * (-(-tau).exp_m1());
                acc += tau;
            }
        });
        let v = Tensor::from_parts(vec![sv.len()], out);
        self.push(
            v,
            Op::RenderWeights {
                sigma: is,
                deltas,
                per_ray,
            },
            &[is],
        )
    }

    /// `C_r = sum_i w_i c_i + (1 - sum_i w_i) * background`; `rgb` is `[N, 3]`.
    pub fn composite(&mut self, w: Var, rgb: Var, background: [f64; 3], per_ray: usize) -> Var {
        let (iw, ic) = (self.check(w), self.check(rgb));
        let (wv, cv) = (self.nodes[iw].value.data(), self.nodes[ic].value.data());
        assert_eq!(cv.len(), 3 * wv.len(), "composite: rgb must be [N, 3]");
        let rays = wv.len() / per_ray;
        let mut out = vec![0.0; rays * 3];
        par::for_each_chunk_mut(&mut out, 3, |r, o| {
            let mut wsum = 0.0;
            for i in r * per_ray..(r + 1) * per_ray {
                wsum += wv[i];
                for ch in 0..3 {
                    o[ch] += wv[i] * cv[3 * i + ch];
                }
            }
            for ch in 0..3 {
                o[ch] += (1.0 - wsum) * background[ch];
            }
        });
        let v = Tensor::from_parts(vec![rays, 3], out);
        self.push(
            v,
            Op::Composite {
                w: iw,
                rgb: ic,
                background,
                per_ray,
            },
            &[iw, ic],
        )
    }

    /// Mean over rays of `sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 ds_i`,
    /// with sorted interval midpoints `mid` and widths `width`.
    pub fn distortion(
        &mut self,
        w: Var,
        mid: Arc<Vec<f64>>,
        width: Arc<Vec<f64>>,
        per_ray: usize,
    ) -> Var {
        let iw = self.check(w);
        let wv = self.nodes[iw].value.data();
        assert_eq!(wv.len(), mid.len());
        assert_eq!(wv.len(), width.len());
        let rays = wv.len() / per_ray;
        let mut total = 0.0;
        for r in 0..rays {
            let rng = r * per_ray..(r + 1) * per_ray;
            total += distortion_ray(&wv[rng.clone()], &mid[rng.clone()], &width[rng]);
        }
        let v = Tensor::scalar(total / rays.max(1) as f64);
        self.push(
            v,
            Op::Distortion {
                w: iw,
                mid,
                width,
                per_ray,
            },
            &[iw],
        )
    }

    /// Mean squared difference of consecutive entries within each ray.
    pub fn adjacent_sq_diff(&mut self, x: Var, per_ray: usize) -> Var {
        let ix = self.check(x);
        let xv = self.nodes[ix].value.data();
        assert!(per_ray >= 2 && xv.len().is_multiple_of(per_ray));
        let mut s = 0.0;
        for ray in xv.chunks(per_ray) {
            for p in ray.windows(2) {
                s += (p[1] - p[0]) * (p[1] - p[0]);
            }
        }
        let pairs = xv.len() / per_ray * (per_ray - 1);
        self.push(
            Tensor::scalar(s / pairs as f64),
            Op::AdjacentSqDiff(ix, per_ray),
            &[ix],
        )
    }

    // ---- reverse pass --------------------------------------------------------

    /// Gradients of the scalar `loss` w.r.t. every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::DetachedTape);
        }
        let lv = &self.nodes[loss.idx].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);
        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        let wants = |j: usize| self.nodes[j].needs_grad;
        // Accumulate an elementwise contribution into input j.
        let acc = |grads: &mut [Option<Vec<f64>>], j: usize, contrib: Vec<f64>| {
            if !self.nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.to_vec());
                if wants(*b) {
                    acc(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(grads, *a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    acc(grads, *b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if wants(*a) {
                    acc(grads, *a, g.iter().zip(y).map(|(g, y)| g / y).collect());
                }
                if wants(*b) {
                    let c = g.iter().zip(x).zip(y).map(|((g, x), y)| -g * x / (y * y));
                    acc(grads, *b, c.collect());
                }
            }
            Op::Scale(a, c) => acc(grads, *a, g.iter().map(|v| c * v).collect()),
            Op::AddScalar(a) | Op::Reshape(a) | Op::WithValue(a) => acc(grads, *a, g.to_vec()),
            Op::Exp(a) => acc(grads, *a, g.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Softplus(a) => {
                let c = g.iter().zip(val(*a)).map(|(g, x)| g * sigmoid(*x));
                acc(grads, *a, c.collect())
            }
            Op::Sigmoid(a) => {
                let c = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y));
                acc(grads, *a, c.collect())
            }
            Op::Tanh(a) => {
                let c = g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y));
                acc(grads, *a, c.collect())
            }
            Op::LeakyRelu(a, s) => {
                let c = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else { s * g });
                acc(grads, *a, c.collect())
            }
            Op::Sqrt(a) => {
                let c = g.iter().zip(out).map(|(g, y)| g / (2.0 * y));
                acc(grads, *a, c.collect())
            }
            Op::Square(a) => {
                let c = g.iter().zip(val(*a)).map(|(g, x)| 2.0 * x * g);
                acc(grads, *a, c.collect())
            }
            Op::Sum(a) => acc(grads, *a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(grads, *a, vec![g[0] / n as f64; n])
            }
            Op::AddBias(a, b) => {
                acc(grads, *a, g.to_vec());
                if wants(*b) {
                    let f = val(*b).len();
                    let mut gb = vec![0.0; f];
                    for row in g.chunks(f) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if wants(*a) {
                    acc(grads, *a, kernels::matmul_grad_a(g, val(*b), n, k, m));
                }
                if wants(*b) {
                    acc(grads, *b, kernels::matmul_grad_b(val(*a), g, n, k, m));
                }
            }
            Op::GroupMean(a, group) => {
                let rows = self.nodes[*a].value.shape()[0];
                let f = val(*a).len() / rows;
                let mut ga = vec![0.0; rows * f];
                for r in 0..rows {
                    let q = r / group;
                    for j in 0..f {
                        ga[r * f + j] = g[q * f + j] / *group as f64;
                    }
                }
                acc(grads, *a, ga)
            }
            Op::GroupBroadcast(a, group) => {
                let q = self.nodes[*a].value.shape()[0];
                let f = val(*a).len() / q.max(1);
                let mut ga = vec![0.0; q * f];
                for r in 0..q * group {
                    let src = r / group;
                    for j in 0..f {
                        ga[src * f + j] += g[r * f + j];
                    }
                }
                acc(grads, *a, ga)
            }
            Op::RowMean(a) => {
                let n = g.len();
                let f = val(*a).len() / n;
                let mut ga = Vec::with_capacity(n * f);
                for gv in g {
                    ga.extend(std::iter::repeat_n(gv / f as f64, f));
                }
                acc(grads, *a, ga)
            }
            Op::ConcatCols(a, b) => {
                let n = self.nodes[*a].value.shape()[0];
                let (p, q) = (val(*a).len() / n, val(*b).len() / n);
                let mut ga = Vec::with_capacity(n * p);
                let mut gb = Vec::with_capacity(n * q);
                for row in g.chunks(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::SliceCols(a, start, len) => {
                let sa = self.nodes[*a].value.shape();
                let (n, w) = (sa[0], sa[1]);
                let mut ga = vec![0.0; n * w];
                for r in 0..n {
                    ga[r * w + start..r * w + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(grads, *a, ga)
            }
            Op::AppendChannel(x, s) => {
                let sh = self.nodes[*x].value.shape();
                let (b, c, hw) = (sh[0], sh[1], sh[2] * sh[3]);
                let mut gx = Vec::with_capacity(b * c * hw);
                let mut gs = vec![0.0; b];
                for i in 0..b {
                    let blk = &g[i * (c + 1) * hw..(i + 1) * (c + 1) * hw];
                    gx.extend_from_slice(&blk[..c * hw]);
                    gs[i] = blk[c * hw..].iter().sum();
                }
                acc(grads, *x, gx);
                acc(grads, *s, gs);
            }
            Op::Stack(items, axis) => {
                let shape0 = self.nodes[items[0]].value.shape();
                let outer: usize = shape0[..*axis].iter().product();
                let inner: usize = shape0[*axis..].iter().product();
                let k = items.len();
                for (slot, &j) in items.iter().enumerate() {
                    if !wants(j) {
                        continue;
                    }
                    let mut gj = Vec::with_capacity(outer * inner);
                    for o in 0..outer {
                        let off = (o * k + slot) * inner;
                        gj.extend_from_slice(&g[off..off + inner]);
                    }
                    acc(grads, j, gj);
                }
            }
            Op::Transpose2(a) => {
                let (lead, h, w) = planes_hw(self.nodes[*a].value.shape());
                let mut ga = vec![0.0; g.len()];
                for p in 0..lead {
                    for y in 0..h {
                        for x in 0..w {
                            ga[p * h * w + y * w + x] = g[p * h * w + x * h + y];
                        }
                    }
                }
                acc(grads, *a, ga)
            }
            Op::Conv2d { x, w, b, dims } => {
                if wants(*x) {
                    acc(grads, *x, kernels::conv2d_grad_input(g, val(*w), *dims));
                }
                let need_b = b.is_some_and(wants);
                if wants(*w) || need_b {
                    let (gw, gb) = kernels::conv2d_grad_weight(g, val(*x), *dims);
                    acc(grads, *w, gw);
                    if let Some(b) = b {
                        acc(grads, *b, gb);
                    }
                }
            }
            Op::AvgPool2(x) => {
                let (lead, h, w) = planes_hw(self.nodes[*x].value.shape());
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = vec![0.0; lead * h * w];
                for p in 0..lead {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let v = 0.25 * g[(p * ho + y) * wo + xx];
                            let base = p * h * w + 2 * y * w + 2 * xx;
                            gx[base] = v;
                            gx[base + 1] = v;
                            gx[base + w] = v;
                            gx[base + w + 1] = v;
                        }
                    }
                }
                acc(grads, *x, gx)
            }
            Op::Upsample2(x) => {
                let (lead, h, w) = planes_hw(self.nodes[*x].value.shape());
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = vec![0.0; lead * h * w];
                for p in 0..lead {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gx[p * h * w + (y / 2) * w + xx / 2] += g[(p * ho + y) * wo + xx];
                        }
                    }
                }
                acc(grads, *x, gx)
            }
            Op::ChannelAffine(x, sc, sh) => {
                let shape = self.nodes[*x].value.shape();
                let hw = shape[2] * shape[3];
                let (xv, s) = (val(*x), val(*sc));
                if wants(*x) {
                    let mut gx = g.to_vec();
                    for (p, plane) in gx.chunks_mut(hw).enumerate() {
                        plane.iter_mut().for_each(|v| *v *= s[p]);
                    }
                    acc(grads, *x, gx);
                }
                if wants(*sc) {
                    let gs = g
                        .chunks(hw)
                        .zip(xv.chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(grads, *sc, gs);
                }
                if wants(*sh) {
                    acc(grads, *sh, g.chunks(hw).map(|gp| gp.iter().sum()).collect());
                }
            }
            Op::SepFilter(x, kernel) => {
                let (_, h, w) = planes_hw(self.nodes[*x].value.shape());
                let gc = kernels::filter_cols_adjoint(g, h, w, kernel);
                acc(grads, *x, kernels::filter_rows_adjoint(&gc, h, w, kernel))
            }
            Op::Subsample2(x) => {
                let (lead, h, w) = planes_hw(self.nodes[*x].value.shape());
                let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
                let mut gx = vec![0.0; lead * h * w];
                for p in 0..lead {
                    for y in 0..ho {
                        for xx in 0..wo {
                            gx[p * h * w + 2 * y * w + 2 * xx] = g[(p * ho + y) * wo + xx];
                        }
                    }
                }
                acc(grads, *x, gx)
            }
            Op::Luminance(x) => {
                let sh = self.nodes[*x].value.shape();
                let hw = sh[2] * sh[3];
                let mut gx = vec![0.0; sh[0] * 3 * hw];
                for b in 0..sh[0] {
                    for i in 0..hw {
                        for (ch, l) in LUMA.iter().enumerate() {
                            gx[b * 3 * hw + ch * hw + i] = l * g[b * hw + i];
                        }
                    }
                }
                acc(grads, *x, gx)
            }
            Op::ForwardDiff(x, axis) => {
                let (lead, h, w) = planes_hw(self.nodes[*x].value.shape());
                let (ho, wo) = if *axis == 0 { (h - 1, w) } else { (h, w - 1) };
                let mut gx = vec![0.0; lead * h * w];
                for p in 0..lead {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let gv = g[(p * ho + y) * wo + xx];
                            let a = p * h * w + y * w + xx;
                            let b = if *axis == 0 { a + w } else { a + 1 };
                            gx[a] -= gv;
                            gx[b] += gv;
                        }
                    }
                }
                acc(grads, *x, gx)
            }
            Op::TriplaneSample {
                planes,
                set,
                gather,
            } => {
                let sh = self.nodes[*planes].value.shape();
                let (c, r) = if sh.len() == 4 {
                    (sh[1], sh[2])
                } else {
                    (sh[2], sh[3])
                };
                let rr = r * r;
                let total = self.nodes[*planes].value.len();
                let base = set * 3 * c * rr;
                let mut gp = vec![0.0; total];
                let blk = &mut gp[base..base + 3 * c * rr];
                for (n, taps) in gather.taps.iter().enumerate() {
                    let grow = &g[n * c..(n + 1) * c];
                    for t in taps {
                        if t.weight == 0.0 {
                            continue;
                        }
                        let off = t.plane as usize * c * rr + t.texel as usize;
                        for (ch, gv) in grow.iter().enumerate() {
                            blk[off + ch * rr] += t.weight * gv;
                        }
                    }
                }
                acc(grads, *planes, gp)
            }
            Op::RenderWeights {
                sigma,
                deltas,
                per_ray,
            } => {
                let sv = val(*sigma);
                let mut gs = vec![0.0; sv.len()];
                let per_ray = *per_ray;
                par::for_each_chunk_mut(&mut gs, per_ray, |ray, gsr| {
                    let base = ray * per_ray;
                    // suffix[k] = sum_{i > k} g_i w_i
                    let mut suffix = 0.0;
                    let mut trans = vec![0.0; per_ray];
                    let mut acc_tau = 0.0f64;
                    for k in 0..per_ray {
                        trans[k] = (-acc_tau).exp();
                        acc_tau += sv[base + k] * deltas[base + k];
                    }
                    for k in (0..per_ray).rev() {
                        let d = deltas[base + k];
                        let e = (-sv[base + k] * d).exp();
                        gsr[k] = g[base + k] * trans[k] * d * e - d * suffix;
                        suffix += g[base + k] * out[base + k];
                    }
                });
                acc(grads, *sigma, gs)
            }
            Op::Composite {
                w,
                rgb,
                background,
                per_ray,
            } => {
                let (wv, cv) = (val(*w), val(*rgb));
                if wants(*w) {
                    let gw = (0..wv.len())
                        .map(|i| {
                            let r = i / per_ray;
                            (0..3)
                                .map(|ch| g[3 * r + ch] * (cv[3 * i + ch] - background[ch]))
                                .sum()
                        })
                        .collect();
                    acc(grads, *w, gw);
                }
                if wants(*rgb) {
                    let mut gc = vec![0.0; cv.len()];
                    for i in 0..wv.len() {
                        let r = i / per_ray;
                        for ch in 0..3 {
                            gc[3 * i + ch] = g[3 * r + ch] * wv[i];
                        }
                    }
                    acc(grads, *rgb, gc);
                }
            }
            Op::Distortion {
                w,
                mid,
                width,
                per_ray,
            } => {
                let wv = val(*w);
                let rays = wv.len() / per_ray;
                let scale = g[0] / rays.max(1) as f64;
                let mut gw = vec![0.0; wv.len()];
                for r in 0..rays {
                    let rng = r * per_ray..(r + 1) * per_ray;
                    distortion_ray_grad(
                        &wv[rng.clone()],
                        &mid[rng.clone()],
                        &width[rng.clone()],
                        scale,
                        &mut gw[rng],
                    );
                }
                acc(grads, *w, gw)
            }
            Op::AdjacentSqDiff(x, per_ray) => {
                let xv = val(*x);
                let pairs = xv.len() / per_ray * (per_ray - 1);
                let c = 2.0 * g[0] / pairs as f64;
                let mut gx = vec![0.0; xv.len()];
                for (ray, gr) in xv.chunks(*per_ray).zip(gx.chunks_mut(*per_ray)) {
                    for i in 0..per_ray - 1 {
                        let d = c * (ray[i + 1] - ray[i]);
                        gr[i + 1] += d;
                        gr[i] -= d;
                    }
                }
                acc(grads, *x, gx)
            }
        }
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Distortion of one ray with sorted midpoints, via prefix sums.
pub(crate) fn distortion_ray(w: &[f64], mid: &[f64], width: &[f64]) -> f64 {
    let mut cross = 0.0;
    let (mut wsum, mut wssum) = (0.0, 0.0);
    for i in 0..w.len() {
        // sum_{j < i} w_j (s_i - s_j), doubled for the symmetric pair
        cross += 2.0 * w[i] * (mid[i] * wsum - wssum);
        wsum += w[i];
        wssum += w[i] * mid[i];
    }
    let own: f64 = w
        .iter()
        .zip(width)
        .map(|(w, d)| w * w * d)
        .sum::<f64>()
        / 3.0;
    cross + own
}

fn distortion_ray_grad(w: &[f64], mid: &[f64], width: &[f64], scale: f64, out: &mut [f64]) {
    let n = w.len();
    let total_w: f64 = w.iter().sum();
    let total_ws: f64 = w.iter().zip(mid).map(|(a, b)| a * b).sum();
    let (mut below_w, mut below_ws) = (0.0, 0.0);
    for k in 0..n {
        let above_w = total_w - below_w - w[k];
        let above_ws = total_ws - below_ws - w[k] * mid[k];
        let pair = mid[k] * below_w - below_ws + above_ws - mid[k] * above_w;
        out[k] += scale * (2.0 * pair + 2.0 / 3.0 * w[k] * width[k]);
        below_w += w[k];
        below_ws += w[k] * mid[k];
    }
}
