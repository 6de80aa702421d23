//! Tape-based reverse-mode autodiff.
//!
//! Every vector-Jacobian product is itself written with differentiable ops,
//! so the gradient returned by [`Graph::grad`] with `create_graph = true` can
//! be differentiated again (needed for input-gradient penalties).

use std::cell::{Cell, RefCell};
use std::ops;
use std::rc::Rc;

use crate::kernels;
use crate::tensor::{self, numel, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Pow(usize, f64),
    Sqrt(usize),
    RecipOrZero(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    Reshape(usize),
    BroadcastTo(usize),
    SumTo(usize),
    Transpose(usize),
    MatMul(usize, usize),
    Conv1d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose1d {
        x: usize,
        w: usize,
        stride: usize,
        pad: usize,
    },
    ConvWeightGrad {
        x: usize,
        gy: usize,
        stride: usize,
        pad: usize,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Owns every intermediate value of one computation.
///
/// A graph is cheap to create; build one per optimization step and drop it
/// afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    no_grad: Cell<usize>,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let requires_grad = requires_grad && self.no_grad.get() == 0;
        self.push(Rc::new(value), Op::Leaf, requires_grad)
    }

    /// Runs `f` without recording gradient history.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        self.no_grad.set(self.no_grad.get() + 1);
        let out = f();
        self.no_grad.set(self.no_grad.get() - 1);
        out
    }

    fn push(&self, value: Rc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let requires_grad = self.no_grad.get() == 0 && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.push(Rc::new(value), op, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are themselves tracked and
    /// may be differentiated again; otherwise they are plain constants.
    /// Inputs that `output` does not depend on get a zero gradient.
    pub fn grad<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>], create_graph: bool) -> Vec<Var<'g>> {
        assert!(std::ptr::eq(output.graph, self), "output belongs to another graph");
        assert_eq!(
            output.value().numel(),
            1,
            "grad() needs a scalar output, got shape {:?}",
            output.shape()
        );
        let end = output.id + 1;

        // Nodes that lie on some path from `wrt` to `output`.
        let mut reaches = vec![false; end];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id < end {
                    reaches[w.id] = true;
                }
            }
            for id in 0..end {
                if reaches[id] || !nodes[id].requires_grad {
                    continue;
                }
                reaches[id] = op_inputs(&nodes[id].op).iter().any(|&i| reaches[i]);
            }
        }

        if !create_graph {
            self.no_grad.set(self.no_grad.get() + 1);
        }
        let mut grads: Vec<Option<Var<'g>>> = vec![None; end];
        if reaches[output.id] {
            let seed = Tensor::ones(output.shape().as_slice());
            grads[output.id] = Some(self.constant(seed));
        }
        for id in (0..end).rev() {
            let Some(g) = grads[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let contributions = self.vjp(&op, self.var(id), g, &reaches);
            for (input, contribution) in contributions {
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }
        let out = wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&w.shape())),
            })
            .collect();
        if !create_graph {
            self.no_grad.set(self.no_grad.get() - 1);
        }
        out
    }

    /// Vector-Jacobian products of one node for the inputs flagged in
    /// `need`, expressed with graph ops.
    fn vjp<'g>(&'g self, op: &Op, out: Var<'g>, g: Var<'g>, need: &[bool]) -> Vec<(usize, Var<'g>)> {
        let v = |id: usize| self.var(id);
        let mut res = Vec::with_capacity(2);
        let mut put = |id: usize, f: &dyn Fn() -> Var<'g>| {
            if need[id] {
                res.push((id, f()));
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                put(a, &|| g);
                put(b, &|| g);
            }
            Op::Sub(a, b) => {
                put(a, &|| g);
                put(b, &|| -g);
            }
            Op::Mul(a, b) => {
                put(a, &|| g * v(b));
                put(b, &|| g * v(a));
            }
            Op::Div(a, b) => {
                put(a, &|| g / v(b));
                put(b, &|| -(g * out) / v(b));
            }
            Op::Neg(a) => put(a, &|| -g),
            Op::Scale(a, c) => put(a, &|| g.scale(c)),
            Op::AddScalar(a) => put(a, &|| g),
            Op::Pow(a, p) => put(a, &|| g * v(a).powf(p - 1.0).scale(p)),
            Op::Sqrt(a) => put(a, &|| (g * out.recip_or_zero()).scale(0.5)),
            Op::RecipOrZero(a) => put(a, &|| -(g * out * out)),
            Op::Sigmoid(a) => put(a, &|| g * (out * (-out).add_scalar(1.0))),
            Op::LeakyRelu(a, slope) => put(a, &|| {
                let mask = v(a).value().map(|x| if x > 0.0 { 1.0 } else { slope });
                g * self.constant(mask)
            }),
            Op::Sum(a) => put(a, &|| {
                let shape = v(a).shape();
                let ones = vec![1; shape.len()];
                g.reshape(&ones).broadcast_to(&shape)
            }),
            Op::Reshape(a) => put(a, &|| g.reshape(&v(a).shape())),
            Op::BroadcastTo(a) => put(a, &|| g.sum_to(&v(a).shape())),
            Op::SumTo(a) => put(a, &|| g.broadcast_to(&v(a).shape())),
            Op::Transpose(a) => put(a, &|| g.t()),
            Op::MatMul(a, b) => {
                put(a, &|| g.matmul(v(b).t()));
                put(b, &|| v(a).t().matmul(g));
            }
            Op::Conv1d { x, w, stride, pad } => {
                put(x, &|| g.conv_transpose1d(v(w), stride, pad, v(x).shape()[2]));
                put(w, &|| v(x).conv1d_weight_grad(g, v(w).shape()[2], stride, pad));
            }
            Op::ConvTranspose1d { x, w, stride, pad } => {
                put(x, &|| g.conv1d(v(w), stride, pad));
                put(w, &|| g.conv1d_weight_grad(v(x), v(w).shape()[2], stride, pad));
            }
            Op::ConvWeightGrad { x, gy, stride, pad } => {
                put(x, &|| v(gy).conv_transpose1d(g, stride, pad, v(x).shape()[2]));
                put(gy, &|| v(x).conv1d(g, stride, pad));
            }
        }
        res
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
            vec![a, b]
        }
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Pow(a, _)
        | Op::Sqrt(a)
        | Op::RecipOrZero(a)
        | Op::Sigmoid(a)
        | Op::LeakyRelu(a, _)
        | Op::Sum(a)
        | Op::Reshape(a)
        | Op::BroadcastTo(a)
        | Op::SumTo(a)
        | Op::Transpose(a) => vec![a],
        Op::Conv1d { x, w, .. } | Op::ConvTranspose1d { x, w, .. } => vec![x, w],
        Op::ConvWeightGrad { x, gy, .. } => vec![x, gy],
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the gradient history.
    pub fn detach(&self) -> Var<'g> {
        self.graph.push(self.value(), Op::Leaf, false)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.record(value, op, &[self.id])
    }

    fn binary(&self, other: Var<'g>, value: Tensor, op: Op) -> Var<'g> {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        self.graph.record(value, op, &[self.id, other.id])
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn powf(&self, p: f64) -> Var<'g> {
        let v = self.value().map(|x| x.powf(p));
        self.unary(v, Op::Pow(self.id, p))
    }

    pub fn square(&self) -> Var<'g> {
        *self * *self
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn sqrt(&self) -> Var<'g> {
        let v = self.value().map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    /// `1/x`, with `0` mapped to `0`.
    pub fn recip_or_zero(&self) -> Var<'g> {
        let v = self.value().map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.unary(v, Op::RecipOrZero(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g> {
        let v = self.value().map(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(v, Op::Sigmoid(self.id))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn relu(&self) -> Var<'g> {
        self.leaky_relu(0.0)
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum(&self) -> Var<'g> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'g> {
        let v = (*self.value()).clone().reshape(shape);
        self.unary(v, Op::Reshape(self.id))
    }

    /// Broadcast along size-1 axes; ranks must match.
    pub fn broadcast_to(&self, shape: &[usize]) -> Var<'g> {
        if self.value().shape() == shape {
            return *self;
        }
        let v = tensor::broadcast_to(&self.value(), shape);
        self.unary(v, Op::BroadcastTo(self.id))
    }

    /// Sum down to `shape` (the reverse of [`Var::broadcast_to`]).
    pub fn sum_to(&self, shape: &[usize]) -> Var<'g> {
        if self.value().shape() == shape {
            return *self;
        }
        let v = tensor::sum_to(&self.value(), shape);
        self.unary(v, Op::SumTo(self.id))
    }

    /// Mean down to `shape`.
    pub fn mean_to(&self, shape: &[usize]) -> Var<'g> {
        let ratio = self.value().numel() as f64 / numel(shape) as f64;
        self.sum_to(shape).scale(1.0 / ratio)
    }

    /// Matrix transpose.
    pub fn t(&self) -> Var<'g> {
        let v = tensor::transpose2(&self.value());
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn matmul(&self, other: Var<'g>) -> Var<'g> {
        let v = kernels::matmul(&self.value(), &other.value());
        self.binary(other, v, Op::MatMul(self.id, other.id))
    }

    /// `self: [B, Ci, L]`, `w: [Co, Ci, K]`.
    pub fn conv1d(&self, w: Var<'g>, stride: usize, pad: usize) -> Var<'g> {
        let v = kernels::conv1d(&self.value(), &w.value(), stride, pad);
        self.binary(
            w,
            v,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                stride,
                pad,
            },
        )
    }

    /// `self: [B, Ci, L]`, `w: [Ci, Co, K]`; `out_len` selects the output
    /// padding and must lie in `[base, base + stride)`.
    pub fn conv_transpose1d(&self, w: Var<'g>, stride: usize, pad: usize, out_len: usize) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let base = kernels::conv_transpose1d_base_len(x.shape()[2], wv.shape()[2], stride, pad);
        assert!(
            out_len >= base && out_len < base + stride,
            "transposed conv output length {out_len} not reachable from input length {}",
            x.shape()[2]
        );
        let v = kernels::conv_transpose1d(&x, &wv, stride, pad, out_len);
        self.binary(
            w,
            v,
            Op::ConvTranspose1d {
                x: self.id,
                w: w.id,
                stride,
                pad,
            },
        )
    }

    /// Weight gradient of a convolution with input `self` and output
    /// gradient `gy`.
    pub fn conv1d_weight_grad(&self, gy: Var<'g>, kernel: usize, stride: usize, pad: usize) -> Var<'g> {
        let v = kernels::conv1d_weight_grad(&self.value(), &gy.value(), kernel, stride, pad);
        self.binary(
            gy,
            v,
            Op::ConvWeightGrad {
                x: self.id,
                gy: gy.id,
                stride,
                pad,
            },
        )
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'g> ops::$trait for Var<'g> {
            type Output = Var<'g>;
            fn $method(self, rhs: Var<'g>) -> Var<'g> {
                let v = self.value().zip_map(&rhs.value(), $f);
                self.binary(rhs, v, Op::$variant(self.id, rhs.id))
            }
        }
    };
}

binary_op!(Add, add, Add, |a, b| a + b);
binary_op!(Sub, sub, Sub, |a, b| a - b);
binary_op!(Mul, mul, Mul, |a, b| a * b);
binary_op!(Div, div, Div, |a, b| a / b);

impl<'g> ops::Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        let v = self.value().map(|x| -x);
        self.unary(v, Op::Neg(self.id))
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}
