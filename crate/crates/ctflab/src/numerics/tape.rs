//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node in a DAG whose parents always
//! precede it (creation order is a topological order). [`Tape::backward`]
//! walks the nodes once in reverse, accumulating adjoints. Tapes are rebuilt
//! every iteration and confined to one thread.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    /// x^c for a fixed exponent c.
    Pows(f64),
    Adds(f64),
    Muls(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary { kind: UnaryKind, a: usize },
    Binary { kind: BinaryKind, a: usize, b: usize },
    Reduce { kind: ReduceKind, a: usize },
    /// Slice `start..end` of the last dimension.
    SliceLast { a: usize, start: usize, end: usize },
    /// Broadcast-add a rank-1 bias over the last dimension.
    BiasAdd { a: usize, bias: usize },
    Conv2d { input: usize, kernel: usize, stride: usize, pad: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Handle to a tape node. Copyable; tied to the tape's lifetime.
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradient tape: an append-only DAG of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Per-node adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros if `var` does not
    /// influence the root.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.shape_vec().as_slice()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an input leaf. Leaves are where gradients are read out.
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>> {
        value.check_finite("tape::leaf")?;
        Ok(self.push(value, Op::Leaf))
    }

    /// Records a constant. Identical to a leaf on the forward pass; the name
    /// documents that nobody will ask for its gradient.
    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.leaf(value)
    }

    fn value_clone(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Reverse pass from a scalar root. Returns one adjoint slot per node.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[root.id].value.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("root must be scalar, shape is {:?}", nodes[root.id].value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::scalar(1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Unary { kind, a } => {
                    let ga = unary_adjoint(*kind, &nodes[*a].value, &node.value, &g);
                    accumulate(&mut grads, *a, ga, &nodes);
                }
                Op::Binary { kind, a, b } => {
                    let (ga, gb) =
                        binary_adjoint(*kind, &nodes[*a].value, &nodes[*b].value, &node.value, &g);
                    accumulate(&mut grads, *a, ga, &nodes);
                    accumulate(&mut grads, *b, gb, &nodes);
                }
                Op::Reduce { kind, a } => {
                    let src = &nodes[*a].value;
                    let gs = g.item().expect("reduce output is scalar");
                    let fill = match kind {
                        ReduceKind::Sum => gs,
                        ReduceKind::Mean => gs / src.len() as f64,
                    };
                    accumulate(&mut grads, *a, Tensor::full(src.shape(), fill), &nodes);
                }
                Op::SliceLast { a, start, end } => {
                    let src = &nodes[*a].value;
                    let last = *src.shape().last().unwrap();
                    let width = end - start;
                    let mut ga = Tensor::zeros(src.shape());
                    {
                        let gd = g.data();
                        let out = ga.data_mut();
                        let rows = src.len() / last;
                        for r in 0..rows {
                            let dst = &mut out[r * last + start..r * last + end];
                            dst.copy_from_slice(&gd[r * width..(r + 1) * width]);
                        }
                    }
                    accumulate(&mut grads, *a, ga, &nodes);
                }
                Op::BiasAdd { a, bias } => {
                    let c = nodes[*bias].value.len();
                    let mut gb = Tensor::zeros(&[c]);
                    {
                        let gd = g.data();
                        let out = gb.data_mut();
                        for row in gd.chunks_exact(c) {
                            for (o, v) in out.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, g.clone(), &nodes);
                    accumulate(&mut grads, *bias, gb, &nodes);
                }
                Op::Conv2d { input, kernel, stride, pad } => {
                    let (gi, gk) = conv2d_backward(
                        &nodes[*input].value,
                        &nodes[*kernel].value,
                        &g,
                        *stride,
                        *pad,
                    );
                    accumulate(&mut grads, *input, gi, &nodes);
                    accumulate(&mut grads, *kernel, gk, &nodes);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, add: Tensor, nodes: &[Node]) {
    debug_assert_eq!(nodes[id].value.shape(), add.shape());
    match &mut grads[id] {
        Some(existing) => {
            let dst = existing.data_mut();
            for (d, s) in dst.iter_mut().zip(add.data()) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(add),
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_adjoint(kind: UnaryKind, x: &Tensor, out: &Tensor, g: &Tensor) -> Tensor {
    let mut ga = Tensor::zeros(x.shape());
    let d = ga.data_mut();
    let xv = x.data();
    let ov = out.data();
    let gv = g.data();
    match kind {
        UnaryKind::Neg => {
            for i in 0..d.len() {
                d[i] = -gv[i];
            }
        }
        UnaryKind::Relu => {
            for i in 0..d.len() {
                d[i] = if xv[i] > 0.0 { gv[i] } else { 0.0 };
            }
        }
        UnaryKind::Sigmoid => {
            for i in 0..d.len() {
                d[i] = gv[i] * ov[i] * (1.0 - ov[i]);
            }
        }
        UnaryKind::Exp => {
            for i in 0..d.len() {
                d[i] = gv[i] * ov[i];
            }
        }
        UnaryKind::Log => {
            for i in 0..d.len() {
                d[i] = gv[i] / xv[i];
            }
        }
        UnaryKind::Softplus => {
            for i in 0..d.len() {
                d[i] = gv[i] * sigmoid(xv[i]);
            }
        }
        UnaryKind::Pows(c) => {
            for i in 0..d.len() {
                let deriv = if c == 0.0 {
                    0.0
                } else if xv[i] == 0.0 {
                    // x^c has zero slope at 0 for c > 1, unit for c == 1
                    if c > 1.0 { 0.0 } else if c == 1.0 { 1.0 } else { f64::INFINITY }
                } else {
                    c * xv[i].powf(c - 1.0)
                };
                d[i] = gv[i] * deriv;
            }
        }
        UnaryKind::Adds(_) => d.copy_from_slice(gv),
        UnaryKind::Muls(c) => {
            for i in 0..d.len() {
                d[i] = gv[i] * c;
            }
        }
    }
    ga
}

fn binary_adjoint(
    kind: BinaryKind,
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor) {
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    let av = a.data();
    let bv = b.data();
    let ov = out.data();
    let gv = g.data();
    {
        let da = ga.data_mut();
        match kind {
            BinaryKind::Add => da.copy_from_slice(gv),
            BinaryKind::Sub => da.copy_from_slice(gv),
            BinaryKind::Mul => {
                for i in 0..da.len() {
                    da[i] = gv[i] * bv[i];
                }
            }
            BinaryKind::Div => {
                for i in 0..da.len() {
                    da[i] = gv[i] / bv[i];
                }
            }
            BinaryKind::Min => {
                for i in 0..da.len() {
                    da[i] = if av[i] <= bv[i] { gv[i] } else { 0.0 };
                }
            }
            BinaryKind::Max => {
                for i in 0..da.len() {
                    da[i] = if av[i] >= bv[i] { gv[i] } else { 0.0 };
                }
            }
        }
    }
    {
        let db = gb.data_mut();
        match kind {
            BinaryKind::Add => db.copy_from_slice(gv),
            BinaryKind::Sub => {
                for i in 0..db.len() {
                    db[i] = -gv[i];
                }
            }
            BinaryKind::Mul => {
                for i in 0..db.len() {
                    db[i] = gv[i] * av[i];
                }
            }
            BinaryKind::Div => {
                for i in 0..db.len() {
                    db[i] = -gv[i] * ov[i] / bv[i];
                }
            }
            BinaryKind::Min => {
                for i in 0..db.len() {
                    db[i] = if av[i] <= bv[i] { 0.0 } else { gv[i] };
                }
            }
            BinaryKind::Max => {
                for i in 0..db.len() {
                    db[i] = if av[i] >= bv[i] { 0.0 } else { gv[i] };
                }
            }
        }
    }
    (ga, gb)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// The tape this variable lives on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Snapshot of this node's value.
    pub fn value(&self) -> Tensor {
        self.tape.value_clone(self.id)
    }

    /// The node's scalar value; errors if not scalar.
    pub fn item(&self) -> Result<f64> {
        self.tape.with_value(self.id, |v| v.item())
    }

    pub fn shape_vec(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    fn unary(&self, kind: UnaryKind, op_name: &'static str) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |x| -> Result<Tensor> {
            let mut out = Tensor::zeros(x.shape());
            {
                let d = out.data_mut();
                let xv = x.data();
                match kind {
                    UnaryKind::Neg => {
                        for i in 0..d.len() {
                            d[i] = -xv[i];
                        }
                    }
                    UnaryKind::Relu => {
                        for i in 0..d.len() {
                            d[i] = xv[i].max(0.0);
                        }
                    }
                    UnaryKind::Sigmoid => {
                        for i in 0..d.len() {
                            d[i] = sigmoid(xv[i]);
                        }
                    }
                    UnaryKind::Exp => {
                        for i in 0..d.len() {
                            d[i] = xv[i].exp();
                        }
                    }
                    UnaryKind::Log => {
                        for (i, &v) in xv.iter().enumerate() {
                            if v <= 0.0 {
                                return Err(Error::Domain {
                                    op: "log",
                                    detail: format!("input {v} is not strictly positive"),
                                });
                            }
                            d[i] = v.ln();
                        }
                    }
                    UnaryKind::Softplus => {
                        for i in 0..d.len() {
                            d[i] = softplus(xv[i]);
                        }
                    }
                    UnaryKind::Pows(c) => {
                        for i in 0..d.len() {
                            d[i] = xv[i].powf(c);
                        }
                    }
                    UnaryKind::Adds(c) => {
                        for i in 0..d.len() {
                            d[i] = xv[i] + c;
                        }
                    }
                    UnaryKind::Muls(c) => {
                        for i in 0..d.len() {
                            d[i] = xv[i] * c;
                        }
                    }
                }
            }
            out.check_finite(op_name)?;
            Ok(out)
        })?;
        Ok(self.tape.push(out, Op::Unary { kind, a: self.id }))
    }

    fn binary(&self, other: Var<'t>, kind: BinaryKind, op_name: &'static str) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: op_name,
                    detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
                });
            }
            let mut out = Tensor::zeros(a.shape());
            {
                let d = out.data_mut();
                let av = a.data();
                let bv = b.data();
                match kind {
                    BinaryKind::Add => {
                        for i in 0..d.len() {
                            d[i] = av[i] + bv[i];
                        }
                    }
                    BinaryKind::Sub => {
                        for i in 0..d.len() {
                            d[i] = av[i] - bv[i];
                        }
                    }
                    BinaryKind::Mul => {
                        for i in 0..d.len() {
                            d[i] = av[i] * bv[i];
                        }
                    }
                    BinaryKind::Div => {
                        for i in 0..d.len() {
                            d[i] = av[i] / bv[i];
                        }
                    }
                    BinaryKind::Min => {
                        for i in 0..d.len() {
                            d[i] = av[i].min(bv[i]);
                        }
                    }
                    BinaryKind::Max => {
                        for i in 0..d.len() {
                            d[i] = av[i].max(bv[i]);
                        }
                    }
                }
            }
            out.check_finite(op_name)?;
            out
        };
        Ok(self.tape.push(out, Op::Binary { kind, a: self.id, b: other.id }))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Add, "add")
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Sub, "sub")
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Mul, "mul")
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Div, "div")
    }

    pub fn min(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Min, "min")
    }

    pub fn max(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Max, "max")
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Neg, "neg")
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Relu, "relu")
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Sigmoid, "sigmoid")
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Exp, "exp")
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Log, "log")
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Softplus, "softplus")
    }

    /// Elementwise power with a fixed exponent.
    pub fn pow_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::Pows(c), "pow_scalar")
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::Adds(c), "add_scalar")
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::Muls(c), "mul_scalar")
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |x| {
            Tensor::scalar(x.data().iter().sum::<f64>())
        });
        out.check_finite("sum")?;
        Ok(self.tape.push(out, Op::Reduce { kind: ReduceKind::Sum, a: self.id }))
    }

    /// Arithmetic mean of all elements, as a scalar node.
    pub fn mean(&self) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |x| {
            Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        });
        out.check_finite("mean")?;
        Ok(self.tape.push(out, Op::Reduce { kind: ReduceKind::Mean, a: self.id }))
    }

    /// Slice `start..end` of the last dimension.
    pub fn slice_last(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |x| -> Result<Tensor> {
            let last = *x.shape().last().ok_or(Error::ShapeMismatch {
                op: "slice_last",
                detail: "cannot slice a scalar".into(),
            })?;
            if start >= end || end > last {
                return Err(Error::ShapeMismatch {
                    op: "slice_last",
                    detail: format!("range {start}..{end} out of 0..{last}"),
                });
            }
            let width = end - start;
            let rows = x.len() / last;
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = width;
            let mut out = Tensor::zeros(&shape);
            {
                let d = out.data_mut();
                let xv = x.data();
                for r in 0..rows {
                    d[r * width..(r + 1) * width]
                        .copy_from_slice(&xv[r * last + start..r * last + end]);
                }
            }
            Ok(out)
        })?;
        Ok(self.tape.push(out, Op::SliceLast { a: self.id, start, end }))
    }

    /// Adds a rank-1 bias over the last dimension.
    pub fn bias_add(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            let last = *x.shape().last().unwrap_or(&0);
            if b.shape().len() != 1 || b.len() != last {
                return Err(Error::ShapeMismatch {
                    op: "bias_add",
                    detail: format!("bias {:?} vs last dim {last}", b.shape()),
                });
            }
            let mut out = Tensor::zeros(x.shape());
            {
                let d = out.data_mut();
                let xv = x.data();
                let bv = b.data();
                for (drow, xrow) in d.chunks_exact_mut(last).zip(xv.chunks_exact(last)) {
                    for i in 0..last {
                        drow[i] = xrow[i] + bv[i];
                    }
                }
            }
            out.check_finite("bias_add")?;
            out
        };
        Ok(self.tape.push(out, Op::BiasAdd { a: self.id, bias: bias.id }))
    }

    /// 2-D convolution: input HxWxCin, kernel khxkwxCinxCout.
    ///
    /// Output extent is `floor((H + 2*pad - kh) / stride) + 1` per spatial
    /// dimension. Zero padding.
    pub fn conv2d(&self, kernel: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let k = &nodes[kernel.id].value;
            conv2d_forward(x, k, stride, pad)?
        };
        Ok(self.tape.push(
            out,
            Op::Conv2d { input: self.id, kernel: kernel.id, stride, pad },
        ))
    }
}

pub(crate) fn conv2d_forward(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (h, w, cin) = match *x.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input must be HxWxC, got {:?}", x.shape()),
            })
        }
    };
    let (kh, kw, kcin, cout) = match *k.shape() {
        [kh, kw, kcin, cout] => (kh, kw, kcin, cout),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel must be khxkwxCinxCout, got {:?}", k.shape()),
            })
        }
    };
    if kcin != cin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel cin {kcin} vs input cin {cin}"),
        });
    }
    if stride == 0 {
        return Err(Error::Domain { op: "conv2d", detail: "stride must be positive".into() });
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            detail: format!("kernel {kh}x{kw} larger than padded input {}x{}", h + 2 * pad, w + 2 * pad),
        });
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;

    let xv = x.data();
    let kv = k.data();
    let mut out = Tensor::zeros(&[ho, wo, cout]);
    {
        let od = out.data_mut();
        let mut acc = vec![0.0f64; cout];
        for oy in 0..ho {
            for ox in 0..wo {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let in_base = (iy as usize * w + ix as usize) * cin;
                        let k_base = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xval = xv[in_base + ci];
                            let krow = &kv[k_base + ci * cout..k_base + (ci + 1) * cout];
                            for (a, kw_) in acc.iter_mut().zip(krow) {
                                *a += xval * kw_;
                            }
                        }
                    }
                }
                od[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout].copy_from_slice(&acc);
            }
        }
    }
    out.check_finite("conv2d")?;
    Ok(out)
}

fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor) {
    let [h, w, cin] = *x.shape() else { unreachable!() };
    let [kh, kw, _, cout] = *k.shape() else { unreachable!() };
    let [ho, wo, _] = *gout.shape() else { unreachable!() };

    let xv = x.data();
    let kv = k.data();
    let gv = gout.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    {
        let gxd = gx.data_mut();
        let gkd = gk.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                let grow = &gv[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let in_base = (iy as usize * w + ix as usize) * cin;
                        let k_base = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let krow = &kv[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let gkrow = &mut gkd[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let xval = xv[in_base + ci];
                            let mut dx = 0.0;
                            for co in 0..cout {
                                dx += grow[co] * krow[co];
                                gkrow[co] += xval * grow[co];
                            }
                            gxd[in_base + ci] += dx;
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let y = x.mul(x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let p = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        let y = x.mul(x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn relu_matches_definition() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        let y = x.relu().unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let y = x.sigmoid().unwrap();
        assert_eq!(y.item().unwrap(), 0.5);
    }

    #[test]
    fn sum_matches_naive_loop() {
        let tape = Tape::new();
        let vals: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut naive = 0.0;
        for &v in &vals {
            naive += v;
        }
        let x = tape.leaf(Tensor::new(&[3, 3], vals).unwrap()).unwrap();
        let s = x.sum().unwrap();
        assert!((s.item().unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn log_domain_violation() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[2], vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(x.log().is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[3])).unwrap();
        assert!(a.add(b).is_err());
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let tape = Tape::new();
        let x = tape
            .leaf(Tensor::from_fn(&[3, 3, 1], |i| i as f64))
            .unwrap();
        let k = tape.leaf(Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        let y = x.conv2d(k, 1, 0).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn conv_all_ones_2x2() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 2, 1], 1.0)).unwrap();
        let k = tape.leaf(Tensor::full(&[2, 2, 1, 1], 1.0)).unwrap();
        let y = x.conv2d(k, 1, 0).unwrap();
        assert_eq!(y.value().shape(), &[1, 1, 1]);
        assert_eq!(y.value().data(), &[4.0]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2, 1])).unwrap();
        let k = tape.leaf(Tensor::zeros(&[5, 5, 1, 1])).unwrap();
        assert!(x.conv2d(k, 1, 0).is_err());
    }

    /// Written straight from the definition, with no shared code: for each
    /// output position, sum input*kernel over the receptive field, reading
    /// out-of-bounds taps as zero.
    fn conv_by_definition(
        x: &Tensor,
        k: &Tensor,
        stride: usize,
        pad: usize,
    ) -> Tensor {
        let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Tensor::from_fn(&[oh, ow, cout], |flat| {
            let co = flat % cout;
            let ox = (flat / cout) % ow;
            let oy = flat / (cout * ow);
            let mut acc = 0.0;
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                        continue;
                    }
                    for ci in 0..cin {
                        acc += x.at(&[iy as usize, ix as usize, ci])
                            * k.at(&[ky, kx, ci, co]);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_plain_definition_on_random_configs() {
        use crate::rng::{stream, StreamId};
        use rand::Rng;
        let mut rng = stream(0, StreamId::DatasetGen, &[911]);
        for trial in 0..100 {
            let kh = rng.gen_range(1..=3usize);
            let kw = rng.gen_range(1..=3usize);
            let pad = rng.gen_range(0..=1usize);
            let stride = rng.gen_range(1..=2usize);
            // keep the padded extent at least the kernel size
            let h = rng.gen_range(kh.saturating_sub(2 * pad).max(1)..=6);
            let w = rng.gen_range(kw.saturating_sub(2 * pad).max(1)..=6);
            let cin = rng.gen_range(1..=3usize);
            let cout = rng.gen_range(1..=3usize);

            let xs = Tensor::from_fn(&[h, w, cin], |_| rng.gen_range(-1.0..1.0));
            let ks = Tensor::from_fn(&[kh, kw, cin, cout], |_| rng.gen_range(-1.0..1.0));
            let want = conv_by_definition(&xs, &ks, stride, pad);

            let tape = Tape::new();
            let x = tape.leaf(xs).unwrap();
            let k = tape.leaf(ks).unwrap();
            let y = x.conv2d(k, stride, pad).unwrap();
            let got = y.value();
            assert_eq!(
                got.shape(),
                want.shape(),
                "trial {trial}: h={h} w={w} kh={kh} kw={kw} s={stride} p={pad}"
            );
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!(
                    (a - b).abs() <= 1e-9,
                    "trial {trial}: {a} vs {b} (h={h} w={w} kh={kh} kw={kw} s={stride} p={pad})"
                );
            }
        }
    }
}
