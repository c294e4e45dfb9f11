//! Reverse-mode automatic differentiation over matrix-valued primitives.
//!
//! A [`GradientTape`] is a Wengert list: building an expression records one
//! node per primitive application together with its forward value. The
//! backward pass walks the record in reverse and accumulates one gradient
//! per parameter slot. Replaying the record reproduces forward values
//! bit-identically because construction and replay share the same
//! evaluation code path.

use std::rc::Rc;

use crate::numerics::{Matrix, NumericsError};
use crate::scalar::Scalar;

/// Handle to a node on some tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Elementwise nonlinearities known to the tape.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Elu { alpha: f64 },
    LeakyRelu { alpha: f64 },
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Elu { alpha } => {
                if x > T::zero() {
                    x
                } else {
                    T::from_f64(alpha) * (x.exp() - T::one())
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > T::zero() {
                    x
                } else {
                    T::from_f64(alpha) * x
                }
            }
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (T::one() - s)
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Elu { alpha } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64(alpha) * x.exp()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64(alpha)
                }
            }
        }
    }

    pub fn second_derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                T::from_f64(-2.0) * t * (T::one() - t * t)
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (T::one() - s) * (T::one() - T::from_f64(2.0) * s)
            }
            Activation::Relu | Activation::LeakyRelu { .. } => T::zero(),
            Activation::Elu { alpha } => {
                if x > T::zero() {
                    T::zero()
                } else {
                    T::from_f64(alpha) * x.exp()
                }
            }
        }
    }
}

/// Geometry of a valid (no padding, stride 1) 2D convolution over inputs
/// flattened as `(batch, in_ch * in_h * in_w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.kw
    }
}

/// Geometry of 2D average pooling with a square window; trailing rows and
/// columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolDims {
    pub batch: usize,
    pub ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub pool: usize,
}

impl PoolDims {
    pub fn out_h(&self) -> usize {
        self.in_h / self.pool
    }

    pub fn out_w(&self) -> usize {
        self.in_w / self.pool
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param { slot: usize },
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRow { m: usize, row: usize },
    Scale { a: usize, alpha: f64 },
    Mul { a: usize, b: usize },
    ConcatCols { a: usize, b: usize },
    ConcatRows { parts: Vec<usize> },
    Reshape { a: usize },
    GatherRows { a: usize, indices: Rc<Vec<usize>> },
    SegmentSum { a: usize, segments: Rc<Vec<usize>>, out_rows: usize },
    Act { a: usize, kind: Activation },
    ActDeriv { a: usize, kind: Activation },
    MseLoss { a: usize, b: usize, normalizer: f64 },
    SoftmaxCrossEntropy { logits: usize, labels: Rc<Vec<usize>> },
    Conv2d { input: usize, kernel: usize, bias: usize, dims: ConvDims },
    AvgPool2d { input: usize, dims: PoolDims },
    SpectralAdvance { y: usize, params: usize, t: u32 },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Matrix<T>,
}

/// Per-slot gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_slot: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a slot; `None` when no param node bound the slot.
    pub fn slot(&self, slot: usize) -> Option<&Matrix<T>> {
        self.by_slot.get(slot).and_then(Option::as_ref)
    }

    pub fn n_slots(&self) -> usize {
        self.by_slot.len()
    }

    /// Accumulate `other` into `self` (used when gradients of chunked
    /// batches are reduced in a fixed order).
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if other.by_slot.len() > self.by_slot.len() {
            self.by_slot.resize(other.by_slot.len(), None);
        }
        for (mine, theirs) in self.by_slot.iter_mut().zip(&other.by_slot) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => {
                    for (x, y) in m.data_mut().iter_mut().zip(t.data()) {
                        *x += *y;
                    }
                }
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }
}

/// Ordered record of primitive applications with reverse-mode gradients.
pub struct GradientTape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for GradientTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradientTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> Result<T, NumericsError> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(NumericsError::NonScalar {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.data()[0])
    }

    fn push(&mut self, op: Op, value: Matrix<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Bind a parameter slot; its gradient is accumulated during backward.
    pub fn param(&mut self, slot: usize, value: Matrix<T>) -> NodeId {
        self.push(Op::Param { slot }, value)
    }

    fn shapes(&self, a: NodeId) -> (usize, usize) {
        self.nodes[a.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = eval_matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::MatMul { a: a.0, b: b.0 }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.nodes[a.0].value.add(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, value))
    }

    /// Broadcast-add a `1 x c` row vector to every row of an `r x c` matrix.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId, NumericsError> {
        let value = eval_add_row(&self.nodes[m.0].value, &self.nodes[row.0].value)?;
        Ok(self.push(Op::AddRow { m: m.0, row: row.0 }, value))
    }

    pub fn scale(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let value = self.nodes[a.0].value.scale(T::from_f64(alpha));
        self.push(Op::Scale { a: a.0, alpha }, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.nodes[a.0].value.hadamard(&self.nodes[b.0].value)?;
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, value))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = eval_concat_cols(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::ConcatCols { a: a.0, b: b.0 }, value))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = Matrix::vstack(&mats)?;
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            value,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, NumericsError> {
        let value = self.nodes[a.0].value.reshaped(rows, cols)?;
        Ok(self.push(Op::Reshape { a: a.0 }, value))
    }

    pub fn gather_rows(
        &mut self,
        a: NodeId,
        indices: Rc<Vec<usize>>,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_gather_rows(&self.nodes[a.0].value, &indices)?;
        Ok(self.push(Op::GatherRows { a: a.0, indices }, value))
    }

    /// Sum rows of `a` into `out_rows` buckets given by `segments`
    /// (one bucket id per input row). Empty buckets stay zero.
    pub fn segment_sum(
        &mut self,
        a: NodeId,
        segments: Rc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_segment_sum(&self.nodes[a.0].value, &segments, out_rows)?;
        Ok(self.push(
            Op::SegmentSum {
                a: a.0,
                segments,
                out_rows,
            },
            value,
        ))
    }

    pub fn activation(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| kind.apply(x));
        self.push(Op::Act { a: a.0, kind }, value)
    }

    /// Elementwise activation derivative; used to express forward-mode
    /// tangents (e.g. the DE-solver residual) as tape operations.
    pub fn activation_deriv(&mut self, a: NodeId, kind: Activation) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| kind.derivative(x));
        self.push(Op::ActDeriv { a: a.0, kind }, value)
    }

    /// Mean squared error between two same-shape nodes (scalar output).
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let count = self.nodes[a.0].value.len() as f64;
        self.mse_with_normalizer(a, b, count)
    }

    /// Sum of squared differences divided by an explicit normalizer. Lets
    /// chunked batches contribute to a global mean with exact gradients.
    pub fn mse_with_normalizer(
        &mut self,
        a: NodeId,
        b: NodeId,
        normalizer: f64,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_mse(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            T::from_f64(normalizer),
        )?;
        Ok(self.push(
            Op::MseLoss {
                a: a.0,
                b: b.0,
                normalizer,
            },
            value,
        ))
    }

    /// Mean softmax cross-entropy over rows of `logits` with integer class
    /// labels (scalar output).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: Rc<Vec<usize>>,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_softmax_ce(&self.nodes[logits.0].value, &labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels,
            },
            value,
        ))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        dims: ConvDims,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_conv2d(
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
            dims,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                dims,
            },
            value,
        ))
    }

    pub fn avg_pool2d(&mut self, input: NodeId, dims: PoolDims) -> Result<NodeId, NumericsError> {
        let value = eval_avg_pool2d(&self.nodes[input.0].value, dims)?;
        Ok(self.push(
            Op::AvgPool2d {
                input: input.0,
                dims,
            },
            value,
        ))
    }

    /// Advance latent rows `y` (shape `B x h`) by `K^t` where `K` is the
    /// complex diagonal encoded by `params` (shape `h/2 x 2`, columns are
    /// the real and imaginary parts of each eigenvalue).
    pub fn spectral_advance(
        &mut self,
        y: NodeId,
        params: NodeId,
        t: u32,
    ) -> Result<NodeId, NumericsError> {
        let value = eval_spectral_advance(&self.nodes[y.0].value, &self.nodes[params.0].value, t)?;
        Ok(self.push(
            Op::SpectralAdvance {
                y: y.0,
                params: params.0,
                t,
            },
            value,
        ))
    }

    /// Recompute every node's forward value from the recorded operations.
    pub fn replay(&self) -> Result<Vec<Matrix<T>>, NumericsError> {
        let mut values: Vec<Matrix<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Constant | Op::Param { .. } => node.value.clone(),
                Op::MatMul { a, b } => eval_matmul(&values[*a], &values[*b])?,
                Op::Add { a, b } => values[*a].add(&values[*b])?,
                Op::AddRow { m, row } => eval_add_row(&values[*m], &values[*row])?,
                Op::Scale { a, alpha } => values[*a].scale(T::from_f64(*alpha)),
                Op::Mul { a, b } => values[*a].hadamard(&values[*b])?,
                Op::ConcatCols { a, b } => eval_concat_cols(&values[*a], &values[*b])?,
                Op::ConcatRows { parts } => {
                    let mats: Vec<&Matrix<T>> = parts.iter().map(|p| &values[*p]).collect();
                    Matrix::vstack(&mats)?
                }
                Op::Reshape { a } => {
                    values[*a].reshaped(node.value.rows(), node.value.cols())?
                }
                Op::GatherRows { a, indices } => eval_gather_rows(&values[*a], indices)?,
                Op::SegmentSum {
                    a,
                    segments,
                    out_rows,
                } => eval_segment_sum(&values[*a], segments, *out_rows)?,
                Op::Act { a, kind } => values[*a].map(|x| kind.apply(x)),
                Op::ActDeriv { a, kind } => values[*a].map(|x| kind.derivative(x)),
                Op::MseLoss { a, b, normalizer } => {
                    eval_mse(&values[*a], &values[*b], T::from_f64(*normalizer))?
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    eval_softmax_ce(&values[*logits], labels)?
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    dims,
                } => eval_conv2d(&values[*input], &values[*kernel], &values[*bias], *dims)?,
                Op::AvgPool2d { input, dims } => eval_avg_pool2d(&values[*input], *dims)?,
                Op::SpectralAdvance { y, params, t } => {
                    eval_spectral_advance(&values[*y], &values[*params], *t)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode gradients of a scalar `loss` node with respect to every
    /// bound parameter slot.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, NumericsError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.shape() != (1, 1) {
            return Err(NumericsError::NonScalar {
                rows: loss_value.rows(),
                cols: loss_value.cols(),
            });
        }

        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![T::one()]).unwrap());

        let mut n_slots = 0usize;
        for node in &self.nodes {
            if let Op::Param { slot } = node.op {
                n_slots = n_slots.max(slot + 1);
            }
        }
        let mut by_slot: Vec<Option<Matrix<T>>> = vec![None; n_slots];

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param { slot } => {
                    accumulate_param(&mut by_slot[*slot], &grad);
                }
                Op::MatMul { a, b } => {
                    let da = grad.matmul_nt(&self.nodes[*b].value)?;
                    let db = self.nodes[*a].value.matmul_tn(&grad)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::AddRow { m, row } => {
                    let (r, c) = grad.shape();
                    let mut row_grad = Matrix::zeros(1, c);
                    for i in 0..r {
                        for j in 0..c {
                            row_grad[(0, j)] += grad[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *m, grad);
                    accumulate(&mut grads, *row, row_grad);
                }
                Op::Scale { a, alpha } => {
                    accumulate(&mut grads, *a, grad.scale(T::from_f64(*alpha)));
                }
                Op::Mul { a, b } => {
                    let da = grad.hadamard(&self.nodes[*b].value)?;
                    let db = grad.hadamard(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.nodes[*a].value.cols();
                    let (r, c) = grad.shape();
                    let mut ga = Matrix::zeros(r, ca);
                    let mut gb = Matrix::zeros(r, c - ca);
                    for i in 0..r {
                        ga.row_mut(i).copy_from_slice(&grad.row(i)[..ca]);
                        gb.row_mut(i).copy_from_slice(&grad.row(i)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0usize;
                    for p in parts {
                        let rows = self.nodes[*p].value.rows();
                        let cols = self.nodes[*p].value.cols();
                        let mut gp = Matrix::zeros(rows, cols);
                        for i in 0..rows {
                            gp.row_mut(i).copy_from_slice(grad.row(offset + i));
                        }
                        offset += rows;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Reshape { a } => {
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, grad.reshaped(r, c)?);
                }
                Op::GatherRows { a, indices } => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (out_i, &src) in indices.iter().enumerate() {
                        for j in 0..c {
                            ga[(src, j)] += grad[(out_i, j)];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SegmentSum { a, segments, .. } => {
                    let (r, c) = self.nodes[*a].value.shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (i, &s) in segments.iter().enumerate() {
                        for j in 0..c {
                            ga[(i, j)] = grad[(s, j)];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Act { a, kind } => {
                    let input = &self.nodes[*a].value;
                    let ga = grad.hadamard(&input.map(|x| kind.derivative(x)))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::ActDeriv { a, kind } => {
                    let input = &self.nodes[*a].value;
                    let ga = grad.hadamard(&input.map(|x| kind.second_derivative(x)))?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::MseLoss { a, b, normalizer } => {
                    let g = grad[(0, 0)];
                    let scale = T::from_f64(2.0 / *normalizer) * g;
                    let diff = self.nodes[*a].value.sub(&self.nodes[*b].value)?;
                    accumulate(&mut grads, *a, diff.scale(scale));
                    accumulate(&mut grads, *b, diff.scale(-scale));
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let g = grad[(0, 0)];
                    let ga = softmax_ce_backward(&self.nodes[*logits].value, labels, g);
                    accumulate(&mut grads, *logits, ga);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    dims,
                } => {
                    let (gi, gk, gb) = conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*kernel].value,
                        *dims,
                        &grad,
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *kernel, gk);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::AvgPool2d { input, dims } => {
                    let gi = avg_pool2d_backward(*dims, &grad);
                    accumulate(&mut grads, *input, gi);
                }
                Op::SpectralAdvance { y, params, t } => {
                    let (gy, gp) = spectral_advance_backward(
                        &self.nodes[*y].value,
                        &self.nodes[*params].value,
                        *t,
                        &grad,
                    );
                    accumulate(&mut grads, *y, gy);
                    accumulate(&mut grads, *params, gp);
                }
            }
        }

        Ok(Gradients { by_slot })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], idx: usize, g: Matrix<T>) {
    match &mut grads[idx] {
        Some(existing) => {
            for (x, y) in existing.data_mut().iter_mut().zip(g.data()) {
                *x += *y;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_param<T: Scalar>(target: &mut Option<Matrix<T>>, g: &Matrix<T>) {
    match target {
        Some(existing) => {
            for (x, y) in existing.data_mut().iter_mut().zip(g.data()) {
                *x += *y;
            }
        }
        None => *target = Some(g.clone()),
    }
}

// ---- forward evaluation shared by construction and replay ----

fn eval_matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    a.matmul(b)
}

fn eval_add_row<T: Scalar>(m: &Matrix<T>, row: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    if row.rows() != 1 || row.cols() != m.cols() {
        return Err(NumericsError::ShapeMismatch {
            op: "add_row",
            detail: format!("matrix {:?} + row {:?}", m.shape(), row.shape()),
        });
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v += row[(0, j)];
        }
    }
    Ok(out)
}

fn eval_concat_cols<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, NumericsError> {
    if a.rows() != b.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "concat_cols",
            detail: format!("{:?} | {:?}", a.shape(), b.shape()),
        });
    }
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for i in 0..a.rows() {
        out.row_mut(i)[..a.cols()].copy_from_slice(a.row(i));
        out.row_mut(i)[a.cols()..].copy_from_slice(b.row(i));
    }
    Ok(out)
}

fn eval_gather_rows<T: Scalar>(
    a: &Matrix<T>,
    indices: &[usize],
) -> Result<Matrix<T>, NumericsError> {
    let mut out = Matrix::zeros(indices.len(), a.cols());
    for (i, &src) in indices.iter().enumerate() {
        if src >= a.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("index {src} out of range for {} rows", a.rows()),
            });
        }
        out.row_mut(i).copy_from_slice(a.row(src));
    }
    Ok(out)
}

fn eval_segment_sum<T: Scalar>(
    a: &Matrix<T>,
    segments: &[usize],
    out_rows: usize,
) -> Result<Matrix<T>, NumericsError> {
    if segments.len() != a.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "segment_sum",
            detail: format!("{} segment ids for {} rows", segments.len(), a.rows()),
        });
    }
    let mut out = Matrix::zeros(out_rows, a.cols());
    for (i, &s) in segments.iter().enumerate() {
        if s >= out_rows {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_sum",
                detail: format!("segment id {s} out of range for {out_rows} buckets"),
            });
        }
        for (j, &v) in a.row(i).iter().enumerate() {
            out[(s, j)] += v;
        }
    }
    Ok(out)
}

fn eval_mse<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    normalizer: T,
) -> Result<Matrix<T>, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "mse",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut acc = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Matrix::from_vec(1, 1, vec![acc / normalizer])
}

fn eval_softmax_ce<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
) -> Result<Matrix<T>, NumericsError> {
    if labels.len() != logits.rows() {
        return Err(NumericsError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} labels for {} rows", labels.len(), logits.rows()),
        });
    }
    let mut acc = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_cross_entropy",
                detail: format!("label {label} out of range for {} classes", logits.cols()),
            });
        }
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let log_sum: T = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        acc += log_sum - row[label];
    }
    Matrix::from_vec(1, 1, vec![acc / T::from_f64(labels.len() as f64)])
}

fn softmax_ce_backward<T: Scalar>(logits: &Matrix<T>, labels: &[usize], g: T) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    let inv_batch = T::one() / T::from_f64(labels.len() as f64);
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
        for j in 0..logits.cols() {
            let p = (logits[(i, j)] - max).exp() / sum;
            let indicator = if j == label { T::one() } else { T::zero() };
            out[(i, j)] = g * inv_batch * (p - indicator);
        }
    }
    out
}

fn eval_conv2d<T: Scalar>(
    input: &Matrix<T>,
    kernel: &Matrix<T>,
    bias: &Matrix<T>,
    d: ConvDims,
) -> Result<Matrix<T>, NumericsError> {
    let in_feat = d.in_ch * d.in_h * d.in_w;
    let k_feat = d.in_ch * d.kh * d.kw;
    if input.shape() != (d.batch, in_feat)
        || kernel.shape() != (d.out_ch, k_feat)
        || bias.shape() != (1, d.out_ch)
    {
        return Err(NumericsError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "input {:?}, kernel {:?}, bias {:?} vs dims {d:?}",
                input.shape(),
                kernel.shape(),
                bias.shape()
            ),
        });
    }
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = Matrix::zeros(d.batch, d.out_ch * oh * ow);
    for b in 0..d.batch {
        let in_row = input.row(b);
        let out_row = out.row_mut(b);
        for oc in 0..d.out_ch {
            let k_row = kernel.row(oc);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[(0, oc)];
                    for ic in 0..d.in_ch {
                        for ky in 0..d.kh {
                            let iy = oy + ky;
                            let in_base = ic * d.in_h * d.in_w + iy * d.in_w + ox;
                            let k_base = ic * d.kh * d.kw + ky * d.kw;
                            for kx in 0..d.kw {
                                acc += in_row[in_base + kx] * k_row[k_base + kx];
                            }
                        }
                    }
                    out_row[oc * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

fn conv2d_backward<T: Scalar>(
    input: &Matrix<T>,
    kernel: &Matrix<T>,
    d: ConvDims,
    grad: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut gi = Matrix::zeros(input.rows(), input.cols());
    let mut gk = Matrix::zeros(kernel.rows(), kernel.cols());
    let mut gb = Matrix::zeros(1, d.out_ch);
    for b in 0..d.batch {
        let in_row = input.row(b);
        let g_row = grad.row(b);
        for oc in 0..d.out_ch {
            let k_row = kernel.row(oc);
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = g_row[oc * oh * ow + oy * ow + ox];
                    gb[(0, oc)] += g;
                    for ic in 0..d.in_ch {
                        for ky in 0..d.kh {
                            let iy = oy + ky;
                            let in_base = ic * d.in_h * d.in_w + iy * d.in_w + ox;
                            let k_base = ic * d.kh * d.kw + ky * d.kw;
                            for kx in 0..d.kw {
                                gk[(oc, k_base + kx)] += g * in_row[in_base + kx];
                                gi[(b, in_base + kx)] += g * k_row[k_base + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (gi, gk, gb)
}

fn eval_avg_pool2d<T: Scalar>(input: &Matrix<T>, d: PoolDims) -> Result<Matrix<T>, NumericsError> {
    let in_feat = d.ch * d.in_h * d.in_w;
    if input.shape() != (d.batch, in_feat) {
        return Err(NumericsError::ShapeMismatch {
            op: "avg_pool2d",
            detail: format!("input {:?} vs dims {d:?}", input.shape()),
        });
    }
    let (oh, ow) = (d.out_h(), d.out_w());
    let window = T::from_f64((d.pool * d.pool) as f64);
    let mut out = Matrix::zeros(d.batch, d.ch * oh * ow);
    for b in 0..d.batch {
        let in_row = input.row(b);
        let out_row = out.row_mut(b);
        for c in 0..d.ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for py in 0..d.pool {
                        let iy = oy * d.pool + py;
                        let base = c * d.in_h * d.in_w + iy * d.in_w + ox * d.pool;
                        for px in 0..d.pool {
                            acc += in_row[base + px];
                        }
                    }
                    out_row[c * oh * ow + oy * ow + ox] = acc / window;
                }
            }
        }
    }
    Ok(out)
}

fn avg_pool2d_backward<T: Scalar>(d: PoolDims, grad: &Matrix<T>) -> Matrix<T> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let window = T::from_f64((d.pool * d.pool) as f64);
    let mut gi = Matrix::zeros(d.batch, d.ch * d.in_h * d.in_w);
    for b in 0..d.batch {
        for c in 0..d.ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad[(b, c * oh * ow + oy * ow + ox)] / window;
                    for py in 0..d.pool {
                        let iy = oy * d.pool + py;
                        let base = c * d.in_h * d.in_w + iy * d.in_w + ox * d.pool;
                        for px in 0..d.pool {
                            gi[(b, base + px)] += g;
                        }
                    }
                }
            }
        }
    }
    gi
}

fn eval_spectral_advance<T: Scalar>(
    y: &Matrix<T>,
    params: &Matrix<T>,
    t: u32,
) -> Result<Matrix<T>, NumericsError> {
    let h = y.cols();
    if h % 2 != 0 || params.shape() != (h / 2, 2) {
        return Err(NumericsError::ShapeMismatch {
            op: "spectral_advance",
            detail: format!("latent width {h} with params {:?}", params.shape()),
        });
    }
    let mut out = Matrix::zeros(y.rows(), h);
    for j in 0..h / 2 {
        let (p, q) = eigenvalue_power(params[(j, 0)], params[(j, 1)], t);
        for b in 0..y.rows() {
            let a = y[(b, 2 * j)];
            let bb = y[(b, 2 * j + 1)];
            out[(b, 2 * j)] = p * a - q * bb;
            out[(b, 2 * j + 1)] = q * a + p * bb;
        }
    }
    Ok(out)
}

/// `lambda^t` in polar form for `lambda = mu + i*omega`: returns the real
/// and imaginary parts `(r^t cos(t theta), r^t sin(t theta))`.
pub fn eigenvalue_power<T: Scalar>(mu: T, omega: T, t: u32) -> (T, T) {
    if t == 0 {
        return (T::one(), T::zero());
    }
    if t == 1 {
        return (mu, omega);
    }
    let r = (mu * mu + omega * omega).sqrt();
    let theta = omega.atan2(mu);
    let tt = T::from_f64(t as f64);
    let rt = r.powi(t as i32);
    (rt * (tt * theta).cos(), rt * (tt * theta).sin())
}

fn spectral_advance_backward<T: Scalar>(
    y: &Matrix<T>,
    params: &Matrix<T>,
    t: u32,
    grad: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let h = y.cols();
    let mut gy = Matrix::zeros(y.rows(), h);
    let mut gp = Matrix::zeros(h / 2, 2);
    for j in 0..h / 2 {
        let mu = params[(j, 0)];
        let omega = params[(j, 1)];
        let (p, q) = eigenvalue_power(mu, omega, t);
        // d(lambda^t)/dlambda = t lambda^(t-1); expanded into real parts.
        let (dp_mu, dq_mu, dp_om, dq_om) = if t == 0 {
            (T::zero(), T::zero(), T::zero(), T::zero())
        } else if t == 1 {
            (T::one(), T::zero(), T::zero(), T::one())
        } else {
            let r2 = (mu * mu + omega * omega).max(T::from_f64(1e-24));
            let tt = T::from_f64(t as f64);
            let dp_mu = tt * (p * mu + q * omega) / r2;
            let dq_mu = tt * (q * mu - p * omega) / r2;
            (dp_mu, dq_mu, -dq_mu, dp_mu)
        };
        for b in 0..y.rows() {
            let a = y[(b, 2 * j)];
            let bb = y[(b, 2 * j + 1)];
            let ga = grad[(b, 2 * j)];
            let gb = grad[(b, 2 * j + 1)];
            gy[(b, 2 * j)] = p * ga + q * gb;
            gy[(b, 2 * j + 1)] = -q * ga + p * gb;
            gp[(j, 0)] += ga * (dp_mu * a - dq_mu * bb) + gb * (dq_mu * a + dp_mu * bb);
            gp[(j, 1)] += ga * (dp_om * a - dq_om * bb) + gb * (dq_om * a + dp_om * bb);
        }
    }
    (gy, gp)
}
