use alloc::vec;
use alloc::vec::Vec;

use super::{matmul_raw, ParameterStore, Shape, Tensor, TensorError, PROB_FLOOR};
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// The operation that produced a tape entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Transpose,
    Add,
    Mul,
    Affine,
    ConcatCols,
    ConcatRows,
    GatherRows,
    SegmentMean,
    Relu,
    Sigmoid,
    RowSoftmax,
    Log,
    Pow,
    Pick,
    Sum,
    Mean,
    StopGradient,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    /// Second operand is broadcast over rows when it is `1 × cols`.
    Add(Var, Var, bool),
    /// Second operand is broadcast over columns when it is `rows × 1`.
    Mul(Var, Var, bool),
    Affine(Var, f64),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    Log(Var),
    Pow(Var, f64),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    StopGradient,
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Affine(..) => OpKind::Affine,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SegmentMean(..) => OpKind::SegmentMean,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::RowSoftmax(_) => OpKind::RowSoftmax,
            Op::Log(_) => OpKind::Log,
            Op::Pow(..) => OpKind::Pow,
            Op::Pick(..) => OpKind::Pick,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::StopGradient => OpKind::StopGradient,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is already a topological
/// order, so the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pins: Vec<Tensor>,
    pinned: usize,
}

/// Gradients of one scalar loss with respect to every tape entry that
/// required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape whose `stop_gradient` calls yield `values`, in call order,
    /// instead of their inputs. Replaying the values of an earlier pass
    /// turns every stopped path into a constant, which is the function a
    /// finite-difference check of the recorded gradient has to perturb.
    pub fn with_pinned(values: Vec<Tensor>) -> Self {
        Tape {
            pins: values,
            ..Tape::default()
        }
    }

    /// Values of every `stop_gradient` node, in creation order.
    pub fn stopped_values(&self) -> Vec<Tensor> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a stored parameter onto the tape. Frozen parameters enter
    /// as constants.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var, TensorError> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.into()))?;
        let p = store.by_index(idx);
        Ok(self.push(p.value.clone(), Op::Param(idx), !p.frozen))
    }

    /// Store indices of every parameter copied onto this tape.
    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(p) if n.requires_grad => Some((p, Var(i))),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `x · wᵀ` for a weight stored as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let wt = self.transpose(w);
        self.matmul(x, wt)
    }

    /// `x · wᵀ + b` with `b` a `1 × out` row.
    pub fn affine_layer(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let xw = self.linear(x, w)?;
        self.add(xw, b)
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.rows == 1 && sb.cols == sa.cols {
            true
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = av
            .iter()
            .enumerate()
            .map(|(i, x)| x + if broadcast { bv[i % sa.cols] } else { bv[i] })
            .collect();
        let out = Tensor::from_vec(sa.rows, sa.cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, broadcast), rg))
    }

    /// Elementwise product; `b` may also be a single column broadcast
    /// across the columns of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.cols == 1 && sb.rows == sa.rows {
            true
        } else {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = av
            .iter()
            .enumerate()
            .map(|(i, x)| x * if broadcast { bv[i / sa.cols] } else { bv[i] })
            .collect();
        let out = Tensor::from_vec(sa.rows, sa.cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b, broadcast), rg))
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|x| scale * x + shift).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Concatenation along the last (column) axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rows != sb.rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: sa,
                rhs: sb,
            });
        }
        let cols = sa.cols + sb.cols;
        let mut data = Vec::with_capacity(sa.rows * cols);
        for r in 0..sa.rows {
            data.extend_from_slice(self.value(a).row(r));
            data.extend_from_slice(self.value(b).row(r));
        }
        let out = Tensor::from_vec(sa.rows, cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Stacks blocks with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map_or(0, |p| self.shape(*p).cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: s,
                });
            }
            rows += s.rows;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        let mut data = Vec::with_capacity(index.len() * s.cols);
        for &i in index {
            if i >= s.rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: s.rows,
                });
            }
            data.extend_from_slice(self.value(a).row(i));
        }
        let out = Tensor::from_vec(index.len(), s.cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), rg))
    }

    /// Mean of the rows of `a` grouped by `segment[r]` into `segments`
    /// output rows. A segment with no members yields a zero row.
    pub fn segment_mean(
        &mut self,
        a: Var,
        segment: &[usize],
        segments: usize,
    ) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if segment.len() != s.rows {
            return Err(TensorError::ShapeMismatch {
                op: "segment_mean",
                lhs: s,
                rhs: Shape::new(segment.len(), 1),
            });
        }
        let counts = segment_counts(segment, segments)?;
        let mut members: Vec<Vec<usize>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
        for (r, &g) in segment.iter().enumerate() {
            members[g].push(r);
        }
        // Each column is summed in ascending value order so the result does
        // not depend on the order of rows within a segment.
        let src = self.value(a);
        let mut data = vec![0.0; segments * s.cols];
        let mut scratch = Vec::new();
        for (g, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            for c in 0..s.cols {
                scratch.clear();
                scratch.extend(rows.iter().map(|&r| src.get(r, c)));
                scratch.sort_unstable_by(f64::total_cmp);
                let total: f64 = scratch.iter().sum();
                data[g * s.cols + c] = total / rows.len() as f64;
            }
        }
        let out = Tensor::from_vec(segments, s.cols, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, segment.to_vec()), rg))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), math::sigmoid)
    }

    /// Natural log of `max(x, PROB_FLOOR)`.
    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, Op::Log(a), |x| math::ln(x.max(PROB_FLOOR)))
    }

    /// `max(x, PROB_FLOOR)^q` for `x ≤ 1` and `q ∈ (0, 1]`.
    pub fn pow(&mut self, a: Var, q: f64) -> Result<Var, TensorError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(TensorError::BadExponent(q));
        }
        if let Some(&bad) = self.value(a).data().iter().find(|&&x| !(x <= 1.0)) {
            return Err(TensorError::PowDomain(bad));
        }
        Ok(self.map(a, Op::Pow(a, q), |x| math::powf(x.max(PROB_FLOOR), q)))
    }

    /// Softmax over each row, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = softmax_rows(v);
        let rg = self.rg(a);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// Picks column `cols[r]` from each row `r`, giving a column vector.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if cols.len() != s.rows {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                lhs: s,
                rhs: Shape::new(cols.len(), 1),
            });
        }
        let mut data = Vec::with_capacity(s.rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= s.cols {
                return Err(TensorError::IndexOutOfRange {
                    op: "pick",
                    index: c,
                    bound: s.cols,
                });
            }
            data.push(self.value(a).get(r, c));
        }
        let out = Tensor::from_vec(s.rows, 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pick(a, cols.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.data().len().max(1) as f64;
        let total: f64 = v.data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(total / n), Op::Mean(a), rg)
    }

    /// Identity on values; nothing upstream of the result receives gradient
    /// through it.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let v = match self.pins.get(self.pinned) {
            Some(p) => {
                assert_eq!(p.shape(), self.shape(a), "pinned value {} has the wrong shape", self.pinned);
                self.pinned += 1;
                p.clone()
            }
            None => self.value(a).clone(),
        };
        self.push(v, Op::StopGradient, false)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let s = self.shape(loss);
        if s != Shape::new(1, 1) {
            return Err(TensorError::NonScalarLoss(s));
        }
        if !self.rg(loss) {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param(_) | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let bt = vb.transpose();
                    let da = matmul_raw(g, bt.data(), n, m, k);
                    accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let at = va.transpose();
                    let db = matmul_raw(at.data(), g, k, n, m);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::from_vec(out_shape.rows, out_shape.cols, g.to_vec())
                    .expect("gradient shape")
                    .transpose();
                accumulate(grads, *a, gt.data());
            }
            Op::Add(a, b, broadcast) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g);
                }
                if self.rg(*b) {
                    if *broadcast {
                        let mut db = vec![0.0; out_shape.cols];
                        for (i, gv) in g.iter().enumerate() {
                            db[i % out_shape.cols] += gv;
                        }
                        accumulate(grads, *b, &db);
                    } else {
                        accumulate(grads, *b, g);
                    }
                }
            }
            Op::Mul(a, b, broadcast) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let cols = out_shape.cols;
                let bval = |i: usize| if *broadcast { vb[i / cols] } else { vb[i] };
                if self.rg(*a) {
                    let da: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * bval(i)).collect();
                    accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    if *broadcast {
                        let mut db = vec![0.0; out_shape.rows];
                        for (i, gv) in g.iter().enumerate() {
                            db[i / cols] += gv * va[i];
                        }
                        accumulate(grads, *b, &db);
                    } else {
                        let db: Vec<f64> = g.iter().zip(va).map(|(gv, x)| gv * x).collect();
                        accumulate(grads, *b, &db);
                    }
                }
            }
            Op::Affine(a, scale) => {
                let da: Vec<f64> = g.iter().map(|gv| gv * scale).collect();
                accumulate(grads, *a, &da);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.shape(*a).cols;
                let cb = self.shape(*b).cols;
                let cols = ca + cb;
                if self.rg(*a) {
                    let da: Vec<f64> = (0..out_shape.rows)
                        .flat_map(|r| g[r * cols..r * cols + ca].iter().copied())
                        .collect();
                    accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    let db: Vec<f64> = (0..out_shape.rows)
                        .flat_map(|r| g[r * cols + ca..(r + 1) * cols].iter().copied())
                        .collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.shape(*p).numel();
                    if self.rg(*p) {
                        accumulate(grads, *p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, index) => {
                let s = self.shape(*a);
                let mut da = vec![0.0; s.numel()];
                for (r, &src) in index.iter().enumerate() {
                    let grow = &g[r * s.cols..(r + 1) * s.cols];
                    for (d, gv) in da[src * s.cols..(src + 1) * s.cols].iter_mut().zip(grow) {
                        *d += gv;
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::SegmentMean(a, segment) => {
                let s = self.shape(*a);
                let counts = segment_counts(segment, out_shape.rows).expect("checked in forward");
                let mut da = vec![0.0; s.numel()];
                for (r, &seg) in segment.iter().enumerate() {
                    let inv = 1.0 / counts[seg] as f64;
                    let grow = &g[seg * s.cols..(seg + 1) * s.cols];
                    for (d, gv) in da[r * s.cols..(r + 1) * s.cols].iter_mut().zip(grow) {
                        *d = gv * inv;
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let da: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > PROB_FLOOR { gv / xv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::Pow(a, q) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| {
                        if xv > PROB_FLOOR {
                            gv * q * math::powf(xv, q - 1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::RowSoftmax(a) => {
                let y = node.value.data();
                let cols = out_shape.cols;
                let mut da = vec![0.0; y.len()];
                for r in 0..out_shape.rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        da[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Pick(a, cols) => {
                let s = self.shape(*a);
                let mut da = vec![0.0; s.numel()];
                for (r, &c) in cols.iter().enumerate() {
                    da[r * s.cols + c] = g[r];
                }
                accumulate(grads, *a, &da);
            }
            Op::Sum(a) => {
                let n = self.shape(*a).numel();
                accumulate(grads, *a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.shape(*a).numel();
                accumulate(grads, *a, &vec![g[0] / n.max(1) as f64; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn segment_counts(segment: &[usize], segments: usize) -> Result<Vec<usize>, TensorError> {
    let mut counts = vec![0usize; segments];
    for &g in segment {
        if g >= segments {
            return Err(TensorError::IndexOutOfRange {
                op: "segment_mean",
                index: g,
                bound: segments,
            });
        }
        counts[g] += 1;
    }
    Ok(counts)
}

/// Numerically stable row softmax on a plain value.
pub(crate) fn softmax_rows(v: &Tensor) -> Tensor {
    let cols = v.cols();
    let mut data = Vec::with_capacity(v.data().len());
    for r in 0..v.rows() {
        let row = v.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut total = 0.0;
        for &x in row {
            let e = math::exp(x - max);
            total += e;
            data.push(e);
        }
        for e in &mut data[start..start + cols] {
            *e /= total;
        }
    }
    Tensor::from_vec(v.rows(), cols, data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tape: &mut Tape, xs: &[f64], rg: bool) -> Var {
        tape.leaf(Tensor::from_vec(1, xs.len(), xs.to_vec()).unwrap(), rg)
    }

    #[test]
    fn relu_sigmoid_softmax_values() {
        let mut t = Tape::new();
        let x = row(&mut t, &[-1.0, 0.0, 2.0], false);
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = row(&mut t, &[0.0], false);
        let s = t.sigmoid(z);
        assert_eq!(t.value(s).data(), &[0.5]);

        let zz = row(&mut t, &[0.0, 0.0], false);
        let sm = t.row_softmax(zz);
        assert_eq!(t.value(sm).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1000.0, 1000.0, -1000.0], false);
        let s = t.row_softmax(x);
        let v = t.value(s).data();
        assert!((v[0] - 0.5).abs() < 1e-15 && v[2] == 0.0);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = row(&mut t, &[3.0], true);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn stop_gradient_blocks() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.5, -2.0], true);
        let w = row(&mut t, &[0.25, 4.0], true);
        let xs = t.stop_gradient(x);
        assert_eq!(t.value(xs), t.value(x));
        assert!(!t.requires_grad(xs));
        let prod = t.mul(xs, w).unwrap();
        let loss = t.sum(prod);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.5, -2.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn pinned_tape_replays_stopped_values() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, 2.0], true);
        t.stop_gradient(x);
        let recorded = t.stopped_values();
        let mut p = Tape::with_pinned(recorded);
        let y = row(&mut p, &[7.0, 8.0], true);
        let ys = p.stop_gradient(y);
        assert_eq!(p.value(ys).data(), &[1.0, 2.0]);
        // Past the pinned values the tape behaves normally.
        let again = p.stop_gradient(y);
        assert_eq!(p.value(again).data(), &[7.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut t = Tape::new();
        let x = row(&mut t, &[1.0, 2.0], true);
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
        let c = row(&mut t, &[1.0], false);
        let s = t.sum(c);
        assert_eq!(t.backward(s).err(), Some(TensorError::DetachedLoss));
    }

    #[test]
    fn segment_mean_empty_segment_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(), true);
        let m = t.segment_mean(x, &[0, 0], 2).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn pow_domain_checks() {
        let mut t = Tape::new();
        let x = row(&mut t, &[0.5], true);
        assert_eq!(t.pow(x, 0.0).err(), Some(TensorError::BadExponent(0.0)));
        assert_eq!(t.pow(x, 1.5).err(), Some(TensorError::BadExponent(1.5)));
        let y = row(&mut t, &[1.5], true);
        assert!(matches!(t.pow(y, 0.7), Err(TensorError::PowDomain(_))));
        let zero = row(&mut t, &[0.0], false);
        let p = t.pow(zero, 0.5).unwrap();
        assert!((t.value(p).item() - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn shape_errors_name_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3), false);
        let b = t.leaf(Tensor::zeros(3, 2), false);
        let err = t.add(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "add",
                lhs: Shape::new(2, 3),
                rhs: Shape::new(3, 2)
            }
        );
    }
}
