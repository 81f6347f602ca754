//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! Values are computed eagerly as ops are pushed. [`Tape::backward`] walks
//! the recorded nodes in reverse production order and accumulates gradients.
//!
//! Conventions: the relu subgradient at 0 is 0, and element-wise or
//! pairwise `max` ties send the whole gradient to the first argument.

use std::collections::HashMap;

use super::tensor::gemm;
use super::{DiffError, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: NodeId, w: NodeId },
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, c: f64 },
    MulScalar { a: NodeId, s: NodeId },
    Relu { a: NodeId },
    Max { a: NodeId, b: NodeId },
    PairMax { a: NodeId },
    MaxRelu { a: NodeId, alpha: NodeId, beta: NodeId },
    RowMean { a: NodeId },
    RowSum { a: NodeId },
    RowMax { a: NodeId, argmax: Vec<usize> },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    RowL2 { a: NodeId },
    GroupL2 { a: NodeId, group: usize },
    Concat { a: NodeId, b: NodeId },
    Mse { pred: NodeId, target: NodeId },
    MinAffine { x: NodeId, w: NodeId, b: NodeId, argmin: Vec<usize> },
    GatherRows { table: NodeId, idx: Vec<usize> },
    Conv3x3 { x: NodeId, filt: NodeId, bias: NodeId, geom: ConvGeom, cols: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Relu { .. } => "relu",
            Op::Max { .. } => "max",
            Op::PairMax { .. } => "pair_max",
            Op::MaxRelu { .. } => "maxrelu",
            Op::RowMean { .. } => "row_mean",
            Op::RowSum { .. } => "row_sum",
            Op::RowMax { .. } => "row_max",
            Op::MeanAll { .. } => "mean_all",
            Op::SumAll { .. } => "sum_all",
            Op::RowL2 { .. } => "row_l2",
            Op::GroupL2 { .. } => "group_l2",
            Op::Concat { .. } => "concat",
            Op::Mse { .. } => "mse",
            Op::MinAffine { .. } => "min_affine",
            Op::GatherRows { .. } => "gather_rows",
            Op::Conv3x3 { .. } => "conv3x3",
        }
    }
}

/// Spatial layout of a 3x3, stride-1, zero-padded convolution.
///
/// Images are stored one per row in height-width-channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        9 * self.in_channels
    }
    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of the output with respect to a node, if it received any.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(node.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a parameter, summed over every use.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<ParamId, Tensor> {
        &self.params
    }
}

fn shape_err(node: usize, op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { node, op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Op kind of a node, for diagnostics.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn next_id(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId, DiffError> {
        let id = self.nodes.len();
        if !value.all_finite() {
            return Err(DiffError::NonFinite { node: id, op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(id))
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.rows(), v.cols())
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(usize, usize), DiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(self.next_id(), op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    /// Non-differentiated input or constant.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { value: t, op: Op::Leaf });
        NodeId(id)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.input(t)
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node { value: store.tensor(id).clone(), op: Op::Param(id) });
        self.param_nodes.insert(id, node);
        node
    }

    /// `x · wᵀ` for `x: b×n`, `w: m×n`.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, DiffError> {
        let ((b, n), (m, nw)) = (self.dims(x), self.dims(w));
        if n != nw {
            return Err(shape_err(self.next_id(), "linear", format!("input {b}x{n}, weight {m}x{nw}")));
        }
        let mut out = vec![0.0; b * m];
        gemm(false, true, b, n, m, 1.0, self.value(x).data(), self.value(w).data(), 0.0, &mut out);
        self.push(Tensor::from_parts(vec![b, m], out), Op::Linear { x, w })
    }

    /// Ordinary matrix product `a · b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let ((m, k), (kb, n)) = (self.dims(a), self.dims(b));
        if k != kb {
            return Err(shape_err(self.next_id(), "matmul", format!("{m}x{k} · {kb}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, k, n, 1.0, self.value(a).data(), self.value(b).data(), 0.0, &mut out);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b })
    }

    fn zip_with(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<NodeId, DiffError> {
        let (r, c) = self.same_shape(op.name(), a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(Tensor::from_parts(vec![r, c], data), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(Op::Add { a, b }, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(Op::Sub { a, b }, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(Op::Mul { a, b }, a, b, |x, y| x * y)
    }

    /// Element-wise maximum; ties send the gradient to `a`.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(Op::Max { a, b }, a, b, |x, y| if x >= y { x } else { y })
    }

    /// Adds a `1×m` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, DiffError> {
        let ((r, c), (rr, rc)) = (self.dims(a), self.dims(row));
        if rr != 1 || rc != c {
            return Err(shape_err(self.next_id(), "add_row", format!("{r}x{c} + {rr}x{rc}")));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c.max(1)) {
            for (v, b) in chunk.iter_mut().zip(bias) {
                *v += b;
            }
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::AddRow { a, row })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        let (r, cols) = self.dims(a);
        let data = self.value(a).data().iter().map(|v| v * c).collect();
        self.push(Tensor::from_parts(vec![r, cols], data), Op::Scale { a, c })
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.scale(a, -1.0)
    }

    /// Multiplies every entry of `a` by the single value held in `s`.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        let sv = self.value(s).item().ok_or_else(|| {
            shape_err(self.next_id(), "mul_scalar", format!("scalar operand has shape {:?}", self.value(s).shape()))
        })?;
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|v| v * sv).collect();
        self.push(Tensor::from_parts(vec![r, c], data), Op::MulScalar { a, s })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push(Tensor::from_parts(vec![r, c], data), Op::Relu { a })
    }

    /// Max over adjacent column pairs `(2i, 2i+1)`: `b×2c -> b×c`.
    pub fn pair_max(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        if c % 2 != 0 {
            return Err(shape_err(self.next_id(), "pair_max", format!("odd channel count {c}")));
        }
        let data = self
            .value(a)
            .data()
            .chunks(2)
            .map(|p| if p[0] >= p[1] { p[0] } else { p[1] })
            .collect();
        self.push(Tensor::from_parts(vec![r, c / 2], data), Op::PairMax { a })
    }

    /// Pairwise MaxReLU over column pairs `(x, y) = (2i, 2i+1)`:
    /// outputs `max(x, y)` in column `2i` and `alpha·relu(x) + beta·relu(y)`
    /// in column `2i+1`.
    pub fn maxrelu(&mut self, a: NodeId, alpha: NodeId, beta: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        if c % 2 != 0 {
            return Err(shape_err(self.next_id(), "maxrelu", format!("odd channel count {c}")));
        }
        let (Some(al), Some(be)) = (self.value(alpha).item(), self.value(beta).item()) else {
            return Err(shape_err(self.next_id(), "maxrelu", "alpha and beta must be scalars".into()));
        };
        let mut data = Vec::with_capacity(r * c);
        for p in self.value(a).data().chunks(2) {
            let (x, y) = (p[0], p[1]);
            data.push(if x >= y { x } else { y });
            data.push(al * x.max(0.0) + be * y.max(0.0));
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::MaxRelu { a, alpha, beta })
    }

    pub fn row_mean(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(shape_err(self.next_id(), "row_mean", "zero columns".into()));
        }
        let data = self.value(a).data().chunks(c).map(|row| row.iter().sum::<f64>() / c as f64).collect();
        self.push(Tensor::from_parts(vec![r, 1], data), Op::RowMean { a })
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        let data = if c == 0 { vec![0.0; r] } else { self.value(a).data().chunks(c).map(|row| row.iter().sum()).collect() };
        self.push(Tensor::from_parts(vec![r, 1], data), Op::RowSum { a })
    }

    /// Row-wise maximum; ties resolve to the lowest column.
    pub fn row_max(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(shape_err(self.next_id(), "row_max", "zero columns".into()));
        }
        let mut argmax = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r);
        for row in self.value(a).data().chunks(c) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            data.push(row[best]);
        }
        self.push(Tensor::from_parts(vec![r, 1], data), Op::RowMax { a, argmax })
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err(self.next_id(), "mean_all", "empty tensor".into()));
        }
        let m = self.value(a).data().iter().sum::<f64>() / n as f64;
        self.push(Tensor::scalar(m), Op::MeanAll { a })
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::SumAll { a })
    }

    /// Euclidean norm of each row: `b×n -> b×1`.
    pub fn row_l2(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        let data = if c == 0 {
            vec![0.0; r]
        } else {
            self.value(a).data().chunks(c).map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
        };
        self.push(Tensor::from_parts(vec![r, 1], data), Op::RowL2 { a })
    }

    /// Euclidean norm of consecutive column groups: `b×(k·g) -> b×k`.
    pub fn group_l2(&mut self, a: NodeId, group: usize) -> Result<NodeId, DiffError> {
        let (r, c) = self.dims(a);
        if group == 0 || c % group != 0 {
            return Err(shape_err(self.next_id(), "group_l2", format!("{c} columns not divisible into groups of {group}")));
        }
        let data = self
            .value(a)
            .data()
            .chunks(group)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(Tensor::from_parts(vec![r, c / group], data), Op::GroupL2 { a, group })
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let ((ra, ca), (rb, cb)) = (self.dims(a), self.dims(b));
        if ra != rb {
            return Err(shape_err(self.next_id(), "concat", format!("{ra}x{ca} :: {rb}x{cb}")));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        self.push(Tensor::from_parts(vec![ra, ca + cb], data), Op::Concat { a, b })
    }

    /// Mean squared error; the gradient flows into `pred` only.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape("mse", pred, target)?;
        let n = self.value(pred).len();
        if n == 0 {
            return Err(shape_err(self.next_id(), "mse", "empty tensor".into()));
        }
        let s: f64 = self.value(pred).data().iter().zip(self.value(target).data()).map(|(p, t)| (p - t) * (p - t)).sum();
        self.push(Tensor::scalar(s / n as f64), Op::Mse { pred, target })
    }

    /// Per-channel minimum of affine pieces:
    /// `out[r, i] = min_j (w[i, j] · x[r, i] + b[i, j])` with `w, b: c×k`.
    pub fn min_affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let ((r, c), (wc, k), bd) = (self.dims(x), self.dims(w), self.dims(b));
        if wc != c || bd != (wc, k) || k == 0 {
            return Err(shape_err(
                self.next_id(),
                "min_affine",
                format!("input {r}x{c}, slopes {wc}x{k}, offsets {}x{}", bd.0, bd.1),
            ));
        }
        let (wv, bv, xv) = (self.value(w).data(), self.value(b).data(), self.value(x).data());
        let mut data = Vec::with_capacity(r * c);
        let mut argmin = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            for (i, &xi) in row.iter().enumerate() {
                let mut best = 0;
                let mut best_v = wv[i * k] * xi + bv[i * k];
                for j in 1..k {
                    let v = wv[i * k + j] * xi + bv[i * k + j];
                    if v < best_v {
                        best = j;
                        best_v = v;
                    }
                }
                data.push(best_v);
                argmin.push(best);
            }
        }
        self.push(Tensor::from_parts(vec![r, c], data), Op::MinAffine { x, w, b, argmin })
    }

    /// Selects rows of `table` by index (an embedding lookup).
    pub fn gather_rows(&mut self, table: NodeId, idx: &[usize]) -> Result<NodeId, DiffError> {
        let (n, d) = self.dims(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err(self.next_id(), "gather_rows", format!("index {bad} out of {n} rows")));
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(Tensor::from_parts(vec![idx.len(), d], data), Op::GatherRows { table, idx: idx.to_vec() })
    }

    /// 3x3 convolution, stride 1, zero padding, HWC layout, one image per row.
    ///
    /// `filt` is `out_channels × (9·in_channels)` indexed by
    /// `(ky·3 + kx)·in_channels + ci`; `bias` is `1 × out_channels`.
    pub fn conv3x3(&mut self, x: NodeId, filt: NodeId, bias: NodeId, geom: ConvGeom) -> Result<NodeId, DiffError> {
        let (b, c) = self.dims(x);
        let px = geom.pixels();
        if c != px * geom.in_channels
            || self.dims(filt) != (geom.out_channels, geom.patch())
            || self.dims(bias) != (1, geom.out_channels)
        {
            return Err(shape_err(
                self.next_id(),
                "conv3x3",
                format!(
                    "input {b}x{c}, filters {:?}, bias {:?} for geometry {geom:?}",
                    self.dims(filt),
                    self.dims(bias)
                ),
            ));
        }
        let cols = im2col(self.value(x).data(), b, geom);
        let rows = b * px;
        let mut out = vec![0.0; rows * geom.out_channels];
        for chunk in out.chunks_mut(geom.out_channels) {
            chunk.copy_from_slice(self.value(bias).data());
        }
        gemm(false, true, rows, geom.patch(), geom.out_channels, 1.0, &cols, self.value(filt).data(), 1.0, &mut out);
        self.push(
            Tensor::from_parts(vec![b, px * geom.out_channels], out),
            Op::Conv3x3 { x, filt, bias, geom, cols },
        )
    }

    /// Reverse-mode pass from a one-element output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, DiffError> {
        let out_val = &self.nodes[output.0].value;
        if out_val.len() != 1 {
            return Err(DiffError::NonScalarOutput { node: output.0, shape: out_val.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::from_parts(out_val.shape().to_vec(), vec![1.0]));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: HashMap<ParamId, Tensor> = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Op::Param(pid), Some(g)) = (&node.op, &grads[idx]) {
                match params.get_mut(pid) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        params.insert(*pid, g.clone());
                    }
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let val = |n: NodeId| &self.nodes[n.0].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w } => {
                let ((b, n), (m, _)) = (self.dims(*x), self.dims(*w));
                let mut dx = vec![0.0; b * n];
                gemm(false, false, b, m, n, 1.0, gd, val(*w).data(), 0.0, &mut dx);
                let mut dw = vec![0.0; m * n];
                gemm(true, false, m, b, n, 1.0, gd, val(*x).data(), 0.0, &mut dw);
                accumulate(grads, *x, vec![b, n], dx);
                accumulate(grads, *w, vec![m, n], dw);
            }
            Op::MatMul { a, b } => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                let mut da = vec![0.0; m * k];
                gemm(false, true, m, n, k, 1.0, gd, val(*b).data(), 0.0, &mut da);
                let mut db = vec![0.0; k * n];
                gemm(true, false, k, m, n, 1.0, val(*a).data(), gd, 0.0, &mut db);
                accumulate(grads, *a, vec![m, k], da);
                accumulate(grads, *b, vec![k, n], db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.shape().to_vec(), gd.to_vec());
                accumulate(grads, *b, g.shape().to_vec(), gd.to_vec());
            }
            Op::Sub { a, b } => {
                accumulate(grads, *a, g.shape().to_vec(), gd.to_vec());
                accumulate(grads, *b, g.shape().to_vec(), gd.iter().map(|v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                accumulate(grads, *a, g.shape().to_vec(), gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                accumulate(grads, *b, g.shape().to_vec(), gd.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::AddRow { a, row } => {
                let c = g.cols();
                let mut dr = vec![0.0; c];
                for chunk in gd.chunks(c.max(1)) {
                    for (acc, v) in dr.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                accumulate(grads, *a, g.shape().to_vec(), gd.to_vec());
                accumulate(grads, *row, vec![1, c], dr);
            }
            Op::Scale { a, c } => {
                accumulate(grads, *a, g.shape().to_vec(), gd.iter().map(|v| v * c).collect());
            }
            Op::MulScalar { a, s } => {
                let sv = val(*s).data()[0];
                let va = val(*a).data();
                let ds: f64 = gd.iter().zip(va).map(|(g, x)| g * x).sum();
                accumulate(grads, *a, g.shape().to_vec(), gd.iter().map(|v| v * sv).collect());
                accumulate(grads, *s, val(*s).shape().to_vec(), vec![ds]);
            }
            Op::Relu { a } => {
                let va = val(*a).data();
                let da = gd.iter().zip(va).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *a, g.shape().to_vec(), da);
            }
            Op::Max { a, b } => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let mut da = vec![0.0; gd.len()];
                let mut db = vec![0.0; gd.len()];
                for i in 0..gd.len() {
                    if va[i] >= vb[i] {
                        da[i] = gd[i];
                    } else {
                        db[i] = gd[i];
                    }
                }
                accumulate(grads, *a, g.shape().to_vec(), da);
                accumulate(grads, *b, g.shape().to_vec(), db);
            }
            Op::PairMax { a } => {
                let va = val(*a).data();
                let mut da = vec![0.0; va.len()];
                for (i, &gi) in gd.iter().enumerate() {
                    let (x, y) = (va[2 * i], va[2 * i + 1]);
                    da[if x >= y { 2 * i } else { 2 * i + 1 }] = gi;
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::MaxRelu { a, alpha, beta } => {
                let va = val(*a).data();
                let (al, be) = (val(*alpha).data()[0], val(*beta).data()[0]);
                let mut da = vec![0.0; va.len()];
                let (mut dal, mut dbe) = (0.0, 0.0);
                for p in 0..va.len() / 2 {
                    let (x, y) = (va[2 * p], va[2 * p + 1]);
                    let (gmax, gmix) = (gd[2 * p], gd[2 * p + 1]);
                    if x >= y {
                        da[2 * p] += gmax;
                    } else {
                        da[2 * p + 1] += gmax;
                    }
                    if x > 0.0 {
                        da[2 * p] += al * gmix;
                        dal += gmix * x;
                    }
                    if y > 0.0 {
                        da[2 * p + 1] += be * gmix;
                        dbe += gmix * y;
                    }
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
                accumulate(grads, *alpha, val(*alpha).shape().to_vec(), vec![dal]);
                accumulate(grads, *beta, val(*beta).shape().to_vec(), vec![dbe]);
            }
            Op::RowMean { a } => {
                let (r, c) = self.dims(*a);
                let mut da = Vec::with_capacity(r * c);
                for &gi in gd {
                    da.extend(std::iter::repeat_n(gi / c as f64, c));
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::RowSum { a } => {
                let (r, c) = self.dims(*a);
                let mut da = Vec::with_capacity(r * c);
                for &gi in gd {
                    da.extend(std::iter::repeat_n(gi, c));
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::RowMax { a, argmax } => {
                let (r, c) = self.dims(*a);
                let mut da = vec![0.0; r * c];
                for (i, (&gi, &j)) in gd.iter().zip(argmax).enumerate() {
                    da[i * c + j] = gi;
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::MeanAll { a } => {
                let n = val(*a).len();
                accumulate(grads, *a, val(*a).shape().to_vec(), vec![gd[0] / n as f64; n]);
            }
            Op::SumAll { a } => {
                let n = val(*a).len();
                accumulate(grads, *a, val(*a).shape().to_vec(), vec![gd[0]; n]);
            }
            Op::RowL2 { a } => {
                let (_, c) = self.dims(*a);
                let out = self.nodes[idx].value.data();
                let va = val(*a).data();
                let mut da = vec![0.0; va.len()];
                if c > 0 {
                    for (i, row) in va.chunks(c).enumerate() {
                        if out[i] > 0.0 {
                            let f = gd[i] / out[i];
                            for (j, &x) in row.iter().enumerate() {
                                da[i * c + j] = f * x;
                            }
                        }
                    }
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::GroupL2 { a, group } => {
                let out = self.nodes[idx].value.data();
                let va = val(*a).data();
                let mut da = vec![0.0; va.len()];
                for (gi, chunk) in va.chunks(*group).enumerate() {
                    if out[gi] > 0.0 {
                        let f = gd[gi] / out[gi];
                        for (j, &x) in chunk.iter().enumerate() {
                            da[gi * group + j] = f * x;
                        }
                    }
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
            }
            Op::Concat { a, b } => {
                let ((r, ca), (_, cb)) = (self.dims(*a), self.dims(*b));
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for row in gd.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                accumulate(grads, *a, val(*a).shape().to_vec(), da);
                accumulate(grads, *b, val(*b).shape().to_vec(), db);
            }
            Op::Mse { pred, target } => {
                let (vp, vt) = (val(*pred).data(), val(*target).data());
                let n = vp.len() as f64;
                let dp = vp.iter().zip(vt).map(|(p, t)| gd[0] * 2.0 * (p - t) / n).collect();
                accumulate(grads, *pred, val(*pred).shape().to_vec(), dp);
            }
            Op::MinAffine { x, w, b, argmin } => {
                let (_, c) = self.dims(*x);
                let (_, k) = self.dims(*w);
                let (vx, vw) = (val(*x).data(), val(*w).data());
                let mut dx = vec![0.0; vx.len()];
                let mut dw = vec![0.0; vw.len()];
                let mut db = vec![0.0; vw.len()];
                for (flat, (&gi, &j)) in gd.iter().zip(argmin).enumerate() {
                    let i = flat % c;
                    dx[flat] = gi * vw[i * k + j];
                    dw[i * k + j] += gi * vx[flat];
                    db[i * k + j] += gi;
                }
                accumulate(grads, *x, val(*x).shape().to_vec(), dx);
                accumulate(grads, *w, val(*w).shape().to_vec(), dw);
                accumulate(grads, *b, val(*b).shape().to_vec(), db);
            }
            Op::GatherRows { table, idx: rows } => {
                let (n, d) = self.dims(*table);
                let mut dt = vec![0.0; n * d];
                for (r, &i) in rows.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += gd[r * d + j];
                    }
                }
                accumulate(grads, *table, val(*table).shape().to_vec(), dt);
            }
            Op::Conv3x3 { x, filt, bias, geom, cols } => {
                let (b, _) = self.dims(*x);
                let rows = b * geom.pixels();
                let (co, patch) = (geom.out_channels, geom.patch());
                let mut dfilt = vec![0.0; co * patch];
                gemm(true, false, co, rows, patch, 1.0, gd, cols, 0.0, &mut dfilt);
                let mut dbias = vec![0.0; co];
                for chunk in gd.chunks(co) {
                    for (acc, v) in dbias.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                let mut dcols = vec![0.0; rows * patch];
                gemm(false, false, rows, co, patch, 1.0, gd, val(*filt).data(), 0.0, &mut dcols);
                let dx = col2im(&dcols, b, *geom);
                accumulate(grads, *x, val(*x).shape().to_vec(), dx);
                accumulate(grads, *filt, vec![co, patch], dfilt);
                accumulate(grads, *bias, vec![1, co], dbias);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], node: NodeId, shape: Vec<usize>, data: Vec<f64>) {
    match &mut grads[node.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(&data) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape, data)),
    }
}

fn im2col(x: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let (h, w, ci) = (g.height as isize, g.width as isize, g.in_channels);
    let patch = g.patch();
    let img = g.pixels() * ci;
    let mut cols = vec![0.0; batch * g.pixels() * patch];
    for b in 0..batch {
        let src = &x[b * img..(b + 1) * img];
        for py in 0..h {
            for px in 0..w {
                let row = (b * g.pixels()) + (py * w + px) as usize;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..3isize {
                    let sy = py + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for kx in 0..3isize {
                        let sx = px + kx - 1;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        let k = (ky * 3 + kx) as usize * ci;
                        let s = (sy * w + sx) as usize * ci;
                        dst[k..k + ci].copy_from_slice(&src[s..s + ci]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let (h, w, ci) = (g.height as isize, g.width as isize, g.in_channels);
    let patch = g.patch();
    let img = g.pixels() * ci;
    let mut x = vec![0.0; batch * img];
    for b in 0..batch {
        let dst = &mut x[b * img..(b + 1) * img];
        for py in 0..h {
            for px in 0..w {
                let row = (b * g.pixels()) + (py * w + px) as usize;
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..3isize {
                    let sy = py + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for kx in 0..3isize {
                        let sx = px + kx - 1;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        let k = (ky * 3 + kx) as usize * ci;
                        let s = (sy * w + sx) as usize * ci;
                        for c in 0..ci {
                            dst[s + c] += src[k + c];
                        }
                    }
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn relu_forward_and_subgradient() {
        let mut t = Tape::new();
        let x = t.input(Tensor::row(&[-1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);

        let mut t = Tape::new();
        let x = t.input(Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = t.relu(x).unwrap();
        let s = t.sum_all(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn l2_norm_value_and_gradient() {
        let mut t = Tape::new();
        let x = t.input(Tensor::row(&[3.0, 4.0]));
        let n = t.row_l2(x).unwrap();
        assert_eq!(t.value(n).data(), &[5.0]);
        let g = t.backward(n).unwrap();
        let gx = g.wrt(x).unwrap().data();
        assert!(close(gx[0], 0.6) && close(gx[1], 0.8));
    }

    #[test]
    fn mean_of_max_hand_evaluation() {
        let mut t = Tape::new();
        let a = t.input(Tensor::row(&[1.0, 5.0]));
        let b = t.input(Tensor::row(&[4.0, 2.0]));
        let m = t.max(a, b).unwrap();
        let out = t.mean_all(m).unwrap();
        assert_eq!(t.value(out).data(), &[4.5]);
    }

    #[test]
    fn max_tie_goes_to_first_argument() {
        let mut t = Tape::new();
        let a = t.input(Tensor::row(&[1.0]));
        let b = t.input(Tensor::row(&[1.0]));
        let m = t.max(a, b).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0]);
        assert_eq!(g.wrt(b).map(|t| t.data()[0]).unwrap_or(0.0), 0.0);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let mut t = Tape::new();
        let a = t.input(Tensor::row(&[1.0, 2.0]));
        let b = t.input(Tensor::row(&[1.0, 2.0, 3.0]));
        match t.add(a, b) {
            Err(DiffError::Shape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "add");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_intermediate_is_reported() {
        let mut t = Tape::new();
        let a = t.input(Tensor::row(&[1e300]));
        let err = t.scale(a, 1e300).unwrap_err();
        assert!(matches!(err, DiffError::NonFinite { node: 1, op: "scale" }));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let a = t.input(Tensor::row(&[1.0, 2.0]));
        let r = t.relu(a).unwrap();
        assert!(matches!(t.backward(r), Err(DiffError::NonScalarOutput { .. })));
    }

    #[test]
    fn maxrelu_pairs() {
        let mut t = Tape::new();
        let x = t.input(Tensor::row(&[2.0, -3.0, -1.0, -2.0]));
        let one = t.constant(Tensor::scalar(1.0));
        let y = t.maxrelu(x, one, one).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 2.0, -1.0, 0.0]);
        let odd = t.input(Tensor::row(&[1.0, 2.0, 3.0]));
        assert!(t.maxrelu(odd, one, one).is_err());
    }

    #[test]
    fn min_affine_pieces() {
        let mut t = Tape::new();
        let x = t.input(Tensor::matrix(3, 1, vec![0.0, 1.0, 4.0]).unwrap());
        let w = t.input(Tensor::row(&[1.0, 0.5]));
        let b = t.input(Tensor::row(&[0.0, 1.0]));
        let y = t.min_affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 1.0, 3.0]);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        let geom = ConvGeom { height: 2, width: 3, in_channels: 1, out_channels: 1 };
        let mut t = Tape::new();
        let x = t.input(Tensor::matrix(1, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let f = t.input(Tensor::matrix(1, 9, k).unwrap());
        let b = t.input(Tensor::row(&[0.5]));
        let y = t.conv3x3(x, f, b, geom).unwrap();
        assert_eq!(t.value(y).data(), &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    #[test]
    fn conv_box_kernel_sums_neighbourhood() {
        let geom = ConvGeom { height: 3, width: 3, in_channels: 1, out_channels: 1 };
        let mut t = Tape::new();
        let x = t.input(Tensor::matrix(1, 9, vec![1.0; 9]).unwrap());
        let f = t.input(Tensor::matrix(1, 9, vec![1.0; 9]).unwrap());
        let b = t.input(Tensor::row(&[0.0]));
        let y = t.conv3x3(x, f, b, geom).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }
}
