//! Reverse-mode differentiation over an arena of 2-D nodes.
//!
//! Values are computed eagerly when a node is created. [`Graph::grad`] walks the
//! recorded operations backwards and *emits the gradient computation as new
//! nodes*, so a gradient is itself an ordinary node that can be fed into further
//! operations and differentiated again. The gradient penalty relies on this:
//! `‖∇ₓ f(x)‖` is built from the nodes returned by `grad`, and its parameter
//! gradient is a second call to `grad`.
//!
//! Piecewise-linear activations use a constant mask in their backward rule, so
//! their second derivative is zero; the relu mask at exactly 0 is 0.

use super::tensor::{concat_cols, matmul, Tensor};
use super::EngineError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

// Some payloads are only read through `Debug`.
#[allow(dead_code)]
#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    /// `x` (B×n) plus a row vector (1×n) broadcast over rows.
    AddRow { x: NodeId, bias: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Elementwise division; 0 wherever the divisor is 0.
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    /// Euclidean norm of each row: B×n → B×1.
    RowNorm(NodeId),
    SumAll(NodeId),
    BroadcastScalar { x: NodeId, rows: usize, cols: usize },
    SumRows(NodeId),
    BroadcastRows { x: NodeId, rows: usize },
    SumCols(NodeId),
    BroadcastCols { x: NodeId, cols: usize },
    /// `x` (B×n) times a column (B×1) broadcast over columns.
    MulCol { x: NodeId, col: NodeId },
    ConcatCols(NodeId, NodeId),
    SliceCols { x: NodeId, start: usize, len: usize },
    ScatterCols { x: NodeId, start: usize, total: usize },
}

impl Op {
    fn parents(&self) -> [Option<NodeId>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            AddRow { x, bias } => [Some(x), Some(bias)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ConcatCols(a, b) => [Some(a), Some(b)],
            MulCol { x, col } => [Some(x), Some(col)],
            Scale(x, _) | AddScalar(x, _) | LeakyRelu(x, _) | Tanh(x) | Sigmoid(x) | Exp(x)
            | Softplus(x) | RowNorm(x) | SumAll(x) | SumRows(x) | SumCols(x) => [Some(x), None],
            BroadcastScalar { x, .. }
            | BroadcastRows { x, .. }
            | BroadcastCols { x, .. }
            | SliceCols { x, .. }
            | ScatterCols { x, .. } => [Some(x), None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single-threaded computation graph. Build a fresh one per training step.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf holding `value`. Parameters, inputs and constants are all leaves;
    /// what is differentiated is decided by the `wrt` list given to [`Graph::grad`].
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            let k_a = if ta { av.rows() } else { av.cols() };
            let k_b = if tb { bv.cols() } else { bv.rows() };
            assert_eq!(k_a, k_b, "matmul inner dimension mismatch");
            matmul(av, bv, ta, tb)
        };
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let v = {
            let (xv, bv) = (self.value(x), self.value(bias));
            assert!(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row: bias shape");
            let mut out = xv.clone();
            let cols = out.cols();
            for row in out.data_mut().chunks_mut(cols.max(1)) {
                for (o, b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            out
        };
        self.push(v, Op::AddRow { x, bias })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "div");
        let v = self
            .value(a)
            .zip_map(self.value(b), |x, y| if y == 0.0 { 0.0 } else { x / y });
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v + c);
        self.push(v, Op::AddScalar(x, c))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.mul(x, x)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let v = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    /// `ln(1 + eˣ)`, computed without overflow.
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(softplus);
        self.push(v, Op::Softplus(x))
    }

    pub fn row_norm(&mut self, x: NodeId) -> NodeId {
        let v = {
            let xv = self.value(x);
            let norms: Vec<f64> = xv
                .row_iter()
                .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
                .collect();
            Tensor::column(&norms)
        };
        self.push(v, Op::RowNorm(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn broadcast_scalar(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = Tensor::filled(rows, cols, self.value(x).item());
        self.push(v, Op::BroadcastScalar { x, rows, cols })
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let v = {
            let xv = self.value(x);
            let mut acc = vec![0.0; xv.cols()];
            for row in xv.row_iter() {
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += r;
                }
            }
            Tensor::row_vector(&acc)
        };
        self.push(v, Op::SumRows(x))
    }

    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            assert_eq!(xv.rows(), 1, "broadcast_rows needs a row vector");
            let data = xv.data().repeat(rows);
            Tensor::new(rows, xv.cols(), data).expect("shape")
        };
        self.push(v, Op::BroadcastRows { x, rows })
    }

    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let v = {
            let sums: Vec<f64> = self.value(x).row_iter().map(|r| r.iter().sum()).collect();
            Tensor::column(&sums)
        };
        self.push(v, Op::SumCols(x))
    }

    pub fn broadcast_cols(&mut self, x: NodeId, cols: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            assert_eq!(xv.cols(), 1, "broadcast_cols needs a column");
            let mut data = Vec::with_capacity(xv.rows() * cols);
            for &c in xv.data() {
                data.extend(std::iter::repeat_n(c, cols));
            }
            Tensor::new(xv.rows(), cols, data).expect("shape")
        };
        self.push(v, Op::BroadcastCols { x, cols })
    }

    pub fn mul_col(&mut self, x: NodeId, col: NodeId) -> NodeId {
        let v = {
            let (xv, cv) = (self.value(x), self.value(col));
            assert!(cv.cols() == 1 && cv.rows() == xv.rows(), "mul_col: column shape");
            let mut out = xv.clone();
            let cols = out.cols();
            for (row, &c) in out.data_mut().chunks_mut(cols.max(1)).zip(cv.data()) {
                for o in row {
                    *o *= c;
                }
            }
            out
        };
        self.push(v, Op::MulCol { x, col })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.rows(), bv.rows(), "concat_cols: row mismatch");
            concat_cols(av, bv)
        };
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            assert!(start + len <= xv.cols(), "slice_cols out of range");
            let mut data = Vec::with_capacity(xv.rows() * len);
            for row in xv.row_iter() {
                data.extend_from_slice(&row[start..start + len]);
            }
            Tensor::new(xv.rows(), len, data).expect("shape")
        };
        self.push(v, Op::SliceCols { x, start, len })
    }

    fn scatter_cols(&mut self, x: NodeId, start: usize, total: usize) -> NodeId {
        let v = {
            let xv = self.value(x);
            let mut out = Tensor::zeros(xv.rows(), total);
            for r in 0..xv.rows() {
                for (c, &val) in xv.row(r).iter().enumerate() {
                    out.set(r, start + c, val);
                }
            }
            out
        };
        self.push(v, Op::ScatterCols { x, start, total })
    }

    fn accumulate(&mut self, adj: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) {
        adj[target.0] = Some(match adj[target.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib),
        });
    }

    /// Gradients of the scalar `output` with respect to each node in `wrt`.
    ///
    /// The returned ids are graph nodes, so they can be differentiated again.
    /// Nodes in `wrt` that `output` does not depend on get a zero gradient;
    /// if it depends on none of them the call fails.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>, EngineError> {
        if !self.value(output).is_scalar() {
            return Err(EngineError::NotScalar(self.shape(output)));
        }
        let n = output.0 + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = self.nodes[i]
                    .op
                    .parents()
                    .iter()
                    .flatten()
                    .any(|p| needs[p.0]);
            }
        }
        if !needs[output.0] {
            return Err(EngineError::Disconnected);
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        adj[output.0] = Some(self.constant(Tensor::scalar(1.0)));

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !needs[i] {
                continue;
            }
            let node = NodeId(i);
            let op = self.nodes[i].op;
            let want = |p: NodeId| needs[p.0];
            use Op::*;
            match op {
                Leaf => {}
                MatMul { a, b, ta, tb } => {
                    if want(a) {
                        let da = if ta {
                            self.matmul(b, g, tb, true)
                        } else {
                            self.matmul(g, b, false, !tb)
                        };
                        self.accumulate(&mut adj, a, da);
                    }
                    if want(b) {
                        let db = if tb {
                            self.matmul(g, a, true, ta)
                        } else {
                            self.matmul(a, g, !ta, false)
                        };
                        self.accumulate(&mut adj, b, db);
                    }
                }
                AddRow { x, bias } => {
                    if want(x) {
                        self.accumulate(&mut adj, x, g);
                    }
                    if want(bias) {
                        let db = self.sum_rows(g);
                        self.accumulate(&mut adj, bias, db);
                    }
                }
                Add(a, b) => {
                    if want(a) {
                        self.accumulate(&mut adj, a, g);
                    }
                    if want(b) {
                        self.accumulate(&mut adj, b, g);
                    }
                }
                Sub(a, b) => {
                    if want(a) {
                        self.accumulate(&mut adj, a, g);
                    }
                    if want(b) {
                        let db = self.neg(g);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Mul(a, b) => {
                    if want(a) {
                        let da = self.mul(g, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if want(b) {
                        let db = self.mul(g, a);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Div(a, b) => {
                    if want(a) {
                        let da = self.div(g, b);
                        self.accumulate(&mut adj, a, da);
                    }
                    if want(b) {
                        let gy = self.mul(g, node);
                        let q = self.div(gy, b);
                        let db = self.neg(q);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                Scale(x, c) => {
                    let dx = self.scale(g, c);
                    self.accumulate(&mut adj, x, dx);
                }
                AddScalar(x, _) => self.accumulate(&mut adj, x, g),
                LeakyRelu(x, slope) => {
                    let mask = self.value(x).map(|v| if v > 0.0 { 1.0 } else { slope });
                    let m = self.constant(mask);
                    let dx = self.mul(g, m);
                    self.accumulate(&mut adj, x, dx);
                }
                Tanh(x) => {
                    let y2 = self.mul(node, node);
                    let neg = self.scale(y2, -1.0);
                    let d = self.add_scalar(neg, 1.0);
                    let dx = self.mul(g, d);
                    self.accumulate(&mut adj, x, dx);
                }
                Sigmoid(x) => {
                    let neg = self.scale(node, -1.0);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let d = self.mul(node, one_minus);
                    let dx = self.mul(g, d);
                    self.accumulate(&mut adj, x, dx);
                }
                Exp(x) => {
                    let dx = self.mul(g, node);
                    self.accumulate(&mut adj, x, dx);
                }
                Softplus(x) => {
                    let s = self.sigmoid(x);
                    let dx = self.mul(g, s);
                    self.accumulate(&mut adj, x, dx);
                }
                RowNorm(x) => {
                    let w = self.div(g, node);
                    let dx = self.mul_col(x, w);
                    self.accumulate(&mut adj, x, dx);
                }
                SumAll(x) => {
                    let [r, c] = self.shape(x);
                    let dx = self.broadcast_scalar(g, r, c);
                    self.accumulate(&mut adj, x, dx);
                }
                BroadcastScalar { x, .. } => {
                    let dx = self.sum_all(g);
                    self.accumulate(&mut adj, x, dx);
                }
                SumRows(x) => {
                    let rows = self.shape(x)[0];
                    let dx = self.broadcast_rows(g, rows);
                    self.accumulate(&mut adj, x, dx);
                }
                BroadcastRows { x, .. } => {
                    let dx = self.sum_rows(g);
                    self.accumulate(&mut adj, x, dx);
                }
                SumCols(x) => {
                    let cols = self.shape(x)[1];
                    let dx = self.broadcast_cols(g, cols);
                    self.accumulate(&mut adj, x, dx);
                }
                BroadcastCols { x, .. } => {
                    let dx = self.sum_cols(g);
                    self.accumulate(&mut adj, x, dx);
                }
                MulCol { x, col } => {
                    if want(x) {
                        let dx = self.mul_col(g, col);
                        self.accumulate(&mut adj, x, dx);
                    }
                    if want(col) {
                        let gx = self.mul(g, x);
                        let dc = self.sum_cols(gx);
                        self.accumulate(&mut adj, col, dc);
                    }
                }
                ConcatCols(a, b) => {
                    let (ca, cb) = (self.shape(a)[1], self.shape(b)[1]);
                    if want(a) {
                        let da = self.slice_cols(g, 0, ca);
                        self.accumulate(&mut adj, a, da);
                    }
                    if want(b) {
                        let db = self.slice_cols(g, ca, cb);
                        self.accumulate(&mut adj, b, db);
                    }
                }
                SliceCols { x, start, .. } => {
                    let total = self.shape(x)[1];
                    let dx = self.scatter_cols(g, start, total);
                    self.accumulate(&mut adj, x, dx);
                }
                ScatterCols { x, start, .. } => {
                    let len = self.shape(x)[1];
                    let dx = self.slice_cols(g, start, len);
                    self.accumulate(&mut adj, x, dx);
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let [r, c] = self.shape(w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    /// Gradient values (not nodes) of `output` with respect to `wrt`.
    pub fn grad_values(
        &mut self,
        output: NodeId,
        wrt: &[NodeId],
    ) -> Result<Vec<Tensor>, EngineError> {
        let ids = self.grad(output, wrt)?;
        Ok(ids.into_iter().map(|id| self.value(id).clone()).collect())
    }

    /// Gradient of a per-sample output with respect to the batch `input`, as a
    /// graph node of the same shape as `input`.
    ///
    /// `per_sample` must be `B × 1`; samples are assumed independent (row `i` of
    /// the output only reads row `i` of the input), so the gradient of the sum
    /// gives every sample's own input gradient.
    pub fn input_gradient(&mut self, per_sample: NodeId, input: NodeId) -> Result<NodeId, EngineError> {
        if self.shape(per_sample)[1] != 1 {
            return Err(EngineError::NotScalar(self.shape(per_sample)));
        }
        let total = self.sum_all(per_sample);
        match self.grad(total, &[input]) {
            Ok(g) => Ok(g[0]),
            Err(EngineError::Disconnected) => Err(EngineError::NotAncestor),
            Err(e) => Err(e),
        }
    }
}
