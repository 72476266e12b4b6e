//! Eager reverse-mode tape over row-major f64 matrices.
//!
//! Every builder method computes its forward value immediately, so callers
//! can branch on intermediate values (hard argmin/argmax selections) while
//! recording only the differentiable part. `backward` replays the tape in
//! reverse and accumulates gradients for bound parameters.
//!
//! Shape agreement between composed builder calls is a programming error and
//! panics; fallible validation lives in the public wrappers (`layers`).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::neural::params::ParamStore;
use crate::neural::tensor::Tensor;

/// Handle to a node: shape travels with the handle, values stay in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// Elementwise minimum; ties route the gradient to the first input.
    Min2(usize, usize),
    /// atan2(y, x) elementwise.
    Atan2(usize, usize),
    /// Matrix times a 1x1 scalar node.
    MulScalar(usize, usize),
    MatMul(usize, usize),
    /// [n x c] plus a [1 x c] row broadcast down the rows.
    AddRow(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Relu(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Neg(usize),
    Powf(usize, f64),
    Scale(usize, f64),
    AddConst(usize),
    Clamp(usize, f64, f64),
    Transpose(usize),
    SoftmaxRows(usize),
    SumAll(usize),
    MeanAll(usize),
    MaxPoolRows(usize),
    BroadcastRows(usize),
    Reshape(usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize, usize),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Gradient of one backward pass, keyed by parameter name. Parameters bound
/// in the graph but not contributing to the loss hold exact zeros; unbound
/// parameters are absent.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Accumulates `other` into `self` (entrywise sum, union of names).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, tensor) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(mine) => {
                    for (a, b) in mine.data_mut().iter_mut().zip(tensor.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_name.insert(name.clone(), tensor.clone());
                }
            }
        }
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, k: f64) {
        for tensor in self.by_name.values_mut() {
            for v in tensor.data_mut() {
                *v *= k;
            }
        }
    }

    pub(crate) fn insert(&mut self, name: String, tensor: Tensor) {
        self.by_name.insert(name, tensor);
    }
}

/// Numerically stable softmax of one row. The exponential terms are summed
/// in ascending value order so the result is invariant under permutation of
/// the inputs, not just deterministic.
pub(crate) fn softmax_row_values(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let mut ordered = exps.clone();
    ordered.sort_unstable_by(f64::total_cmp);
    let denom: f64 = ordered.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Parameter bindings: name -> leaf node, deduplicated.
    bound: BTreeMap<String, usize>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        Var { id, rows, cols }
    }

    fn val(&self, id: usize) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.val(v.id)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert!(v.is_scalar(), "expected 1x1 node");
        self.nodes[v.id].value[0]
    }

    /// Extracts a node's value as a tensor (rank 2).
    pub fn tensor_value(&self, v: Var) -> Tensor {
        Tensor::new(vec![v.rows, v.cols], self.nodes[v.id].value.clone())
            .expect("node shape consistent")
    }

    // ---- leaves ----

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant shape mismatch");
        self.push(Op::Leaf, rows, cols, data)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, 1, 1, vec![v])
    }

    pub fn row(&mut self, data: &[f64]) -> Var {
        self.constant(1, data.len(), data.to_vec())
    }

    pub fn point(&mut self, p: Point2) -> Var {
        self.row(&[p.x, p.y])
    }

    /// Binds a named parameter as a gradient leaf; repeated binds of the same
    /// name return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&id) = self.bound.get(name) {
            let node = &self.nodes[id];
            return Ok(Var {
                id,
                rows: node.rows,
                cols: node.cols,
            });
        }
        let tensor = store.get(name)?;
        let var = self.push(
            Op::Leaf,
            tensor.rows(),
            tensor.cols(),
            tensor.data().to_vec(),
        );
        self.bound.insert(name.to_string(), var.id);
        Ok(var)
    }

    // ---- elementwise binary ----

    fn assert_same_shape(&self, a: Var, b: Var, what: &str) {
        assert!(
            a.rows == b.rows && a.cols == b.cols,
            "{what}: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "add");
        let data = self
            .val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a.id, b.id), a.rows, a.cols, data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "sub");
        let data = self
            .val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(a.id, b.id), a.rows, a.cols, data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "mul");
        let data = self
            .val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a.id, b.id), a.rows, a.cols, data)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        self.assert_same_shape(a, b, "min2");
        let data = self
            .val(a.id)
            .iter()
            .zip(self.val(b.id))
            .map(|(&x, &y)| if x <= y { x } else { y })
            .collect();
        self.push(Op::Min2(a.id, b.id), a.rows, a.cols, data)
    }

    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        self.assert_same_shape(y, x, "atan2");
        let data = self
            .val(y.id)
            .iter()
            .zip(self.val(x.id))
            .map(|(a, b)| a.atan2(*b))
            .collect();
        self.push(Op::Atan2(y.id, x.id), y.rows, y.cols, data)
    }

    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert!(s.is_scalar(), "mul_scalar needs a 1x1 scale");
        let sv = self.val(s.id)[0];
        let data = self.val(x.id).iter().map(|v| v * sv).collect();
        self.push(Op::MulScalar(x.id, s.id), x.rows, x.cols, data)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            a.cols, b.rows,
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        );
        let (n, k, m) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; n * m];
        {
            let av = self.val(a.id);
            let bv = self.val(b.id);
            for i in 0..n {
                let arow = &av[i * k..(i + 1) * k];
                let orow = &mut out[i * m..(i + 1) * m];
                for (kk, &aik) in arow.iter().enumerate() {
                    let brow = &bv[kk * m..(kk + 1) * m];
                    for (o, &bkj) in orow.iter_mut().zip(brow) {
                        *o += aik * bkj;
                    }
                }
            }
        }
        self.push(Op::MatMul(a.id, b.id), n, m, out)
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        assert!(
            bias.rows == 1 && bias.cols == x.cols,
            "add_row: bias 1x{} vs matrix {}x{}",
            bias.cols,
            x.rows,
            x.cols
        );
        let mut data = self.val(x.id).to_vec();
        let bv = self.val(bias.id).to_vec();
        for row in data.chunks_mut(x.cols) {
            for (v, b) in row.iter_mut().zip(&bv) {
                *v += b;
            }
        }
        self.push(Op::AddRow(x.id, bias.id), x.rows, x.cols, data)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = parts[0].rows;
        assert!(
            parts.iter().all(|p| p.rows == rows),
            "concat_cols: row mismatch"
        );
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for p in parts {
            let pv = self.val(p.id);
            for r in 0..rows {
                let src = &pv[r * p.cols..(r + 1) * p.cols];
                data[r * cols + offset..r * cols + offset + p.cols].copy_from_slice(src);
            }
            offset += p.cols;
        }
        self.push(
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rows,
            cols,
            data,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = parts[0].cols;
        assert!(
            parts.iter().all(|p| p.cols == cols),
            "concat_rows: col mismatch"
        );
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(self.val(p.id));
        }
        self.push(
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            rows,
            cols,
            data,
        )
    }

    // ---- elementwise unary ----

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.val(x.id).iter().map(|&v| v.max(0.0)).collect();
        self.push(Op::Relu(x.id), x.rows, x.cols, data)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let data = self.val(x.id).iter().map(|v| v.ln()).collect();
        self.push(Op::Log(x.id), x.rows, x.cols, data)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let data = self.val(x.id).iter().map(|v| v.sqrt()).collect();
        self.push(Op::Sqrt(x.id), x.rows, x.cols, data)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data = self.val(x.id).iter().map(|v| v.abs()).collect();
        self.push(Op::Abs(x.id), x.rows, x.cols, data)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let data = self.val(x.id).iter().map(|v| -v).collect();
        self.push(Op::Neg(x.id), x.rows, x.cols, data)
    }

    /// Elementwise x^k; callers keep bases nonnegative for fractional k.
    pub fn powf(&mut self, x: Var, k: f64) -> Var {
        let data = self.val(x.id).iter().map(|v| v.powf(k)).collect();
        self.push(Op::Powf(x.id, k), x.rows, x.cols, data)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let data = self.val(x.id).iter().map(|v| v * k).collect();
        self.push(Op::Scale(x.id, k), x.rows, x.cols, data)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let data = self.val(x.id).iter().map(|v| v + k).collect();
        self.push(Op::AddConst(x.id), x.rows, x.cols, data)
    }

    /// Clamp with zero gradient outside (lo, hi).
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data = self.val(x.id).iter().map(|v| v.clamp(lo, hi)).collect();
        self.push(Op::Clamp(x.id, lo, hi), x.rows, x.cols, data)
    }

    // ---- structure ----

    pub fn transpose(&mut self, x: Var) -> Var {
        let (n, m) = (x.rows, x.cols);
        let xv = self.val(x.id);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = xv[i * m + j];
            }
        }
        self.push(Op::Transpose(x.id), m, n, data)
    }

    /// Row-wise softmax with max-subtraction and order-canonical summation.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut data = Vec::with_capacity(x.len());
        for row in self.val(x.id).chunks(x.cols) {
            data.extend(softmax_row_values(row));
        }
        self.push(Op::SoftmaxRows(x.id), x.rows, x.cols, data)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.val(x.id).iter().sum();
        self.push(Op::SumAll(x.id), 1, 1, vec![s])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        assert!(x.len() > 0, "mean of empty node");
        let s: f64 = self.val(x.id).iter().sum();
        self.push(Op::MeanAll(x.id), 1, 1, vec![s / x.len() as f64])
    }

    /// Column-wise max over rows -> [1 x cols]; gradient routes to the first
    /// maximal row per column.
    pub fn max_pool_rows(&mut self, x: Var) -> Var {
        assert!(x.rows >= 1, "max_pool_rows over zero rows");
        let xv = self.val(x.id);
        let mut data = xv[..x.cols].to_vec();
        for r in 1..x.rows {
            for c in 0..x.cols {
                let v = xv[r * x.cols + c];
                if v > data[c] {
                    data[c] = v;
                }
            }
        }
        self.push(Op::MaxPoolRows(x.id), 1, x.cols, data)
    }

    /// Tiles a [1 x c] row down `n` rows.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        assert_eq!(x.rows, 1, "broadcast_rows needs a single row");
        assert!(n >= 1, "broadcast to zero rows");
        let row = self.val(x.id).to_vec();
        let mut data = Vec::with_capacity(n * x.cols);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        self.push(Op::BroadcastRows(x.id), n, x.cols, data)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(x.len(), rows * cols, "reshape size mismatch");
        let data = self.val(x.id).to_vec();
        self.push(Op::Reshape(x.id), rows, cols, data)
    }

    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Var {
        assert!(r0 < r1 && r1 <= x.rows, "slice_rows out of range");
        let data = self.val(x.id)[r0 * x.cols..r1 * x.cols].to_vec();
        self.push(Op::SliceRows(x.id, r0), r1 - r0, x.cols, data)
    }

    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Var {
        assert!(c0 < c1 && c1 <= x.cols, "slice_cols out of range");
        let xv = self.val(x.id);
        let mut data = Vec::with_capacity(x.rows * (c1 - c0));
        for r in 0..x.rows {
            data.extend_from_slice(&xv[r * x.cols + c0..r * x.cols + c1]);
        }
        self.push(Op::SliceCols(x.id, c0, c1), x.rows, c1 - c0, data)
    }

    /// Folds elementwise `min2` over the slice (at least one element).
    pub fn min_fold(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "min_fold of nothing");
        let mut acc = items[0];
        for &v in &items[1..] {
            acc = self.min2(acc, v);
        }
        acc
    }

    /// Folds `add` over the slice (at least one element).
    pub fn sum_vars(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "sum_vars of nothing");
        let mut acc = items[0];
        for &v in &items[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    // ---- reverse pass ----

    /// Accumulates d(loss)/d(param) for every bound parameter. Bound but
    /// non-contributing parameters get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let (rows, cols) = (node.rows, node.cols);
            macro_rules! buf {
                ($input:expr) => {{
                    let inp = $input;
                    if grads[inp].is_none() {
                        grads[inp] = Some(vec![0.0; self.nodes[inp].value.len()]);
                    }
                    grads[inp].as_mut().expect("allocated")
                }};
            }
            match &node.op {
                Op::Leaf => {
                    // Gradient retained for parameter extraction below.
                    grads[id] = Some(gout);
                    continue;
                }
                Op::Add(a, b) => {
                    for (g, &o) in buf!(*a).iter_mut().zip(&gout) {
                        *g += o;
                    }
                    for (g, &o) in buf!(*b).iter_mut().zip(&gout) {
                        *g += o;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, &o) in buf!(*a).iter_mut().zip(&gout) {
                        *g += o;
                    }
                    for (g, &o) in buf!(*b).iter_mut().zip(&gout) {
                        *g -= o;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv = self.val(b).to_vec();
                    for ((g, &o), &x) in buf!(a).iter_mut().zip(&gout).zip(&bv) {
                        *g += o * x;
                    }
                    let av = self.val(a).to_vec();
                    for ((g, &o), &x) in buf!(b).iter_mut().zip(&gout).zip(&av) {
                        *g += o * x;
                    }
                }
                Op::Min2(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = self.val(a).to_vec();
                    let bv = self.val(b).to_vec();
                    {
                        let ga = buf!(a);
                        for i in 0..gout.len() {
                            if av[i] <= bv[i] {
                                ga[i] += gout[i];
                            }
                        }
                    }
                    let gb = buf!(b);
                    for i in 0..gout.len() {
                        if av[i] > bv[i] {
                            gb[i] += gout[i];
                        }
                    }
                }
                Op::Atan2(y, x) => {
                    let (y, x) = (*y, *x);
                    let yv = self.val(y).to_vec();
                    let xv = self.val(x).to_vec();
                    {
                        let gy = buf!(y);
                        for i in 0..gout.len() {
                            let denom = xv[i] * xv[i] + yv[i] * yv[i];
                            gy[i] += gout[i] * xv[i] / denom;
                        }
                    }
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        let denom = xv[i] * xv[i] + yv[i] * yv[i];
                        gx[i] -= gout[i] * yv[i] / denom;
                    }
                }
                Op::MulScalar(x, s) => {
                    let (x, s) = (*x, *s);
                    let sv = self.val(s)[0];
                    let xv = self.val(x).to_vec();
                    for (g, &o) in buf!(x).iter_mut().zip(&gout) {
                        *g += o * sv;
                    }
                    let mut ds = 0.0;
                    for (&o, &xi) in gout.iter().zip(&xv) {
                        ds += o * xi;
                    }
                    buf!(s)[0] += ds;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let k = self.nodes[a].cols;
                    let m = cols;
                    let av = self.val(a).to_vec();
                    let bv = self.val(b).to_vec();
                    {
                        // dA = dC . B^T
                        let ga = buf!(a);
                        for i in 0..rows {
                            for kk in 0..k {
                                let mut acc = 0.0;
                                let grow = &gout[i * m..(i + 1) * m];
                                let brow = &bv[kk * m..(kk + 1) * m];
                                for (go, bb) in grow.iter().zip(brow) {
                                    acc += go * bb;
                                }
                                ga[i * k + kk] += acc;
                            }
                        }
                    }
                    // dB = A^T . dC
                    let gb = buf!(b);
                    for i in 0..rows {
                        let arow = &av[i * k..(i + 1) * k];
                        let grow = &gout[i * m..(i + 1) * m];
                        for (kk, &aik) in arow.iter().enumerate() {
                            let gbrow = &mut gb[kk * m..(kk + 1) * m];
                            for (gbj, &go) in gbrow.iter_mut().zip(grow) {
                                *gbj += aik * go;
                            }
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    for (g, &o) in buf!(x).iter_mut().zip(&gout) {
                        *g += o;
                    }
                    let gb = buf!(bias);
                    for row in gout.chunks(cols) {
                        for (g, &o) in gb.iter_mut().zip(row) {
                            *g += o;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for pid in parts {
                        let pcols = self.nodes[pid].cols;
                        let gp = buf!(pid);
                        for r in 0..rows {
                            for c in 0..pcols {
                                gp[r * pcols + c] += gout[r * cols + offset + c];
                            }
                        }
                        offset += pcols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for pid in parts {
                        let plen = self.nodes[pid].value.len();
                        let gp = buf!(pid);
                        for (g, &o) in gp.iter_mut().zip(&gout[offset..offset + plen]) {
                            *g += o;
                        }
                        offset += plen;
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let xv = self.val(x).to_vec();
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        if xv[i] > 0.0 {
                            gx[i] += gout[i];
                        }
                    }
                }
                Op::Log(x) => {
                    let x = *x;
                    let xv = self.val(x).to_vec();
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        gx[i] += gout[i] / xv[i];
                    }
                }
                Op::Sqrt(x) => {
                    let x = *x;
                    let out = &node.value;
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        gx[i] += gout[i] / (2.0 * out[i]);
                    }
                }
                Op::Abs(x) => {
                    let x = *x;
                    let xv = self.val(x).to_vec();
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        let s = if xv[i] > 0.0 {
                            1.0
                        } else if xv[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        gx[i] += gout[i] * s;
                    }
                }
                Op::Neg(x) => {
                    for (g, &o) in buf!(*x).iter_mut().zip(&gout) {
                        *g -= o;
                    }
                }
                Op::Powf(x, k) => {
                    let (x, k) = (*x, *k);
                    let xv = self.val(x).to_vec();
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        gx[i] += gout[i] * k * xv[i].powf(k - 1.0);
                    }
                }
                Op::Scale(x, k) => {
                    let k = *k;
                    for (g, &o) in buf!(*x).iter_mut().zip(&gout) {
                        *g += o * k;
                    }
                }
                Op::AddConst(x) => {
                    for (g, &o) in buf!(*x).iter_mut().zip(&gout) {
                        *g += o;
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    let (x, lo, hi) = (*x, *lo, *hi);
                    let xv = self.val(x).to_vec();
                    let gx = buf!(x);
                    for i in 0..gout.len() {
                        if xv[i] > lo && xv[i] < hi {
                            gx[i] += gout[i];
                        }
                    }
                }
                Op::Transpose(x) => {
                    let x = *x;
                    let (xr, xc) = (self.nodes[x].rows, self.nodes[x].cols);
                    let gx = buf!(x);
                    for i in 0..rows {
                        for j in 0..cols {
                            // out[i][j] = in[j][i]
                            gx[j * xc + i] += gout[i * cols + j];
                        }
                    }
                    let _ = xr;
                }
                Op::SoftmaxRows(x) => {
                    let x = *x;
                    let p = node.value.clone();
                    let gx = buf!(x);
                    for r in 0..rows {
                        let prow = &p[r * cols..(r + 1) * cols];
                        let grow = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = prow.iter().zip(grow).map(|(pp, gg)| pp * gg).sum();
                        for c in 0..cols {
                            gx[r * cols + c] += prow[c] * (grow[c] - dot);
                        }
                    }
                }
                Op::SumAll(x) => {
                    let o = gout[0];
                    for g in buf!(*x).iter_mut() {
                        *g += o;
                    }
                }
                Op::MeanAll(x) => {
                    let x = *x;
                    let o = gout[0] / self.nodes[x].value.len() as f64;
                    for g in buf!(x).iter_mut() {
                        *g += o;
                    }
                }
                Op::MaxPoolRows(x) => {
                    let x = *x;
                    let xv = self.val(x).to_vec();
                    let (xr, xc) = (self.nodes[x].rows, self.nodes[x].cols);
                    let gx = buf!(x);
                    for c in 0..xc {
                        let mut best_r = 0;
                        let mut best_v = xv[c];
                        for r in 1..xr {
                            let v = xv[r * xc + c];
                            if v > best_v {
                                best_v = v;
                                best_r = r;
                            }
                        }
                        gx[best_r * xc + c] += gout[c];
                    }
                }
                Op::BroadcastRows(x) => {
                    let gx = buf!(*x);
                    for row in gout.chunks(cols) {
                        for (g, &o) in gx.iter_mut().zip(row) {
                            *g += o;
                        }
                    }
                }
                Op::Reshape(x) => {
                    for (g, &o) in buf!(*x).iter_mut().zip(&gout) {
                        *g += o;
                    }
                }
                Op::SliceRows(x, r0) => {
                    let (x, r0) = (*x, *r0);
                    let xc = self.nodes[x].cols;
                    let gx = buf!(x);
                    for (g, &o) in gx[r0 * xc..r0 * xc + gout.len()].iter_mut().zip(&gout) {
                        *g += o;
                    }
                }
                Op::SliceCols(x, c0, c1) => {
                    let (x, c0, c1) = (*x, *c0, *c1);
                    let xc = self.nodes[x].cols;
                    let w = c1 - c0;
                    let gx = buf!(x);
                    for r in 0..rows {
                        for c in 0..w {
                            gx[r * xc + c0 + c] += gout[r * w + c];
                        }
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (name, &id) in &self.bound {
            let node = &self.nodes[id];
            let data = grads[id]
                .take()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            let tensor =
                Tensor::new(vec![node.rows, node.cols], data).expect("grad shape consistent");
            out.insert(name.clone(), tensor);
        }
        Ok(out)
    }
}
