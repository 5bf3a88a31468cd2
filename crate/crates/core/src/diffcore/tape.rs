use super::kernels::{self, guard, EPS};
use super::tensor::Tensor;
use super::DiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGradient,
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    L2NormRows(Var),
    DivRows(Var, Var),
    NormalizeRows(Var),
    SoftmaxRows(Var),
    AddRowBroadcast(Var, Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SegmentMean {
        x: Var,
        segments: Vec<usize>,
        coef: Vec<f64>,
    },
    RowDistances(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a computation.
///
/// Nodes are appended in evaluation order, so the arena order is already a
/// topological order and [`Tape::backward`] just walks it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor, zeros when nothing flowed into `v`.
    pub fn tensor(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(r, c, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() != b.shape() {
        return Err(DiffError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.rows(), x.cols(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(DiffError::Shape {
                op: "matmul",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, n);
        kernels::gemm(m, k, n, av.data(), bv.data(), out.data_mut());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.push(out, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        check_same(name, self.value(a), self.value(b))?;
        let out = zip(self.value(a), self.value(b), f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise division with an ε-guarded denominator.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("div", a, b, |x, y| x / guard(y), Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = map(self.value(x), |v| v * s);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = map(self.value(x), |v| v + s);
        let rg = self.rg(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v * v);
        let rg = self.rg(&[x]);
        self.push(out, Op::Square(x), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = map(self.value(x), f64::sqrt);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sqrt(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = map(self.value(x), f64::tanh);
        let rg = self.rg(&[x]);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// `n×d → n×1` row norms.
    pub fn l2_norm_rows(&mut self, x: Var) -> Var {
        let out = Tensor::column(kernels::row_norms(self.value(x)));
        let rg = self.rg(&[x]);
        self.push(out, Op::L2NormRows(x), rg)
    }

    /// Divides each row of `x` (`n×d`) by the matching entry of `denom` (`n×1`).
    pub fn div_rows(&mut self, x: Var, denom: Var) -> Result<Var, DiffError> {
        let (xv, dv) = (self.value(x), self.value(denom));
        if dv.cols() != 1 || dv.rows() != xv.rows() {
            return Err(DiffError::Shape {
                op: "div_rows",
                lhs: xv.shape(),
                rhs: dv.shape(),
            });
        }
        let d = xv.cols();
        let mut out = xv.clone();
        for (r, &s) in dv.data().iter().enumerate() {
            let g = guard(s);
            for v in &mut out.data_mut()[r * d..(r + 1) * d] {
                *v /= g;
            }
        }
        let rg = self.rg(&[x, denom]);
        Ok(self.push(out, Op::DivRows(x, denom), rg))
    }

    /// Fused `x / (‖x‖_row + ε)`.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let out = kernels::normalize_rows(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::NormalizeRows(x), rg)
    }

    pub fn softmax_rows(&mut self, z: Var) -> Var {
        let out = kernels::softmax_rows(self.value(z));
        let rg = self.rg(&[z]);
        self.push(out, Op::SoftmaxRows(z), rg)
    }

    /// Adds the `1×c` row `bias` to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(DiffError::Shape {
                op: "add_row_broadcast",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBroadcast(x, bias), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(DiffError::Range {
                op: "slice_rows",
                start,
                len,
                dim: xv.rows(),
            });
        }
        let c = xv.cols();
        let data = xv.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(len, c, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(DiffError::Range {
                op: "slice_cols",
                start,
                len,
                dim: xv.cols(),
            });
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(xv.rows(), len, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(DiffError::Shape {
                    op: "concat_cols",
                    lhs: [rows, cols],
                    rhs: pv.shape(),
                });
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(DiffError::Shape {
                    op: "stack_rows",
                    lhs: [rows, cols],
                    rhs: pv.shape(),
                });
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::StackRows(parts.to_vec()), rg))
    }

    /// Weighted per-segment mean of the rows of `x`.
    ///
    /// `segments` and `weights` are constants: gradients reach `x` only
    /// through the mean itself, never through the segment selection.
    pub fn segment_mean(
        &mut self,
        x: Var,
        segments: &[usize],
        weights: &[f64],
        n_segments: usize,
    ) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if segments.len() != xv.rows() || weights.len() != xv.rows() {
            return Err(DiffError::Shape {
                op: "segment_mean",
                lhs: xv.shape(),
                rhs: [segments.len(), weights.len()],
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(DiffError::Range {
                op: "segment_mean",
                start: bad,
                len: 1,
                dim: n_segments,
            });
        }
        let coef = kernels::segment_coefficients(segments, weights, n_segments);
        let out = kernels::segment_mean(xv, segments, &coef, n_segments);
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
                coef,
            },
            rg,
        ))
    }

    /// Pairwise Euclidean distances `n×k` between rows of `a` and rows of `b`.
    pub fn row_distances(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(DiffError::Shape {
                op: "row_distances",
                lhs: av.shape(),
                rhs: bv.shape(),
            });
        }
        let out = kernels::row_distances(av, bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::RowDistances(a, b), rg))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(DiffError::NotScalar(lv.shape()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(da) = self.acc(grads, *a) {
                    // dA += dC · Bᵀ
                    kernels::gemm_strided(m, n, k, g, (n, 1), bv.data(), (1, n), da, 1.0);
                }
                if let Some(db) = self.acc(grads, *b) {
                    // dB += Aᵀ · dC
                    kernels::gemm_strided(k, m, n, av.data(), (1, k), g, (n, 1), db, 1.0);
                }
            }
            Op::Transpose(x) => {
                let [r, c] = y.shape();
                if let Some(dx) = self.acc(grads, *x) {
                    // y is r×c, x is c×r
                    for i in 0..r {
                        for j in 0..c {
                            dx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi / guard(*bi);
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (((d, gi), ai), bi) in db.iter_mut().zip(g).zip(av).zip(bv) {
                        let gb = guard(*bi);
                        *d -= gi * ai / (gb * gb);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * s);
                }
            }
            Op::AddScalar(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += 2.0 * xi * gi;
                    }
                }
            }
            Op::Sqrt(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += gi / (2.0 * yi + EPS);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y.data()) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    let s = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::L2NormRows(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, (&n, &gr)) in y.data().iter().zip(g).enumerate() {
                        let s = gr / (n + EPS);
                        for (o, xi) in dx[r * d..(r + 1) * d].iter_mut().zip(xv.row_slice(r)) {
                            *o += s * xi;
                        }
                    }
                }
            }
            Op::DivRows(x, den) => {
                let (xv, dv) = (self.value(*x), self.value(*den));
                let d = xv.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    for (r, &s) in dv.data().iter().enumerate() {
                        let inv = 1.0 / guard(s);
                        for (o, gi) in dx[r * d..(r + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += gi * inv;
                        }
                    }
                }
                if let Some(dd) = self.acc(grads, *den) {
                    for (r, &s) in dv.data().iter().enumerate() {
                        let gs = guard(s);
                        let dot: f64 = g[r * d..(r + 1) * d]
                            .iter()
                            .zip(xv.row_slice(r))
                            .map(|(a, b)| a * b)
                            .sum();
                        dd[r] -= dot / (gs * gs);
                    }
                }
            }
            Op::NormalizeRows(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    for r in 0..xv.rows() {
                        let xr = xv.row_slice(r);
                        let gr = &g[r * d..(r + 1) * d];
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let s = 1.0 / (n + EPS);
                        let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let c = s * s * dot / (n + EPS);
                        for ((o, gi), xi) in dx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(xr) {
                            *o += gi * s - xi * c;
                        }
                    }
                }
            }
            Op::SoftmaxRows(z) => {
                let k = y.cols();
                if let Some(dz) = self.acc(grads, *z) {
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &g[r * k..(r + 1) * k];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in dz[r * k..(r + 1) * k].iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::AddRowBroadcast(x, b) => {
                let c = y.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    for row in g.chunks(c.max(1)) {
                        add_into(db, row);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = y.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(&mut dx[start * c..start * c + g.len()], g);
                }
            }
            Op::SliceCols(x, start) => {
                let xc = self.value(*x).cols();
                let c = y.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    for r in 0..y.rows() {
                        add_into(&mut dx[r * xc + start..r * xc + start + c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let c = y.cols();
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if let Some(dp) = self.acc(grads, p) {
                        for r in 0..y.rows() {
                            add_into(&mut dp[r * pc..(r + 1) * pc], &g[r * c + off..r * c + off + pc]);
                        }
                    }
                    off += pc;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.acc(grads, p) {
                        add_into(dp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SegmentMean { x, segments, coef } => {
                let d = y.cols();
                if let Some(dx) = self.acc(grads, *x) {
                    for (i, (&s, &c)) in segments.iter().zip(coef).enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        for (o, gi) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[s * d..(s + 1) * d]) {
                            *o += c * gi;
                        }
                    }
                }
            }
            Op::RowDistances(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, d) = (av.rows(), bv.rows(), av.cols());
                let want_a = self.nodes[a.0].requires_grad;
                let want_b = self.nodes[b.0].requires_grad;
                let mut ga = if want_a { vec![0.0; n * d] } else { Vec::new() };
                let mut gb = if want_b { vec![0.0; k * d] } else { Vec::new() };
                for i in 0..n {
                    let ai = av.row_slice(i);
                    for l in 0..k {
                        let s = g[i * k + l] / (y.data()[i * k + l] + EPS);
                        if s == 0.0 {
                            continue;
                        }
                        let bl = bv.row_slice(l);
                        for j in 0..d {
                            let t = s * (ai[j] - bl[j]);
                            if want_a {
                                ga[i * d + j] += t;
                            }
                            if want_b {
                                gb[l * d + j] -= t;
                            }
                        }
                    }
                }
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, &ga);
                }
                if let Some(db) = self.acc(grads, *b) {
                    add_into(db, &gb);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
