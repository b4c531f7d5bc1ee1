use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{invalid, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    /// Per-column argmax row of the input.
    MaxPoolRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
    L2NormRows(Var),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    SliceRows(Var, usize),
    AddRowBias(Var, Var),
    CosineRows(Var, Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Insertion order is a
/// topological order, so the backward pass is a single reverse sweep.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn shape_err<T>(op: &str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    invalid(format!("{op}: incompatible shapes {}x{} and {}x{}", a.0, a.1, b.0, b.1))
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
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input treated as a constant; it still receives no gradient work.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, sa, sb);
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_raw(va.rows(), va.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::from_raw(va.rows(), va.cols(), va.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return shape_err("matmul", sa, sb);
        }
        let v = matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        Ok(self.push(v, Op::Relu(a), rg))
    }

    /// Same function as [`Tape::relu`], named for hinge terms.
    pub fn max_with_zero(&mut self, a: Var) -> Result<Var> {
        self.relu(a)
    }

    /// Column-wise maximum over rows, `n x c -> 1 x c`. Ties go to the
    /// lowest row index.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() == 0 {
            return invalid("max_pool_rows of an empty tensor");
        }
        let c = va.cols();
        let mut best = va.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for r in 1..va.rows() {
            for (j, &x) in va.row(r).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    arg[j] = r;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(1, c, best), Op::MaxPoolRows(a, arg), rg))
    }

    /// Column-wise minimum over rows.
    pub fn min_pool_rows(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        let m = self.max_pool_rows(neg)?;
        self.scale(m, -1.0)
    }

    /// Mean of all elements, as 1x1.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return invalid("mean of an empty tensor");
        }
        let m = va.data().iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Sum of all elements, as 1x1.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return invalid("scale factor must be finite");
        }
        let v = self.map(a, |x| x * k);
        let rg = self.rg(a);
        Ok(self.push(v, Op::Scale(a, k), rg))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return invalid("offset must be finite");
        }
        let v = self.map(a, |x| x + k);
        let rg = self.rg(a);
        Ok(self.push(v, Op::AddScalar(a), rg))
    }

    /// Euclidean norm of each row, `n x c -> n x 1`. Gradient 0 at the origin.
    pub fn l2_norm_rows(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = (0..va.rows())
            .map(|r| va.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::from_raw(va.rows(), 1, data);
        let rg = self.rg(a);
        Ok(self.push(v, Op::L2NormRows(a), rg))
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return shape_err("concat_rows", va.shape(), vb.shape());
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let v = Tensor::from_raw(va.rows() + vb.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ConcatRows(a, b), rg))
    }

    /// Places `b` to the right of `a`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return shape_err("concat_cols", va.shape(), vb.shape());
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let v = Tensor::from_raw(va.rows(), va.cols() + vb.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let va = self.value(a);
        if va.rows() != 1 {
            return invalid(format!("broadcast_rows needs one row, got {}", va.rows()));
        }
        let v = Tensor::from_raw(n, va.cols(), va.data().repeat(n));
        let rg = self.rg(a);
        Ok(self.push(v, Op::BroadcastRows(a), rg))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.rows() {
            return invalid(format!(
                "slice_rows {start}..{} out of {} rows",
                start + len,
                va.rows()
            ));
        }
        let c = va.cols();
        let v = Tensor::from_raw(len, c, va.data()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(a);
        Ok(self.push(v, Op::SliceRows(a, start), rg))
    }

    /// Adds a `1 x c` bias to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return shape_err("add_row_bias", va.shape(), vb.shape());
        }
        let c = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_exact_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let v = Tensor::from_raw(va.rows(), c, data);
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(v, Op::AddRowBias(a, bias), rg))
    }

    /// Cosine similarity of matching rows, `n x c -> n x 1`. A row pair with
    /// a zero-norm member yields 0 with zero gradient.
    pub fn cosine_similarity_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_similarity_rows", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = (0..va.rows())
            .map(|r| {
                let (x, y) = (va.row(r), vb.row(r));
                let (d, s1, s2) = dot_norms(x, y);
                if s1 > 0.0 && s2 > 0.0 {
                    d / (s1 * s2).sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let v = Tensor::from_raw(va.rows(), 1, data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::CosineRows(a, b), rg))
    }

    /// Same row-major data viewed as `rows x cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let va = self.value(a);
        if va.len() != rows * cols {
            return shape_err("reshape", va.shape(), (rows, cols));
        }
        let v = Tensor::from_raw(rows, cols, va.data().to_vec());
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Rows `rows[i]` of `a`, in order. Repeated rows are allowed.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= va.rows()) {
            return invalid(format!("gather_rows index {r} out of {} rows", va.rows()));
        }
        let c = va.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(va.row(r));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(rows.len(), c, data), Op::GatherRows(a, rows.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`. Every call starts from fresh
    /// accumulators.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return invalid(format!("backward needs a scalar loss, got {r}x{c}"));
        }
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    send(*a, zip(g, vb, |x, y| x * y));
                }
                if self.rg(*b) {
                    send(*b, zip(g, va, |x, y| x * y));
                }
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, matmul_bt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    send(*b, matmul_at(self.value(*a), g));
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                send(*a, zip(g, va, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::MaxPoolRows(a, arg) => {
                let (r, c) = self.shape(*a);
                let mut out = vec![0.0; r * c];
                for (j, &row) in arg.iter().enumerate() {
                    out[row * c + j] = gd[j];
                }
                send(*a, Tensor::from_raw(r, c, out));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                send(*a, Tensor::filled(r, c, gd[0] / (r * c) as f64));
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                send(*a, Tensor::filled(r, c, gd[0]));
            }
            Op::Scale(a, k) => send(*a, scaled(g, *k)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::L2NormRows(a) => {
                let va = self.value(*a);
                let norms = node.value.data();
                let c = va.cols();
                let mut out = vec![0.0; va.len()];
                for r in 0..va.rows() {
                    let n = norms[r];
                    if n > 0.0 {
                        let k = gd[r] / n;
                        for (o, x) in out[r * c..(r + 1) * c].iter_mut().zip(va.row(r)) {
                            *o = k * x;
                        }
                    }
                }
                send(*a, Tensor::from_raw(va.rows(), c, out));
            }
            Op::ConcatRows(a, b) => {
                let (ra, c) = self.shape(*a);
                let rb = self.shape(*b).0;
                if self.rg(*a) {
                    send(*a, Tensor::from_raw(ra, c, gd[..ra * c].to_vec()));
                }
                if self.rg(*b) {
                    send(*b, Tensor::from_raw(rb, c, gd[ra * c..].to_vec()));
                }
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.shape(*a);
                let cb = self.shape(*b).1;
                let (mut ga, mut gb) = (Vec::with_capacity(r * ca), Vec::with_capacity(r * cb));
                for row in gd.chunks_exact(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(*a, Tensor::from_raw(r, ca, ga));
                send(*b, Tensor::from_raw(r, cb, gb));
            }
            Op::BroadcastRows(a) => {
                let c = self.shape(*a).1;
                send(*a, Tensor::from_raw(1, c, column_sums(g)));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = self.shape(*a);
                let mut out = vec![0.0; r * c];
                out[start * c..start * c + gd.len()].copy_from_slice(gd);
                send(*a, Tensor::from_raw(r, c, out));
            }
            Op::AddRowBias(a, bias) => {
                send(*a, g.clone());
                if self.rg(*bias) {
                    send(*bias, Tensor::from_raw(1, g.cols(), column_sums(g)));
                }
            }
            Op::GatherRows(a, rows) => {
                let (r, c) = self.shape(*a);
                let mut out = vec![0.0; r * c];
                for (i, &row) in rows.iter().enumerate() {
                    for j in 0..c {
                        out[row * c + j] += gd[i * c + j];
                    }
                }
                send(*a, Tensor::from_raw(r, c, out));
            }
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                send(*a, Tensor::from_raw(r, c, gd.to_vec()));
            }
            Op::CosineRows(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let c = va.cols();
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for r in 0..va.rows() {
                    let (x, y) = (va.row(r), vb.row(r));
                    let (d, s1, s2) = dot_norms(x, y);
                    if !(s1 > 0.0 && s2 > 0.0) {
                        continue;
                    }
                    let inv = 1.0 / (s1 * s2).sqrt();
                    let k = gd[r];
                    for j in 0..c {
                        ga[r * c + j] = k * (inv * y[j] - d * inv / s1 * x[j]);
                        gb[r * c + j] = k * (inv * x[j] - d * inv / s2 * y[j]);
                    }
                }
                send(*a, Tensor::from_raw(va.rows(), c, ga));
                send(*b, Tensor::from_raw(vb.rows(), c, gb));
            }
        }
    }
}

fn dot_norms(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mut d, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        d += a * b;
        s1 += a * a;
        s2 += b * b;
    }
    (d, s1, s2)
}

fn scaled(t: &Tensor, k: f64) -> Tensor {
    Tensor::from_raw(t.rows(), t.cols(), t.data().iter().map(|x| x * k).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_raw(a.rows(), a.cols(), data)
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, x) in out.iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    out
}
