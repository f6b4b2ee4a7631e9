use indexmap::IndexMap;

use super::tensor::{gemm, gemm_strided};
use super::{DiffError, ParamStore, Tensor};

const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Tanh(Var),
    Softplus(Var),
    Selu(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    LogSumExp(Var, usize),
    SliceCols(Var, usize, usize),
    ConcatCols(Var, Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// A tape lives for one training step: bind parameters, build the loss,
/// call [`Tape::backward`], drop the tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: IndexMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: IndexMap<String, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any recorded node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor> {
        self.params
    }
}

fn broadcast_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize), DiffError> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(DiffError::ShapeMismatch {
            op,
            left: vec![a.0, a.1],
            right: vec![b.0, b.1],
        }),
    }
}

#[inline]
fn bidx(dims: (usize, usize), i: usize, j: usize) -> usize {
    let r = if dims.0 == 1 { 0 } else { i };
    let c = if dims.1 == 1 { 0 } else { j };
    r * dims.1 + c
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, DiffError> {
    let da = a.dims2()?;
    let db = b.dims2()?;
    let (r, c) = broadcast_dims(op, da, db)?;
    let (x, y) = (a.data(), b.data());
    let data = if da == (r, c) && db == (r, c) {
        x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
    } else {
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(x[bidx(da, i, j)], y[bidx(db, i, j)]));
            }
        }
        out
    };
    Tensor::matrix(r, c, data)
}

/// Sum `g` (shape `out`) down to `target` along broadcast dimensions.
fn reduce_to(g: &Tensor, target: (usize, usize)) -> Tensor {
    let (r, c) = (g.rows(), g.cols());
    if (r, c) == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target.0, target.1);
    let gd = g.data();
    let od = out.data_mut();
    for i in 0..r {
        for j in 0..c {
            od[bidx(target, i, j)] += gd[i * c + j];
        }
    }
    out
}

/// Stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
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

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free input whose gradient is reported through [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a named parameter from `store`. Binding the same name twice returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, DiffError> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| DiffError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = gemm(m, k, n, self.value(a).data(), self.value(b).data());
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), ng))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let out = broadcast_binary(name, self.value(a), self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    /// Elementwise sum with 2-D broadcasting of unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        self.unary(a, selu, Op::Selu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries, as a `[1, 1]` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(DiffError::EmptyAxis);
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), ng))
    }

    /// Sum along `axis` (0: over rows giving `1 x c`; 1: over columns giving `r x 1`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        let d = t.data();
        let out = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += d[i * c + j];
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            1 => Tensor::matrix(r, 1, (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect())?,
            _ => return Err(DiffError::BadAxis(axis)),
        };
        let ng = self.ng(a);
        Ok(self.push(out, Op::SumAxis(a, axis), ng))
    }

    /// Max-shifted log-sum-exp along `axis`; `-inf` entries are allowed.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let out = logsumexp(self.value(a), axis)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::LogSumExp(a, axis), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        let (r, c) = t.dims2()?;
        if start > end || end > c {
            return Err(DiffError::BadSlice { start, end, cols: c });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&t.data()[i * c + start..i * c + end]);
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::matrix(r, w, out)?, Op::SliceCols(a, start, end), ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(DiffError::ShapeMismatch {
                op: "concat_cols",
                left: vec![ra, ca],
                right: vec![rb, cb],
            });
        }
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(self.value(a).row_slice(i));
            out.extend_from_slice(self.value(b).row_slice(i));
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::matrix(ra, ca + cb, out)?, Op::ConcatCols(a, b), ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let out = self.value(a).reshaped(rows, cols)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// Reverse sweep from a `[1, 1]` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let out = self.value(loss);
        if out.len() != 1 {
            return Err(DiffError::NonScalarBackward(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = IndexMap::with_capacity(self.params.len());
        for (name, v) in &self.params {
            let g = match &grads[v.0] {
                Some(g) => g.clone(),
                None => {
                    let t = self.value(*v);
                    Tensor::new(t.shape().to_vec(), vec![0.0; t.len()])?
                }
            };
            params.insert(name.clone(), g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), DiffError> {
        let acc = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing
                    .data_mut()
                    .iter_mut()
                    .zip(delta.data())
                    .for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = av.dims2()?;
                let n = bv.cols();
                if self.ng(a) {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    gemm_strided(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), &mut da);
                    acc(a, Tensor::matrix(m, k, da)?, grads);
                }
                if self.ng(b) {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    gemm_strided(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db);
                    acc(b, Tensor::matrix(k, n, db)?, grads);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.ng(a) {
                    acc(a, reduce_to(g, self.value(a).dims2()?), grads);
                }
                if self.ng(b) {
                    let mut gb = reduce_to(g, self.value(b).dims2()?);
                    if sign < 0.0 {
                        gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                    }
                    acc(b, gb, grads);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.ng(a) {
                    let full = broadcast_binary("mul", g, bv, |p, q| p * q)?;
                    acc(a, reduce_to(&full, av.dims2()?), grads);
                }
                if self.ng(b) {
                    let full = broadcast_binary("mul", g, av, |p, q| p * q)?;
                    acc(b, reduce_to(&full, bv.dims2()?), grads);
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.ng(a) {
                    let full = broadcast_binary("div", g, bv, |p, q| p / q)?;
                    acc(a, reduce_to(&full, av.dims2()?), grads);
                }
                if self.ng(b) {
                    // d(a/b)/db = -y / b
                    let gy = broadcast_binary("div", g, y, |p, q| p * q)?;
                    let full = broadcast_binary("div", &gy, bv, |p, q| -p / q)?;
                    acc(b, reduce_to(&full, bv.dims2()?), grads);
                }
            }
            Op::Neg(a) => acc(a, g.map(|x| -x), grads),
            Op::Scale(a, s) => acc(a, g.map(|x| x * s), grads),
            Op::AddScalar(a) => acc(a, g.clone(), grads),
            Op::Exp(a) => acc(a, zip(g, y, |gi, yi| gi * yi), grads),
            Op::Log(a) => acc(a, zip(g, self.value(a), |gi, xi| gi / xi), grads),
            Op::Square(a) => acc(a, zip(g, self.value(a), |gi, xi| 2.0 * gi * xi), grads),
            Op::Tanh(a) => acc(a, zip(g, y, |gi, yi| gi * (1.0 - yi * yi)), grads),
            Op::Softplus(a) => acc(a, zip(g, self.value(a), |gi, xi| gi * sigmoid(xi)), grads),
            Op::Selu(a) => acc(
                a,
                zip(g, self.value(a), |gi, xi| {
                    if xi > 0.0 {
                        gi * SELU_SCALE
                    } else {
                        gi * SELU_SCALE * SELU_ALPHA * xi.exp()
                    }
                }),
                grads,
            ),
            Op::LeakyRelu(a, slope) => acc(
                a,
                zip(g, self.value(a), |gi, xi| if xi > 0.0 { gi } else { gi * slope }),
                grads,
            ),
            Op::Clamp(a, lo, hi) => acc(
                a,
                zip(g, self.value(a), |gi, xi| if xi >= lo && xi <= hi { gi } else { 0.0 }),
                grads,
            ),
            Op::Sum(a) => {
                let t = self.value(a);
                acc(a, Tensor::new(t.shape().to_vec(), vec![g.item(); t.len()])?, grads);
            }
            Op::Mean(a) => {
                let t = self.value(a);
                let v = g.item() / t.len() as f64;
                acc(a, Tensor::new(t.shape().to_vec(), vec![v; t.len()])?, grads);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.value(a).dims2()?;
                let gd = g.data();
                let data = (0..r * c)
                    .map(|idx| if axis == 0 { gd[idx % c] } else { gd[idx / c] })
                    .collect();
                acc(a, Tensor::matrix(r, c, data)?, grads);
            }
            Op::LogSumExp(a, axis) => {
                let x = self.value(a);
                let (r, c) = x.dims2()?;
                let (xd, yd, gd) = (x.data(), y.data(), g.data());
                let data = (0..r * c)
                    .map(|idx| {
                        let o = if axis == 0 { idx % c } else { idx / c };
                        if yd[o] == f64::NEG_INFINITY {
                            0.0
                        } else {
                            gd[o] * (xd[idx] - yd[o]).exp()
                        }
                    })
                    .collect();
                acc(a, Tensor::matrix(r, c, data)?, grads);
            }
            Op::SliceCols(a, start, end) => {
                let (r, c) = self.value(a).dims2()?;
                let w = end - start;
                let mut full = vec![0.0; r * c];
                for i in 0..r {
                    full[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                acc(a, Tensor::matrix(r, c, full)?, grads);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(a).dims2()?;
                let cb = self.value(b).cols();
                let w = ca + cb;
                if self.ng(a) {
                    let mut ga = Vec::with_capacity(r * ca);
                    for i in 0..r {
                        ga.extend_from_slice(&g.data()[i * w..i * w + ca]);
                    }
                    acc(a, Tensor::matrix(r, ca, ga)?, grads);
                }
                if self.ng(b) {
                    let mut gb = Vec::with_capacity(r * cb);
                    for i in 0..r {
                        gb.extend_from_slice(&g.data()[i * w + ca..(i + 1) * w]);
                    }
                    acc(b, Tensor::matrix(r, cb, gb)?, grads);
                }
            }
            Op::Reshape(a) => {
                let t = self.value(a);
                acc(a, Tensor::new(t.shape().to_vec(), g.data().to_vec())?, grads);
            }
        }
        Ok(())
    }
}

fn zip(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Numerically stable log-sum-exp of a slice. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-sum-exp of a matrix along `axis` (0: per column, 1: per row).
pub fn logsumexp(t: &Tensor, axis: usize) -> Result<Tensor, DiffError> {
    let (r, c) = t.dims2()?;
    let d = t.data();
    match axis {
        0 => {
            if r == 0 {
                return Err(DiffError::EmptyAxis);
            }
            let out = (0..c)
                .map(|j| {
                    let col: Vec<f64> = (0..r).map(|i| d[i * c + j]).collect();
                    log_sum_exp(&col)
                })
                .collect();
            Tensor::matrix(1, c, out)
        }
        1 => {
            if c == 0 {
                return Err(DiffError::EmptyAxis);
            }
            let out = (0..r).map(|i| log_sum_exp(&d[i * c..(i + 1) * c])).collect();
            Tensor::matrix(r, 1, out)
        }
        _ => Err(DiffError::BadAxis(axis)),
    }
}
