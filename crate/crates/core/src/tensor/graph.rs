use std::collections::HashMap;

use super::params::{ParamId, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param { set: u64, id: ParamId },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    SumAll(Var),
    SumRows(Var),
    GroupSum(Var, usize),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Gather(Var, Vec<Option<usize>>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Wengert tape. Every operation appends a node; `backward` replays the tape
/// in reverse. A graph is built per forward pass and dropped afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<(u64, ParamId), Var>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(u64, ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter adjoints into the matching tensors of `params`.
    /// Parameters from other sets (or with `requires_grad` off) are skipped.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for &(set, id, var) in &self.params {
            if set != params.uid() {
                continue;
            }
            if let Some(g) = self.get(var) {
                let t = params.get_mut(id);
                if t.requires_grad() {
                    t.accumulate_grad(g);
                }
            }
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices sized for the (m, k, n) layout described by
    // the strides; the output is a dense row-major m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|&v| self.tracked(v));
        self.push(value, op, tracked)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose adjoint is recorded (used to differentiate w.r.t. inputs).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let key = (params.uid(), id);
        if let Some(&v) = self.param_vars.get(&key) {
            return v;
        }
        let t = params.get(id);
        let tracked = t.requires_grad();
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
            grad: None,
            requires_grad: false,
        };
        let v = self.push(
            value,
            Op::Param {
                set: params.uid(),
                id,
            },
            tracked,
        );
        self.param_vars.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions {k} vs {k2}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            0.0,
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a` is `[m, n]`, `bias` has `n` elements and is added to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "bias of length {} for {n} columns",
                self.value(bias).len()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push_op(value, Op::AddRow(a, bias), &[a, bias]))
    }

    /// Affine map `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(self.value(a), self.value(b), name)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.value(a).shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push_op(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a, b), &[a, b]))
    }

    /// `[m, n] * [m, 1]`: scales each row by the matching entry of `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if self.value(col).len() != m {
            return Err(Error::shape(format!(
                "mul_col: {} scales for {m} rows",
                self.value(col).len()
            )));
        }
        let c = self.value(col).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * c[i / n.max(1)])
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::MulCol(a, col), &[a, col]))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let value = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&x| f(x)).collect(),
            grad: None,
            requires_grad: false,
        };
        self.push_op(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x > 0.0 { x } else { x.exp_m1() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `[m, n] -> [m, 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let data = self
            .value(a)
            .data()
            .chunks(n.max(1))
            .map(|r| r.iter().sum())
            .collect();
        let value = Tensor {
            shape: vec![m, 1],
            data,
            grad: None,
            requires_grad: false,
        };
        self.push_op(value, Op::SumRows(a), &[a])
    }

    /// `[m, g * k] -> [m, g]`: sums consecutive groups of `k` columns.
    pub fn group_sum(&mut self, a: Var, k: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if k == 0 || n % k != 0 {
            return Err(Error::shape(format!(
                "group_sum: {n} columns not divisible by {k}"
            )));
        }
        let groups = n / k;
        let data = self.value(a).data().chunks(k).map(|c| c.iter().sum()).collect();
        let value = Tensor::new(vec![m, groups], data)?;
        Ok(self.push_op(value, Op::GroupSum(a, k), &[a]))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let mut data = Vec::with_capacity(m * n);
        for row in self.value(a).data().chunks(n.max(1)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / z));
        }
        let value = Tensor {
            shape: self.value(a).shape().to_vec(),
            data,
            grad: None,
            requires_grad: false,
        };
        self.push_op(value, Op::Softmax(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.value(p).dims2().0)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        if parts.iter().any(|&p| self.value(p).dims2().0 != m) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).dims2().1)
            .ok_or_else(|| Error::shape("concat of nothing"))?;
        if parts.iter().any(|&p| self.value(p).dims2().1 != n) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            m += self.value(p).dims2().0;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_op(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if lo > hi || hi > n {
            return Err(Error::shape(format!("slice {lo}..{hi} of {n} columns")));
        }
        let w = hi - lo;
        let mut data = Vec::with_capacity(m * w);
        for row in self.value(a).data().chunks(n.max(1)) {
            data.extend_from_slice(&row[lo..hi]);
        }
        let value = Tensor::new(vec![m, w], data)?;
        Ok(self.push_op(value, Op::SliceCols(a, lo, hi), &[a]))
    }

    /// Flat gather: output element `j` is `a[index[j]]`, or exactly `0.0` for
    /// `None`. Zero entries receive no adjoint.
    pub fn gather(&mut self, a: Var, index: Vec<Option<usize>>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(a).data();
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= src.len()) {
            return Err(Error::shape(format!(
                "gather index {bad} out of {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push_op(value, Op::Gather(a, index), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push_op(value, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Param { set, id } = node.op {
                params.push((set, id, Var(idx)));
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.tracked(var) {
            return;
        }
        let len = self.value(var).len();
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let (_, n) = self.value(*b).dims2();
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                // dA = dC B^T, dB = A^T dC
                self.acc(grads, *a, |ga| gemm(m, n, k, g, n, 1, bv, 1, n, 1.0, ga));
                self.acc(grads, *b, |gb| gemm(k, m, n, av, 1, k, g, n, 1, 1.0, gb));
            }
            Op::AddRow(a, bias) => {
                let n = out.dims2().1.max(1);
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for (x, d) in gb.iter_mut().zip(g) {
                        *x -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::MulCol(a, col) => {
                let n = out.dims2().1.max(1);
                let av = self.value(*a).data();
                let cv = self.value(*col).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * cv[i / n];
                    }
                });
                self.acc(grads, *col, |gc| {
                    for i in 0..g.len() {
                        gc[i / n] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| {
                for (x, d) in ga.iter_mut().zip(g) {
                    *x += d * c;
                }
            }),
            Op::AddScalar(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Abs(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        let s = if av[i] > 0.0 {
                            1.0
                        } else if av[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        ga[i] += g[i] * s;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Elu(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += if av[i] > 0.0 { g[i] } else { g[i] * av[i].exp() };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i];
                    }
                });
            }
            Op::SumAll(a) => self.acc(grads, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::SumRows(a) => {
                let n = self.value(*a).dims2().1.max(1);
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i / n];
                    }
                });
            }
            Op::GroupSum(a, k) => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i / k];
                }
            }),
            Op::Softmax(a) => {
                let n = out.dims2().1.max(1);
                let y = out.data();
                self.acc(grads, *a, |ga| {
                    for ((gr, yr), dr) in ga.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    self.acc(grads, p, |gp| {
                        for r in 0..m {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let n = self.value(*a).dims2().1;
                let w = hi - lo;
                self.acc(grads, *a, |ga| {
                    for (r, chunk) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut ga[r * n + lo..r * n + hi], chunk);
                    }
                });
            }
            Op::Gather(a, index) => self.acc(grads, *a, |ga| {
                for (j, i) in index.iter().enumerate() {
                    if let Some(i) = i {
                        ga[*i] += g[j];
                    }
                }
            }),
            Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let w = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let w = g.constant(t(&[2, 2], &[1.0; 4]));
        assert!(matches!(g.matmul(x, w), Err(Error::Shape(_))));
        let w = g.constant(t(&[3, 2], &[1.0; 6]));
        let b = g.constant(t(&[3], &[0.0; 3]));
        let y = g.matmul(x, w).unwrap();
        assert!(matches!(g.add_row(y, b), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], &[0.5, -1.0, 2.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_error_chain_rule() {
        // (w x - y)^2 at w=1, x=2, y=0: d/dw = 2 (w x - y) x = 8
        let mut g = Graph::new();
        let w = g.input(Tensor::scalar(1.0));
        let x = g.constant(Tensor::scalar(2.0));
        let y = g.constant(Tensor::scalar(0.0));
        let wx = g.mul(w, x).unwrap();
        let d = g.sub(wx, y).unwrap();
        let l = g.square(d).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[8.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -50.0, 0.0, 700.0]));
        let y = g.softmax(x);
        for r in 0..2 {
            let row = g.value(y).row(r);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_none_is_exact_zero_without_adjoint() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], &[4.0, 5.0, 6.0]));
        let y = g.gather(x, vec![Some(2), None, Some(2)], vec![3]).unwrap();
        assert_eq!(g.value(y).data(), &[6.0, 0.0, 6.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn untracked_branches_get_no_adjoint() {
        let mut g = Graph::new();
        let c = g.constant(t(&[2], &[1.0, 2.0]));
        let x = g.input(t(&[2], &[3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
    }
}
