//! Wengert-list tape: every forward op appends a node, `backward` walks the list in reverse.
//!
//! A tape is built fresh for each evaluation and thrown away afterwards. Parameters enter
//! the tape by value and are identified by name, so gradients come back as a map keyed by
//! parameter name that the owning [`ParamStore`](super::ParamStore) accumulates.

use std::collections::BTreeMap;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// RMS-normalization stabilizer.
pub const FEATURE_NORM_DELTA: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Softplus(Var),
    FeatureNorm(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    MaxAll(Var),
    SumRows(Var),
    MeanRows(Var),
    MaxRows(Var),
    Variance(Var),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::FeatureNorm(..) => "feature_normalize",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::MaxAll(..) => "max",
            Op::SumRows(..) => "sum_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::MaxRows(..) => "max_rows",
            Op::Variance(..) => "variance",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SelectCols(..) => "select_cols",
            Op::Reshape(..) => "reshape",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::ConcatRows(parts) => parts.clone(),
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Tanh(x)
            | Op::LeakyRelu(x, _)
            | Op::Square(x)
            | Op::Softplus(x)
            | Op::FeatureNorm(x, _)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::MaxAll(x)
            | Op::SumRows(x)
            | Op::MeanRows(x)
            | Op::MaxRows(x)
            | Op::Variance(x)
            | Op::SliceRows(x, ..)
            | Op::SelectCols(x, _)
            | Op::Reshape(x) => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<String>,
    needs_grad: bool,
}

/// One entry of the computation record: which primitive produced which node from which.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub kind: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.by_name.insert(name.into(), grad);
    }
}

/// Computation record for one evaluation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Inserts a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Node { op: Op::Leaf, value, param: None, needs_grad: false })
    }

    /// Inserts a parameter's current value. Frozen parameters enter as constants.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if p.is_frozen() {
            return self.constant(p.value().clone());
        }
        self.push_node(Node {
            op: Op::Leaf,
            value: p.value().clone(),
            param: Some(p.name().to_string()),
            needs_grad: true,
        })
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = {
            let lookup = |v: Var| &self.nodes[v.0].value;
            compute(&op, &lookup)?
        };
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_node(Node { op, value, param: None, needs_grad }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose(x))
    }

    /// `x[r, c] + bias[c]`, bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.push(Op::LeakyRelu(x, slope))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Square(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softplus(x))
    }

    /// Row-wise `x / sqrt(mean(x²) + δ)` with the default δ.
    pub fn feature_normalize(&mut self, x: Var) -> Result<Var> {
        self.push(Op::FeatureNorm(x, FEATURE_NORM_DELTA))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanAll(x))
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MaxAll(x))
    }

    /// `[r, c] -> [r, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumRows(x))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanRows(x))
    }

    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MaxRows(x))
    }

    /// Bessel-corrected variance along the leading axis: `[k, ...] -> [...]`.
    pub fn variance(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Variance(x))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceRows(x, start, len))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        self.push(Op::SelectCols(x, cols.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let needs_grad = self.nodes[x.0].needs_grad;
        Ok(self.push_node(Node { op: Op::Reshape(x), value, param: None, needs_grad }))
    }

    /// The ordered list of primitive applications recorded so far.
    pub fn record(&self) -> Vec<RecordEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RecordEntry {
                kind: n.op.name(),
                inputs: n.op.inputs().iter().map(|v| v.0).collect(),
                output: i,
            })
            .collect()
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Reshape(x) => {
                    let shape = node.value.shape().to_vec();
                    values[x.0].reshape(&shape)?
                }
                op => {
                    let lookup = |v: Var| &values[v.0];
                    compute(op, &lookup)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", loss_value.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Some(name) = &node.param {
                match out.by_name.get_mut(name) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        out.by_name.insert(name.clone(), g);
                    }
                }
                continue;
            }
            for (input, gi) in self.input_grads(idx, &g)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn input_grads(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).dims2()?.1;
                if self.wants(*a) {
                    // g[m,n] · bᵀ[n,k]
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n as isize, 1), val(*b).data(), (1, n as isize), &mut ga);
                    res.push((*a, Tensor::new(vec![m, k], ga)?));
                }
                if self.wants(*b) {
                    // aᵀ[k,m] · g[m,n]
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), (1, k as isize), g.data(), (n as isize, 1), &mut gb);
                    res.push((*b, Tensor::new(vec![k, n], gb)?));
                }
            }
            Op::Transpose(x) => res.push((*x, g.transpose()?)),
            Op::AddBias(x, b) => {
                res.push((*x, g.clone()));
                if self.wants(*b) {
                    let (r, c) = g.dims2()?;
                    let mut gb = vec![0.0; c];
                    for i in 0..r {
                        for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    res.push((*b, Tensor::new(val(*b).shape().to_vec(), gb)?));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.scaled(-1.0)));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.zip_map(val(*b), |g, b| g * b)?));
                }
                if self.wants(*b) {
                    res.push((*b, g.zip_map(val(*a), |g, a| g * a)?));
                }
            }
            Op::Scale(x, c) => res.push((*x, g.scaled(*c))),
            Op::Tanh(x) => res.push((*x, g.zip_map(y, |g, y| g * (1.0 - y * y))?)),
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                res.push((*x, g.zip_map(val(*x), |g, x| if x > 0.0 { g } else { g * s })?));
            }
            Op::Square(x) => res.push((*x, g.zip_map(val(*x), |g, x| 2.0 * x * g)?)),
            Op::Softplus(x) => {
                res.push((*x, g.zip_map(val(*x), |g, x| g * sigmoid(x))?));
            }
            Op::FeatureNorm(x, delta) => {
                let xv = val(*x);
                let width = *xv.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; xv.len()];
                for ((xr, gr), out) in xv.data().chunks(width).zip(g.data().chunks(width)).zip(gx.chunks_mut(width)) {
                    let n = width as f64;
                    let ms = xr.iter().map(|v| v * v).sum::<f64>() / n;
                    let r = (ms + delta).sqrt();
                    let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let coef = dot / (n * r * r * r);
                    for ((o, xi), gi) in out.iter_mut().zip(xr).zip(gr) {
                        *o = gi / r - xi * coef;
                    }
                }
                res.push((*x, Tensor::new(xv.shape().to_vec(), gx)?));
            }
            Op::SumAll(x) => {
                res.push((*x, Tensor::filled(val(*x).shape(), g.data()[0])));
            }
            Op::MeanAll(x) => {
                let n = val(*x).len() as f64;
                res.push((*x, Tensor::filled(val(*x).shape(), g.data()[0] / n)));
            }
            Op::MaxAll(x) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                gx.data_mut()[argmax(xv.data())] = g.data()[0];
                res.push((*x, gx));
            }
            Op::SumRows(x) | Op::MeanRows(x) | Op::MaxRows(x) => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let gi = g.data()[i];
                    match &node.op {
                        Op::SumRows(_) => gx.row_mut(i).iter_mut().for_each(|v| *v = gi),
                        Op::MeanRows(_) => gx.row_mut(i).iter_mut().for_each(|v| *v = gi / c as f64),
                        _ => {
                            let j = argmax(xv.row(i));
                            gx.set(i, j, gi);
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::Variance(x) => {
                let xv = val(*x);
                let k = xv.shape()[0];
                let m = xv.len() / k;
                let means = column_means(xv.data(), k, m);
                let scale = 2.0 / (k as f64 - 1.0);
                let mut gx = vec![0.0; xv.len()];
                for i in 0..k {
                    for j in 0..m {
                        gx[i * m + j] = scale * (xv.data()[i * m + j] - means[j]) * g.data()[j];
                    }
                }
                res.push((*x, Tensor::new(xv.shape().to_vec(), gx)?));
            }
            Op::SliceRows(x, start, _) => {
                let xv = val(*x);
                let inner = xv.len() / xv.shape()[0];
                let mut gx = Tensor::zeros(xv.shape());
                gx.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                res.push((*x, gx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    let part = Tensor::new(val(*p).shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    res.push((*p, part));
                    offset += n;
                }
            }
            Op::SelectCols(x, cols) => {
                let xv = val(*x);
                let (r, c) = xv.dims2()?;
                let mut gx = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for (jj, &j) in cols.iter().enumerate() {
                        let cur = gx.at(i, j);
                        gx.set(i, j, cur + g.at(i, jj));
                    }
                }
                res.push((*x, gx));
            }
            Op::Reshape(x) => res.push((*x, g.reshape(val(*x).shape())?)),
        }
        Ok(res)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn column_means(data: &[f64], k: usize, m: usize) -> Vec<f64> {
    let mut means = vec![0.0; m];
    for i in 0..k {
        for (acc, v) in means.iter_mut().zip(&data[i * m..(i + 1) * m]) {
            *acc += v;
        }
    }
    means.iter_mut().for_each(|v| *v /= k as f64);
    means
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!("{op}: shape mismatch {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn compute<'a>(op: &Op, val: &dyn Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    let out = match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::MatMul(a, b) => val(*a).matmul(val(*b))?,
        Op::Transpose(x) => val(*x).transpose()?,
        Op::AddBias(x, b) => {
            let (xv, bv) = (val(*x), val(*b));
            let (r, c) = xv.dims2()?;
            if bv.len() != c || bv.rank() > 2 {
                return Err(Error::contract(format!(
                    "add_bias: bias shape {:?} does not match {c} columns",
                    bv.shape()
                )));
            }
            let mut out = xv.clone();
            for i in 0..r {
                for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            out
        }
        Op::Add(a, b) => {
            same_shape("add", val(*a), val(*b))?;
            val(*a).zip_map(val(*b), |a, b| a + b)?
        }
        Op::Sub(a, b) => {
            same_shape("sub", val(*a), val(*b))?;
            val(*a).zip_map(val(*b), |a, b| a - b)?
        }
        Op::Mul(a, b) => {
            same_shape("mul", val(*a), val(*b))?;
            val(*a).zip_map(val(*b), |a, b| a * b)?
        }
        Op::Scale(x, c) => val(*x).scaled(*c),
        Op::Tanh(x) => val(*x).map(f64::tanh),
        Op::LeakyRelu(x, s) => {
            let s = *s;
            val(*x).map(|v| if v > 0.0 { v } else { v * s })
        }
        Op::Square(x) => val(*x).map(|v| v * v),
        Op::Softplus(x) => val(*x).map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p()),
        Op::FeatureNorm(x, delta) => {
            let xv = val(*x);
            if xv.rank() == 0 || xv.rank() > 2 {
                return Err(Error::contract("feature_normalize expects a vector or matrix"));
            }
            let width = *xv.shape().last().unwrap();
            let mut out = xv.clone();
            for row in out.data_mut().chunks_mut(width) {
                let ms = row.iter().map(|v| v * v).sum::<f64>() / width as f64;
                let r = (ms + delta).sqrt();
                row.iter_mut().for_each(|v| *v /= r);
            }
            out
        }
        Op::SumAll(x) => Tensor::scalar(val(*x).sum()),
        Op::MeanAll(x) => Tensor::scalar(val(*x).sum() / val(*x).len() as f64),
        Op::MaxAll(x) => {
            let d = val(*x).data();
            Tensor::scalar(d[argmax(d)])
        }
        Op::SumRows(x) | Op::MeanRows(x) | Op::MaxRows(x) => {
            let xv = val(*x);
            let (r, c) = xv.dims2()?;
            let data = (0..r)
                .map(|i| {
                    let row = xv.row(i);
                    match op {
                        Op::SumRows(_) => row.iter().sum(),
                        Op::MeanRows(_) => row.iter().sum::<f64>() / c as f64,
                        _ => row[argmax(row)],
                    }
                })
                .collect();
            Tensor::new(vec![r, 1], data)?
        }
        Op::Variance(x) => {
            let xv = val(*x);
            if xv.rank() == 0 || xv.shape()[0] < 2 {
                return Err(Error::contract(format!(
                    "variance needs at least two entries along the leading axis, got shape {:?}",
                    xv.shape()
                )));
            }
            let k = xv.shape()[0];
            let m = xv.len() / k;
            let means = column_means(xv.data(), k, m);
            let mut var = vec![0.0; m];
            for i in 0..k {
                for (j, acc) in var.iter_mut().enumerate() {
                    let d = xv.data()[i * m + j] - means[j];
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= k as f64 - 1.0);
            Tensor::new(xv.shape()[1..].to_vec(), var)?
        }
        Op::SliceRows(x, start, len) => {
            let xv = val(*x);
            if xv.rank() == 0 || *len == 0 || start + len > xv.shape()[0] {
                return Err(Error::contract(format!(
                    "slice_rows {start}..{} out of range for shape {:?}",
                    start + len,
                    xv.shape()
                )));
            }
            let inner = xv.len() / xv.shape()[0];
            let mut shape = xv.shape().to_vec();
            shape[0] = *len;
            Tensor::new(shape, xv.data()[start * inner..(start + len) * inner].to_vec())?
        }
        Op::ConcatRows(parts) => {
            let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
            let tail = val(*first).shape().get(1..).unwrap_or(&[]).to_vec();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let pv = val(*p);
                if pv.rank() == 0 || pv.shape()[1..] != tail[..] {
                    return Err(Error::contract(format!("concat_rows: trailing shape mismatch {:?}", pv.shape())));
                }
                rows += pv.shape()[0];
                data.extend_from_slice(pv.data());
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            Tensor::new(shape, data)?
        }
        Op::SelectCols(x, cols) => {
            let xv = val(*x);
            let (r, c) = xv.dims2()?;
            if cols.is_empty() || cols.iter().any(|&j| j >= c) {
                return Err(Error::contract(format!("select_cols {cols:?} out of range for {c} columns")));
            }
            let mut data = Vec::with_capacity(r * cols.len());
            for i in 0..r {
                let row = xv.row(i);
                data.extend(cols.iter().map(|&j| row[j]));
            }
            Tensor::new(vec![r, cols.len()], data)?
        }
        Op::Reshape(_) => unreachable!("reshape is handled by the tape"),
    };
    if !out.all_finite() {
        return Err(Error::Numeric { op: op.name(), detail: format!("non-finite output of shape {:?}", out.shape()) });
    }
    Ok(out)
}
