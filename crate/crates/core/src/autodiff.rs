//! Dense row-major tensors and a single-use reverse-mode tape.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order. [`Tape::backward`] walks it once in reverse and sums
//! gradient contributions over every use of a value.

use std::fmt;

use rand::Rng;

use crate::{seed, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.as_ref().len()
                )));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the forward inputs, the forward output and the
/// upstream gradient (shaped like the output) and returns one gradient per
/// input, or `None` for inputs it does not differentiate.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        upstream: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Activate {
        x: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulColumn {
        x: Var,
        s: Var,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentSum {
        x: Var,
        seg: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Activate { .. } => "activate",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulColumn { .. } => "mul_column",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentSum { .. } => "segment_sum",
            Op::ConcatCols(_) => "concat_cols",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Dropout { .. } => "dropout",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Activate { x, .. }
            | Op::Scale(x, _)
            | Op::GatherRows { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::MeanRows(x)
            | Op::Sum(x)
            | Op::Dropout { x, .. } => vec![*x],
            Op::SoftmaxXent { logits, .. } => vec![*logits],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulColumn { x, s } => vec![*x, *s],
            Op::ConcatCols(v) => v.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `x · w (+ b)` for `x: B×I`, `w: I×O`, `b: [O]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (rows, inner) = xv.dims2()?;
        let (w_in, out) = wv.dims2()?;
        if inner != w_in {
            return Err(Error::Dimension(format!(
                "affine: x {:?} incompatible with w {:?}",
                xv.shape(),
                wv.shape()
            )));
        }
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(Error::Dimension(format!(
                    "affine: bias {:?} incompatible with w {:?}",
                    bv.shape(),
                    wv.shape()
                )));
            }
        }
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let xr = xv.row(r);
            let yr = &mut y[r * out..(r + 1) * out];
            if let Some(b) = b {
                yr.copy_from_slice(self.value(b).data());
            }
            for (k, &xk) in xr.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let wr = &wv.data()[k * out..(k + 1) * out];
                for (yo, wo) in yr.iter_mut().zip(wr) {
                    *yo += xk * wo;
                }
            }
        }
        self.push(Tensor::matrix(rows, out, y)?, Op::Affine { x, w, b })
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let xv = self.value(x);
        let f = |v: f64| match kind {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        };
        let out = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(out, Op::Activate { x, kind })
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * s).collect())?;
        self.push(out, Op::Scale(a, s))
    }

    /// Scale each row of `x: E×C` by the matching entry of `s: E×1`.
    pub fn mul_column(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (rows, cols) = xv.dims2()?;
        if sv.dims2()? != (rows, 1) {
            return Err(Error::Dimension(format!(
                "mul_column: x {:?} with s {:?}",
                xv.shape(),
                sv.shape()
            )));
        }
        let mut data = xv.data().to_vec();
        for r in 0..rows {
            let f = sv.data()[r];
            data[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= f);
        }
        self.push(Tensor::matrix(rows, cols, data)?, Op::MulColumn { x, s })
    }

    /// `out[e] = x[idx[e]]`
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            if i >= rows {
                return Err(Error::Index(format!("gather_rows: row {i} of {rows}")));
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(idx.len(), cols, data)?;
        self.push(out, Op::GatherRows { x, idx })
    }

    /// `out[seg[e]] += x[e]` into `n` rows.
    pub fn segment_sum(&mut self, x: Var, seg: Vec<usize>, n: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if seg.len() != rows {
            return Err(Error::Dimension(format!(
                "segment_sum: {} segment ids for {rows} rows",
                seg.len()
            )));
        }
        let mut data = vec![0.0; n * cols];
        for (e, &s) in seg.iter().enumerate() {
            if s >= n {
                return Err(Error::Index(format!("segment_sum: segment {s} of {n}")));
            }
            for (o, v) in data[s * cols..(s + 1) * cols].iter_mut().zip(xv.row(e)) {
                *o += v;
            }
        }
        let out = Tensor::matrix(n, cols, data)?;
        self.push(out, Op::SegmentSum { x, seg })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::Dimension(format!(
                    "concat_cols: row counts differ ({} vs {r})",
                    rows.unwrap_or(0)
                )));
            }
            widths.push(c);
        }
        let rows = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means of `x: N×C`, shaped `1×C`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        if rows == 0 {
            return Err(Error::Dimension("mean_rows of an empty matrix".into()));
        }
        let mut data = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in data.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / rows as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::matrix(1, cols, data)?, Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng_seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mut rng = seed::rng(rng_seed);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask })
    }

    /// Mean cross-entropy of row-wise softmax. Returns the scalar loss and
    /// the probabilities.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
        let lv = self.value(logits);
        let (rows, classes) = lv.dims2()?;
        if rows == 0 || labels.len() != rows {
            return Err(Error::Dimension(format!(
                "softmax_xent: {} labels for {rows} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let probs = softmax_rows(lv.data(), rows, classes);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| {
                let row = lv.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / rows as f64;
        let probs_t = Tensor::matrix(rows, classes, probs.clone())?;
        let var = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )?;
        Ok((var, probs_t))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(up);
                continue;
            }
            let contributions = self.local_backward(node, &up)?;
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("{} backward", node.op.name())));
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep gradients of intermediate nodes available too.
            grads[idx] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, node: &Node, up: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let val = |v: Var| self.value(v);
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (rows, inner) = xv.dims2()?;
                let (_, outd) = wv.dims2()?;
                let mut gx = vec![0.0; rows * inner];
                let mut gw = vec![0.0; inner * outd];
                for r in 0..rows {
                    let ur = &up[r * outd..(r + 1) * outd];
                    let xr = xv.row(r);
                    for k in 0..inner {
                        let wr = &wv.data()[k * outd..(k + 1) * outd];
                        gx[r * inner + k] = wr.iter().zip(ur).map(|(a, b)| a * b).sum();
                        let gwr = &mut gw[k * outd..(k + 1) * outd];
                        for (g, u) in gwr.iter_mut().zip(ur) {
                            *g += xr[k] * u;
                        }
                    }
                }
                let mut v = vec![(*x, gx), (*w, gw)];
                if let Some(b) = b {
                    let mut gb = vec![0.0; outd];
                    for r in 0..rows {
                        for (g, u) in gb.iter_mut().zip(&up[r * outd..(r + 1) * outd]) {
                            *g += u;
                        }
                    }
                    v.push((*b, gb));
                }
                v
            }
            Op::Activate { x, kind } => {
                let g = match kind {
                    Activation::Relu => val(*x)
                        .data()
                        .iter()
                        .zip(up)
                        .map(|(xv, u)| if *xv > 0.0 { *u } else { 0.0 })
                        .collect(),
                    Activation::Tanh => out
                        .data()
                        .iter()
                        .zip(up)
                        .map(|(y, u)| u * (1.0 - y * y))
                        .collect(),
                    Activation::Sigmoid => out
                        .data()
                        .iter()
                        .zip(up)
                        .map(|(y, u)| u * y * (1.0 - y))
                        .collect(),
                };
                vec![(*x, g)]
            }
            Op::Add(a, b) => vec![(*a, up.to_vec()), (*b, up.to_vec())],
            Op::Mul(a, b) => {
                let ga = val(*b).data().iter().zip(up).map(|(v, u)| v * u).collect();
                let gb = val(*a).data().iter().zip(up).map(|(v, u)| v * u).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, up.iter().map(|u| u * s).collect())],
            Op::MulColumn { x, s } => {
                let (xv, sv) = (val(*x), val(*s));
                let (rows, cols) = xv.dims2()?;
                let mut gx = vec![0.0; rows * cols];
                let mut gs = vec![0.0; rows];
                for r in 0..rows {
                    let f = sv.data()[r];
                    for c in 0..cols {
                        let i = r * cols + c;
                        gx[i] = up[i] * f;
                        gs[r] += up[i] * xv.data()[i];
                    }
                }
                vec![(*x, gx), (*s, gs)]
            }
            Op::GatherRows { x, idx } => {
                let (rows, cols) = val(*x).dims2()?;
                let mut g = vec![0.0; rows * cols];
                for (e, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        g[i * cols + c] += up[e * cols + c];
                    }
                }
                vec![(*x, g)]
            }
            Op::SegmentSum { x, seg } => {
                let (rows, cols) = val(*x).dims2()?;
                let mut g = vec![0.0; rows * cols];
                for (e, &s) in seg.iter().enumerate() {
                    g[e * cols..(e + 1) * cols].copy_from_slice(&up[s * cols..(s + 1) * cols]);
                }
                vec![(*x, g)]
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2()?;
                let mut offset = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (_, c) = val(p).dims2()?;
                    let mut g = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        g.extend_from_slice(&up[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    v.push((p, g));
                }
                v
            }
            Op::MeanRows(x) => {
                let (rows, cols) = val(*x).dims2()?;
                let inv = 1.0 / rows as f64;
                let g = (0..rows * cols).map(|i| up[i % cols] * inv).collect();
                vec![(*x, g)]
            }
            Op::Sum(x) => vec![(*x, vec![up[0]; val(*x).len()])],
            Op::Dropout { x, mask } => vec![(*x, up.iter().zip(mask).map(|(u, m)| u * m).collect())],
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let rows = labels.len();
                let classes = probs.len() / rows;
                let scale = up[0] / rows as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    g[r * classes + l] -= scale;
                }
                vec![(*logits, g)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let upt = Tensor::new(out.shape().to_vec(), up.to_vec())?;
                let gs = op.backward(&ins, out, &upt)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                let mut v = Vec::new();
                for ((&var, g), t) in inputs.iter().zip(gs).zip(&ins) {
                    if let Some(g) = g {
                        if g.len() != t.len() {
                            return Err(Error::Dimension(format!(
                                "{} gradient has {} entries for an input of {}",
                                op.name(),
                                g.len(),
                                t.len()
                            )));
                        }
                        v.push((var, g.into_data()));
                    }
                }
                v
            }
        })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Numerically stabilized row softmax.
pub fn softmax_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * cols..(r + 1) * cols];
        for (oi, v) in o.iter_mut().zip(row) {
            *oi = (v - max).exp();
        }
        let s: f64 = o.iter().sum();
        o.iter_mut().for_each(|v| *v /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    /// Central differences of `f` around `x0`.
    fn fd_grad(x0: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x0.len())
            .map(|i| {
                let mut p = x0.to_vec();
                let mut m = x0.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn affine_examples() {
        let mut t = Tape::new();
        let x = t.constant(mat(1, 2, &[1.0, 2.0]));
        let w = t.constant(mat(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.affine(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0]);

        let x = t.constant(mat(1, 2, &[1.0, 1.0]));
        let w = t.constant(mat(2, 1, &[2.0, 3.0]));
        let y = t.affine(x, w, None).unwrap();
        assert_eq!(t.value(y).data(), &[5.0]);
    }

    #[test]
    fn affine_rejects_mismatch_naming_shapes() {
        let mut t = Tape::new();
        let x = t.constant(mat(1, 3, &[1.0, 2.0, 3.0]));
        let w = t.constant(mat(2, 2, &[1.0; 4]));
        let msg = t.affine(x, w, None).unwrap_err().to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn affine_weight_gradient_is_x_transpose_ones() {
        let xs = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let w0 = [0.5, -0.1, 0.2, 0.9, -1.1, 0.4];
        let mut t = Tape::new();
        let x = t.constant(mat(3, 2, &xs));
        let w = t.leaf(mat(2, 3, &w0), true);
        let y = t.affine(x, w, None).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        let fd = fd_grad(&w0, |wv| {
            let mut t = Tape::new();
            let x = t.constant(mat(3, 2, &xs));
            let w = t.constant(mat(2, 3, wv));
            let y = t.affine(x, w, None).unwrap();
            t.value(y).data().iter().sum()
        });
        assert!(max_abs_diff(g.get(w).unwrap(), &fd) < 1e-8);
        // xᵀ·1: each row k of w gets the column sum of x[:, k].
        let col0 = xs[0] + xs[2] + xs[4];
        assert!((g.get(w).unwrap()[0] - col0).abs() < 1e-12);
    }

    #[test]
    fn activation_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.activate(x, Activation::Relu).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = t.constant(Tensor::vector(vec![0.0]));
        let s = t.activate(z, Activation::Sigmoid).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
    }

    #[test]
    fn tanh_gradient_matches_identity() {
        let xs = vec![-1.5, -0.2, 0.0, 0.8, 2.5];
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(xs.clone()), true);
        let y = t.activate(x, Activation::Tanh).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        for (gi, xi) in g.get(x).unwrap().iter().zip(&xs) {
            assert!((gi - (1.0 - xi.tanh().powi(2))).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_xent_examples() {
        let mut t = Tape::new();
        let l = t.constant(mat(1, 2, &[0.0, 0.0]));
        let (loss, probs) = t.softmax_xent(l, &[0]).unwrap();
        assert!((t.value(loss).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(probs.data(), &[0.5, 0.5]);

        let l = t.constant(mat(1, 2, &[100.0, 0.0]));
        let (loss, _) = t.softmax_xent(l, &[0]).unwrap();
        let v = t.value(loss).data()[0];
        assert!(v.is_finite() && v < 1e-40);

        let l = t.constant(mat(1, 2, &[0.0, 0.0]));
        assert!(matches!(t.softmax_xent(l, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn softmax_xent_gradient_is_probs_minus_onehot() {
        let logits = [0.3, -1.0, 2.0, 0.5, 0.5, -0.7];
        let labels = [2usize, 0];
        let mut t = Tape::new();
        let l = t.leaf(mat(2, 3, &logits), true);
        let (loss, probs) = t.softmax_xent(l, &labels).unwrap();
        let g = t.backward(loss).unwrap();
        let fd = fd_grad(&logits, |lv| {
            let mut t = Tape::new();
            let l = t.constant(mat(2, 3, lv));
            let (loss, _) = t.softmax_xent(l, &labels).unwrap();
            t.value(loss).data()[0]
        });
        let gl = g.get(l).unwrap();
        assert!(max_abs_diff(gl, &fd) < 1e-8);
        for r in 0..2 {
            for c in 0..3 {
                let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                let want = (probs.at(r, c) - onehot) / 2.0;
                assert!((gl[r * 3 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dropout_contract() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0; 8]));
        assert_eq!(t.dropout(x, 0.0, true, 1).unwrap(), x);
        assert_eq!(t.dropout(x, 0.9, false, 1).unwrap(), x);
        assert!(t.dropout(x, 1.0, true, 1).is_err());
        assert!(t.dropout(x, -0.1, true, 1).is_err());
        let a = t.dropout(x, 0.5, true, 7).unwrap();
        let b = t.dropout(x, 0.5, true, 7).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn dropout_preserves_mean() {
        let n = 100_000;
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0; n]));
        let y = t.dropout(x, 0.5, true, 2024).unwrap();
        let mean = t.value(y).data().iter().sum::<f64>() / n as f64;
        // Each element is 0 or 2 with equal probability: sd 1, standard error 1/sqrt(n).
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![0.5, -2.0, 3.0]), true);
        let s = t.sum(w).unwrap();
        assert_eq!(t.backward(s).unwrap().get(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let w = t.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = t.mul(w, w).unwrap();
        let s = t.sum(sq).unwrap();
        assert_eq!(t.backward(s).unwrap().get(w).unwrap(), &[2.0, 4.0]);

        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    /// Every primitive composed into one scalar function of `p`.
    fn composite(p: &[f64], record: bool) -> (f64, Option<Vec<f64>>) {
        let mut t = Tape::new();
        let xv = t.leaf(mat(3, 2, &p[0..6]), record);
        let wv = t.leaf(mat(2, 2, &p[6..10]), record);
        let bv = t.leaf(Tensor::vector(p[10..12].to_vec()), record);
        let sv = t.leaf(mat(3, 1, &p[12..15]), record);
        let a = t.affine(xv, wv, Some(bv)).unwrap();
        let th = t.activate(a, Activation::Tanh).unwrap();
        let sg = t.activate(a, Activation::Sigmoid).unwrap();
        let sum = t.add(th, sg).unwrap();
        let prod = t.mul(sum, th).unwrap();
        let sc = t.scale(prod, 1.7).unwrap();
        let mc = t.mul_column(sc, sv).unwrap();
        let gathered = t.gather_rows(mc, vec![2, 0, 0, 1]).unwrap();
        let seg = t.segment_sum(gathered, vec![1, 0, 1, 1], 2).unwrap();
        let cat = t.concat_cols(&[seg, seg]).unwrap();
        let m = t.mean_rows(cat).unwrap();
        let pooled = t.concat_cols(&[m, m]).unwrap();
        let w2 = t.constant(mat(8, 2, &[0.3, -0.2, 0.1, 0.5, -0.7, 0.2, 0.4, 0.4, 0.0, 1.0, -1.0, 0.3, 0.2, 0.2, 0.6, -0.5]));
        let logits = t.affine(pooled, w2, None).unwrap();
        let (loss, _) = t.softmax_xent(logits, &[1]).unwrap();
        let value = t.value(loss).data()[0];
        if !record {
            return (value, None);
        }
        let g = t.backward(loss).unwrap();
        let mut flat = g.get(xv).unwrap().to_vec();
        flat.extend_from_slice(g.get(wv).unwrap());
        flat.extend_from_slice(g.get(bv).unwrap());
        flat.extend_from_slice(g.get(sv).unwrap());
        (value, Some(flat))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn primitives_match_finite_differences(p in prop::collection::vec(-2.0f64..2.0, 15)) {
            let (_, g) = composite(&p, true);
            let fd = fd_grad(&p, |q| composite(q, false).0);
            prop_assert!(max_abs_diff(&g.unwrap(), &fd) < 1e-6);
        }

        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 12)) {
            let p = softmax_rows(&v, 4, 3);
            for r in 0..4 {
                let s: f64 = p[r * 3..r * 3 + 3].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let p: Vec<f64> = (0..15).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let (_, a) = composite(&p, true);
        let (_, b) = composite(&p, true);
        assert_eq!(a, b);
    }
}
