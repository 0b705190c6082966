//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse, so gradients are accumulated in a fixed order and
//! results are bit-reproducible.

use std::collections::HashMap;

use super::kernels::{matmul, ConvGeom};
use super::tensor::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        inp: usize,
        out: usize,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_ch: usize,
    },
    // `geom` describes the adjoint convolution, output map → input map.
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        in_ch: usize,
    },
    Reshape(Var),
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
        len: usize,
    },
    Columns {
        x: Var,
        rows: usize,
        cols: usize,
        start: usize,
        len: usize,
    },
    Embedding {
        table: Var,
        index: usize,
        dim: usize,
    },
    SoftmaxNll {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    GeodesicSum {
        pred: Var,
        target: Vec<f64>,
    },
    L1Sum {
        pred: Var,
        target: Vec<f64>,
    },
    SquaredSum {
        pred: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, name: &str) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param => true,
            _ => self.inputs_require_grad(&op),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs_require_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf | Op::Param => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => rg(a) || rg(b),
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Transpose { x, .. }
            | Op::Narrow { x, .. }
            | Op::Columns { x, .. } => rg(x),
            Op::Linear { x, w, b, .. }
            | Op::Conv { x, w, b, .. }
            | Op::ConvTranspose { x, w, b, .. } => rg(x) || rg(w) || b.as_ref().is_some_and(rg),
            Op::Concat(parts) => parts.iter().any(rg),
            Op::Embedding { table, .. } => rg(table),
            Op::SoftmaxNll { logits, .. } => rg(logits),
            Op::GeodesicSum { pred, .. } | Op::L1Sum { pred, .. } | Op::SquaredSum { pred, .. } => {
                rg(pred)
            }
        }
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: &Tensor) -> Result<Var> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, "input")
    }

    pub fn input_raw(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::dim("input", numel(shape), data.len()));
        }
        self.push(shape.to_vec(), data, Op::Leaf, "input")
    }

    /// Free leaf that receives a gradient, used for input sensitivities.
    pub fn variable(&mut self, t: &Tensor) -> Result<Var> {
        let v = self.input(t)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    /// Trainable parameter, loaded once per graph and reused on later lookups.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params.get(name)?;
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param,
            name,
        )?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(what, numel(sa), numel(sb)));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(self.shape(a).to_vec(), value, op, name)
    }

    fn map(&mut self, x: Var, op: Op, name: &str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).iter().map(|v| f(*v)).collect();
        self.push(self.shape(x).to_vec(), value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map(x, Op::Scale(x, s), "scale", |v| v * s)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid(x), "sigmoid", |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Tanh(x), "tanh", f64::tanh)
    }

    /// `y = x·Wᵀ + b` for `x` of shape `[in]` or `[rows, in]` and `W` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(Error::dim("linear weight rank", 2, ws.len()));
        }
        let (out, inp) = (ws[0], ws[1]);
        let (rows, xin, out_shape) = match xs.as_slice() {
            [n] => (1, *n, vec![out]),
            [r, n] => (*r, *n, vec![*r, out]),
            _ => return Err(Error::dim("linear input rank", 2, xs.len())),
        };
        if xin != inp {
            return Err(Error::dim("linear input features", inp, xin));
        }
        let mut y = vec![0.0; rows * out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != out {
                return Err(Error::dim("linear bias", out, bv.len()));
            }
            for r in 0..rows {
                y[r * out..(r + 1) * out].copy_from_slice(bv);
            }
        }
        matmul(rows, inp, out, self.value(x), false, self.value(w), true, &mut y, b.is_some());
        self.push(
            out_shape,
            y,
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            },
            "linear",
        )
    }

    /// 2-D cross-correlation: `x: [C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]` → `[O,H',W']`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim("conv2d input rank", 3, xs.len()));
        }
        if ws.len() != 4 {
            return Err(Error::dim("conv2d weight rank", 4, ws.len()));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if ws[1] != c {
            return Err(Error::dim("conv2d channels", ws[1], c));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        if kh > h + 2 * pad.0 {
            return Err(Error::dim("conv2d height (kernel exceeds padded input)", kh, h + 2 * pad.0));
        }
        if kw > wd + 2 * pad.1 {
            return Err(Error::dim("conv2d width (kernel exceeds padded input)", kw, wd + 2 * pad.1));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            oh: (h + 2 * pad.0 - kh) / stride.0 + 1,
            ow: (wd + 2 * pad.1 - kw) / stride.1 + 1,
        };
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        geom.im2col(self.value(x), &mut cols);
        let ncol = geom.col_cols();
        let mut y = vec![0.0; o * ncol];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != o {
                return Err(Error::dim("conv2d bias", o, bv.len()));
            }
            for (oc, bias) in bv.iter().enumerate() {
                y[oc * ncol..(oc + 1) * ncol].iter_mut().for_each(|v| *v = *bias);
            }
        }
        matmul(o, geom.col_rows(), ncol, self.value(w), false, &cols, false, &mut y, b.is_some());
        self.push(
            vec![o, geom.oh, geom.ow],
            y,
            Op::Conv {
                x,
                w,
                b,
                geom,
                out_ch: o,
            },
            "conv2d",
        )
    }

    /// Transposed 2-D convolution: `x: [Cin,H,W]`, `w: [Cin,Cout,kh,kw]` → `[Cout,H',W']`
    /// with `H' = (H−1)·s − 2p + kh + out_pad`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
        out_pad: (usize, usize),
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 {
            return Err(Error::dim("conv2d_transpose input rank", 3, xs.len()));
        }
        if ws.len() != 4 {
            return Err(Error::dim("conv2d_transpose weight rank", 4, ws.len()));
        }
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        if ws[0] != cin {
            return Err(Error::dim("conv2d_transpose channels", ws[0], cin));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        if out_pad.0 >= stride.0 || out_pad.1 >= stride.1 {
            return Err(Error::param("out_pad", "must be smaller than the stride"));
        }
        let full_h = (h.saturating_sub(1)) * stride.0 + kh + out_pad.0;
        let full_w = (wd.saturating_sub(1)) * stride.1 + kw + out_pad.1;
        if full_h <= 2 * pad.0 || full_w <= 2 * pad.1 || h == 0 || wd == 0 {
            return Err(Error::dim("conv2d_transpose output", 1, 0));
        }
        let (oh, ow) = (full_h - 2 * pad.0, full_w - 2 * pad.1);
        let geom = ConvGeom {
            c: cout,
            h: oh,
            w: ow,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            oh: h,
            ow: wd,
        };
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        matmul(geom.col_rows(), cin, h * wd, self.value(w), true, self.value(x), false, &mut cols, false);
        let mut y = vec![0.0; cout * oh * ow];
        geom.col2im(&cols, &mut y);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != cout {
                return Err(Error::dim("conv2d_transpose bias", cout, bv.len()));
            }
            for (oc, bias) in bv.iter().enumerate() {
                y[oc * oh * ow..(oc + 1) * oh * ow].iter_mut().for_each(|v| *v += *bias);
            }
        }
        self.push(
            vec![cout, oh, ow],
            y,
            Op::ConvTranspose {
                x,
                w,
                b,
                geom,
                in_ch: cin,
            },
            "conv2d_transpose",
        )
    }

    /// 1-D cross-correlation: `x: [C,T]`, `w: [O,C,K]`, `b: [O]` → `[O,T']`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 {
            return Err(Error::dim("conv1d input rank", 2, xs.len()));
        }
        if ws.len() != 3 {
            return Err(Error::dim("conv1d weight rank", 3, ws.len()));
        }
        let x4 = self.reshape(x, &[xs[0], 1, xs[1]])?;
        let w4 = self.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
        let y = self.conv2d(x4, w4, b, (1, stride), (0, pad))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[2]])
    }

    /// Transposed 1-D convolution: `x: [Cin,T]`, `w: [Cin,Cout,K]` → `[Cout,T']`.
    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 {
            return Err(Error::dim("conv1d_transpose input rank", 2, xs.len()));
        }
        if ws.len() != 3 {
            return Err(Error::dim("conv1d_transpose weight rank", 3, ws.len()));
        }
        let x4 = self.reshape(x, &[xs[0], 1, xs[1]])?;
        let w4 = self.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
        let y = self.conv2d_transpose(x4, w4, b, (1, stride), (0, pad), (0, out_pad))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[2]])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if numel(shape) != n {
            return Err(Error::dim("reshape", n, numel(shape)));
        }
        let value = self.value(x).to_vec();
        self.push(shape.to_vec(), value, Op::Reshape(x), "reshape")
    }

    /// Transposes a rank-2 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose rank", 2, s.len()));
        }
        let (rows, cols) = (s[0], s[1]);
        let xv = self.value(x);
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                y[c * rows + r] = xv[r * cols + c];
            }
        }
        self.push(vec![cols, rows], y, Op::Transpose { x, rows, cols }, "transpose")
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::param("concat", "needs at least one part"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut value = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim("concat trailing dims", numel(&tail), numel(s.get(1..).unwrap_or(&[]))));
            }
            lead += s[0];
            value.extend_from_slice(self.value(*p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(shape, value, Op::Concat(parts.to_vec()), "concat")
    }

    /// Contiguous flat range `[start, start+len)` as a vector.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).len();
        if start + len > n {
            return Err(Error::Index { index: start + len, size: n });
        }
        let value = self.value(x)[start..start + len].to_vec();
        self.push(vec![len], value, Op::Narrow { x, start, len }, "narrow")
    }

    /// Column range of a rank-2 tensor.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("columns rank", 2, s.len()));
        }
        let (rows, cols) = (s[0], s[1]);
        if start + len > cols {
            return Err(Error::Index { index: start + len, size: cols });
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        self.push(
            vec![rows, len],
            value,
            Op::Columns {
                x,
                rows,
                cols,
                start,
                len,
            },
            "columns",
        )
    }

    /// Row `index` of a `[V, D]` table.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("embedding rank", 2, s.len()));
        }
        if index >= s[0] {
            return Err(Error::Index { index, size: s[0] });
        }
        let dim = s[1];
        let value = self.value(table)[index * dim..(index + 1) * dim].to_vec();
        self.push(vec![dim], value, Op::Embedding { table, index, dim }, "embedding")
    }

    /// Softmax probabilities of a logit vector (not recorded on the tape).
    pub fn softmax_values(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// `−log softmax(logits)[target]`, stabilised by max-subtraction.
    pub fn softmax_nll(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(Error::Index {
                index: target,
                size: lv.len(),
            });
        }
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        let probs = Self::softmax_values(lv);
        self.push(
            vec![],
            vec![loss],
            Op::SoftmaxNll {
                logits,
                target,
                probs,
            },
            "softmax_nll",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x), "sum")
    }

    /// Adds a list of scalars (or equal-shaped tensors) left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::param("add_all", "needs at least one term"))?;
        let mut acc = *first;
        for t in rest {
            acc = self.add(acc, *t)?;
        }
        Ok(acc)
    }

    /// Sum of geodesic angles between normalised predicted quaternions and
    /// unit targets, 4 consecutive entries per rotation.
    pub fn geodesic_sum(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Error::dim("geodesic target", pv.len(), target.len()));
        }
        if pv.len() % 4 != 0 {
            return Err(Error::dim("quaternion packing", 0, pv.len() % 4));
        }
        let total = pv
            .chunks_exact(4)
            .zip(target.chunks_exact(4))
            .map(|(q, t)| geodesic_angle_and_grad(q, t).0)
            .sum();
        self.push(
            vec![],
            vec![total],
            Op::GeodesicSum {
                pred,
                target: target.to_vec(),
            },
            "geodesic_sum",
        )
    }

    /// `Σ |pred − target|`.
    pub fn l1_sum(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Error::dim("l1 target", pv.len(), target.len()));
        }
        let total = pv.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
        self.push(
            vec![],
            vec![total],
            Op::L1Sum {
                pred,
                target: target.to_vec(),
            },
            "l1_sum",
        )
    }

    /// `Σ (pred − target)²`.
    pub fn squared_sum(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() {
            return Err(Error::dim("squared target", pv.len(), target.len()));
        }
        let total = pv.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
        self.push(
            vec![],
            vec![total],
            Op::SquaredSum {
                pred,
                target: target.to_vec(),
            },
            "squared_sum",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::dim("backward seed", 1, self.nodes[loss.0].value.len()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let (lo, _) = grads.split_at_mut(i);
            self.backward_node(node, &g, lo);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, lo: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let n = &self.nodes[v.0];
        if !n.requires_grad {
            return None;
        }
        Some(lo[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
    }

    fn backward_node(&self, node: &Node, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(lo, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.slot(lo, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(lo, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.slot(lo, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(lo, *a) {
                    for ((x, gy), bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gy * bb;
                    }
                }
                if let Some(gb) = self.slot(lo, *b) {
                    for ((x, gy), aa) in gb.iter_mut().zip(g).zip(av) {
                        *x += gy * aa;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = self.slot(lo, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += s * b);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(gx) = self.slot(lo, *x) {
                    for ((a, b), v) in gx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *a += b;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((a, b), y) in gx.iter_mut().zip(g).zip(&node.value) {
                        *a += b * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    for ((a, b), y) in gx.iter_mut().zip(g).zip(&node.value) {
                        *a += b * (1.0 - y * y);
                    }
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                inp,
                out,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(gx) = self.slot(lo, *x) {
                    matmul(*rows, *out, *inp, g, false, wv, false, gx, true);
                }
                if let Some(gw) = self.slot(lo, *w) {
                    matmul(*out, *rows, *inp, g, true, xv, false, gw, true);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(lo, *b) {
                        for r in 0..*rows {
                            for (acc, v) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                out_ch,
            } => {
                let ncol = geom.col_cols();
                let krows = geom.col_rows();
                let need_w = self.nodes[w.0].requires_grad;
                let need_x = self.nodes[x.0].requires_grad;
                if need_w {
                    let mut cols = vec![0.0; krows * ncol];
                    geom.im2col(self.value(*x), &mut cols);
                    let gw = self.slot(lo, *w).expect("weight requires grad");
                    matmul(*out_ch, ncol, krows, g, false, &cols, true, gw, true);
                }
                if need_x {
                    let mut dcols = vec![0.0; krows * ncol];
                    matmul(krows, *out_ch, ncol, self.value(*w), true, g, false, &mut dcols, false);
                    let gx = self.slot(lo, *x).expect("input requires grad");
                    geom.col2im(&dcols, gx);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(lo, *b) {
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            *acc += g[oc * ncol..(oc + 1) * ncol].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::ConvTranspose {
                x,
                w,
                b,
                geom,
                in_ch,
            } => {
                let krows = geom.col_rows();
                let ncol = geom.col_cols();
                let mut dcols = vec![0.0; krows * ncol];
                geom.im2col(g, &mut dcols);
                if let Some(gx) = self.slot(lo, *x) {
                    matmul(*in_ch, krows, ncol, self.value(*w), false, &dcols, false, gx, true);
                }
                let xv = self.value(*x);
                if let Some(gw) = self.slot(lo, *w) {
                    matmul(*in_ch, ncol, krows, xv, false, &dcols, true, gw, true);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(lo, *b) {
                        let plane = geom.h * geom.w;
                        for (oc, acc) in gb.iter_mut().enumerate() {
                            *acc += g[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Transpose { x, rows, cols } => {
                if let Some(gx) = self.slot(lo, *x) {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(gp) = self.slot(lo, *p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, b)| *a += b);
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, start, len } => {
                if let Some(gx) = self.slot(lo, *x) {
                    gx[*start..start + len].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Columns {
                x,
                rows,
                cols,
                start,
                len,
            } => {
                if let Some(gx) = self.slot(lo, *x) {
                    for r in 0..*rows {
                        let dst = &mut gx[r * cols + start..r * cols + start + len];
                        dst.iter_mut().zip(&g[r * len..(r + 1) * len]).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Embedding { table, index, dim } => {
                if let Some(gt) = self.slot(lo, *table) {
                    gt[index * dim..(index + 1) * dim]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b);
                }
            }
            Op::SoftmaxNll {
                logits,
                target,
                probs,
            } => {
                if let Some(gl) = self.slot(lo, *logits) {
                    for (i, (a, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { 1.0 } else { 0.0 };
                        *a += g[0] * (p - onehot);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(lo, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::GeodesicSum { pred, target } => {
                let pv = self.value(*pred);
                if let Some(gp) = self.slot(lo, *pred) {
                    for ((q, t), gq) in pv.chunks_exact(4).zip(target.chunks_exact(4)).zip(gp.chunks_exact_mut(4)) {
                        let (_, d) = geodesic_angle_and_grad(q, t);
                        for k in 0..4 {
                            gq[k] += g[0] * d[k];
                        }
                    }
                }
            }
            Op::L1Sum { pred, target } => {
                let pv = self.value(*pred);
                if let Some(gp) = self.slot(lo, *pred) {
                    for ((a, p), t) in gp.iter_mut().zip(pv).zip(target) {
                        let d = p - t;
                        if d > 0.0 {
                            *a += g[0];
                        } else if d < 0.0 {
                            *a -= g[0];
                        }
                    }
                }
            }
            Op::SquaredSum { pred, target } => {
                let pv = self.value(*pred);
                if let Some(gp) = self.slot(lo, *pred) {
                    for ((a, p), t) in gp.iter_mut().zip(pv).zip(target) {
                        *a += g[0] * 2.0 * (p - t);
                    }
                }
            }
        }
    }

    /// Adds the gradients of every parameter node into `params`' grad buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, params: &mut ParamSet) -> Result<()> {
        let mut entries: Vec<_> = self.params.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        for (name, var) in entries {
            let Some(g) = grads.get(*var) else { continue };
            let t = params.get_mut(name)?;
            t.enable_grad();
            let buf = t.grad_mut().expect("grad enabled above");
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }
}

/// Geodesic angle between the normalised raw quaternion `q` and unit `t`, plus
/// its gradient with respect to the raw components of `q`.
///
/// The angle is `2·atan2(‖v‖, |w|)` of the relative rotation `t̄ ⊗ q̂`, which
/// stays well conditioned near zero (unlike `acos`).
pub(crate) fn geodesic_angle_and_grad(q: &[f64], t: &[f64]) -> (f64, [f64; 4]) {
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(norm > 1e-12) {
        // A vanishing quaternion reads as the identity, as in `Quat::normalized`.
        let angle = 2.0 * (t[1] * t[1] + t[2] * t[2] + t[3] * t[3]).sqrt().atan2(t[0].abs());
        return (angle, [0.0; 4]);
    }
    let qh = [q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm];
    // r = conj(t) ⊗ q̂
    let (tw, tx, ty, tz) = (t[0], t[1], t[2], t[3]);
    let (qw, qx, qy, qz) = (qh[0], qh[1], qh[2], qh[3]);
    let rw = tw * qw + tx * qx + ty * qy + tz * qz;
    let rx = tw * qx - qw * tx - (ty * qz - tz * qy);
    let ry = tw * qy - qw * ty - (tz * qx - tx * qz);
    let rz = tw * qz - qw * tz - (tx * qy - ty * qx);
    let a = rw.abs();
    let b = (rx * rx + ry * ry + rz * rz).sqrt();
    let angle = 2.0 * b.atan2(a);
    let denom = a * a + b * b;
    if denom == 0.0 {
        return (angle, [0.0; 4]);
    }
    let sign_w = if rw >= 0.0 { 1.0 } else { -1.0 };
    let d_w = -2.0 * b / denom * sign_w;
    let (d_x, d_y, d_z) = if b > 0.0 {
        let s = 2.0 * a / denom / b;
        (s * rx, s * ry, s * rz)
    } else {
        (0.0, 0.0, 0.0)
    };
    // dθ/dq̂ = t ⊗ dθ/dr  (the left-multiplication matrix of t̄ transposed)
    let gw = tw * d_w - tx * d_x - ty * d_y - tz * d_z;
    let gx = tw * d_x + tx * d_w + (ty * d_z - tz * d_y);
    let gy = tw * d_y + ty * d_w + (tz * d_x - tx * d_z);
    let gz = tw * d_z + tz * d_w + (tx * d_y - ty * d_x);
    let gq = [gw, gx, gy, gz];
    let dot: f64 = (0..4).map(|k| qh[k] * gq[k]).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (gq[k] - qh[k] * dot) / norm;
    }
    (angle, out)
}
