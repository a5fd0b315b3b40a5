use super::tape::{Tape, Var};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnKind {
    Sigmoid,
    Exp,
    Log,
    Neg,
    Relu,
}

/// How a binary op's operand shapes line up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    None,
    /// lhs is a single value expanded over rhs
    ScalarLhs,
    /// rhs is a single value expanded over lhs
    ScalarRhs,
    /// lhs is `[r, 1]` expanded across the columns of a `[r, c]` rhs
    ColLhs,
    /// rhs is `[r, 1]` expanded across the columns of a `[r, c]` lhs
    ColRhs,
}

pub(crate) enum Op {
    Leaf,
    Constant,
    Matmul {
        a: Var,
        b: Var,
    },
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        bc: Broadcast,
    },
    Unary {
        kind: UnKind,
        a: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    SoftmaxRows {
        x: Var,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    StopGradient,
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

fn block_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, axis_len, inner)
}

impl Tape {
    fn out_needs_grad(&self, parents: &[Var]) -> bool {
        parents.iter().any(|p| self.nodes[p.0].needs_grad)
    }

    /// `a[m×k] · b[k×n] -> [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        let ng = self.out_needs_grad(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, ng)
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let opname = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        };
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bc = if sa == sb {
            Broadcast::None
        } else if self.value(b).numel() == 1 {
            Broadcast::ScalarRhs
        } else if self.value(a).numel() == 1 {
            Broadcast::ScalarLhs
        } else if sa.len() == 2 && sb.len() == 2 && sa[0] == sb[0] && sb[1] == 1 {
            Broadcast::ColRhs
        } else if sa.len() == 2 && sb.len() == 2 && sa[0] == sb[0] && sa[1] == 1 {
            Broadcast::ColLhs
        } else {
            return Err(TensorError::ShapeMismatch {
                op: opname,
                lhs: sa,
                rhs: sb,
            });
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let apply = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let (out, shape): (Vec<f64>, Vec<usize>) = match bc {
            Broadcast::None => (
                av.iter().zip(bv).map(|(&x, &y)| apply(x, y)).collect(),
                sa.clone(),
            ),
            Broadcast::ScalarRhs => {
                let y = bv[0];
                (av.iter().map(|&x| apply(x, y)).collect(), sa.clone())
            }
            Broadcast::ScalarLhs => {
                let x = av[0];
                (bv.iter().map(|&y| apply(x, y)).collect(), sb.clone())
            }
            Broadcast::ColRhs => {
                let (r, c) = (sa[0], sa[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let y = bv[i];
                    for j in 0..c {
                        out[i * c + j] = apply(av[i * c + j], y);
                    }
                }
                (out, sa.clone())
            }
            Broadcast::ColLhs => {
                let (r, c) = (sb[0], sb[1]);
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let x = av[i];
                    for j in 0..c {
                        out[i * c + j] = apply(x, bv[i * c + j]);
                    }
                }
                (out, sb.clone())
            }
        };
        let ng = self.out_needs_grad(&[a, b]);
        self.push(
            opname,
            Tensor::new(shape, out)?,
            Op::Binary { kind, a, b, bc },
            ng,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnKind, a: Var) -> Result<Var, TensorError> {
        let opname = match kind {
            UnKind::Sigmoid => "sigmoid",
            UnKind::Exp => "exp",
            UnKind::Log => "log",
            UnKind::Neg => "neg",
            UnKind::Relu => "relu",
        };
        if kind == UnKind::Log {
            if let Some(v) = self.value(a).data().iter().find(|v| **v <= 0.0) {
                return Err(TensorError::NumericDomain {
                    op: "log",
                    msg: format!("input {v} is not strictly positive"),
                });
            }
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| match kind {
                UnKind::Sigmoid => stable_sigmoid(x),
                UnKind::Exp => x.exp(),
                UnKind::Log => x.ln(),
                UnKind::Neg => -x,
                UnKind::Relu => x.max(0.0),
            })
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.out_needs_grad(&[a]);
        self.push(opname, Tensor::new(shape, out)?, Op::Unary { kind, a }, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnKind::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnKind::Exp, a)
    }

    /// Natural logarithm; the input must already be strictly positive
    /// (probabilities are clamped before reaching this op).
    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnKind::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnKind::Neg, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnKind::Relu, a)
    }

    /// `x[r×c] + bias[c]`, the bias repeated over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let (r, c) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = xv[i * c + j] + bv[j];
            }
        }
        let ng = self.out_needs_grad(&[x, bias]);
        self.push("add_bias", Tensor::new(sx, out)?, Op::AddBias { x, bias }, ng)
    }

    /// Multiplication by a plain constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, TensorError> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.out_needs_grad(&[x]);
        self.push("scale", Tensor::new(shape, out)?, Op::Scale { x, c }, ng)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was
    /// strictly inside the range.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        if !(lo < hi) {
            return Err(TensorError::InvalidArgument {
                op: "clamp",
                msg: format!("empty range [{lo}, {hi}]"),
            });
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.clamp(lo, hi))
            .collect();
        let shape = self.shape(x).to_vec();
        let ng = self.out_needs_grad(&[x]);
        self.push("clamp", Tensor::new(shape, out)?, Op::Clamp { x, lo, hi }, ng)
    }

    /// Softmax along the last axis, computed with max-subtraction. A 1-D
    /// input is treated as a single row.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().unwrap_or(&0);
        if cols == 0 {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                msg: "empty input".to_string(),
            });
        }
        let rows = self.value(x).numel() / cols;
        let xv = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..cols {
                let e = (row[j] - max).exp();
                out[i * cols + j] = e;
                denom += e;
            }
            for j in 0..cols {
                out[i * cols + j] /= denom;
            }
        }
        let ng = self.out_needs_grad(&[x]);
        self.push("softmax", Tensor::new(shape, out)?, Op::SoftmaxRows { x }, ng)
    }

    /// Row lookup: `out[i] = table[ids[i]]`. Duplicate ids are fine; their
    /// gradients scatter-add into the same row.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "gather_rows",
                msg: format!("table must be 2-D, got {st:?}"),
            });
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(TensorError::LookupOutOfRange { id: bad, rows });
        }
        let tv = self.value(table).data();
        let mut out = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let ng = self.out_needs_grad(&[table]);
        self.push(
            "gather_rows",
            Tensor::new(vec![ids.len(), d], out)?,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Identity forward; contributes exactly zero gradient to its parents.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).clone();
        self.push("stop_gradient", value, Op::StopGradient, false)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: "no tensors given".to_string(),
            });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = block_dims(&shape, axis);
        let mut out = vec![0.0; outer * axis_total * inner];
        for o in 0..outer {
            let mut offset = 0;
            for &p in parts {
                let alen = self.shape(p)[axis];
                let pv = self.value(p).data();
                let src = &pv[o * alen * inner..(o + 1) * alen * inner];
                let dst_start = (o * axis_total + offset) * inner;
                out[dst_start..dst_start + alen * inner].copy_from_slice(src);
                offset += alen;
            }
        }
        let ng = self.out_needs_grad(parts);
        self.push(
            "concat",
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        )
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{} out of axis {axis} of {sx:?}", start + len),
            });
        }
        let (outer, axis_len, inner) = block_dims(&sx, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_start = (o * axis_len + start) * inner;
            let dst_start = o * len * inner;
            out[dst_start..dst_start + len * inner]
                .copy_from_slice(&xv[src_start..src_start + len * inner]);
        }
        let mut shape = sx;
        shape[axis] = len;
        let ng = self.out_needs_grad(&[x]);
        self.push(
            "slice",
            Tensor::new(shape, out)?,
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            ng,
        )
    }

    /// Reinterprets the value under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).data().to_vec();
        let ng = self.out_needs_grad(&[x]);
        self.push("reshape", Tensor::new(shape, data)?, Op::Reshape { x }, ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.out_needs_grad(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum { x }, ng)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                msg: "empty input".to_string(),
            });
        }
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.out_needs_grad(&[x]);
        self.push("mean", Tensor::scalar(s / n as f64), Op::Mean { x }, ng)
    }

    pub(crate) fn backprop_node(&mut self, id: usize, g: &[f64]) {
        // Split borrows: clone what the rules need, then accumulate.
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant | Op::StopGradient => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].needs_grad {
                    let bv = self.value(b).data().to_vec();
                    let mut da = vec![0.0; m * k];
                    // dA[i][p] = dot(G row i, B row p): contiguous in both
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            darow[p] = acc;
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let av = self.value(a).data().to_vec();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Binary { kind, a, b, bc } => {
                let (kind, a, b, bc) = (*kind, *a, *b, *bc);
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                let (da, db) = binary_grads(kind, bc, &av, &bv, g);
                if self.nodes[a.0].needs_grad {
                    self.accumulate(a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(b, &db);
                }
            }
            Op::Unary { kind, a } => {
                let (kind, a) = (*kind, *a);
                if !self.nodes[a.0].needs_grad {
                    return;
                }
                let av = self.value(a).data().to_vec();
                let yv = self.nodes[id].value.data().to_vec();
                let da: Vec<f64> = match kind {
                    UnKind::Sigmoid => g
                        .iter()
                        .zip(&yv)
                        .map(|(&gv, &y)| gv * y * (1.0 - y))
                        .collect(),
                    UnKind::Exp => g.iter().zip(&yv).map(|(&gv, &y)| gv * y).collect(),
                    UnKind::Log => g.iter().zip(&av).map(|(&gv, &x)| gv / x).collect(),
                    UnKind::Neg => g.iter().map(|&gv| -gv).collect(),
                    UnKind::Relu => g
                        .iter()
                        .zip(&av)
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect(),
                };
                self.accumulate(a, &da);
            }
            Op::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                let sx = self.shape(x).to_vec();
                let (r, c) = (sx[0], sx[1]);
                if self.nodes[x.0].needs_grad {
                    self.accumulate(x, g);
                }
                if self.nodes[bias.0].needs_grad {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                if self.nodes[x.0].needs_grad {
                    let da: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                    self.accumulate(x, &da);
                }
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                if self.nodes[x.0].needs_grad {
                    let av = self.value(x).data().to_vec();
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&av)
                        .map(|(&gv, &v)| if v > lo && v < hi { gv } else { 0.0 })
                        .collect();
                    self.accumulate(x, &da);
                }
            }
            Op::SoftmaxRows { x } => {
                let x = *x;
                if self.nodes[x.0].needs_grad {
                    let yv = self.nodes[id].value.data().to_vec();
                    let shape = self.shape(x);
                    let cols = *shape.last().expect("softmax input non-empty");
                    let rows = yv.len() / cols;
                    let mut da = vec![0.0; yv.len()];
                    for i in 0..rows {
                        let y = &yv[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = y.iter().zip(gr).map(|(&yj, &gj)| yj * gj).sum();
                        for j in 0..cols {
                            da[i * cols + j] = y[j] * (gr[j] - dot);
                        }
                    }
                    self.accumulate(x, &da);
                }
            }
            Op::GatherRows { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                if self.nodes[table.0].needs_grad {
                    let st = self.shape(table).to_vec();
                    let d = st[1];
                    let mut dt = vec![0.0; st[0] * d];
                    for (i, &row) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[row * d + j] += g[i * d + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[id].value.shape().to_vec();
                let (outer, axis_total, inner) = block_dims(&out_shape, axis);
                let mut offset = 0;
                for &p in &parts {
                    let alen = self.shape(p)[axis];
                    if self.nodes[p.0].needs_grad {
                        let mut dp = vec![0.0; outer * alen * inner];
                        for o in 0..outer {
                            let src_start = (o * axis_total + offset) * inner;
                            let dst_start = o * alen * inner;
                            dp[dst_start..dst_start + alen * inner]
                                .copy_from_slice(&g[src_start..src_start + alen * inner]);
                        }
                        self.accumulate(p, &dp);
                    }
                    offset += alen;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let (x, axis, start, len) = (*x, *axis, *start, *len);
                if self.nodes[x.0].needs_grad {
                    let sx = self.shape(x).to_vec();
                    let (outer, axis_len, inner) = block_dims(&sx, axis);
                    let mut dx = vec![0.0; self.value(x).numel()];
                    for o in 0..outer {
                        let dst_start = (o * axis_len + start) * inner;
                        let src_start = o * len * inner;
                        dx[dst_start..dst_start + len * inner]
                            .copy_from_slice(&g[src_start..src_start + len * inner]);
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::Reshape { x } => {
                let x = *x;
                if self.nodes[x.0].needs_grad {
                    self.accumulate(x, g);
                }
            }
            Op::Sum { x } => {
                let x = *x;
                if self.nodes[x.0].needs_grad {
                    let da = vec![g[0]; self.value(x).numel()];
                    self.accumulate(x, &da);
                }
            }
            Op::Mean { x } => {
                let x = *x;
                if self.nodes[x.0].needs_grad {
                    let n = self.value(x).numel();
                    let da = vec![g[0] / n as f64; n];
                    self.accumulate(x, &da);
                }
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn binary_grads(
    kind: BinKind,
    bc: Broadcast,
    av: &[f64],
    bv: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    // Per-element partials at the broadcasted positions.
    let da_at = |_x: f64, y: f64, gv: f64| match kind {
        BinKind::Add | BinKind::Sub => gv,
        BinKind::Mul => gv * y,
        BinKind::Div => gv / y,
    };
    let db_at = |x: f64, y: f64, gv: f64| match kind {
        BinKind::Add => gv,
        BinKind::Sub => -gv,
        BinKind::Mul => gv * x,
        BinKind::Div => -gv * x / (y * y),
    };
    match bc {
        Broadcast::None => {
            let da = av
                .iter()
                .zip(bv)
                .zip(g)
                .map(|((&x, &y), &gv)| da_at(x, y, gv))
                .collect::<Vec<f64>>();
            let db = av
                .iter()
                .zip(bv)
                .zip(g)
                .map(|((&x, &y), &gv)| db_at(x, y, gv))
                .collect();
            (da, db)
        }
        Broadcast::ScalarRhs => {
            let y = bv[0];
            let da = av.iter().zip(g).map(|(&x, &gv)| da_at(x, y, gv)).collect();
            let db = vec![av
                .iter()
                .zip(g)
                .map(|(&x, &gv)| db_at(x, y, gv))
                .sum::<f64>()];
            (da, db)
        }
        Broadcast::ScalarLhs => {
            let x = av[0];
            let da = vec![bv
                .iter()
                .zip(g)
                .map(|(&y, &gv)| da_at(x, y, gv))
                .sum::<f64>()];
            let db = bv.iter().zip(g).map(|(&y, &gv)| db_at(x, y, gv)).collect();
            (da, db)
        }
        Broadcast::ColRhs => {
            let r = bv.len();
            let c = av.len() / r;
            let mut da = vec![0.0; av.len()];
            let mut db = vec![0.0; r];
            for i in 0..r {
                let y = bv[i];
                for j in 0..c {
                    let idx = i * c + j;
                    da[idx] = da_at(av[idx], y, g[idx]);
                    db[i] += db_at(av[idx], y, g[idx]);
                }
            }
            (da, db)
        }
        Broadcast::ColLhs => {
            let r = av.len();
            let c = bv.len() / r;
            let mut da = vec![0.0; r];
            let mut db = vec![0.0; bv.len()];
            for i in 0..r {
                let x = av[i];
                for j in 0..c {
                    let idx = i * c + j;
                    da[i] += da_at(x, bv[idx], g[idx]);
                    db[idx] = db_at(x, bv[idx], g[idx]);
                }
            }
            (da, db)
        }
    }
}
