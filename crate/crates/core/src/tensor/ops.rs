use rand::Rng;

use super::{Op, Result, Tape, Tensor, TensorError, Var};

pub(crate) fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Transpose(x)
        | Op::Scale(x, _)
        | Op::Relu(x)
        | Op::Log(x)
        | Op::Exp(x)
        | Op::LogSoftmax(x)
        | Op::Sum(x)
        | Op::MeanRows(x) => vec![*x],
        Op::Softmax { x, .. }
        | Op::SliceCols { x, .. }
        | Op::Pick { x, .. }
        | Op::Dropout { x, .. } => vec![*x],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Gather { table, .. } => vec![*table],
        Op::Concat { inputs, .. } => inputs.clone(),
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            c[i * k + j] += dot;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Splits a shape around `axis` into (outer, len, inner) strides.
fn axis_strides(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn softmax_rows_inplace(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = rank2("matmul", ta)?;
        let (k2, n) = rank2("matmul", tb)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = rank2("transpose", t)?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data()[i * n + j];
            }
        }
        self.push("transpose", Tensor::new(vec![n, m], out)?, Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Adds a rank-1 bias over the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.rank() != 1 || tb.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(tb.data()).map(|(v, b)| v + b))
            .collect();
        let shape = tx.shape().to_vec();
        self.push("add_bias", Tensor::new(shape, out)?, Op::AddBias(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = ta.shape().to_vec();
        self.push("mul", Tensor::new(shape, out)?, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * c).collect();
        let shape = t.shape().to_vec();
        self.push("scale", Tensor::new(shape, out)?, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push("relu", Tensor::new(shape, out)?, Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v.ln()).collect();
        let shape = t.shape().to_vec();
        self.push("log", Tensor::new(shape, out)?, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v.exp()).collect();
        let shape = t.shape().to_vec();
        self.push("exp", Tensor::new(shape, out)?, Op::Exp(x))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = axis_strides(t.shape(), axis)?;
        let mut out = t.data().to_vec();
        if inner == 1 {
            softmax_rows_inplace(&mut out, len);
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| o * len * inner + j * inner + i;
                    let max = (0..len)
                        .map(|j| out[idx(j)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for j in 0..len {
                        out[idx(j)] = (out[idx(j)] - max).exp();
                        z += out[idx(j)];
                    }
                    for j in 0..len {
                        out[idx(j)] /= z;
                    }
                }
            }
        }
        let shape = t.shape().to_vec();
        self.push("softmax", Tensor::new(shape, out)?, Op::Softmax { x, axis })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = t.shape().to_vec();
        self.push("log_softmax", Tensor::new(shape, out)?, Op::LogSoftmax(x))
    }

    /// Normalizes each position over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.numel() != d || tb.numel() != d || tg.rank() != 1 || tb.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.numel() / d.max(1);
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        self.push(
            "layer_norm",
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = rank2("embedding_gather", t)?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding_gather",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(t.row(id));
        }
        let ids = ids.to_vec();
        self.push(
            "embedding_gather",
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather { table, ids },
        )
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Empty("concat"))?;
        let base = self.value(first).shape().to_vec();
        axis_strides(&base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            "concat",
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: parts.to_vec(),
                axis,
            },
        )
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = rank2("slice_cols", t)?;
        if start + len > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: n,
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.data()[i * n + start..i * n + start + len]);
        }
        self.push(
            "slice_cols",
            Tensor::new(vec![m, len], out)?,
            Op::SliceCols { x, start },
        )
    }

    /// Selects one column per row: `out[i] = x[i, ids[i]]`.
    pub fn pick(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = rank2("pick", t)?;
        if ids.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "pick",
                lhs: t.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let mut out = Vec::with_capacity(m);
        for (i, &id) in ids.iter().enumerate() {
            if id >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "pick",
                    index: id,
                    bound: n,
                });
            }
            out.push(t.data()[i * n + id]);
        }
        let ids = ids.to_vec();
        self.push("pick", Tensor::vector(out), Op::Pick { x, ids })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::Empty("mean"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over rows of a rank-2 tensor, giving a `[1×d]` tensor.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = rank2("mean_rows", t)?;
        if m == 0 {
            return Err(TensorError::Empty("mean_rows"));
        }
        let mut out = vec![0.0; n];
        for row in t.data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        self.push("mean_rows", Tensor::new(vec![1, n], out)?, Op::MeanRows(x))
    }

    /// Inverted dropout. The sampled mask is stored on the tape so backward
    /// reuses it exactly. `p == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = t.shape().to_vec();
        self.push("dropout", Tensor::new(shape, out)?, Op::Dropout { x, mask })
    }
}

pub(crate) fn backward_node(tape: &mut Tape, i: usize, g: &[f64]) {
    let op = std::mem::replace(&mut tape.nodes[i].op, Op::Leaf);
    match &op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (tape.shape(*a)[0], tape.shape(*a)[1]);
            let n = tape.shape(*b)[1];
            if tape.requires_grad(*a) {
                let mut da = vec![0.0; m * k];
                matmul_nt_acc(g, tape.value(*b).data(), &mut da, m, n, k);
                tape.accumulate(*a, &da);
            }
            if tape.requires_grad(*b) {
                let mut db = vec![0.0; k * n];
                matmul_tn_acc(tape.value(*a).data(), g, &mut db, m, k, n);
                tape.accumulate(*b, &db);
            }
        }
        Op::Transpose(x) => {
            let (m, n) = (tape.shape(*x)[0], tape.shape(*x)[1]);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            tape.accumulate(*x, &dx);
        }
        Op::Add(a, b) => {
            tape.accumulate(*a, g);
            tape.accumulate(*b, g);
        }
        Op::AddBias(x, b) => {
            tape.accumulate(*x, g);
            let n = tape.value(*b).numel();
            let mut db = vec![0.0; n];
            for row in g.chunks(n) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            tape.accumulate(*b, &db);
        }
        Op::Mul(a, b) => {
            if tape.requires_grad(*a) {
                let da: Vec<f64> = g
                    .iter()
                    .zip(tape.value(*b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                tape.accumulate(*a, &da);
            }
            if tape.requires_grad(*b) {
                let db: Vec<f64> = g
                    .iter()
                    .zip(tape.value(*a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                tape.accumulate(*b, &db);
            }
        }
        Op::Scale(x, c) => {
            let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
            tape.accumulate(*x, &dx);
        }
        Op::Relu(x) => {
            let dx: Vec<f64> = g
                .iter()
                .zip(tape.value(*x).data())
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect();
            tape.accumulate(*x, &dx);
        }
        Op::Log(x) => {
            let dx: Vec<f64> = g
                .iter()
                .zip(tape.value(*x).data())
                .map(|(g, v)| g / v)
                .collect();
            tape.accumulate(*x, &dx);
        }
        Op::Exp(x) => {
            let y = tape.nodes[i].value.data();
            let dx: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y).collect();
            tape.accumulate(*x, &dx);
        }
        Op::Softmax { x, axis } => {
            let y = tape.nodes[i].value.data();
            let (outer, len, inner) =
                axis_strides(tape.nodes[i].value.shape(), *axis).expect("axis checked in forward");
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for k in 0..inner {
                    let idx = |j: usize| o * len * inner + j * inner + k;
                    let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..len {
                        dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            tape.accumulate(*x, &dx);
        }
        Op::LogSoftmax(x) => {
            let y = tape.nodes[i].value.data();
            let n = tape.nodes[i].value.cols();
            let mut dx = vec![0.0; y.len()];
            for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                let gs: f64 = grow.iter().sum();
                for j in 0..n {
                    drow[j] = grow[j] - yrow[j].exp() * gs;
                }
            }
            tape.accumulate(*x, &dx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = tape.value(*gain).numel();
            let gv = tape.value(*gain).data().to_vec();
            let mut dx = vec![0.0; g.len()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for (r, rs) in rstd.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let hr = &xhat[r * d..(r + 1) * d];
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for j in 0..d {
                    let dh = gr[j] * gv[j];
                    mean_dh += dh;
                    mean_dh_h += dh * hr[j];
                    dgain[j] += gr[j] * hr[j];
                    dbias[j] += gr[j];
                }
                mean_dh /= d as f64;
                mean_dh_h /= d as f64;
                for j in 0..d {
                    let dh = gr[j] * gv[j];
                    dx[r * d + j] = rs * (dh - mean_dh - hr[j] * mean_dh_h);
                }
            }
            tape.accumulate(*x, &dx);
            tape.accumulate(*gain, &dgain);
            tape.accumulate(*bias, &dbias);
        }
        Op::Gather { table, ids } => {
            if tape.requires_grad(*table) {
                let (v, d) = (tape.shape(*table)[0], tape.shape(*table)[1]);
                let mut dt = vec![0.0; v * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                tape.accumulate(*table, &dt);
            }
        }
        Op::Concat { inputs, axis } => {
            let shape = tape.nodes[i].value.shape().to_vec();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut offset = 0;
            for &p in inputs {
                let block = tape.shape(p)[*axis] * inner;
                let mut dp = Vec::with_capacity(outer * block);
                for o in 0..outer {
                    dp.extend_from_slice(&g[o * total + offset..o * total + offset + block]);
                }
                tape.accumulate(p, &dp);
                offset += block;
            }
        }
        Op::SliceCols { x, start } => {
            let (m, n) = (tape.shape(*x)[0], tape.shape(*x)[1]);
            let len = tape.nodes[i].value.cols();
            let mut dx = vec![0.0; m * n];
            for r in 0..m {
                dx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            tape.accumulate(*x, &dx);
        }
        Op::Pick { x, ids } => {
            let n = tape.value(*x).cols();
            let mut dx = vec![0.0; tape.value(*x).numel()];
            for (r, &id) in ids.iter().enumerate() {
                dx[r * n + id] += g[r];
            }
            tape.accumulate(*x, &dx);
        }
        Op::Sum(x) => {
            let dx = vec![g[0]; tape.value(*x).numel()];
            tape.accumulate(*x, &dx);
        }
        Op::MeanRows(x) => {
            let m = tape.shape(*x)[0];
            let dx: Vec<f64> = (0..m)
                .flat_map(|_| g.iter().map(move |v| v / m as f64))
                .collect();
            tape.accumulate(*x, &dx);
        }
        Op::Dropout { x, mask } => {
            let dx: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
            tape.accumulate(*x, &dx);
        }
    }
    tape.nodes[i].op = op;
}
