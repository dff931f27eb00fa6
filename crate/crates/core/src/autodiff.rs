//! Tape-based reverse-mode differentiation.
//!
//! Every op appends one node to the [`Tape`]; a node only refers to nodes
//! recorded before it, so the tape is topologically ordered by construction
//! and `backward` is a single reverse sweep. Nodes that cannot reach a
//! `requires_grad` leaf are skipped during the sweep.
//!
//! ```
//! use clipdesk_core::autodiff::Tape;
//! use clipdesk_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
//! let loss = tape.sum(x).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Rows with a Euclidean norm at or below this are rejected by
/// [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Relu(Var),
    MeanPoolSegments { x: Var, lengths: Vec<usize> },
    ScaleByScalar { x: Var, s: Var },
    Scale { x: Var, c: f64 },
    Exp(Var),
    EmbeddingLookup { table: Var, ids: Vec<usize> },
    L2Normalize { x: Var, norms: Vec<f64> },
    LogSoftmax(Var),
    Transpose(Var),
    Nll { logp: Var, targets: Vec<usize> },
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn check(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(&self.nodes[v.idx])
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.idx].needs_grad)
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs = tensor.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: tensor,
            needs_grad: needs,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.check(v)?.value)
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v)?;
        if !t.is_scalar() {
            return Err(Error::NotScalar(t.shape().to_vec()));
        }
        Ok(t.data()[0])
    }

    /// Gradient accumulated on a leaf by the last `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.check(v).ok()?.value.grad()
    }

    /// Clears every gradient buffer and re-arms `backward`.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check(a)?.value.dims2()?;
        let (k2, n) = self.check(b)?.value.dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply [{m}, {k}] by [{k2}, {n}]"),
            ));
        }
        let out = matmul_raw(self.nodes[a.idx].value.data(), m, k, self.nodes[b.idx].value.data(), n);
        let needs = self.needs(&[a, b]);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, needs)
    }

    /// Elementwise sum of equal shapes, or `b` as a `1×n` row broadcast over
    /// the rows of an `m×n` `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = &self.check(a)?.value;
        let tb = &self.check(b)?.value;
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else {
            let (_, n) = ta.dims2()?;
            let (br, bn) = tb.dims2()?;
            if br != 1 || bn != n {
                return Err(Error::shape(
                    "add",
                    format!("cannot add {:?} to {:?}", tb.shape(), ta.shape()),
                ));
            }
            true
        };
        let out = if broadcast {
            let n = tb.numel();
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % n])
                .collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        };
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(&[a, b]);
        self.push(Op::Add { a, b, broadcast }, value, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = &self.check(x)?.value;
        let out = t.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(&[x]);
        self.push(Op::Relu(x), value, needs)
    }

    /// Mean over all rows: `m×n → 1×n`.
    pub fn mean_pool_rows(&mut self, x: Var) -> Result<Var> {
        let (m, _) = self.check(x)?.value.dims2()?;
        self.mean_pool_segments(x, &[m])
    }

    /// Mean over consecutive row groups: `(Σ lengths)×n → |lengths|×n`.
    pub fn mean_pool_segments(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let t = &self.check(x)?.value;
        let (m, n) = t.dims2()?;
        if lengths.is_empty() || lengths.contains(&0) || lengths.iter().sum::<usize>() != m {
            return Err(Error::shape(
                "mean_pool",
                format!("segments {lengths:?} do not tile {m} rows"),
            ));
        }
        let mut out = vec![0.0; lengths.len() * n];
        let mut start = 0;
        for (g, &len) in lengths.iter().enumerate() {
            let dst = &mut out[g * n..(g + 1) * n];
            for r in start..start + len {
                for (d, v) in dst.iter_mut().zip(t.row(r)) {
                    *d += v;
                }
            }
            let inv = 1.0 / len as f64;
            dst.iter_mut().for_each(|d| *d *= inv);
            start += len;
        }
        let value = Tensor::matrix(lengths.len(), n, out)?;
        let needs = self.needs(&[x]);
        self.push(
            Op::MeanPoolSegments {
                x,
                lengths: lengths.to_vec(),
            },
            value,
            needs,
        )
    }

    /// `s · x` for a scalar variable `s`.
    pub fn scale_by_scalar_param(&mut self, x: Var, s: Var) -> Result<Var> {
        let ts = &self.check(s)?.value;
        if !ts.is_scalar() {
            return Err(Error::shape(
                "scale_by_scalar_param",
                format!("scale must be scalar, got {:?}", ts.shape()),
            ));
        }
        let sv = ts.data()[0];
        let t = &self.check(x)?.value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * sv).collect())?;
        let needs = self.needs(&[x, s]);
        self.push(Op::ScaleByScalar { x, s }, value, needs)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = &self.check(x)?.value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())?;
        let needs = self.needs(&[x]);
        self.push(Op::Scale { x, c }, value, needs)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = &self.check(x)?.value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.exp()).collect())?;
        let needs = self.needs(&[x]);
        self.push(Op::Exp(x), value, needs)
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.check(table)?.value;
        let (v, d) = t.dims2()?;
        if ids.is_empty() {
            return Err(Error::EmptyInput("embedding_lookup ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::IndexOutOfRange { id: bad, len: v });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), d, out)?;
        let needs = self.needs(&[table]);
        self.push(
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            value,
            needs,
        )
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = &self.check(x)?.value;
        let (m, n) = t.dims2()?;
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row(r);
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr <= NORM_EPS {
                return Err(Error::DegenerateVector { row: r, norm: nr });
            }
            out.extend(row.iter().map(|v| v / nr));
            norms.push(nr);
        }
        let value = Tensor::matrix(m, n, out)?;
        let needs = self.needs(&[x]);
        self.push(Op::L2Normalize { x, norms }, value, needs)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = &self.check(x)?.value;
        let (m, n) = t.dims2()?;
        if !t.all_finite() {
            return Err(Error::NonFinite { op: "log_softmax" });
        }
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(log_softmax_slice(t.row(r)));
        }
        let value = Tensor::matrix(m, n, out)?;
        let needs = self.needs(&[x]);
        self.push(Op::LogSoftmax(x), value, needs)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.check(x)?.value;
        let (m, n) = t.dims2()?;
        let value = Tensor::matrix(n, m, transpose_raw(t.data(), m, n))?;
        let needs = self.needs(&[x]);
        self.push(Op::Transpose(x), value, needs)
    }

    /// Mean negative log-likelihood of `targets[i]` under row `i` of `logp`.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let t = &self.check(logp)?.value;
        let (m, n) = t.dims2()?;
        if targets.len() != m {
            return Err(Error::shape("nll", format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= n) {
            return Err(Error::IndexOutOfRange { id: bad, len: n });
        }
        let total: f64 = targets.iter().enumerate().map(|(i, &c)| -t.get(i, c)).sum();
        let value = Tensor::scalar(total / m as f64);
        let needs = self.needs(&[logp]);
        self.push(
            Op::Nll {
                logp,
                targets: targets.to_vec(),
            },
            value,
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.value.data().iter().sum();
        let needs = self.needs(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(s), needs)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.value.data().iter().map(|v| v * v).sum();
        let needs = self.needs(&[x]);
        self.push(Op::SumSquares(x), Tensor::scalar(s), needs)
    }

    /// Propagates `d loss / d node` back through the tape and accumulates the
    /// result on every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let t = &self.check(loss)?.value;
        if !t.is_scalar() {
            return Err(Error::NotScalar(t.shape().to_vec()));
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);

        for idx in (0..=loss.idx).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            let node = &self.nodes[idx];
            for (input, delta) in self.local_grads(&node.op, &node.value, &g) {
                accumulate(&mut grads[input.idx], delta);
            }
        }
        self.backward_done = true;
        Ok(())
    }

    /// Vector-Jacobian products of one node, only for inputs that need them.
    fn local_grads(&self, op: &Op, out: &Tensor, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: &Var| &self.nodes[v.idx].value;
        let need = |v: &Var| self.nodes[v.idx].needs_grad;
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(a).rows(), val(a).cols());
                let n = val(b).cols();
                if need(a) {
                    // dA = dC · Bᵀ
                    let bd = val(b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] = gi.iter().zip(&bd[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
                        }
                    }
                    res.push((*a, da));
                }
                if need(b) {
                    // dB = Aᵀ · dC
                    let at = transpose_raw(val(a).data(), m, k);
                    res.push((*b, matmul_raw(&at, k, m, g, n)));
                }
            }
            Op::Add { a, b, broadcast } => {
                if need(a) {
                    res.push((*a, g.to_vec()));
                }
                if need(b) {
                    if *broadcast {
                        let n = val(b).numel();
                        let mut db = vec![0.0; n];
                        for (i, gv) in g.iter().enumerate() {
                            db[i % n] += gv;
                        }
                        res.push((*b, db));
                    } else {
                        res.push((*b, g.to_vec()));
                    }
                }
            }
            Op::Relu(x) => {
                let dx = val(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                res.push((*x, dx));
            }
            Op::MeanPoolSegments { x, lengths } => {
                let n = out.cols();
                let mut dx = Vec::with_capacity(val(x).numel());
                for (gi, &len) in lengths.iter().enumerate() {
                    let inv = 1.0 / len as f64;
                    let grow = &g[gi * n..(gi + 1) * n];
                    for _ in 0..len {
                        dx.extend(grow.iter().map(|v| v * inv));
                    }
                }
                res.push((*x, dx));
            }
            Op::ScaleByScalar { x, s } => {
                let sv = val(s).data()[0];
                if need(x) {
                    res.push((*x, g.iter().map(|v| v * sv).collect()));
                }
                if need(s) {
                    let ds = val(x).data().iter().zip(g).map(|(a, b)| a * b).sum();
                    res.push((*s, vec![ds]));
                }
            }
            Op::Scale { x, c } => res.push((*x, g.iter().map(|v| v * c).collect())),
            Op::Exp(x) => res.push((*x, out.data().iter().zip(g).map(|(a, b)| a * b).collect())),
            Op::EmbeddingLookup { table, ids } => {
                let d = out.cols();
                let mut dt = vec![0.0; val(table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, gv) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dst += gv;
                    }
                }
                res.push((*table, dt));
            }
            Op::L2Normalize { x, norms } => {
                // dx = (I − u uᵀ) g / ‖x‖
                let n = out.cols();
                let mut dx = Vec::with_capacity(out.numel());
                for (r, &nr) in norms.iter().enumerate() {
                    let u = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let ug: f64 = u.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(u.iter().zip(gr).map(|(uv, gv)| (gv - uv * ug) / nr));
                }
                res.push((*x, dx));
            }
            Op::LogSoftmax(x) => {
                // dx = g − softmax · Σ g
                let n = out.cols();
                let mut dx = Vec::with_capacity(out.numel());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let gs: f64 = gr.iter().sum();
                    dx.extend(y.iter().zip(gr).map(|(yv, gv)| gv - yv.exp() * gs));
                }
                res.push((*x, dx));
            }
            Op::Transpose(x) => {
                let (m, n) = (out.rows(), out.cols());
                res.push((*x, transpose_raw(g, m, n)));
            }
            Op::Nll { logp, targets } => {
                let n = val(logp).cols();
                let m = targets.len();
                let mut d = vec![0.0; m * n];
                for (i, &c) in targets.iter().enumerate() {
                    d[i * n + c] = -g[0] / m as f64;
                }
                res.push((*logp, d));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; val(x).numel()])),
            Op::SumSquares(x) => res.push((*x, val(x).data().iter().map(|v| 2.0 * v * g[0]).collect())),
        }
        res.retain(|(v, _)| need(v));
        res
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add { .. } => "add",
        Op::Relu(_) => "relu",
        Op::MeanPoolSegments { .. } => "mean_pool",
        Op::ScaleByScalar { .. } => "scale_by_scalar_param",
        Op::Scale { .. } => "scale",
        Op::Exp(_) => "exp",
        Op::EmbeddingLookup { .. } => "embedding_lookup",
        Op::L2Normalize { .. } => "l2_normalize_rows",
        Op::LogSoftmax(_) => "log_softmax_rows",
        Op::Transpose(_) => "transpose",
        Op::Nll { .. } => "nll",
        Op::Sum(_) => "sum",
        Op::SumSquares(_) => "sum_squares",
    }
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Max-shifted log-softmax of one row.
pub fn log_softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - max - lse).collect()
}
