use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Sum(Var),
    SumSq(Var),
    L1(Var),
    Mean(Var),
    SoftmaxXent { logits: Var, target: usize, probs: Vec<f64> },
    GatherMean { table: Var, ids: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations with reverse-mode differentiation.
///
/// Nodes are only ever appended, so every input of a node has a smaller index
/// and the reverse of the append order is a valid backward schedule.
///
/// Leaf gradients accumulate: calling [`Graph::backward`] twice without
/// [`Graph::zero_grad`] in between doubles them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    detached: Vec<Vec<f64>>,
    frozen: Option<Vec<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose `detach` calls return the given values, in call order,
    /// instead of the live values of their inputs. Used by the gradient
    /// checker to hold stop-gradient quantities fixed under perturbation.
    pub fn with_frozen_detached(values: Vec<Vec<f64>>) -> Self {
        Self {
            frozen: Some(values),
            ..Self::default()
        }
    }

    /// Values produced by `detach` so far, in call order.
    pub fn detached_values(&self) -> &[Vec<f64>] {
        &self.detached
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf holding a copy of `t`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        if t.requires_grad() {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        if data.is_empty() {
            return Err(Error::Domain("empty constant vector".into()));
        }
        Ok(self.push(vec![data.len()], data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// First entry of a node's value; the value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph nodes hold valid tensors")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn expect_vector(&self, op: &'static str, v: Var) -> Result<usize> {
        let s = self.shape(v);
        if s.len() == 1 {
            Ok(s[0])
        } else {
            Err(Error::Dimension {
                op,
                left: s.to_vec(),
                right: vec![],
            })
        }
    }

    /// `w · x + b` for a matrix `w` of shape `[m, n]` and vectors `x[n]`, `b[m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine(x, w, Some(b))
    }

    /// `w · x` without a bias.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.affine(x, w, None)
    }

    fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(self.dim_err("linear", w, x));
        }
        let (m, n) = (ws[0], ws[1]);
        let xn = self.expect_vector("linear", x)?;
        if xn != n {
            return Err(self.dim_err("linear", w, x));
        }
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(self.dim_err("linear", w, b));
            }
        }
        let wv = &self.node(w).value;
        let xv = &self.node(x).value;
        let mut out: Vec<f64> = match b {
            Some(b) => self.node(b).value.clone(),
            None => vec![0.0; m],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * n..(i + 1) * n];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![m], out, Op::Linear { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(x);
        let shape = n.shape.clone();
        let value = n.value.iter().map(|&v| f(v)).collect();
        let rg = n.requires_grad;
        self.push(shape, value, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.dim_err(name, a, b));
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Concatenation of rank-1 inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Domain("concat of zero tensors".into()));
        }
        let mut value = Vec::new();
        for &p in parts {
            self.expect_vector("concat", p)?;
            value.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![value.len()], value, Op::Concat(parts.to_vec()), rg))
    }

    fn reduce(&mut self, x: Var, op: Op, f: impl Fn(&[f64]) -> f64) -> Var {
        let n = self.node(x);
        let value = vec![f(&n.value)];
        let rg = n.requires_grad;
        self.push(Vec::new(), value, op, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, Op::Sum(x), |v| v.iter().sum())
    }

    /// Σ xᵢ².
    pub fn sum_sq(&mut self, x: Var) -> Var {
        self.reduce(x, Op::SumSq(x), |v| v.iter().map(|a| a * a).sum())
    }

    /// Σ |xᵢ|, with subgradient 0 at xᵢ = 0.
    pub fn l1(&mut self, x: Var) -> Var {
        self.reduce(x, Op::L1(x), |v| v.iter().map(|a| a.abs()).sum())
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, Op::Mean(x), |v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Sum of scalar (or equal-shape) nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Domain("sum of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// `-log softmax(logits)[target]`, evaluated with max subtraction.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.expect_vector("softmax_xent", logits)?;
        if target >= v {
            return Err(Error::Index {
                what: "softmax target",
                index: target,
                bound: v,
            });
        }
        let probs = softmax(self.value(logits));
        let loss = -log_softmax_at(self.value(logits), target);
        let rg = self.rg(logits);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    /// Mean of the selected rows of a `[rows, cols]` table.
    pub fn gather_mean(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "gather_mean",
                left: s.to_vec(),
                right: vec![],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        if ids.is_empty() {
            return Err(Error::Domain("gather over zero rows".into()));
        }
        let tv = self.value(table);
        let mut out = vec![0.0; cols];
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    what: "table row",
                    index: id,
                    bound: rows,
                });
            }
            for (o, t) in out.iter_mut().zip(&tv[id * cols..(id + 1) * cols]) {
                *o += t;
            }
        }
        let k = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        let rg = self.rg(table);
        Ok(self.push(
            vec![cols],
            out,
            Op::GatherMean {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Single table row.
    pub fn row(&mut self, table: Var, id: usize) -> Result<Var> {
        self.gather_mean(table, &[id])
    }

    /// Copy of `x` through which no gradient flows.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let value = match self.frozen.as_ref() {
            Some(frozen) => {
                let k = self.detached.len();
                let v = frozen.get(k).ok_or_else(|| {
                    Error::Contract(format!("no frozen value for detach call {k}"))
                })?;
                if v.len() != self.value(x).len() {
                    return Err(Error::Contract(format!(
                        "frozen detach value {k} has length {}, expected {}",
                        v.len(),
                        self.value(x).len()
                    )));
                }
                v.clone()
            }
            None => self.value(x).to_vec(),
        };
        self.detached.push(value.clone());
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Adds this graph's gradient for `v` into `t`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => t.accumulate_grad(&vec![0.0; t.len()]),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let slot = self.leaf_grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, d) in slot.iter_mut().zip(&g) {
                        *s += d;
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let n = xv.len();
                    if self.nodes[x.0].requires_grad {
                        let dx = slot(&mut adj, *x, n);
                        for (gi, row) in g.iter().zip(wv.chunks_exact(n)) {
                            if *gi != 0.0 {
                                for (d, wij) in dx.iter_mut().zip(row) {
                                    *d += gi * wij;
                                }
                            }
                        }
                    }
                    if self.nodes[w.0].requires_grad {
                        let dw = slot(&mut adj, *w, wv.len());
                        for (gi, drow) in g.iter().zip(dw.chunks_exact_mut(n)) {
                            if *gi != 0.0 {
                                for (d, xj) in drow.iter_mut().zip(xv) {
                                    *d += gi * xj;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.nodes[b.0].requires_grad {
                            add_into(slot(&mut adj, *b, g.len()), &g);
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let dx = slot(&mut adj, *x, g.len());
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
                Op::Scale(x, f) => {
                    let dx = slot(&mut adj, *x, g.len());
                    for (d, gi) in dx.iter_mut().zip(&g) {
                        *d += gi * f;
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.nodes[v.0].requires_grad {
                            add_into(slot(&mut adj, v, g.len()), &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        add_into(slot(&mut adj, *a, g.len()), &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = slot(&mut adj, *b, g.len());
                        for (d, gi) in db.iter_mut().zip(&g) {
                            *d -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        let da = slot(&mut adj, *a, g.len());
                        for ((d, gi), y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = slot(&mut adj, *b, g.len());
                        for ((d, gi), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * x;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.nodes[p.0].requires_grad {
                            add_into(slot(&mut adj, *p, len), &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::Sum(x) => {
                    let len = self.nodes[x.0].value.len();
                    slot(&mut adj, *x, len).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(x) => {
                    let len = self.nodes[x.0].value.len();
                    let s = g[0] / len as f64;
                    slot(&mut adj, *x, len).iter_mut().for_each(|d| *d += s);
                }
                Op::SumSq(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = slot(&mut adj, *x, xv.len());
                    for (d, xi) in dx.iter_mut().zip(xv) {
                        *d += 2.0 * xi * g[0];
                    }
                }
                Op::L1(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = slot(&mut adj, *x, xv.len());
                    for (d, xi) in dx.iter_mut().zip(xv) {
                        *d += sign0(*xi) * g[0];
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    probs,
                } => {
                    let dl = slot(&mut adj, *logits, probs.len());
                    for (d, p) in dl.iter_mut().zip(probs) {
                        *d += g[0] * p;
                    }
                    dl[*target] -= g[0];
                }
                Op::GatherMean { table, ids } => {
                    let cols = g.len();
                    let rows_len = self.nodes[table.0].value.len();
                    let k = ids.len() as f64;
                    let dt = slot(&mut adj, *table, rows_len);
                    for &id in ids {
                        for (d, gi) in dt[id * cols..(id + 1) * cols].iter_mut().zip(&g) {
                            *d += gi / k;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// `log softmax(logits)[index]` via log-sum-exp.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - max - lse
}
