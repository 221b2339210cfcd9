use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operations understood by the tape.
///
/// Shape conventions: matrices are `[rows, cols]`, scalars are `[]`.
/// `Softmax` and `LogSoftmax` normalize over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    Add,
    Sub,
    Mul,
    /// `[r,c] * s[r] -> [r,c]`, each row scaled by its own scalar.
    ScaleRows,
    /// `[r,c] + b[c] -> [r,c]`
    AddBias,
    /// `x[n,d] (*) w[k,d,f] + b[f] -> [n-k+1, f]`, valid padding, stride 1.
    Conv1d,
    /// `[m,f] -> [1,f]`, max over the time axis.
    MaxPoolOverTime,
    Relu,
    Sigmoid,
    Abs,
    Softmax,
    LogSoftmax,
    /// Gathers rows of a `[V,d]` table, producing `[n,d]`.
    EmbeddingLookup(Vec<usize>),
    /// Concatenation of matrices with equal row counts along the column axis.
    Concat,
    Sum,
    Mean,
    ScalarMul(f64),
    /// Column `j` of a matrix, shape `[r]`.
    Column(usize),
    /// Element at flat index `i`, as a scalar.
    Select(usize),
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScaleRows => "scale_rows",
            OpKind::AddBias => "add_bias",
            OpKind::Conv1d => "conv1d",
            OpKind::MaxPoolOverTime => "max_pool_over_time",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Abs => "abs",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::EmbeddingLookup(_) => "embedding_lookup",
            OpKind::Concat => "concat",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::ScalarMul(_) => "scalar_mul",
            OpKind::Column(_) => "column",
            OpKind::Select(_) => "select",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Option<OpKind>,
    inputs: Vec<Var>,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    // argmax rows for max pooling
    aux: Vec<usize>,
}

/// Dynamic reverse-mode tape. Build one per forward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    grad_enabled: bool,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(op: &'static str, s: &[usize]) -> Result<(usize, usize)> {
    match *s {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, &[s])),
    }
}

fn last_axis(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1).max(1)
}

fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            z += *oi;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = xi - lse;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), grad_enabled: true, consumed: false }
    }

    /// A graph that only evaluates; `param` leaves become constants and
    /// `backward` is rejected.
    pub fn without_grad() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Option<OpKind>, inputs: Vec<Var>, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, aux: Vec<usize>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { op, inputs, shape, value, requires_grad, aux });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient will be tracked.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push(None, Vec::new(), t.shape().to_vec(), t.values().to_vec(), rg, Vec::new())
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(None, Vec::new(), shape, t.into_values(), false, Vec::new())
    }

    pub fn input(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape, values)?))
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

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Evaluates `kind` on `inputs` and records the node.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let name = kind.name();
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::ScaleRows | OpKind::AddBias => 2,
            OpKind::Conv1d => 3,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Invalid(format!("{name}: expected {arity} inputs, got {}", inputs.len())));
        }
        let shape_of = |i: usize| self.nodes[inputs[i].0].shape.as_slice();
        let val = |i: usize| self.nodes[inputs[i].0].value.as_slice();
        let mut aux = Vec::new();

        let (shape, value) = match &kind {
            OpKind::MatMul => {
                let (m, k) = dims2(name, shape_of(0))?;
                let (k2, n) = dims2(name, shape_of(1))?;
                if k != k2 {
                    return Err(Error::shape(name, &[shape_of(0), shape_of(1)]));
                }
                let (a, b) = (val(0), val(1));
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let o = &mut out[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = a[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (oj, bj) in o.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                            *oj += av * bj;
                        }
                    }
                }
                (vec![m, n], out)
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                if shape_of(0) != shape_of(1) {
                    return Err(Error::shape(name, &[shape_of(0), shape_of(1)]));
                }
                let f: fn(f64, f64) -> f64 = match kind {
                    OpKind::Add => |a, b| a + b,
                    OpKind::Sub => |a, b| a - b,
                    _ => |a, b| a * b,
                };
                (shape_of(0).to_vec(), val(0).iter().zip(val(1)).map(|(&a, &b)| f(a, b)).collect())
            }
            OpKind::ScaleRows => {
                let (r, c) = dims2(name, shape_of(0))?;
                if numel(shape_of(1)) != r {
                    return Err(Error::shape(name, &[shape_of(0), shape_of(1)]));
                }
                let (x, s) = (val(0), val(1));
                let out = x.chunks(c.max(1)).zip(s).flat_map(|(row, &si)| row.iter().map(move |v| v * si)).collect();
                (vec![r, c], out)
            }
            OpKind::AddBias => {
                let (r, c) = dims2(name, shape_of(0))?;
                if numel(shape_of(1)) != c {
                    return Err(Error::shape(name, &[shape_of(0), shape_of(1)]));
                }
                let (x, b) = (val(0), val(1));
                let out = x.iter().enumerate().map(|(i, v)| v + b[i % c]).collect();
                (vec![r, c], out)
            }
            OpKind::Conv1d => {
                let (n, d) = dims2(name, shape_of(0))?;
                let (k, d2, f) = match *shape_of(1) {
                    [k, d2, f] => (k, d2, f),
                    _ => return Err(Error::shape(name, &[shape_of(0), shape_of(1), shape_of(2)])),
                };
                if d != d2 || numel(shape_of(2)) != f || k == 0 || n < k {
                    return Err(Error::shape(name, &[shape_of(0), shape_of(1), shape_of(2)]));
                }
                let (x, w, b) = (val(0), val(1), val(2));
                let m = n - k + 1;
                let mut out = vec![0.0; m * f];
                for t in 0..m {
                    let o = &mut out[t * f..(t + 1) * f];
                    o.copy_from_slice(b);
                    for j in 0..k {
                        let xr = &x[(t + j) * d..(t + j + 1) * d];
                        for (c, &xv) in xr.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wr = &w[(j * d + c) * f..(j * d + c + 1) * f];
                            for (oi, wi) in o.iter_mut().zip(wr) {
                                *oi += xv * wi;
                            }
                        }
                    }
                }
                (vec![m, f], out)
            }
            OpKind::MaxPoolOverTime => {
                let (m, f) = dims2(name, shape_of(0))?;
                if m == 0 {
                    return Err(Error::shape(name, &[shape_of(0)]));
                }
                let x = val(0);
                let mut out = vec![f64::NEG_INFINITY; f];
                aux = vec![0; f];
                for t in 0..m {
                    for j in 0..f {
                        let v = x[t * f + j];
                        if v > out[j] {
                            out[j] = v;
                            aux[j] = t;
                        }
                    }
                }
                (vec![1, f], out)
            }
            OpKind::Relu => (shape_of(0).to_vec(), val(0).iter().map(|v| v.max(0.0)).collect()),
            OpKind::Sigmoid => (shape_of(0).to_vec(), val(0).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()),
            OpKind::Abs => (shape_of(0).to_vec(), val(0).iter().map(|v| v.abs()).collect()),
            OpKind::Softmax => (shape_of(0).to_vec(), softmax_rows(val(0), last_axis(shape_of(0)))),
            OpKind::LogSoftmax => (shape_of(0).to_vec(), log_softmax_rows(val(0), last_axis(shape_of(0)))),
            OpKind::EmbeddingLookup(ids) => {
                let (v, d) = dims2(name, shape_of(0))?;
                if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
                    return Err(Error::Invalid(format!("{name}: id {bad} out of range for table of {v} rows")));
                }
                let t = val(0);
                let out = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
                (vec![ids.len(), d], out)
            }
            OpKind::Concat => {
                let (r, _) = dims2(name, shape_of(0))?;
                let mut cols = Vec::with_capacity(inputs.len());
                for i in 0..inputs.len() {
                    let (ri, ci) = dims2(name, shape_of(i))?;
                    if ri != r {
                        let shapes: Vec<&[usize]> = (0..inputs.len()).map(shape_of).collect();
                        return Err(Error::shape(name, &shapes));
                    }
                    cols.push(ci);
                }
                let total: usize = cols.iter().sum();
                let mut out = Vec::with_capacity(r * total);
                for row in 0..r {
                    for (i, &c) in cols.iter().enumerate() {
                        out.extend_from_slice(&val(i)[row * c..(row + 1) * c]);
                    }
                }
                (vec![r, total], out)
            }
            OpKind::Sum => (Vec::new(), vec![val(0).iter().sum()]),
            OpKind::Mean => {
                let x = val(0);
                if x.is_empty() {
                    return Err(Error::shape(name, &[shape_of(0)]));
                }
                (Vec::new(), vec![x.iter().sum::<f64>() / x.len() as f64])
            }
            OpKind::ScalarMul(c) => (shape_of(0).to_vec(), val(0).iter().map(|v| v * c).collect()),
            OpKind::Column(j) => {
                let (r, c) = dims2(name, shape_of(0))?;
                if *j >= c {
                    return Err(Error::shape(name, &[shape_of(0), &[*j]]));
                }
                let x = val(0);
                (vec![r], (0..r).map(|i| x[i * c + j]).collect())
            }
            OpKind::Select(i) => {
                let x = val(0);
                if *i >= x.len() {
                    return Err(Error::shape(name, &[shape_of(0), &[*i]]));
                }
                (Vec::new(), vec![x[*i]])
            }
        };
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Some(kind), inputs.to_vec(), shape, value, requires_grad, aux))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Mul, &[a, b])
    }
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        self.forward_op(OpKind::ScaleRows, &[x, s])
    }
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::AddBias, &[x, b])
    }
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Conv1d, &[x, w, b])
    }
    pub fn max_pool_over_time(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::MaxPoolOverTime, &[x])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Sigmoid, &[x])
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Abs, &[x])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Softmax, &[x])
    }
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::LogSoftmax, &[x])
    }
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.forward_op(OpKind::EmbeddingLookup(ids.to_vec()), &[table])
    }
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.forward_op(OpKind::Concat, xs)
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Mean, &[x])
    }
    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var> {
        self.forward_op(OpKind::ScalarMul(c), &[x])
    }
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        self.forward_op(OpKind::Column(j), &[x])
    }
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        self.forward_op(OpKind::Select(i), &[x])
    }

    /// Sums scalars; an empty list yields a constant zero.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let mut it = xs.iter();
        let Some(&first) = it.next() else {
            return Ok(self.constant(Tensor::scalar(0.0)));
        };
        it.try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node reachable
    /// from a tracked leaf become available through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.grad_enabled {
            return Err(Error::Backward("gradients are disabled on this graph".into()));
        }
        if self.consumed {
            return Err(Error::Backward("graph already differentiated; run a new forward pass".into()));
        }
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::Backward(format!("loss must be scalar, got shape {:?}", ln.shape)));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !ln.requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(op) = &node.op {
                if node.requires_grad {
                    let contribs = self.input_grads(idx, op, &g);
                    for (input, cg) in node.inputs.iter().zip(contribs) {
                        if let Some(cg) = cg {
                            if !self.nodes[input.0].requires_grad {
                                continue;
                            }
                            match &mut self.grads[input.0] {
                                Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, b)| *a += b),
                                slot @ None => *slot = Some(cg),
                            }
                        }
                    }
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, op: &OpKind, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[idx];
        let inp = |i: usize| &self.nodes[node.inputs[i].0];
        let needs = |i: usize| inp(i).requires_grad;
        let out = &node.value;
        match op {
            OpKind::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let (m, k) = (a.shape[0], a.shape[1]);
                let n = b.shape[1];
                let ga = needs(0).then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = (0..n).map(|j| g[i * n + j] * b.value[p * n + j]).sum();
                        }
                    }
                    ga
                });
                let gb = needs(1).then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = a.value[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }
            OpKind::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            OpKind::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
            OpKind::Mul => {
                let (a, b) = (&inp(0).value, &inp(1).value);
                vec![
                    needs(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    needs(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            OpKind::ScaleRows => {
                let (x, s) = (inp(0), inp(1));
                let c = x.shape[1].max(1);
                let gx = needs(0).then(|| g.iter().enumerate().map(|(i, gv)| gv * s.value[i / c]).collect());
                let gs = needs(1).then(|| {
                    g.chunks(c).zip(x.value.chunks(c)).map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum()).collect()
                });
                vec![gx, gs]
            }
            OpKind::AddBias => {
                let c = inp(0).shape[1];
                let gb = needs(1).then(|| {
                    let mut gb = vec![0.0; c];
                    g.iter().enumerate().for_each(|(i, v)| gb[i % c] += v);
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }
            OpKind::Conv1d => {
                let (x, w) = (inp(0), inp(1));
                let (n, d) = (x.shape[0], x.shape[1]);
                let (k, f) = (w.shape[0], w.shape[2]);
                let m = n - k + 1;
                let mut gx = needs(0).then(|| vec![0.0; n * d]);
                let mut gw = needs(1).then(|| vec![0.0; k * d * f]);
                for t in 0..m {
                    let gr = &g[t * f..(t + 1) * f];
                    for j in 0..k {
                        for c in 0..d {
                            let wi = (j * d + c) * f;
                            if let Some(gx) = gx.as_mut() {
                                gx[(t + j) * d + c] += gr.iter().zip(&w.value[wi..wi + f]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if let Some(gw) = gw.as_mut() {
                                let xv = x.value[(t + j) * d + c];
                                for (gwv, gv) in gw[wi..wi + f].iter_mut().zip(gr) {
                                    *gwv += xv * gv;
                                }
                            }
                        }
                    }
                }
                let gb = needs(2).then(|| {
                    let mut gb = vec![0.0; f];
                    for t in 0..m {
                        for j in 0..f {
                            gb[j] += g[t * f + j];
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            }
            OpKind::MaxPoolOverTime => {
                let f = inp(0).shape[1];
                let mut gx = vec![0.0; inp(0).value.len()];
                for j in 0..f {
                    gx[node.aux[j] * f + j] += g[j];
                }
                vec![Some(gx)]
            }
            OpKind::Relu => vec![Some(g.iter().zip(&inp(0).value).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect())],
            OpKind::Sigmoid => vec![Some(g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect())],
            OpKind::Abs => vec![Some(g.iter().zip(&inp(0).value).map(|(g, x)| g * x.signum() * (*x != 0.0) as u8 as f64).collect())],
            OpKind::Softmax => {
                let c = last_axis(&node.shape);
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), or) in g.chunks(c).zip(out.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), y) in or.iter_mut().zip(gr).zip(yr) {
                        *o = y * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }
            OpKind::LogSoftmax => {
                let c = last_axis(&node.shape);
                let mut gx = vec![0.0; g.len()];
                for ((gr, lr), or) in g.chunks(c).zip(out.chunks(c)).zip(gx.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, gv), l) in or.iter_mut().zip(gr).zip(lr) {
                        *o = gv - l.exp() * total;
                    }
                }
                vec![Some(gx)]
            }
            OpKind::EmbeddingLookup(ids) => {
                let d = inp(0).shape[1];
                let mut gt = vec![0.0; inp(0).value.len()];
                for (row, &id) in ids.iter().enumerate() {
                    for (a, b) in gt[id * d..(id + 1) * d].iter_mut().zip(&g[row * d..(row + 1) * d]) {
                        *a += b;
                    }
                }
                vec![Some(gt)]
            }
            OpKind::Concat => {
                let r = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                node.inputs
                    .iter()
                    .map(|v| {
                        let c = self.nodes[v.0].shape[1];
                        let mut gi = vec![0.0; r * c];
                        for row in 0..r {
                            gi[row * c..(row + 1) * c].copy_from_slice(&g[row * total + offset..row * total + offset + c]);
                        }
                        offset += c;
                        Some(gi)
                    })
                    .collect()
            }
            OpKind::Sum => vec![Some(vec![g[0]; inp(0).value.len()])],
            OpKind::Mean => {
                let n = inp(0).value.len();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            OpKind::ScalarMul(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            OpKind::Column(j) => {
                let c = inp(0).shape[1];
                let mut gx = vec![0.0; inp(0).value.len()];
                for (i, gv) in g.iter().enumerate() {
                    gx[i * c + j] = *gv;
                }
                vec![Some(gx)]
            }
            OpKind::Select(i) => {
                let mut gx = vec![0.0; inp(0).value.len()];
                gx[*i] = g[0];
                vec![Some(gx)]
            }
        }
    }
}
