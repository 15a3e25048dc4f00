use std::collections::BTreeMap;

use rand::Rng;

use super::ops::{self, LayerNormParts};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Gather {
        table: Var,
        index: Vec<usize>,
    },
    Slice {
        x: Var,
        row0: usize,
        col0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only tape of tensor operations. Nodes are stored in creation
/// order, which is a topological order; `backward` walks it in reverse.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    names: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: value.with_requires_grad(requires_grad),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf whose gradient is tracked when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(Op::Leaf, tensor, rg)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(Op::Leaf, tensor, false)
    }

    /// Named leaf. Gradients for named leaves are reported by
    /// [`Gradients::by_name`].
    pub fn param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Var {
        let v = self.leaf(tensor);
        self.names.insert(name.into(), v);
        v
    }

    pub fn named(&self, name: &str) -> Option<Var> {
        self.names.get(name).copied()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = ops::transpose(self.value(a))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(Op::Transpose(a), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// `x [m×n] + bias [n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, n) = xv.dims2("add_row")?;
        if bv.shape() != [n] {
            return Err(TensorError::shape_mismatch("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Op::AddRow(x, bias), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, factor), value, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = ops::gelu(self.value(a));
        let rg = self.any_grad(&[a]);
        self.push(Op::Gelu(a), value, rg)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = ops::softmax(self.value(a));
        let rg = self.any_grad(&[a]);
        self.push(Op::Softmax(a), value, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, TensorError> {
        let LayerNormParts {
            out,
            normalized,
            inv_std,
        } = ops::layer_norm_parts(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            out,
            rg,
        ))
    }

    /// Row lookup: `out[i] = table[ids[i]]` for a `[V×H]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (v, h) = tv.dims2("gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: v });
        }
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(&tv.data()[i * h..(i + 1) * h]);
        }
        let value = Tensor::new(vec![ids.len(), h], out)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Flat-index lookup: `out.flat[i] = table.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, table: Var, index: &[usize], shape: Vec<usize>) -> Result<Var, TensorError> {
        let tv = self.value(table);
        if let Some(&bad) = index.iter().find(|&&i| i >= tv.len()) {
            return Err(TensorError::IndexOutOfRange {
                index: bad,
                len: tv.len(),
            });
        }
        let out = index.iter().map(|&i| tv.data()[i]).collect();
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Op::Gather {
                table,
                index: index.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Rectangular block `x[row0..row0+rows, col0..col0+cols]`.
    pub fn slice(&mut self, x: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (m, n) = xv.dims2("slice")?;
        if row0 + rows > m || col0 + cols > n {
            return Err(TensorError::shape_mismatch(
                "slice",
                xv.shape(),
                &[row0 + rows, col0 + cols],
            ));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in row0..row0 + rows {
            out.extend_from_slice(&xv.data()[r * n + col0..r * n + col0 + cols]);
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Slice { x, row0, col0 }, value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::BadArgument("concat of nothing"))?;
        let (m, _) = self.value(*first).dims2("concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_cols")?;
            if pm != m {
                return Err(TensorError::shape_mismatch(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let pv = self.value(p);
                let pn = pv.shape()[1];
                out.extend_from_slice(&pv.data()[r * pn..(r + 1) * pn]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::BadArgument("concat of nothing"))?;
        let (_, n) = self.value(*first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            let (pm, pn) = pv.dims2("concat_rows")?;
            if pn != n {
                return Err(TensorError::shape_mismatch(
                    "concat_rows",
                    self.value(*first).shape(),
                    pv.shape(),
                ));
            }
            rows += pm;
            out.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        let rg = self.any_grad(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, rg))
    }

    /// Inverted dropout. A rate of zero returns `x` unchanged without
    /// recording a node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadArgument("dropout rate must be in [0, 1)"));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let xv = self.value(x);
        let mask: Vec<T> = (0..xv.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Dropout { x, mask }, value, rg))
    }

    /// Mean cross-entropy of `labels` under softmax of `logits [B×C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let loss = ops::cross_entropy(lv, labels)?;
        let probs = ops::softmax(lv).into_data();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(Op::Sum(x), value, rg)
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            names: self.names.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bt = ops::transpose(self.value(*b))?;
                    self.accumulate(grads, *a, ops::matmul(g, &bt)?);
                }
                if self.requires_grad(*b) {
                    let at = ops::transpose(self.value(*a))?;
                    self.accumulate(grads, *b, ops::matmul(&at, g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, ops::transpose(g)?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*bias) {
                    let n = g.last_dim();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(vec![n], db)?);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|v| v * *f)),
            Op::Gelu(a) => {
                let dx = g.zip_map(self.value(*a), |gv, xv| gv * ops::gelu_derivative(xv))?;
                self.accumulate(grads, *a, dx);
            }
            Op::Softmax(a) => {
                let c = out.last_dim();
                let mut dx = Vec::with_capacity(out.len());
                for (y, gy) in out.data().chunks(c).zip(g.data().chunks(c)) {
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    dx.extend(y.iter().zip(gy).map(|(&p, &q)| p * (q - dot)));
                }
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let h = out.last_dim();
                let gam = self.value(*gamma).data();
                let hn = T::lit(h as f64);
                let mut dgamma = vec![T::zero(); h];
                let mut dbeta = vec![T::zero(); h];
                let mut dx = Vec::with_capacity(out.len());
                for ((gy, xh), &inv) in g.data().chunks(h).zip(normalized.chunks(h)).zip(inv_std) {
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..h {
                        dgamma[j] = dgamma[j] + gy[j] * xh[j];
                        dbeta[j] = dbeta[j] + gy[j];
                        let d = gy[j] * gam[j];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xh[j];
                    }
                    for j in 0..h {
                        let d = gy[j] * gam[j];
                        dx.push(inv / hn * (hn * d - sum_d - xh[j] * sum_dx));
                    }
                }
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), dx)?);
                self.accumulate(grads, *gamma, Tensor::new(vec![h], dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(vec![h], dbeta)?);
            }
            Op::GatherRows { table, ids } => {
                if self.requires_grad(*table) {
                    let tv = self.value(*table);
                    let h = tv.last_dim();
                    let mut dt = Tensor::zeros(tv.shape().to_vec());
                    let d = dt.data_mut();
                    for (r, &i) in ids.iter().enumerate() {
                        for j in 0..h {
                            d[i * h + j] = d[i * h + j] + g.data()[r * h + j];
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::Gather { table, index } => {
                if self.requires_grad(*table) {
                    let mut dt = Tensor::zeros(self.value(*table).shape().to_vec());
                    let d = dt.data_mut();
                    for (k, &i) in index.iter().enumerate() {
                        d[i] = d[i] + g.data()[k];
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::Slice { x, row0, col0 } => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let n = xv.shape()[1];
                    let (rows, cols) = g.dims2("slice")?;
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    let d = dx.data_mut();
                    for r in 0..rows {
                        let dst = (row0 + r) * n + col0;
                        d[dst..dst + cols].copy_from_slice(&g.data()[r * cols..(r + 1) * cols]);
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2("concat_cols")?;
                let mut col = 0;
                for &p in parts {
                    let pn = self.value(p).shape()[1];
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(m * pn);
                        for r in 0..m {
                            dp.extend_from_slice(&g.data()[r * total + col..r * total + col + pn]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![m, pn], dp)?);
                    }
                    col += pn;
                }
            }
            Op::ConcatRows(parts) => {
                let n = g.last_dim();
                let mut row = 0;
                for &p in parts {
                    let pm = self.value(p).shape()[0];
                    if self.requires_grad(p) {
                        let dp = g.data()[row * n..(row + pm) * n].to_vec();
                        self.accumulate(grads, p, Tensor::new(vec![pm, n], dp)?);
                    }
                    row += pm;
                }
            }
            Op::Dropout { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let lv = self.value(*logits);
                let c = lv.last_dim();
                let scale = g.data()[0] / T::lit(labels.len() as f64);
                let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    dl[r * c + y] = dl[r * c + y] - scale;
                }
                self.accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), dl)?);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape().to_vec(), gv));
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    names: BTreeMap<String, Var>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .map(|g| g.with_requires_grad(false))
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn by_name(&self) -> BTreeMap<String, Tensor<T>> {
        self.names
            .iter()
            .map(|(name, &v)| (name.clone(), self.get(v)))
            .collect()
    }
}

/// Central-difference estimate of `df/dx`, one element at a time.
pub fn finite_difference_grad<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: T) -> Tensor<T> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    let two_h = h + h;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}
