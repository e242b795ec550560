use std::collections::HashMap;

use super::{Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    LinComb(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A reverse-mode tape. Build one per forward pass, call [`Graph::backward`]
/// once, and the gradients of every bound parameter are added into the store.
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            bound: HashMap::new(),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Binds a parameter; repeated binds of the same id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), self.value(a).cols());
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// `x · w + b` with `b` a `1 x n` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    /// Row-wise layer normalisation with a `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(s);
            for (h, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * s;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Row softmax. `allowed`, when given, is a row-major mask of the same
    /// shape as `x`; disallowed entries get probability exactly 0. Every row
    /// must allow at least one entry.
    pub fn softmax(&mut self, x: Var, allowed: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let ok = |c: usize| allowed.is_none_or(|m| m[r * cols + c]);
            assert!((0..cols).any(ok), "softmax row fully masked");
            // NaN inputs propagate to the output instead of being skipped.
            let max = (0..cols)
                .filter(|&c| ok(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let o = out.row_mut(r);
            for c in 0..cols {
                if ok(c) {
                    o[c] = (row[c] - max).exp();
                    sum += o[c];
                }
            }
            o.iter_mut().for_each(|p| *p /= sum);
        }
        self.push(out, Op::Softmax { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        assert!(start + width <= xv.cols());
        let mut out = Matrix::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols);
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols;
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows of `table` at `ids`, in order (embedding lookup / row selection).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Coordinate-wise maximum over rows, giving `1 x cols`. Ties go to the
    /// first row holding the maximum.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert!(rows > 0, "max_rows on an empty matrix");
        let mut out = Matrix::zeros(1, cols);
        let mut argmax = vec![0; cols];
        for c in 0..cols {
            let mut best = xv.get(0, c);
            for r in 1..rows {
                let v = xv.get(r, c);
                if v > best {
                    best = v;
                    argmax[c] = r;
                }
            }
            out.set(0, c, best);
        }
        self.push(out, Op::MaxRows { x, argmax })
    }

    /// Inverted dropout with the given keep mask (already scaled).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.data().len());
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Matrix::from_vec(xv.rows(), xv.cols(), data);
        self.push(value, Op::Dropout { x, mask })
    }

    /// `Σ_i weights[i] · −log softmax(logits_i)[targets[i]]`, a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut loss = 0.0;
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum.ln();
            for (p, x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
            loss += weights[r] * (log_z - row[targets[r]]);
        }
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// `Σ coeff · var` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        let (rows, cols) = self.value(terms[0].0).shape();
        let mut value = Matrix::zeros(rows, cols);
        for &(v, c) in terms {
            value.add_scaled(self.value(v), c);
        }
        self.push(value, Op::LinComb(terms.to_vec()))
    }

    /// Back-propagates from a scalar `loss` node and adds parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        self.backward_weighted(&[(loss, 1.0)], store);
    }

    /// Backpropagates `Σ wᵢ·lossᵢ` over scalar nodes in a single sweep.
    pub fn backward_weighted(&self, losses: &[(Var, f64)], store: &mut ParamStore) {
        let Some(last) = losses.iter().map(|(v, _)| v.0).max() else {
            return;
        };
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(loss, w) in losses {
            assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
            match &mut grads[loss.0] {
                Some(g) => g.data_mut()[0] += w,
                slot @ None => *slot = Some(Matrix::scalar(w)),
            }
        }

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=last).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.grad_mut(*id).add_assign(&grad),
                Op::MatMul(a, b) => {
                    let ga = grad.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&grad);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBT(a, b) => {
                    let ga = grad.matmul(self.value(*b));
                    let gb = grad.matmul_at(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, grad.clone());
                    acc(&mut grads, *a, grad);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (s, g) in gr.data_mut().iter_mut().zip(grad.row(r)) {
                            *s += g;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, grad);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, grad.map(|g| g * s)),
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = x
                        .data()
                        .iter()
                        .zip(grad.data())
                        .map(|(&x, &g)| {
                            let u = GELU_C * (x + 0.044715 * x * x * x);
                            let t = u.tanh();
                            let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                            g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                        })
                        .collect();
                    acc(&mut grads, *a, Matrix::from_vec(x.rows(), x.cols(), data));
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (rows, cols) = xhat.shape();
                    let g = self.value(*gain).data();
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let dy = grad.row(r);
                        let xh = xhat.row(r);
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for c in 0..cols {
                            ggain.data_mut()[c] += dy[c] * xh[c];
                            gbias.data_mut()[c] += dy[c];
                            let dxh = dy[c] * g[c];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[c];
                        }
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let dxh = dy[c] * g[c];
                            out[c] = rstd[r] * (dxh - sum_dxh / n - xh[c] * sum_dxh_xh / n);
                        }
                    }
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = grad.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yy, gg)) in gx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yy * (gg - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    let w = grad.cols();
                    for r in 0..grad.rows() {
                        gx.row_mut(r)[*start..*start + w].copy_from_slice(grad.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Matrix::zeros(grad.rows(), w);
                        for r in 0..grad.rows() {
                            gp.row_mut(r).copy_from_slice(&grad.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    let cols = grad.cols();
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let data = grad.data()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        acc(&mut grads, p, Matrix::from_vec(rows, cols, data));
                    }
                }
                Op::Gather { table, ids } => {
                    let tv = self.value(*table);
                    let mut gt = Matrix::zeros(tv.rows(), tv.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, g) in gt.row_mut(id).iter_mut().zip(grad.row(i)) {
                            *o += g;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::MaxRows { x, argmax } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for (c, &r) in argmax.iter().enumerate() {
                        gx.set(r, c, grad.get(0, c));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => {
                    let data = grad.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                    acc(
                        &mut grads,
                        *x,
                        Matrix::from_vec(grad.rows(), grad.cols(), data),
                    );
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                    weights,
                } => {
                    let up = grad.item();
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = gl.row_mut(r);
                        row[t] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= w * up);
                    }
                    acc(&mut grads, *logits, gl);
                }
                Op::LinComb(terms) => {
                    for &(v, c) in terms {
                        acc(&mut grads, v, grad.map(|g| g * c));
                    }
                }
            }
        }
    }
}
