//! A small reverse-mode tape over dense matrices.
//!
//! Every operation appends a node holding its output value; `backward` walks
//! the nodes in reverse and accumulates adjoints. Parameters live outside the
//! tape in a [`ParamStore`] and are pulled in with [`Tape::param`].

use crate::attention::softmax_in_place;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::permutation::Permutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: usize) -> &Matrix {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect()
    }

    /// `value -= lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grads: &[Matrix], lr: f64) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                op: "sgd step",
                left: self.values.len(),
                right: grads.len(),
            });
        }
        for (p, g) in self.values.iter_mut().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                *x -= lr * d;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a `1 x k` row to every row.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    RowSoftmax(NodeId),
    /// Output row `i` is row `indices[i]` of the table.
    GatherRows(NodeId, Vec<usize>),
    /// Output column `c` is `perms[c]` applied to input column `c`.
    PermuteCols(NodeId, Vec<Permutation>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    MeanRows(NodeId),
    FirstRow(NodeId),
    /// Mean softmax cross-entropy of logit rows against class labels.
    CrossEntropy(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Sign pattern of every ReLU input, in recording order. Two passes with
    /// equal patterns (and equal permutations) lie on the same smooth piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(&self.value(b).transpose())?;
        Ok(self.push(Op::MatMulT(a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add row", x, r));
        }
        let mut v = x.clone();
        for i in 0..v.rows() {
            for (o, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            softmax_in_place(v.row_mut(i));
        }
        self.push(Op::RowSoftmax(a), v)
    }

    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: t.rows(),
            });
        }
        let v = Matrix::from_fn(indices.len(), t.cols(), |i, j| t[(indices[i], j)]);
        Ok(self.push(Op::GatherRows(table, indices.to_vec()), v))
    }

    pub fn permute_cols(&mut self, a: NodeId, perms: Vec<Permutation>) -> Result<NodeId> {
        let x = self.value(a);
        if perms.len() != x.cols() || perms.iter().any(|p| p.len() != x.rows()) {
            return Err(Error::LengthMismatch {
                op: "permute columns",
                left: x.cols(),
                right: perms.len(),
            });
        }
        let mut v = Matrix::zeros(x.rows(), x.cols());
        for (c, p) in perms.iter().enumerate() {
            v.set_column(c, &p.apply(&x.column(c)));
        }
        Ok(self.push(Op::PermuteCols(a, perms), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let v = self.value(a).slice_cols(lo, hi);
        self.push(Op::SliceCols(a, lo), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<Matrix> = parts.iter().map(|&p| self.value(p).clone()).collect();
        let v = Matrix::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(shape_err("concat rows", self.value(parts[0]), m));
            }
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let v = Matrix::new(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n = x.rows() as f64;
        let sums = x.col_sums();
        let v = Matrix::from_fn(1, x.cols(), |_, j| sums[j] / n);
        self.push(Op::MeanRows(a), v)
    }

    pub fn first_row(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).slice_rows(0, 1);
        self.push(Op::FirstRow(a), v)
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(Error::LengthMismatch {
                op: "cross entropy",
                left: z.rows(),
                right: labels.len(),
            });
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            if y >= row.len() {
                return Err(Error::IndexOutOfRange {
                    index: y,
                    len: row.len(),
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Matrix::filled(1, 1, total / labels.len() as f64);
        Ok(self.push(Op::CrossEntropy(logits, labels.to_vec()), v))
    }

    /// Back-propagates `seed` from `output` and returns one gradient per
    /// parameter of `store` (zeros for parameters the output does not use).
    pub fn backward(&self, output: NodeId, seed: &Matrix, store: &ParamStore) -> Result<Vec<Matrix>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward(output.0));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err("backward seed", self.value(output), seed));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.clone());
        let mut grads = store.zeros_like();

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let slot = grads.get_mut(*p).ok_or(Error::IndexOutOfRange {
                        index: *p,
                        len: store.len(),
                    })?;
                    *slot = slot.add(&g)?;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.transpose().matmul(self.value(*a))?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::AddRow(a, row) => {
                    let dr = Matrix::new(1, g.cols(), g.col_sums())?;
                    accumulate(&mut adj, *a, g)?;
                    accumulate(&mut adj, *row, dr)?;
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s))?,
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (o, &xi) in d.data_mut().iter_mut().zip(x.data()) {
                        if xi <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for i in 0..d.rows() {
                        let yi = y.row(i);
                        let dot: f64 = d.row(i).iter().zip(yi).map(|(a, b)| a * b).sum();
                        for (o, &p) in d.row_mut(i).iter_mut().zip(yi) {
                            *o = p * (*o - dot);
                        }
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::GatherRows(table, indices) => {
                    let t = self.value(*table);
                    let mut d = Matrix::zeros(t.rows(), t.cols());
                    for (i, &src) in indices.iter().enumerate() {
                        for (o, x) in d.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj, *table, d)?;
                }
                Op::PermuteCols(a, perms) => {
                    // out[i][c] = x[map[i]][c], so the adjoint scatters back.
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for (c, p) in perms.iter().enumerate() {
                        for (i, &src) in p.map().iter().enumerate() {
                            d.data_mut()[src * g.cols() + c] = g[(i, c)];
                        }
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::SliceCols(a, lo) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..g.rows() {
                        d.row_mut(i)[*lo..*lo + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *a, d)?;
                }
                Op::ConcatCols(parts) => {
                    let mut lo = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut adj, p, g.slice_cols(lo, lo + w))?;
                        lo += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut lo = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        accumulate(&mut adj, p, g.slice_rows(lo, lo + h))?;
                        lo += h;
                    }
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let n = x.rows() as f64;
                    let d = Matrix::from_fn(x.rows(), x.cols(), |_, j| g[(0, j)] / n);
                    accumulate(&mut adj, *a, d)?;
                }
                Op::FirstRow(a) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    d.row_mut(0).copy_from_slice(g.row(0));
                    accumulate(&mut adj, *a, d)?;
                }
                Op::CrossEntropy(logits, labels) => {
                    let z = self.value(*logits);
                    let scale = g[(0, 0)] / labels.len() as f64;
                    let mut d = z.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        let row = d.row_mut(i);
                        softmax_in_place(row);
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    accumulate(&mut adj, *logits, d)?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    let slot = &mut adj[id.0];
    *slot = Some(match slot.take() {
        Some(prev) => prev.add(&g)?,
        None => g,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded};

    fn numeric_grad(store: &ParamStore, id: usize, f: impl Fn(&ParamStore) -> f64) -> Matrix {
        let h = 1e-6;
        let p = store.value(id);
        Matrix::from_fn(p.rows(), p.cols(), |i, j| {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[i * p.cols() + j] += h;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[i * p.cols() + j] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
    }

    #[test]
    fn linear_sum_gradient_is_summed_input() {
        let mut rng = seeded(1);
        let x = gaussian_matrix(&mut rng, 5, 3, 1.0);
        let mut store = ParamStore::new();
        let w = store.push("w", gaussian_matrix(&mut rng, 3, 2, 1.0));
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let wi = tape.param(&store, w);
        let out = tape.matmul(xi, wi).unwrap();
        let grads = tape.backward(out, &Matrix::filled(5, 2, 1.0), &store).unwrap();
        let sums = x.col_sums();
        for i in 0..3 {
            for j in 0..2 {
                assert!((grads[w][(i, j)] - sums[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_on_empty_tape_fails() {
        let tape = Tape::new();
        let store = ParamStore::new();
        assert_eq!(
            tape.backward(NodeId(0), &Matrix::zeros(1, 1), &store),
            Err(Error::BackwardBeforeForward(0))
        );
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = seeded(2);
        let mut store = ParamStore::new();
        let emb = store.push("emb", gaussian_matrix(&mut rng, 4, 6, 1.0));
        let w = store.push("w", gaussian_matrix(&mut rng, 6, 6, 0.5));
        let b = store.push("b", gaussian_matrix(&mut rng, 1, 6, 0.5));
        let head = store.push("head", gaussian_matrix(&mut rng, 6, 3, 0.5));
        let tokens = [0, 2, 3, 2, 1];
        let perms = vec![
            Permutation::from_map(vec![4, 3, 2, 1, 0]).unwrap(),
            Permutation::identity(5),
            Permutation::from_map(vec![1, 2, 3, 4, 0]).unwrap(),
        ];
        let build = |store: &ParamStore| {
            let mut t = Tape::new();
            let e = t.param(store, emb);
            let x = t.gather_rows(e, &tokens).unwrap();
            let wi = t.param(store, w);
            let h = t.matmul(x, wi).unwrap();
            let bi = t.param(store, b);
            let h = t.add_row(h, bi).unwrap();
            let q = t.slice_cols(h, 0, 3);
            let k = t.slice_cols(h, 3, 6);
            let s = t.matmul_t(q, k).unwrap();
            let s = t.scale(s, 0.7);
            let a = t.row_softmax(s);
            let v = t.permute_cols(k, perms.clone()).unwrap();
            let att = t.matmul(a, v).unwrap();
            let r = t.relu(att);
            let cat = t.concat_cols(&[r, q]).unwrap();
            let y = t.add(cat, x).unwrap();
            let pooled_a = t.mean_rows(y);
            let pooled_b = t.first_row(y);
            let pooled = t.concat_rows(&[pooled_a, pooled_b]).unwrap();
            let hi = t.param(store, head);
            let logits = t.matmul(pooled, hi).unwrap();
            let loss = t.cross_entropy(logits, &[2, 0]).unwrap();
            (t, loss)
        };
        let (tape, loss) = build(&store);
        let grads = tape.backward(loss, &Matrix::filled(1, 1, 1.0), &store).unwrap();
        let f = |s: &ParamStore| {
            let (t, l) = build(s);
            t.value(l)[(0, 0)]
        };
        for (id, grad) in grads.iter().enumerate() {
            let num = numeric_grad(&store, id, f);
            let err = num.max_abs_diff(grad).unwrap();
            assert!(err < 1e-7, "{}: {err}", store.name(id));
        }
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut store = ParamStore::new();
        store.push("a", Matrix::filled(2, 2, 1.0));
        store.sgd_step(&[Matrix::filled(2, 2, 0.5)], 0.1).unwrap();
        assert!(store.value(0).data().iter().all(|&x| (x - 0.95).abs() < 1e-15));
        assert!(store.sgd_step(&[Matrix::zeros(1, 2)], 0.1).is_err());
        assert_eq!(store.scalar_count(), 4);
    }
}
