//! Softmax attention and multi-head attention over dense matrices.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::gaussian_matrix;

/// Row-stochastic map `softmax(Q K^T / sqrt(D))`.
pub fn softmax_attention_map(q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.shape() != k.shape() {
        return Err(Error::ShapeMismatch {
            op: "attention map",
            left: q.shape(),
            right: k.shape(),
        });
    }
    let n = q.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut map = Matrix::zeros(n, n);
    for i in 0..n {
        let row = map.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = dot(q.row(i), k.row(j)) * scale;
        }
        softmax_in_place(row);
    }
    Ok(map)
}

/// `softmax(Q K^T / sqrt(D)) V`, computed one query row at a time so the
/// `N x N` map is never stored.
pub fn softmax_attention(v: &Matrix, q: &Matrix, k: &Matrix) -> Result<Matrix> {
    if q.shape() != k.shape() {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if v.rows() != k.rows() {
        return Err(Error::ShapeMismatch {
            op: "attention values",
            left: k.shape(),
            right: v.shape(),
        });
    }
    let n = q.rows();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(n, v.cols());
    let mut weights = vec![0.0; n];
    for i in 0..n {
        for (j, w) in weights.iter_mut().enumerate() {
            *w = dot(q.row(i), k.row(j)) * scale;
        }
        softmax_in_place(&mut weights);
        let out_row = out.row_mut(i);
        for (j, &w) in weights.iter().enumerate() {
            for (o, &x) in out_row.iter_mut().zip(v.row(j)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Numerically stable in-place softmax (row-max subtraction).
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

/// Per-head `C x D` projections for queries, keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Vec<Matrix>,
    pub wk: Vec<Matrix>,
    pub wv: Vec<Matrix>,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.wv.len()
    }

    pub fn model_dim(&self) -> usize {
        self.wv.first().map_or(0, Matrix::rows)
    }

    pub fn head_dim(&self) -> usize {
        self.wv.first().map_or(0, Matrix::cols)
    }

    /// Single head with identity projections.
    pub fn identity(c: usize) -> Self {
        Self {
            wq: vec![Matrix::identity(c)],
            wk: vec![Matrix::identity(c)],
            wv: vec![Matrix::identity(c)],
        }
    }

    /// Gaussian projections with entry standard deviation `sigma`.
    pub fn random(rng: &mut impl rand::Rng, c: usize, heads: usize, sigma: f64) -> Result<Self> {
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "{heads} heads do not divide model dim {c}"
            )));
        }
        let d = c / heads;
        let mut p = Self {
            wq: Vec::with_capacity(heads),
            wk: Vec::with_capacity(heads),
            wv: Vec::with_capacity(heads),
        };
        for _ in 0..heads {
            p.wq.push(gaussian_matrix(rng, c, d, sigma));
            p.wk.push(gaussian_matrix(rng, c, d, sigma));
            p.wv.push(gaussian_matrix(rng, c, d, sigma));
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.heads();
        if m == 0 || self.wq.len() != m || self.wk.len() != m {
            return Err(Error::InvalidConfig("inconsistent head counts".into()));
        }
        let shape = self.wv[0].shape();
        for w in self.wq.iter().chain(&self.wk).chain(&self.wv) {
            if w.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "attention params",
                    left: shape,
                    right: w.shape(),
                });
            }
        }
        if m * shape.1 != shape.0 {
            return Err(Error::InvalidConfig(format!(
                "heads x head_dim = {} must equal model dim {}",
                m * shape.1,
                shape.0
            )));
        }
        Ok(())
    }

    /// Trainable projection count: `3 * C * D * M`.
    pub fn param_count(&self) -> usize {
        3 * self.heads() * self.model_dim() * self.head_dim()
    }
}

/// One head: `Att(X W_V; X W_Q, X W_K)`.
pub fn attention_head(x: &Matrix, params: &AttentionParams, head: usize) -> Result<Matrix> {
    let q = x.matmul(&params.wq[head])?;
    let k = x.matmul(&params.wk[head])?;
    let v = x.matmul(&params.wv[head])?;
    softmax_attention(&v, &q, &k)
}

/// Concatenation of all heads, `N x C`.
pub fn multi_head_attention(x: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    params.validate()?;
    if x.cols() != params.model_dim() {
        return Err(Error::ShapeMismatch {
            op: "multi-head attention",
            left: x.shape(),
            right: params.wv[0].shape(),
        });
    }
    let heads: Result<Vec<Matrix>> = (0..params.heads()).map(|m| attention_head(x, params, m)).collect();
    Matrix::concat_cols(&heads?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_row_returns_values() {
        let v = Matrix::from_rows(&[[1.5, -2.0, 3.0]]);
        let q = Matrix::from_rows(&[[0.3, 0.7]]);
        assert_eq!(softmax_attention(&v, &q, &q).unwrap(), v);
    }

    #[test]
    fn zero_logits_average_values() {
        let mut rng = seeded(1);
        let v = gaussian_matrix(&mut rng, 5, 3, 1.0);
        let z = Matrix::zeros(5, 2);
        let map = softmax_attention_map(&z, &z).unwrap();
        assert!(map.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let out = softmax_attention(&v, &z, &z).unwrap();
        let mean: Vec<f64> = v.col_sums().iter().map(|s| s / 5.0).collect();
        for i in 0..5 {
            for (a, b) in out.row(i).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn map_rows_sum_to_one() {
        let mut rng = seeded(13);
        let q = gaussian_matrix(&mut rng, 4, 2, 1.0);
        let k = gaussian_matrix(&mut rng, 4, 2, 1.0);
        for s in softmax_attention_map(&q, &k).unwrap().row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn streaming_matches_materialized_map() {
        let mut rng = seeded(14);
        let q = gaussian_matrix(&mut rng, 7, 3, 1.0);
        let k = gaussian_matrix(&mut rng, 7, 3, 1.0);
        let v = gaussian_matrix(&mut rng, 7, 4, 1.0);
        let a = softmax_attention(&v, &q, &k).unwrap();
        let b = softmax_attention_map(&q, &k).unwrap().matmul(&v).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-14);
    }

    #[test]
    fn single_identity_head_is_plain_attention() {
        let mut rng = seeded(2);
        let x = gaussian_matrix(&mut rng, 6, 4, 1.0);
        let mha = multi_head_attention(&x, &AttentionParams::identity(4)).unwrap();
        assert_eq!(mha, softmax_attention(&x, &x, &x).unwrap());
    }

    #[test]
    fn heads_concatenate() {
        let mut rng = seeded(21);
        let x = gaussian_matrix(&mut rng, 5, 6, 1.0);
        let params = AttentionParams::random(&mut rng, 6, 2, 0.5).unwrap();
        let fused = multi_head_attention(&x, &params).unwrap();
        assert_eq!(fused.shape(), (5, 6));
        let h0 = attention_head(&x, &params, 0).unwrap();
        let h1 = attention_head(&x, &params, 1).unwrap();
        assert_eq!(Matrix::concat_cols(&[h0, h1]).unwrap(), fused);
    }

    #[test]
    fn invalid_params() {
        let mut rng = seeded(3);
        assert!(AttentionParams::random(&mut rng, 6, 4, 1.0).is_err());
        let mut p = AttentionParams::random(&mut rng, 6, 2, 1.0).unwrap();
        p.wk.pop();
        assert!(p.validate().is_err());
        let q = Matrix::zeros(3, 2);
        assert!(softmax_attention(&Matrix::zeros(4, 2), &q, &q).is_err());
        assert!(softmax_attention_map(&q, &Matrix::zeros(3, 3)).is_err());
    }
}
