//! CSP-former and MHA-former sequence classifiers.
//!
//! Each block is `X + Attn(X)` followed by `X + FFN(X)` with
//! `FFN(X) = relu(X W1 + b1) W2 + b2`. The attention sublayer is either CSP
//! (one `C x C` value projection whose output columns are permuted) or
//! multi-head softmax attention (per-head query, key and value projections,
//! heads concatenated, no output projection).

use rand::Rng;

use super::tape::{NodeId, ParamStore, Tape};
use super::task::Batch;
use crate::csp::{plan, CspConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::permutation::Permutation;
use crate::rng::{gaussian_matrix, seeded};
use crate::schedule::ShiftSchedule;

/// Scale of the per-sequence noise added to embeddings to avoid sorting ties.
pub const JITTER_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    CspFormer { groups: usize, schedule: ShiftSchedule },
    MhaFormer { heads: usize },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CspFormer { .. } => "csp",
            ModelKind::MhaFormer { .. } => "mha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    /// The first position's representation.
    Cls,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub seq_len: usize,
    pub vocab: usize,
    pub classes: usize,
    pub pooling: Pooling,
    pub skip: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.model_dim;
        if c == 0 || self.ffn_dim == 0 || self.classes == 0 || self.vocab == 0 || self.seq_len == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        match &self.kind {
            ModelKind::CspFormer { groups, .. } => {
                if *groups == 0 || !self.seq_len.is_multiple_of(*groups) {
                    return Err(Error::IndivisibleGroups {
                        len: self.seq_len,
                        groups: *groups,
                    });
                }
            }
            ModelKind::MhaFormer { heads } => {
                if *heads == 0 || !c.is_multiple_of(*heads) {
                    return Err(Error::InvalidConfig(format!(
                        "{heads} heads do not divide model dim {c}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Projection parameters of all attention sublayers: `L C^2` for CSP,
    /// `3 L C^2` for MHA.
    pub fn attention_param_count(&self) -> usize {
        let per = self.model_dim * self.model_dim;
        match self.kind {
            ModelKind::CspFormer { .. } => self.layers * per,
            ModelKind::MhaFormer { .. } => self.layers * 3 * per,
        }
    }

    /// Every trainable scalar.
    pub fn param_count(&self) -> usize {
        let (c, f) = (self.model_dim, self.ffn_dim);
        let embed = (self.vocab + self.seq_len) * c;
        let ffn = c * f + f + f * c + c;
        let head = c * self.classes + self.classes;
        embed + self.attention_param_count() + self.layers * ffn + head
    }

    /// An MHA-former whose total parameter count is as close as possible to
    /// this model's: the model dim is chosen with the FFN width ratio kept,
    /// then the FFN width is adjusted to close the remaining gap.
    pub fn matched_mha(&self, heads: usize) -> Result<ModelSpec> {
        if heads == 0 {
            return Err(Error::InvalidConfig("zero heads".into()));
        }
        let target = self.param_count() as i64;
        let ratio = self.ffn_dim as f64 / self.model_dim as f64;
        let mut best: Option<(i64, ModelSpec)> = None;
        for c in (heads..=4 * self.model_dim.max(heads)).step_by(heads) {
            let candidate = ModelSpec {
                kind: ModelKind::MhaFormer { heads },
                model_dim: c,
                ffn_dim: ((c as f64 * ratio).round() as usize).max(1),
                ..self.clone()
            };
            let diff = (candidate.param_count() as i64 - target).abs();
            if best.as_ref().is_none_or(|(d, _)| diff < *d) {
                best = Some((diff, candidate));
            }
        }
        let (_, mut spec) = best.expect("at least one candidate");
        // Fine adjustment: each extra FFN unit costs L (2C + 1) parameters.
        if spec.layers > 0 {
            let per_unit = (spec.layers * (2 * spec.model_dim + 1)) as i64;
            let delta = (target - spec.param_count() as i64) as f64 / per_unit as f64;
            spec.ffn_dim = ((spec.ffn_dim as f64 + delta).round() as i64).max(1) as usize;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum AttnIds {
    Csp {
        w: usize,
    },
    Mha {
        q: Vec<usize>,
        k: Vec<usize>,
        v: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIds {
    attn: AttnIds,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok: usize,
    pos: usize,
    blocks: Vec<BlockIds>,
    head_w: usize,
    head_b: usize,
}

/// Tokens plus the tie-breaking embedding noise for each sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub batch: Batch,
    pub jitter: Vec<Matrix>,
}

/// Permutations used by every CSP sublayer: `[sequence][layer][channel]`.
pub type PermutationRecord = Vec<Vec<Vec<Permutation>>>;

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: NodeId,
    pub permutations: PermutationRecord,
    /// `(projected values, sublayer output)` per sequence and layer.
    pub sublayers: Vec<Vec<(NodeId, NodeId)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    layout: Layout,
}

impl Model {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed);
        let (c, f) = (spec.model_dim, spec.ffn_dim);
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut store = ParamStore::new();
        let tok = store.push("tok", gaussian_matrix(&mut rng, spec.vocab, c, 1.0));
        let pos = store.push("pos", gaussian_matrix(&mut rng, spec.seq_len, c, 1.0));
        let mut blocks = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let attn = match &spec.kind {
                ModelKind::CspFormer { .. } => AttnIds::Csp {
                    w: store.push(format!("l{l}.w"), gaussian_matrix(&mut rng, c, c, inv(c))),
                },
                ModelKind::MhaFormer { heads } => {
                    let d = c / heads;
                    let mut ids = (Vec::new(), Vec::new(), Vec::new());
                    for m in 0..*heads {
                        ids.0
                            .push(store.push(format!("l{l}.q{m}"), gaussian_matrix(&mut rng, c, d, inv(c))));
                        ids.1
                            .push(store.push(format!("l{l}.k{m}"), gaussian_matrix(&mut rng, c, d, inv(c))));
                        ids.2
                            .push(store.push(format!("l{l}.v{m}"), gaussian_matrix(&mut rng, c, d, inv(c))));
                    }
                    AttnIds::Mha {
                        q: ids.0,
                        k: ids.1,
                        v: ids.2,
                    }
                }
            };
            let w1 = store.push(format!("l{l}.w1"), gaussian_matrix(&mut rng, c, f, inv(c)));
            let b1 = store.push(format!("l{l}.b1"), Matrix::zeros(1, f));
            let w2 = store.push(format!("l{l}.w2"), gaussian_matrix(&mut rng, f, c, inv(f)));
            let b2 = store.push(format!("l{l}.b2"), Matrix::zeros(1, c));
            blocks.push(BlockIds { attn, w1, b1, w2, b2 });
        }
        let head_w = store.push("head.w", gaussian_matrix(&mut rng, c, spec.classes, inv(c)));
        let head_b = store.push("head.b", Matrix::zeros(1, spec.classes));
        debug_assert_eq!(store.scalar_count(), spec.param_count());
        Ok(Self {
            spec,
            params: store,
            layout: Layout {
                tok,
                pos,
                blocks,
                head_w,
                head_b,
            },
        })
    }

    /// Rebuilds a model around loaded parameters, checking names and shapes
    /// against a fresh initialization of `spec`.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let mut model = Self::init(spec, 0)?;
        if params.names() != model.params.names() {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (a, b) in params.values().iter().zip(model.params.values()) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameters",
                    left: b.shape(),
                    right: a.shape(),
                });
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn prepare(&self, batch: Batch, rng: &mut impl Rng) -> Inputs {
        let jitter = (0..batch.len())
            .map(|_| gaussian_matrix(rng, self.spec.seq_len, self.spec.model_dim, JITTER_SCALE))
            .collect();
        Inputs { batch, jitter }
    }

    /// Records a forward pass. With `frozen`, CSP sublayers reuse the given
    /// permutations instead of sorting the current values.
    pub fn forward(&self, inputs: &Inputs, frozen: Option<&PermutationRecord>) -> Result<ForwardPass> {
        let spec = &self.spec;
        let lay = &self.layout;
        let mut t = Tape::new();
        let tok = t.param(&self.params, lay.tok);
        let pos = t.param(&self.params, lay.pos);
        let mut block_nodes = Vec::with_capacity(lay.blocks.len());
        for b in &lay.blocks {
            let attn = match &b.attn {
                AttnIds::Csp { w } => AttnNodes::Csp {
                    w: t.param(&self.params, *w),
                },
                AttnIds::Mha { q, k, v } => AttnNodes::Mha {
                    q: q.iter().map(|&i| t.param(&self.params, i)).collect(),
                    k: k.iter().map(|&i| t.param(&self.params, i)).collect(),
                    v: v.iter().map(|&i| t.param(&self.params, i)).collect(),
                },
            };
            block_nodes.push((
                attn,
                t.param(&self.params, b.w1),
                t.param(&self.params, b.b1),
                t.param(&self.params, b.w2),
                t.param(&self.params, b.b2),
            ));
        }

        let mut pooled = Vec::with_capacity(inputs.batch.len());
        let mut permutations = Vec::with_capacity(inputs.batch.len());
        let mut sublayers = Vec::with_capacity(inputs.batch.len());
        for (s, seq) in inputs.batch.tokens.iter().enumerate() {
            if seq.len() != spec.seq_len {
                return Err(Error::LengthMismatch {
                    op: "sequence length",
                    left: spec.seq_len,
                    right: seq.len(),
                });
            }
            let e = t.gather_rows(tok, seq)?;
            let mut x = t.add(e, pos)?;
            if let Some(j) = inputs.jitter.get(s) {
                let j = t.input(j.clone());
                x = t.add(x, j)?;
            }
            let mut seq_perms = Vec::new();
            let mut seq_subs = Vec::new();
            for (l, (attn, w1, b1, w2, b2)) in block_nodes.iter().enumerate() {
                let (values, out) = match attn {
                    AttnNodes::Csp { w } => {
                        let v = t.matmul(x, *w)?;
                        let perms = match frozen {
                            Some(rec) => rec
                                .get(s)
                                .and_then(|r| r.get(l))
                                .cloned()
                                .ok_or(Error::IndexOutOfRange { index: l, len: 0 })?,
                            None => {
                                let ModelKind::CspFormer { groups, schedule } = &spec.kind else {
                                    unreachable!("csp nodes in an mha model")
                                };
                                let cfg = CspConfig::new(spec.model_dim, *groups, schedule.at_layer(l));
                                plan(t.value(v), &cfg)?.totals
                            }
                        };
                        seq_perms.push(perms.clone());
                        (v, t.permute_cols(v, perms)?)
                    }
                    AttnNodes::Mha { q, k, v } => {
                        let d = spec.model_dim / q.len();
                        let scale = 1.0 / (d as f64).sqrt();
                        let mut heads = Vec::with_capacity(q.len());
                        let mut values = Vec::with_capacity(q.len());
                        for m in 0..q.len() {
                            let qm = t.matmul(x, q[m])?;
                            let km = t.matmul(x, k[m])?;
                            let vm = t.matmul(x, v[m])?;
                            let logits = t.matmul_t(qm, km)?;
                            let logits = t.scale(logits, scale);
                            let a = t.row_softmax(logits);
                            heads.push(t.matmul(a, vm)?);
                            values.push(vm);
                        }
                        (t.concat_cols(&values)?, t.concat_cols(&heads)?)
                    }
                };
                seq_subs.push((values, out));
                x = if spec.skip { t.add(x, out)? } else { out };
                let h = t.matmul(x, *w1)?;
                let h = t.add_row(h, *b1)?;
                let h = t.relu(h);
                let h = t.matmul(h, *w2)?;
                let h = t.add_row(h, *b2)?;
                x = if spec.skip { t.add(x, h)? } else { h };
            }
            pooled.push(match spec.pooling {
                Pooling::Mean => t.mean_rows(x),
                Pooling::Cls => t.first_row(x),
            });
            permutations.push(seq_perms);
            sublayers.push(seq_subs);
        }
        let pooled = t.concat_rows(&pooled)?;
        let hw = t.param(&self.params, lay.head_w);
        let hb = t.param(&self.params, lay.head_b);
        let logits = t.matmul(pooled, hw)?;
        let logits = t.add_row(logits, hb)?;
        Ok(ForwardPass {
            tape: t,
            logits,
            permutations,
            sublayers,
        })
    }

    pub fn logits(&self, inputs: &Inputs) -> Result<Matrix> {
        let pass = self.forward(inputs, None)?;
        Ok(pass.tape.value(pass.logits).clone())
    }

    /// Mean cross-entropy and accuracy without gradients.
    pub fn evaluate(&self, inputs: &Inputs) -> Result<(f64, f64)> {
        let mut pass = self.forward(inputs, None)?;
        let loss = pass.tape.cross_entropy(pass.logits, &inputs.batch.labels)?;
        let acc = accuracy(pass.tape.value(pass.logits), &inputs.batch.labels);
        Ok((pass.tape.value(loss)[(0, 0)], acc))
    }

    /// Mean cross-entropy, accuracy and the loss gradient of every parameter.
    pub fn loss_and_grads(&self, inputs: &Inputs) -> Result<(f64, f64, Vec<Matrix>)> {
        let mut pass = self.forward(inputs, None)?;
        let loss = pass.tape.cross_entropy(pass.logits, &inputs.batch.labels)?;
        let grads = pass.tape.backward(loss, &Matrix::filled(1, 1, 1.0), &self.params)?;
        let acc = accuracy(pass.tape.value(pass.logits), &inputs.batch.labels);
        Ok((pass.tape.value(loss)[(0, 0)], acc, grads))
    }
}

enum AttnNodes {
    Csp {
        w: NodeId,
    },
    Mha {
        q: Vec<NodeId>,
        k: Vec<NodeId>,
        v: Vec<NodeId>,
    },
}

/// Fraction of rows whose largest logit (first on ties) is the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            arg == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::task::{SyntheticTask, TaskKind};

    fn csp_spec(layers: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::CspFormer {
                groups: 2,
                schedule: ShiftSchedule::Linear,
            },
            layers,
            model_dim: 8,
            ffn_dim: 8,
            seq_len: 8,
            vocab: 3,
            classes: 3,
            pooling: Pooling::Mean,
            skip: true,
        }
    }

    fn inputs(model: &Model, seed: u64, size: usize) -> Inputs {
        let task = SyntheticTask::new(TaskKind::MajorityToken, 8, 3, seed).unwrap();
        let mut rng = seeded(seed);
        let batch = task.batch(&mut rng, size);
        model.prepare(batch, &mut rng)
    }

    #[test]
    fn param_counts() {
        let mut spec = csp_spec(1);
        spec.model_dim = 512;
        assert_eq!(spec.attention_param_count(), 262_144);
        for heads in [1, 8, 64] {
            let mha = ModelSpec {
                kind: ModelKind::MhaFormer { heads },
                ..spec.clone()
            };
            assert_eq!(mha.attention_param_count(), 786_432);
            assert_eq!(3 * spec.attention_param_count(), mha.attention_param_count());
        }
        let spec = csp_spec(2);
        let model = Model::init(spec.clone(), 0).unwrap();
        assert_eq!(model.params.scalar_count(), spec.param_count());
        let mha = Model::init(spec.matched_mha(2).unwrap(), 0).unwrap();
        assert_eq!(mha.params.scalar_count(), mha.spec.param_count());
    }

    #[test]
    fn matched_mha_is_close() {
        let spec = ModelSpec {
            model_dim: 32,
            ffn_dim: 32,
            seq_len: 32,
            vocab: 2,
            classes: 2,
            ..csp_spec(2)
        };
        let mha = spec.matched_mha(4).unwrap();
        assert!(mha.model_dim < spec.model_dim);
        let (a, b) = (spec.param_count() as f64, mha.param_count() as f64);
        assert!((a - b).abs() / a < 0.01, "{a} vs {b}");
    }

    #[test]
    fn zero_layers_pool_embeddings() {
        let model = Model::init(csp_spec(0), 1).unwrap();
        let mut inp = inputs(&model, 2, 3);
        inp.jitter.clear();
        let logits = model.logits(&inp).unwrap();
        let tok = model.params.value(model.layout.tok);
        let pos = model.params.value(model.layout.pos);
        let hw = model.params.value(model.layout.head_w);
        for (s, seq) in inp.batch.tokens.iter().enumerate() {
            let x = Matrix::from_fn(8, 8, |i, j| tok[(seq[i], j)] + pos[(i, j)]);
            let mean = Matrix::new(1, 8, x.col_sums().iter().map(|v| v / 8.0).collect()).unwrap();
            let expect = mean.matmul(hw).unwrap();
            for k in 0..3 {
                assert!((logits[(s, k)] - expect[(0, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_sequences_give_identical_rows() {
        let model = Model::init(csp_spec(2), 3).unwrap();
        let seq = vec![0, 1, 2, 2, 2, 1, 2, 0];
        let batch = Batch {
            tokens: vec![seq.clone(), seq],
            labels: vec![2, 2],
        };
        let inp = Inputs {
            batch,
            jitter: Vec::new(),
        };
        let logits = model.logits(&inp).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
    }

    #[test]
    fn frozen_permutations_reproduce_live_logits() {
        let model = Model::init(csp_spec(2), 4).unwrap();
        let inp = inputs(&model, 5, 4);
        let live = model.forward(&inp, None).unwrap();
        let frozen = model.forward(&inp, Some(&live.permutations)).unwrap();
        assert_eq!(live.tape.value(live.logits), frozen.tape.value(frozen.logits));
    }

    #[test]
    fn csp_sublayer_output_is_a_column_permutation() {
        let model = Model::init(csp_spec(2), 6).unwrap();
        let inp = inputs(&model, 7, 3);
        let pass = model.forward(&inp, None).unwrap();
        for seq in &pass.sublayers {
            for &(v, out) in seq {
                let (v, out) = (pass.tape.value(v), pass.tape.value(out));
                for c in 0..v.cols() {
                    let mut a = v.column(c);
                    let mut b = out.column(c);
                    a.sort_by(f64::total_cmp);
                    b.sort_by(f64::total_cmp);
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut spec = csp_spec(1);
        spec.seq_len = 7;
        assert!(Model::init(spec, 0).is_err());
        let spec = ModelSpec {
            kind: ModelKind::MhaFormer { heads: 3 },
            ..csp_spec(1)
        };
        assert!(Model::init(spec, 0).is_err());
    }
}
