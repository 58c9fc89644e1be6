//! SGD training loop, metric history and finite-difference gradient checks.

use std::fmt::Write as _;

use rand::Rng;

use super::model::{Inputs, Model, ModelSpec};
use super::task::SyntheticTask;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Metrics are recorded at step 0, every `eval_every` steps and at the end.
    pub eval_every: usize,
    /// Size of the fixed batch the metrics are measured on.
    pub eval_size: usize,
    pub cosine: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.1,
            batch_size: 16,
            eval_every: 50,
            eval_size: 128,
            cosine: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub model_kind: String,
    pub task: String,
    pub seed: u64,
    pub records: Vec<Metric>,
}

pub const METRICS_HEADER: &str = "step,loss,accuracy,model_kind,task,seed";

impl History {
    pub fn final_metric(&self) -> Option<Metric> {
        self.records.last().copied()
    }

    /// CSV rows (without header).
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for m in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.step, m.loss, m.accuracy, self.model_kind, self.task, self.seed
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{METRICS_HEADER}\n{}", self.csv_rows())
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.cosine && cfg.steps > 0 {
        let progress = step as f64 / cfg.steps as f64;
        0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        cfg.lr
    }
}

/// Trains a fresh model. Initialization, training batches and the fixed
/// evaluation batch all derive from `cfg.seed` and the task's generator seed.
pub fn train(spec: &ModelSpec, task: &SyntheticTask, cfg: &TrainConfig) -> Result<(Model, History)> {
    task.validate()?;
    if spec.seq_len != task.seq_len || spec.vocab != task.vocab || spec.classes != task.label_count() {
        return Err(Error::InvalidConfig(format!(
            "model (N={}, vocab={}, classes={}) does not fit task (N={}, vocab={}, classes={})",
            spec.seq_len,
            spec.vocab,
            spec.classes,
            task.seq_len,
            task.vocab,
            task.label_count()
        )));
    }
    if cfg.batch_size == 0 || cfg.eval_size == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidConfig(
            "batch sizes and eval interval must be positive".into(),
        ));
    }
    let mut model = Model::init(spec.clone(), cfg.seed)?;
    let mut data_rng = seeded(task.generator_seed ^ cfg.seed.rotate_left(32));
    let mut eval_rng = seeded(task.generator_seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let eval_batch = task.batch(&mut eval_rng, cfg.eval_size);
    let eval = model.prepare(eval_batch, &mut eval_rng);

    let mut history = History {
        model_kind: spec.kind.name().to_string(),
        task: task.kind.name().to_string(),
        seed: cfg.seed,
        records: Vec::new(),
    };
    let record = |model: &Model, step: usize, history: &mut History| -> Result<()> {
        let (loss, accuracy) = model.evaluate(&eval)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        history.records.push(Metric { step, loss, accuracy });
        Ok(())
    };
    record(&model, 0, &mut history)?;
    for step in 0..cfg.steps {
        let batch = task.batch(&mut data_rng, cfg.batch_size);
        let inputs = model.prepare(batch, &mut data_rng);
        let (loss, _, grads) = model.loss_and_grads(&inputs)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        model.params.sgd_step(&grads, learning_rate(cfg, step))?;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            record(&model, done, &mut history)?;
        }
    }
    Ok((model, history))
}

/// Floor on the denominator of the relative error, so gradients that are
/// zero up to round-off do not produce spurious failures.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub probed: usize,
    /// Probes whose `+h` or `-h` evaluation changed a CSP permutation or a
    /// ReLU sign; the loss is not differentiable across such a switch.
    pub skipped: usize,
}

/// Central finite differences on `probes` randomly chosen scalar parameters.
pub fn gradient_check(model: &Model, inputs: &Inputs, probes: usize, h: f64, rng: &mut impl Rng) -> Result<GradCheck> {
    let base = model.forward(inputs, None)?;
    let base_pattern = base.tape.relu_pattern();
    let (_, _, grads) = model.loss_and_grads(inputs)?;
    let sizes: Vec<usize> = model.params.values().iter().map(|m| m.rows() * m.cols()).collect();
    let total: usize = sizes.iter().sum();

    let loss_at = |m: &Model| -> Result<(f64, bool)> {
        let mut pass = m.forward(inputs, None)?;
        let same = pass.permutations == base.permutations && pass.tape.relu_pattern() == base_pattern;
        let loss = pass.tape.cross_entropy(pass.logits, &inputs.batch.labels)?;
        Ok((pass.tape.value(loss)[(0, 0)], same))
    };

    let mut check = GradCheck {
        max_relative_error: 0.0,
        probed: 0,
        skipped: 0,
    };
    let mut probe_model = model.clone();
    while check.probed < probes {
        let mut flat = rng.random_range(0..total);
        let mut id = 0;
        while flat >= sizes[id] {
            flat -= sizes[id];
            id += 1;
        }
        let original = model.params.value(id).data()[flat];
        probe_model.params.value_mut(id).data_mut()[flat] = original + h;
        let (plus, same_plus) = loss_at(&probe_model)?;
        probe_model.params.value_mut(id).data_mut()[flat] = original - h;
        let (minus, same_minus) = loss_at(&probe_model)?;
        probe_model.params.value_mut(id).data_mut()[flat] = original;
        if !(same_plus && same_minus) {
            check.skipped += 1;
            if check.skipped > 10 * probes {
                return Err(Error::InvalidConfig(
                    "too many probes cross a permutation switch".into(),
                ));
            }
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[id].data()[flat];
        let denom = numeric.abs().max(analytic.abs()).max(RELATIVE_FLOOR);
        let rel = (numeric - analytic).abs() / denom;
        check.max_relative_error = check.max_relative_error.max(rel);
        check.probed += 1;
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ShiftSchedule;
    use crate::train::model::{ModelKind, Pooling};
    use crate::train::task::TaskKind;

    fn small(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            layers: 1,
            model_dim: 8,
            ffn_dim: 8,
            seq_len: 8,
            vocab: 2,
            classes: 2,
            pooling: Pooling::Mean,
            skip: true,
        }
    }

    fn task() -> SyntheticTask {
        SyntheticTask::new(TaskKind::MajorityToken, 8, 2, 9).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let spec = small(ModelKind::CspFormer {
            groups: 2,
            schedule: ShiftSchedule::Linear,
        });
        let cfg = TrainConfig {
            steps: 6,
            lr: 0.0,
            eval_every: 2,
            eval_size: 16,
            ..TrainConfig::default()
        };
        let (_, h) = train(&spec, &task(), &cfg).unwrap();
        assert_eq!(h.records.len(), 4);
        let first = h.records[0].loss;
        assert!(h.records.iter().all(|m| (m.loss - first).abs() < 1e-12));
    }

    #[test]
    fn training_is_deterministic() {
        let spec = small(ModelKind::MhaFormer { heads: 2 });
        let cfg = TrainConfig {
            steps: 5,
            eval_every: 1,
            eval_size: 8,
            batch_size: 4,
            cosine: true,
            seed: 3,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&spec, &task(), &cfg).unwrap();
        let (b, hb) = train(&spec, &task(), &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
        assert!(ha.to_csv().starts_with("step,loss,accuracy,model_kind,task,seed\n0,"));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let spec = small(ModelKind::MhaFormer { heads: 1 });
        let cfg = TrainConfig {
            steps: 200,
            lr: 1e12,
            eval_size: 8,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&spec, &task(), &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn mismatched_task_is_rejected() {
        let mut spec = small(ModelKind::MhaFormer { heads: 1 });
        spec.seq_len = 16;
        assert!(train(&spec, &task(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig {
            steps: 10,
            lr: 2.0,
            cosine: true,
            ..TrainConfig::default()
        };
        assert_eq!(learning_rate(&cfg, 0), 2.0);
        assert!((learning_rate(&cfg, 5) - 1.0).abs() < 1e-12);
        assert_eq!(learning_rate(&TrainConfig { cosine: false, ..cfg }, 7), 2.0);
    }

    #[test]
    fn small_gradient_check() {
        for kind in [
            ModelKind::CspFormer {
                groups: 2,
                schedule: ShiftSchedule::Linear,
            },
            ModelKind::MhaFormer { heads: 2 },
        ] {
            let model = Model::init(small(kind), 5).unwrap();
            let mut rng = seeded(6);
            let batch = task().batch(&mut rng, 3);
            let inputs = model.prepare(batch, &mut rng);
            let check = gradient_check(&model, &inputs, 40, 1e-5, &mut rng).unwrap();
            assert!(check.max_relative_error < 1e-5, "{check:?}");
        }
    }
}
