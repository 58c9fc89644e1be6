//! One function per subcommand. Each returns a table plus any invariant
//! failures; the caller decides how to emit them.

use std::path::PathBuf;
use std::time::Duration;

use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use csp_core::csp::{csp_forward, CspConfig};
use csp_core::numerics::{singular_spectrum, Matrix};
use csp_core::ot::{equivalence_check, OtProblem};
use csp_core::rank::{run_stack_with_spectra, Pointwise, StackSpec, BOUND_SLACK};
use csp_core::rng::{gaussian_matrix, seeded, shuffled_indices, tie_free_matrix, tie_free_vector};
use csp_core::schedule::ShiftSchedule;
use csp_core::sinkhorn::{sinkhorn_csp_gap, SinkhornConfig};
use csp_core::train::{
    to_bytes, train, ModelKind, ModelSpec, Pooling, SyntheticTask, TaskKind, TrainConfig, METRICS_HEADER,
};

use crate::bench::{run_bench, slope_of, BenchConfig, Method};
use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::output::{num, write_bytes_atomic, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub invariant: String,
    pub detail: String,
}

impl Failure {
    fn new(invariant: &str, detail: impl Into<String>) -> Self {
        Self {
            invariant: invariant.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub table: Table,
    /// Human-readable lines for stderr.
    pub summary: Vec<String>,
    pub failures: Vec<Failure>,
}

impl Report {
    pub fn failure_record(&self, cfg: &RunConfig) -> Value {
        json!({
            "command": cfg.command.name(),
            "config_sha256": cfg.hash(),
            "seed": cfg.seed(),
            "failures": self
                .failures
                .iter()
                .map(|f| json!({"invariant": f.invariant, "detail": f.detail}))
                .collect::<Vec<_>>(),
        })
    }
}

/// Seed for work item `index` of a run seeded with `seed`. Items keep their
/// seed whether they run sequentially or on the thread pool.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps `f` over `items`, on the rayon pool when `parallel`, keeping order.
fn fan_out<T, R, F>(items: Vec<T>, parallel: bool, f: F) -> Result<Vec<R>, CliError>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R, CliError> + Sync + Send,
{
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

fn schedule(name: &str, layers: usize) -> ShiftSchedule {
    match name {
        "power-law" => ShiftSchedule::power_law(layers),
        _ => ShiftSchedule::Linear,
    }
}

fn pointwise(name: &str) -> Pointwise {
    match name {
        "relu" => Pointwise::Relu,
        _ => Pointwise::Identity,
    }
}

fn positive(cfg: &RunConfig, keys: &[&str]) -> Result<(), CliError> {
    for k in keys {
        if cfg.usize(k) == 0 {
            return Err(CliError::Usage(format!("`{k}` must be positive")));
        }
    }
    Ok(())
}

pub fn run_suite(cfg: &RunConfig) -> Result<Report, CliError> {
    match cfg.command {
        Command::Demo => demo(cfg),
        Command::RankDecay => rank_decay(cfg),
        Command::OtCheck => ot_check(cfg),
        Command::SinkhornConverge => sinkhorn_converge(cfg),
        Command::Bench => bench(cfg),
        Command::Train => train_suite(cfg),
        Command::Spectra => spectra(cfg),
    }
}

fn demo(cfg: &RunConfig) -> Result<Report, CliError> {
    positive(cfg, &["n", "c", "k"])?;
    let (n, c, k) = (cfg.usize("n"), cfg.usize("c"), cfg.usize("k"));
    let x = tie_free_matrix(&mut seeded(cfg.seed()), n, c);
    let csp = CspConfig::new(c, k, schedule(cfg.text("schedule"), 1));
    let (y, trace) = csp_forward(&x, &csp)?;
    let mut table = Table::new(&["channel", "position", "input", "source", "output"]);
    let mut failures = Vec::new();
    for ch in 0..c {
        let v = x.column(ch);
        let dense = trace.totals[ch].to_dense().apply(&v)?;
        if dense != y.column(ch) {
            failures.push(Failure::new("permutation_semantics", format!("channel {ch}")));
        }
        for i in 0..n {
            table.push(vec![
                ch.to_string(),
                i.to_string(),
                num(x[(i, ch)]),
                trace.totals[ch].map()[i].to_string(),
                num(y[(i, ch)]),
            ]);
        }
    }
    Ok(Report {
        table,
        summary: vec![format!("csp forward on {n}x{c} with {k} groups")],
        failures,
    })
}

fn ot_check(cfg: &RunConfig) -> Result<Report, CliError> {
    let (trials, gmin, gmax) = (cfg.usize("trials"), cfg.usize("gmin"), cfg.usize("gmax"));
    if gmin < 1 || gmin > gmax {
        return Err(CliError::Usage(format!("need 1 <= gmin <= gmax, got {gmin}..{gmax}")));
    }
    let seed = cfg.seed();
    let rows = fan_out((0..trials).collect(), cfg.parallel(), |t| {
        let mut rng = seeded(item_seed(seed, t as u64));
        let g = rng.random_range(gmin..=gmax);
        let problem = OtProblem::new(tie_free_vector(&mut rng, g), tie_free_vector(&mut rng, g))?;
        Ok((t, g, equivalence_check(&problem)?))
    })?;
    let mut table = Table::new(&[
        "trial",
        "g",
        "unique",
        "plans_agree",
        "sorting_cost",
        "optimal_cost",
        "holds",
    ]);
    let mut failures = Vec::new();
    let mut agreements = 0;
    for (t, g, e) in rows {
        if e.holds {
            agreements += 1;
        } else {
            failures.push(Failure::new("ot_equivalence", format!("trial {t} (g={g})")));
        }
        table.push(vec![
            t.to_string(),
            g.to_string(),
            e.unique.to_string(),
            e.plans_agree.to_string(),
            num(e.sorting_cost),
            num(e.optimal_cost),
            e.holds.to_string(),
        ]);
    }
    Ok(Report {
        table,
        summary: vec![format!("{agreements}/{trials} agreements")],
        failures,
    })
}

/// Gaussian input shared by the CSP and MHA stacks of one seed.
pub fn stack_input(seed: u64, n: usize, c: usize) -> Matrix {
    gaussian_matrix(&mut seeded(seed), n, c, 1.0)
}

fn rank_decay(cfg: &RunConfig) -> Result<Report, CliError> {
    positive(cfg, &["n", "c", "k", "heads"])?;
    let (depth, n, c, k, heads) = (
        cfg.usize("depth"),
        cfg.usize("n"),
        cfg.usize("c"),
        cfg.usize("k"),
        cfg.usize("heads"),
    );
    let seed = cfg.seed();
    let sigma = cfg.f64("sigma-scale") / (c as f64).sqrt();
    let f = pointwise(cfg.text("pointwise"));
    let x = stack_input(seed, n, c);
    let csp_cfg = CspConfig::new(c, k, schedule(cfg.text("schedule"), depth));
    let specs = vec![
        StackSpec::random_csp(c, depth, sigma, csp_cfg, f, seed),
        StackSpec::random_mha(c, heads, depth, sigma, f, seed)?,
    ];
    let curves = fan_out(specs, cfg.parallel(), |spec| {
        let curve = run_stack_with_spectra(&x, &spec)?;
        Ok((spec.is_csp(), curve))
    })?;

    let mut table = Table::new(&[
        "method",
        "layer",
        "residual_norm1inf",
        "bound",
        "sigma_max",
        "sigma_min",
        "seed",
    ]);
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (is_csp, curve) in &curves {
        let method = if *is_csp { "csp" } else { "mha" };
        let spectra = curve.spectra.as_ref().expect("requested spectra");
        for (layer, &r) in curve.residual_norms.iter().enumerate() {
            let bound = curve.bounds.as_ref().map_or(String::new(), |b| num(b[layer]));
            table.push(vec![
                method.into(),
                layer.to_string(),
                num(r),
                bound,
                num(spectra[layer].max()),
                num(spectra[layer].min()),
                seed.to_string(),
            ]);
        }
        if *is_csp && !curve.within_bounds(BOUND_SLACK) {
            failures.push(Failure::new(
                "residual_bound",
                format!("csp curve {:?} exceeds {:?}", curve.residual_norms, curve.bounds),
            ));
        }
        summary.push(format!("{method}: final residual {:e}", curve.final_residual()));
    }
    Ok(Report {
        table,
        summary,
        failures,
    })
}

/// Sinkhorn fixture: every column is a random arrangement of `n` evenly
/// spaced values, so sorting plans are unique with a margin set by `spacing`.
pub fn spaced_fixture(seed: u64, n: usize, c: usize, spacing: f64) -> Matrix {
    let mut rng = seeded(seed);
    let centre = (n as f64 - 1.0) / 2.0;
    let cols: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            shuffled_indices(&mut rng, n)
                .into_iter()
                .map(|i| (i as f64 - centre) * spacing)
                .collect()
        })
        .collect();
    Matrix::from_columns(&cols).expect("equal column lengths")
}

fn sinkhorn_converge(cfg: &RunConfig) -> Result<Report, CliError> {
    positive(cfg, &["c", "fixtures"])?;
    let taus = cfg.f64_list("taus");
    if taus.iter().any(|&t| t <= 0.0) {
        return Err(CliError::Usage("`taus` must be positive".into()));
    }
    let (c, spacing, scale, threshold) = (
        cfg.usize("c"),
        cfg.f64("spacing"),
        cfg.f64("iteration-scale"),
        cfg.f64("threshold"),
    );
    let seed = cfg.seed();
    let mut items = Vec::new();
    for &k in &cfg.usize_list("groups") {
        for &n in &cfg.usize_list("sizes") {
            if k == 0 || n % k != 0 {
                continue;
            }
            for f in 0..cfg.usize("fixtures") {
                items.push((n, k, f));
            }
        }
    }
    if items.is_empty() {
        return Err(CliError::Usage(
            "no (size, groups) pair with groups dividing size".into(),
        ));
    }
    let results = fan_out(items, cfg.parallel(), |(n, k, f)| {
        let x = spaced_fixture(seed.wrapping_add(100 + f as u64), n, c, spacing);
        let csp = CspConfig::new(c, k, ShiftSchedule::Linear);
        let gaps = taus
            .iter()
            .map(|&tau| {
                let iterations = (scale / tau).ceil() as usize;
                let s = SinkhornConfig {
                    iterations,
                    temperature: tau,
                    groups: k,
                };
                Ok((tau, iterations, sinkhorn_csp_gap(&x, &csp, &s)?))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok((n, k, f, gaps))
    })?;

    let mut table = Table::new(&["n", "k", "fixture", "tau", "iterations", "gap"]);
    let mut failures = Vec::new();
    let mut worst_last = 0.0f64;
    for (n, k, f, gaps) in results {
        for &(tau, it, gap) in &gaps {
            table.push(vec![
                n.to_string(),
                k.to_string(),
                f.to_string(),
                num(tau),
                it.to_string(),
                num(gap),
            ]);
        }
        if gaps.windows(2).any(|w| w[1].2 > w[0].2) {
            failures.push(Failure::new("monotone_gap", format!("n={n} k={k} fixture={f}")));
        }
        let last = gaps.last().map_or(0.0, |g| g.2);
        worst_last = worst_last.max(last);
        if last >= threshold {
            failures.push(Failure::new(
                "final_gap",
                format!("n={n} k={k} fixture={f}: {last:e} >= {threshold:e}"),
            ));
        }
    }
    Ok(Report {
        table,
        summary: vec![format!(
            "worst gap at the last temperature: {worst_last:.3e} (threshold {threshold:e})"
        )],
        failures,
    })
}

fn bench(cfg: &RunConfig) -> Result<Report, CliError> {
    positive(cfg, &["c", "k", "repetitions"])?;
    let methods = cfg
        .text("methods")
        .split(',')
        .map(|m| Method::parse(m).ok_or_else(|| CliError::Usage(format!("unknown method `{m}` in `methods`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let min_ms = cfg.f64("min-sample-ms");
    if min_ms <= 0.0 {
        return Err(CliError::Usage("`min-sample-ms` must be positive".into()));
    }
    let bc = BenchConfig {
        sizes: cfg.usize_list("sizes"),
        channels: cfg.usize("c"),
        groups: cfg.usize("k"),
        warmup: cfg.usize("warmup"),
        repetitions: cfg.usize("repetitions"),
        min_sample: Duration::from_secs_f64(min_ms / 1000.0),
        seed: cfg.seed(),
    };
    let timings = run_bench(&methods, &bc)?;
    let mut table = Table::new(&["method", "n", "median_seconds", "inner_iterations", "fitted_slope"]);
    let mut summary = Vec::new();
    for &m in &methods {
        let slope = slope_of(&timings, m);
        let slope_cell = slope.map_or(String::new(), num);
        for t in timings.iter().filter(|t| t.method == m) {
            table.push(vec![
                m.name().into(),
                t.n.to_string(),
                num(t.seconds),
                t.inner_iterations.to_string(),
                slope_cell.clone(),
            ]);
        }
        if let Some(s) = slope {
            summary.push(format!("{}: log-log slope {s:.3}", m.name()));
        }
    }
    Ok(Report {
        table,
        summary,
        failures: Vec::new(),
    })
}

pub fn train_specs(cfg: &RunConfig) -> Result<(SyntheticTask, Vec<ModelSpec>), CliError> {
    let kind = TaskKind::parse(cfg.text("task")).expect("validated choice");
    let task = SyntheticTask::new(kind, cfg.usize("n"), cfg.usize("vocab"), cfg.seed())?;
    let layers = cfg.usize("layers");
    let csp = ModelSpec {
        kind: ModelKind::CspFormer {
            groups: cfg.usize("k"),
            schedule: schedule(cfg.text("schedule"), layers),
        },
        layers,
        model_dim: cfg.usize("c"),
        ffn_dim: cfg.usize("ffn"),
        seq_len: cfg.usize("n"),
        vocab: cfg.usize("vocab"),
        classes: task.label_count(),
        pooling: if cfg.text("pooling") == "cls" {
            Pooling::Cls
        } else {
            Pooling::Mean
        },
        skip: true,
    };
    csp.validate()?;
    let heads = cfg.usize("heads");
    let mha = if cfg.bool("matched") {
        csp.matched_mha(heads)?
    } else {
        ModelSpec {
            kind: ModelKind::MhaFormer { heads },
            ..csp.clone()
        }
    };
    let specs = match cfg.text("model") {
        "csp" => vec![csp],
        "mha" => vec![mha],
        _ => vec![csp, mha],
    };
    Ok((task, specs))
}

fn train_suite(cfg: &RunConfig) -> Result<Report, CliError> {
    let (task, specs) = train_specs(cfg)?;
    let tc = TrainConfig {
        steps: cfg.usize("steps"),
        lr: cfg.f64("lr"),
        batch_size: cfg.usize("batch"),
        eval_every: cfg.usize("eval-every"),
        eval_size: cfg.usize("eval-size"),
        cosine: cfg.bool("cosine"),
        seed: cfg.seed(),
    };
    let checkpoint = cfg.text("checkpoint").to_string();
    let runs = fan_out(specs, cfg.parallel(), |spec| {
        let (model, history) = train(&spec, &task, &tc)?;
        if !checkpoint.is_empty() {
            let path = PathBuf::from(format!("{checkpoint}.{}.ckpt", spec.kind.name()));
            write_bytes_atomic(&path, &to_bytes(&model.params))?;
        }
        Ok((spec, history))
    })?;
    let columns: Vec<&str> = METRICS_HEADER.split(',').collect();
    let mut table = Table::new(&columns);
    let mut summary = Vec::new();
    for (spec, history) in runs {
        for m in &history.records {
            table.push(vec![
                m.step.to_string(),
                num(m.loss),
                num(m.accuracy),
                history.model_kind.clone(),
                history.task.clone(),
                history.seed.to_string(),
            ]);
        }
        if let Some(last) = history.final_metric() {
            summary.push(format!(
                "{} ({} params, C={}): final accuracy {:.3}, loss {:.4}",
                history.model_kind,
                spec.param_count(),
                spec.model_dim,
                last.accuracy,
                last.loss
            ));
        }
    }
    Ok(Report {
        table,
        summary,
        failures: Vec::new(),
    })
}

fn spectra(cfg: &RunConfig) -> Result<Report, CliError> {
    positive(cfg, &["n", "c", "k", "heads"])?;
    let (depth, n, c, k, heads) = (
        cfg.usize("depth"),
        cfg.usize("n"),
        cfg.usize("c"),
        cfg.usize("k"),
        cfg.usize("heads"),
    );
    let seed = cfg.seed();
    let sigma = cfg.f64("sigma-scale") / (c as f64).sqrt();
    let x = stack_input(seed, n, c);
    let csp_cfg = CspConfig::new(c, k, ShiftSchedule::Linear);
    let csp = match cfg.text("csp-weights") {
        "signed-permutation" => StackSpec::signed_permutation_csp(c, depth, csp_cfg, Pointwise::Identity, seed),
        _ => StackSpec::random_csp(c, depth, sigma, csp_cfg, Pointwise::Identity, seed),
    };
    let mha = StackSpec::random_mha(c, heads, depth, sigma, Pointwise::Identity, seed)?;
    let curves = fan_out(vec![csp, mha], cfg.parallel(), |spec| {
        Ok((spec.is_csp(), run_stack_with_spectra(&x, &spec)?))
    })?;

    let mut table = Table::new(&[
        "method",
        "layer",
        "index",
        "singular_value",
        "normalized",
        "residual_norm1inf",
    ]);
    let mut summary = Vec::new();
    for (is_csp, curve) in &curves {
        let method = if *is_csp { "csp" } else { "mha" };
        let spectra = curve.spectra.as_ref().expect("requested spectra");
        for (layer, s) in spectra.iter().enumerate() {
            let top = s.max();
            for (i, &v) in s.singular_values.iter().enumerate() {
                let normalized = if top > 0.0 { v / top } else { 0.0 };
                table.push(vec![
                    method.into(),
                    layer.to_string(),
                    i.to_string(),
                    num(v),
                    num(normalized),
                    num(curve.residual_norms[layer]),
                ]);
            }
        }
        let tail = |s: &csp_core::numerics::Spectrum| if s.max() > 0.0 { s.min() / s.max() } else { 0.0 };
        let first = tail(&spectra[0]);
        let last = tail(spectra.last().expect("input spectrum"));
        summary.push(format!("{method}: sigma_min/sigma_max {first:e} -> {last:e}"));
    }
    Ok(Report {
        table,
        summary,
        failures: Vec::new(),
    })
}

/// Spectrum of every CSP attention map produced on `x`; used to confirm the
/// maps are permutations.
pub fn csp_map_spectra(x: &Matrix, cfg: &CspConfig) -> Result<Vec<Vec<f64>>, CliError> {
    let (_, trace) = csp_forward(x, cfg)?;
    trace
        .totals
        .iter()
        .map(|p| Ok(singular_spectrum(&p.to_dense())?.singular_values))
        .collect()
}
