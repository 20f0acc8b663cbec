//! Frozen-encoder linear probing, F1 metrics and multi-run aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{batch_tensor, Labels, Split, Task, Window};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::rng::{derived_rng, stream};
use crate::tensor::{gemm, MatRef, Tensor};

/// Anything that maps a batch of windows to one representation row per window.
pub trait Encoder {
    fn embed(&self, windows: &[Window]) -> Result<Tensor>;
}

/// Convolutional encoders consume `(batch, channels, length)` directly.
impl Encoder for Network {
    fn embed(&self, windows: &[Window]) -> Result<Tensor> {
        if self.mode() != Mode::Inference {
            return Err(Error::Shape("encoder must be in inference mode".into()));
        }
        self.infer(&batch_tensor(windows)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// `(n_windows, d)`
    pub matrix: Tensor,
    pub labels: Vec<Labels>,
    pub splits: Vec<Split>,
}

/// Rows of one split. Probes are fit on `Train` views only.
#[derive(Clone, Debug)]
pub struct SplitView {
    pub split: Split,
    pub x: Tensor,
    pub labels: Vec<Labels>,
}

impl SplitView {
    pub fn targets(&self, task: Task) -> Vec<usize> {
        self.labels.iter().map(|l| l.get(task)).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.matrix.dim(1)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self, split: Split) -> SplitView {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect();
        SplitView {
            split,
            x: self.matrix.select_rows(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub fn extract_embeddings<E: Encoder + ?Sized>(
    encoder: &E,
    windows: &[Window],
    batch_size: usize,
) -> Result<EmbeddingSet> {
    let mut rows = Vec::new();
    let mut dim = 0;
    for (b, chunk) in windows.chunks(batch_size.max(1)).enumerate() {
        let h = encoder.embed(chunk)?;
        if h.rank() != 2 || h.dim(0) != chunk.len() {
            return Err(Error::Shape(format!(
                "encoder returned {:?} for a batch of {}",
                h.shape(),
                chunk.len()
            )));
        }
        dim = h.dim(1);
        for (i, row) in h.data().chunks(dim.max(1)).enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                let w = b * batch_size.max(1) + i;
                return Err(Error::NonFiniteEmbedding {
                    window: w,
                    participant: windows[w].participant_id.clone(),
                });
            }
        }
        rows.extend_from_slice(h.data());
    }
    Ok(EmbeddingSet {
        matrix: Tensor::new(vec![windows.len(), dim], rows)?,
        labels: windows.iter().map(|w| w.labels).collect(),
        splits: windows.iter().map(|w| w.split).collect(),
    })
}

/// Per-dimension z-score, fit on one matrix and applied to others.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const STD_FLOOR: f64 = 1e-8;

    pub fn fit(x: &Tensor) -> Self {
        let (n, d) = (x.dim(0), x.dim(1));
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n.max(1) as f64).sqrt().max(Self::STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.dim(0) {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Candidate L2 strengths; the one with the best validation F1-macro wins.
    pub l2_candidates: Vec<f64>,
    /// Used when the validation split cannot rank candidates.
    pub default_l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub standardize: bool,
    /// Start from seeded random weights instead of zeros.
    pub random_init: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_candidates: vec![1e-2, 1e-3, 1e-4],
            default_l2: 1e-4,
            tolerance: 1e-5,
            max_iterations: 5000,
            standardize: true,
            random_init: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .l2_candidates
            .iter()
            .chain([&self.default_l2])
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::config(
                "probe.l2_candidates",
                "L2 strengths must be >= 0",
            ));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::config(
                "probe.tolerance",
                "tolerance and max_iterations must be positive",
            ));
        }
        Ok(())
    }
}

/// Multinomial logistic regression `softmax(x W + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `(d, n_classes)`
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub l2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl ProbeModel {
    pub fn zeros(d: usize, n_classes: usize, l2: f64) -> Self {
        Self {
            weights: Tensor::zeros(&[d, n_classes]),
            bias: vec![0.0; n_classes],
            l2,
            iterations: 0,
            gradient_norm: f64::INFINITY,
        }
    }

    pub fn random(d: usize, n_classes: usize, l2: f64, seed: u64) -> Self {
        let mut rng = derived_rng(seed, &[stream::PROBE]);
        let normal = Normal::new(0.0, 0.1).expect("valid sigma");
        let mut m = Self::zeros(d, n_classes, l2);
        m.weights
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = normal.sample(&mut rng));
        m.bias.iter_mut().for_each(|b| *b = normal.sample(&mut rng));
        m
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &Tensor) -> Tensor {
        let (n, d, k) = (x.dim(0), x.dim(1), self.n_classes());
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            1.0,
            MatRef::new(x.data(), n, d),
            MatRef::new(self.weights.data(), d, k),
            1.0,
            &mut out,
        );
        Tensor::new(vec![n, k], out).expect("shape")
    }

    pub fn probabilities(&self, x: &Tensor) -> Tensor {
        let mut p = self.logits(x);
        let k = self.n_classes();
        for row in p.data_mut().chunks_mut(k) {
            softmax_in_place(row);
        }
        p
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let k = self.n_classes();
        self.logits(x)
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Mean cross-entropy plus `l2 / 2 * ||W||^2`, and its gradient as `(dW, db)`.
    pub fn objective(&self, x: &Tensor, y: &[usize]) -> (f64, Tensor, Vec<f64>) {
        let (n, d, k) = (x.dim(0), x.dim(1), self.n_classes());
        let mut p = self.probabilities(x);
        let mut loss = 0.0;
        for (row, &c) in p.data_mut().chunks_mut(k).zip(y) {
            loss -= row[c].max(f64::MIN_POSITIVE).ln();
            row[c] -= 1.0;
            row.iter_mut().for_each(|v| *v /= n as f64);
        }
        loss /= n as f64;
        let mut dw = self
            .weights
            .data()
            .iter()
            .map(|w| self.l2 * w)
            .collect::<Vec<_>>();
        gemm(
            1.0,
            MatRef::new(x.data(), n, d).t(),
            MatRef::new(p.data(), n, k),
            1.0,
            &mut dw,
        );
        let mut db = vec![0.0; k];
        for row in p.data().chunks(k) {
            db.iter_mut().zip(row).for_each(|(b, v)| *b += v);
        }
        loss += 0.5 * self.l2 * self.weights.data().iter().map(|w| w * w).sum::<f64>();
        (loss, Tensor::new(vec![d, k], dw).expect("shape"), db)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Largest eigenvalue of `[x 1]^T [x 1] / n` by power iteration.
fn gram_spectral_norm(x: &Tensor) -> f64 {
    let (n, d) = (x.dim(0), x.dim(1));
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut u = vec![0.0; d + 1];
        for i in 0..n {
            let row = x.row(i);
            let s = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
            for (uj, a) in u.iter_mut().zip(row) {
                *uj += a * s;
            }
            u[d] += s;
        }
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64;
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-9 * norm;
        lambda = norm;
        v = u.iter().map(|a| a / (norm * n as f64)).collect();
        if converged {
            break;
        }
    }
    lambda
}

fn check_targets(x: &Tensor, y: &[usize], n_classes: usize) -> Result<()> {
    if x.rank() != 2 || x.dim(0) != y.len() {
        return Err(Error::Shape(format!(
            "{:?} embeddings for {} labels",
            x.shape(),
            y.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Shape("a probe needs at least two classes".into()));
    }
    if let Some(c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Shape(format!(
            "label {c} out of range for {n_classes} classes"
        )));
    }
    let first = y
        .first()
        .ok_or_else(|| Error::InsufficientData("no training rows for the probe".into()))?;
    if y.iter().all(|c| c == first) {
        return Err(Error::SingleClass { class: *first });
    }
    Ok(())
}

/// Fits from zero weights.
pub fn fit_probe(
    x: &Tensor,
    y: &[usize],
    n_classes: usize,
    l2: f64,
    config: &ProbeConfig,
) -> Result<ProbeModel> {
    fit_probe_from(ProbeModel::zeros(x.dim(1), n_classes, l2), x, y, config)
}

fn fit_probe_seeded(
    x: &Tensor,
    y: &[usize],
    n_classes: usize,
    l2: f64,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeModel> {
    if config.random_init {
        fit_probe_from(
            ProbeModel::random(x.dim(1), n_classes, l2, seed),
            x,
            y,
            config,
        )
    } else {
        fit_probe(x, y, n_classes, l2, config)
    }
}

/// Accelerated full-batch gradient descent with step `1/L` and adaptive
/// restart, stopping at gradient norm `config.tolerance` or `config.max_iterations`.
pub fn fit_probe_from(
    init: ProbeModel,
    x: &Tensor,
    y: &[usize],
    config: &ProbeConfig,
) -> Result<ProbeModel> {
    check_targets(x, y, init.n_classes())?;
    if init.weights.shape() != [x.dim(1), init.n_classes()] {
        return Err(Error::Shape(
            "initial probe does not match embedding width".into(),
        ));
    }
    let step = 1.0 / (0.5 * gram_spectral_norm(x) + init.l2).max(1e-12);
    let mut current = init.clone();
    let mut lookahead = init;
    let mut t = 1.0f64;
    let mut prev_loss = f64::INFINITY;
    for it in 0..config.max_iterations {
        let (_, dw, db) = lookahead.objective(x, y);
        let mut next = lookahead.clone();
        next.weights
            .data_mut()
            .iter_mut()
            .zip(dw.data())
            .for_each(|(w, g)| *w -= step * g);
        next.bias
            .iter_mut()
            .zip(&db)
            .for_each(|(b, g)| *b -= step * g);
        let (loss, gw, gb) = next.objective(x, y);
        let gnorm = (gw.data().iter().chain(&gb).map(|g| g * g).sum::<f64>()).sqrt();
        next.iterations = it + 1;
        next.gradient_norm = gnorm;
        if gnorm <= config.tolerance {
            return Ok(next);
        }
        let restart = loss > prev_loss;
        let t_next = if restart {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
        };
        let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
        lookahead = next.clone();
        lookahead
            .weights
            .data_mut()
            .iter_mut()
            .zip(next.weights.data().iter().zip(current.weights.data()))
            .for_each(|(l, (a, b))| *l = a + beta * (a - b));
        lookahead
            .bias
            .iter_mut()
            .zip(next.bias.iter().zip(&current.bias))
            .for_each(|(l, (a, b))| *l = a + beta * (a - b));
        current = next;
        t = t_next;
        prev_loss = loss;
    }
    Ok(current)
}

/// Per-class F1 from predictions; classes absent from both sides score 0.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

/// `(f1_macro, f1_micro)`
pub fn f1_scores(predictions: &[usize], labels: &[usize], n_classes: usize) -> (f64, f64) {
    assert_eq!(
        predictions.len(),
        labels.len(),
        "predictions and labels must align"
    );
    let per_class = per_class_f1(predictions, labels, n_classes);
    let macro_ = per_class.iter().sum::<f64>() / n_classes as f64;
    let tp = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let n = labels.len();
    // pooled counts: every error is one FP and one FN
    let micro = if n == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2.0 * tp as f64 + 2.0 * (n - tp) as f64)
    };
    (macro_, micro)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// 95% Student-t half-width.
    pub ci95: f64,
    pub n: usize,
}

pub fn aggregate_runs(scores: &[f64]) -> Result<Aggregate> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "a confidence interval needs at least 2 runs, got {n}"
        )));
    }
    if scores.iter().all(|s| *s == scores[0]) {
        return Ok(Aggregate {
            mean: scores[0],
            ci95: 0.0,
            n,
        });
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok(Aggregate {
        mean,
        ci95: t * var.sqrt() / (n as f64).sqrt(),
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub seed: u64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub l2: f64,
}

/// Standardizes with train statistics, picks L2 on validation, scores on test.
pub fn probe_task(
    train: &SplitView,
    val: &SplitView,
    test: &SplitView,
    task: Task,
    config: &ProbeConfig,
    seed: u64,
) -> Result<RunScore> {
    assert_eq!(train.split, Split::Train, "probe fit on a non-train split");
    assert_eq!(
        val.split,
        Split::Val,
        "probe selection on a non-validation split"
    );
    assert_eq!(test.split, Split::Test, "probe scoring on a non-test split");
    config.validate()?;
    let k = task.n_classes();
    let (xtr, xva, xte) = if config.standardize {
        let s = Standardizer::fit(&train.x);
        (s.apply(&train.x), s.apply(&val.x), s.apply(&test.x))
    } else {
        (train.x.clone(), val.x.clone(), test.x.clone())
    };
    let ytr = train.targets(task);
    let yva = val.targets(task);
    let mut best = None;
    if !val.is_empty() && config.l2_candidates.len() > 1 {
        for &l2 in &config.l2_candidates {
            let model = fit_probe_seeded(&xtr, &ytr, k, l2, config, seed)?;
            let (score, _) = f1_scores(&model.predict(&xva), &yva, k);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, model));
            }
        }
    }
    let chosen = match best {
        Some((_, model)) => model,
        None => fit_probe_seeded(&xtr, &ytr, k, config.default_l2, config, seed)?,
    };
    let (f1_macro, f1_micro) = f1_scores(&chosen.predict(&xte), &test.targets(task), k);
    Ok(RunScore {
        seed,
        f1_macro,
        f1_micro,
        l2: chosen.l2,
    })
}

pub fn probe_all(
    set: &EmbeddingSet,
    tasks: &[Task],
    config: &ProbeConfig,
    seed: u64,
) -> Result<Vec<(Task, RunScore)>> {
    let train = set.view(Split::Train);
    let val = set.view(Split::Val);
    let test = set.view(Split::Test);
    tasks
        .iter()
        .map(|&t| probe_task(&train, &val, &test, t, config, seed).map(|s| (t, s)))
        .collect()
}

pub const METHOD_ORDER: [&str; 4] = ["simclr", "byol", "supervised-baseline", "random-encoder"];

pub fn method_title(method: &str) -> &str {
    match method {
        "simclr" => "SimCLR",
        "byol" => "BYOL",
        "supervised-baseline" => "Supervised CNN",
        "random-encoder" => "Random encoder",
        other => other,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: Vec<f64>,
    pub mean: f64,
    /// Absent with fewer than two runs.
    pub ci95: Option<f64>,
}

impl MetricSummary {
    fn from_runs(runs: Vec<f64>) -> Self {
        let mean = runs.iter().sum::<f64>() / runs.len().max(1) as f64;
        let ci95 = aggregate_runs(&runs).ok().map(|a| a.ci95);
        Self { runs, mean, ci95 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub seeds: Vec<u64>,
    pub l2: Vec<f64>,
    pub f1_macro: MetricSummary,
    pub f1_micro: MetricSummary,
}

/// Scores keyed by method, then task name, then metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsReport {
    pub methods: BTreeMap<String, BTreeMap<String, TaskMetrics>>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_run(&mut self, method: &str, task: Task, score: RunScore) {
        let entry = self
            .methods
            .entry(method.to_string())
            .or_default()
            .entry(task.name().to_string())
            .or_default();
        let mut runs: Vec<(u64, f64, f64, f64)> = entry
            .seeds
            .iter()
            .zip(&entry.l2)
            .zip(entry.f1_macro.runs.iter().zip(&entry.f1_micro.runs))
            .map(|((s, l), (a, b))| (*s, *l, *a, *b))
            .collect();
        runs.retain(|r| r.0 != score.seed);
        runs.push((score.seed, score.l2, score.f1_macro, score.f1_micro));
        runs.sort_by_key(|r| r.0);
        *entry = TaskMetrics {
            seeds: runs.iter().map(|r| r.0).collect(),
            l2: runs.iter().map(|r| r.1).collect(),
            f1_macro: MetricSummary::from_runs(runs.iter().map(|r| r.2).collect()),
            f1_micro: MetricSummary::from_runs(runs.iter().map(|r| r.3).collect()),
        };
    }

    /// Folds every run of `other` into `self`; a repeated seed replaces the earlier run.
    pub fn merge(&mut self, other: &MetricsReport) {
        for (method, tasks) in &other.methods {
            for (task, m) in tasks {
                let Ok(task) = task.parse::<Task>() else {
                    continue;
                };
                for i in 0..m.seeds.len() {
                    self.add_run(
                        method,
                        task,
                        RunScore {
                            seed: m.seeds[i],
                            l2: m.l2[i],
                            f1_macro: m.f1_macro.runs[i],
                            f1_micro: m.f1_micro.runs[i],
                        },
                    );
                }
            }
        }
    }

    pub fn get(&self, method: &str, task: Task) -> Option<&TaskMetrics> {
        self.methods.get(method)?.get(task.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            what: "metrics report",
            message: e.to_string(),
        })
    }

    fn ordered_methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = METHOD_ORDER
            .iter()
            .copied()
            .filter(|m| self.methods.contains_key(*m))
            .collect();
        out.extend(
            self.methods
                .keys()
                .map(String::as_str)
                .filter(|m| !METHOD_ORDER.contains(m)),
        );
        out
    }

    /// Method rows by task column groups, each with F1-macro and F1-micro as
    /// `mean ± ci` in percent.
    pub fn table(&self) -> String {
        let cell = |s: &MetricSummary| match s.ci95 {
            Some(ci) => format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * ci),
            None => format!("{:.1}", 100.0 * s.mean),
        };
        let width = 13;
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "Method");
        for task in Task::ALL {
            let _ = write!(out, " | {:^w$}", task.title(), w = 2 * width + 1);
        }
        out.push('\n');
        let _ = write!(out, "{:<16}", "");
        for _ in Task::ALL {
            let _ = write!(out, " | {:^width$} {:^width$}", "F1-macro", "F1-micro");
        }
        out.push('\n');
        for method in self.ordered_methods() {
            let _ = write!(out, "{:<16}", method_title(method));
            for task in Task::ALL {
                match self.get(method, task) {
                    Some(m) => {
                        let _ = write!(
                            out,
                            " | {:^width$} {:^width$}",
                            cell(&m.f1_macro),
                            cell(&m.f1_micro)
                        );
                    }
                    None => {
                        let _ = write!(out, " | {:^width$} {:^width$}", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
