//! Experiment orchestration: JSON configs, seeded runs, `(α, λ)` grid
//! search with deterministic parallelism, and CSV/SVG output.
//!
//! Every run is a pure function of its [`ExperimentConfig`] and RNG stream
//! id. Grid cells use their cell index as stream id and share the model
//! initialization, so a grid's output does not depend on how many worker
//! threads computed it.

mod output;
pub mod presets;
mod svg;

pub use output::{
    emit_csv, fmt_float, read_grid_csv, read_histogram_csv, read_trace_csv, CsvData, TraceRow,
};
pub use svg::{emit_svg, render_svg, Series, SvgData};

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{compare_runs, EquivalenceReport, RunTrace, TraceMeta, TraceRecord, UpdateHistogram};
use crate::error::{Error, Result};
use crate::numerics::{linf_distance, ParamVector, RngStream};
use crate::optim::{drive, AdamHyper, Optimizer, OptimizerKind, Schedule};
use crate::problems::{
    accuracy, mlp_init, mlp_loss_grad, BlobsConfig, Dataset, FullBatch, GradientStream, MinibatchStream, MlpSpec,
    Problem, Quadratic,
};

/// Seed used whenever none is given.
pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_true() -> bool {
    true
}
fn default_one() -> f64 {
    1.0
}
fn default_train_fraction() -> f64 {
    0.8
}

/// What to optimize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `½ Σ h_i x_i² + b·x + c`, started at `x0`. AdaGrad projects onto the
    /// box of radius `box_radius` around `x0` when one is given.
    Quadratic {
        h_diag: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
        x0: Vec<f64>,
        #[serde(default)]
        box_radius: Option<f64>,
    },
    /// ReLU network with `hidden_layers` layers of `width` units trained on
    /// the first `train_fraction` of a Gaussian-blob dataset.
    Mlp {
        data: BlobsConfig,
        hidden_layers: usize,
        width: usize,
        init_seed: u64,
        batch_size: usize,
        #[serde(default = "default_one")]
        loss_scale: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
}

impl ProblemSpec {
    pub fn quadratic(q: &Quadratic, x0: &ParamVector) -> Self {
        ProblemSpec::Quadratic {
            h_diag: q.h_diag().as_slice().to_vec(),
            b: q.b().as_slice().to_vec(),
            c: q.c(),
            x0: x0.as_slice().to_vec(),
            box_radius: None,
        }
    }

    /// Short human-readable identity used in trace metadata.
    pub fn id(&self) -> String {
        match self {
            ProblemSpec::Quadratic { h_diag, .. } => {
                let max = h_diag.iter().cloned().fold(f64::MIN, f64::max);
                let min = h_diag.iter().cloned().fold(f64::MAX, f64::min);
                format!("quadratic-d{}-kappa{}", h_diag.len(), max / min)
            }
            ProblemSpec::Mlp {
                hidden_layers, width, loss_scale, ..
            } => format!("mlp-depth{hidden_layers}-width{width}-scale{loss_scale}"),
        }
    }
}

/// Optional outputs of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsToggles {
    /// Keep per-step trace records.
    #[serde(default = "default_true")]
    pub trace: bool,
    /// Accumulate update-magnitude histograms.
    #[serde(default)]
    pub histograms: bool,
    /// 1-based epochs to histogram; empty means the final epoch.
    #[serde(default)]
    pub hist_epochs: Vec<u64>,
    /// Also keep the raw `|Δx|/α` values of histogrammed epochs.
    #[serde(default)]
    pub retain_raw: bool,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self {
            trace: true,
            histograms: false,
            hist_epochs: Vec::new(),
            retain_raw: false,
        }
    }
}

/// A complete, serializable description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerKind,
    pub hyper: AdamHyper,
    #[serde(default)]
    pub schedule: Schedule,
    pub steps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.schedule.validate()?;
        if self.steps == 0 {
            return Err(Error::ConfigInvalid("steps must be positive".into()));
        }
        if let Schedule::Cosine { horizon, .. } = self.schedule {
            if self.steps > horizon + 1 {
                return Err(Error::ConfigInvalid(format!(
                    "{} steps exceed the cosine horizon {horizon}",
                    self.steps
                )));
            }
        }
        match &self.problem {
            ProblemSpec::Quadratic {
                h_diag, b, x0, box_radius, ..
            } => {
                if x0.len() != h_diag.len() || b.len() != h_diag.len() {
                    return Err(Error::ConfigInvalid("quadratic vectors must share one dimension".into()));
                }
                if box_radius.is_some_and(|r| !(r > 0.0)) {
                    return Err(Error::ConfigInvalid("box_radius must be positive".into()));
                }
            }
            ProblemSpec::Mlp {
                hidden_layers,
                width,
                batch_size,
                loss_scale,
                train_fraction,
                ..
            } => {
                if *width == 0 || *batch_size == 0 {
                    return Err(Error::ConfigInvalid("mlp width and batch size must be positive".into()));
                }
                if *hidden_layers == 0 {
                    return Err(Error::ConfigInvalid("mlp needs at least one hidden layer".into()));
                }
                if !(*loss_scale > 0.0 && loss_scale.is_finite()) {
                    return Err(Error::ConfigInvalid("loss_scale must be positive".into()));
                }
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(Error::ConfigInvalid("train_fraction must lie in (0, 1)".into()));
                }
            }
        }
        Ok(())
    }
}

/// Summary numbers of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Quadratics: objective gap `f(x_T) − f*`. MLPs: unscaled full
    /// training loss.
    pub final_loss: f64,
    /// Quadratics: `‖x_T − x*‖∞`. MLPs: held-out error rate.
    pub final_error: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    /// `(epoch, histogram)` for every requested epoch that was reached.
    pub histograms: Vec<(u64, UpdateHistogram)>,
    /// `(epoch, |Δx|/α values)` when raw retention is on.
    pub raw_updates: Vec<(u64, Vec<f64>)>,
    pub final_params: ParamVector,
    pub metrics: RunMetrics,
    pub steps_per_epoch: u64,
}

/// A run that may have stopped early; `output` covers the completed steps.
#[derive(Debug)]
pub struct RunOutcome {
    pub output: RunOutput,
    pub failure: Option<Error>,
}

/// Materialized problem: the training stream plus what is needed to
/// evaluate the final iterate.
pub struct BuiltProblem {
    pub stream: Box<dyn GradientStream + Send>,
    pub x0: ParamVector,
    pub steps_per_epoch: u64,
    pub adagrad_box: Option<(ParamVector, f64)>,
    eval: Evaluator,
}

enum Evaluator {
    Quadratic(Quadratic),
    Mlp {
        spec: MlpSpec,
        train: Arc<Dataset>,
        heldout: Dataset,
        all: Vec<usize>,
    },
}

impl BuiltProblem {
    pub fn metrics(&self, x: &ParamVector) -> Result<RunMetrics> {
        match &self.eval {
            Evaluator::Quadratic(q) => {
                let star = q.argmin();
                Ok(RunMetrics {
                    final_loss: q.value(x)? - q.value(&star)?,
                    final_error: linf_distance(x, &star)?,
                })
            }
            Evaluator::Mlp {
                spec,
                train,
                heldout,
                all,
            } => Ok(RunMetrics {
                final_loss: mlp_loss_grad(spec, x, train, all)?.0,
                final_error: 1.0 - accuracy(spec, x, heldout)?,
            }),
        }
    }

    fn minimizer(&self) -> Option<ParamVector> {
        match &self.eval {
            Evaluator::Quadratic(q) => Some(q.argmin()),
            Evaluator::Mlp { .. } => None,
        }
    }
}

/// Builds the problem of `spec` with the minibatch order drawn from
/// `RngStream(seed, stream_id)`.
pub fn build_problem(spec: &ProblemSpec, seed: u64, stream_id: u64) -> Result<BuiltProblem> {
    match spec {
        ProblemSpec::Quadratic {
            h_diag,
            b,
            c,
            x0,
            box_radius,
        } => {
            let q = Quadratic::new(ParamVector::new(h_diag.clone())?, ParamVector::new(b.clone())?, *c)?;
            let x0 = ParamVector::new(x0.clone())?;
            x0.check_dim(q.dim())?;
            Ok(BuiltProblem {
                stream: Box::new(FullBatch(q.clone())),
                adagrad_box: box_radius.map(|r| (x0.clone(), r)),
                x0,
                steps_per_epoch: 1,
                eval: Evaluator::Quadratic(q),
            })
        }
        ProblemSpec::Mlp {
            data,
            hidden_layers,
            width,
            init_seed,
            batch_size,
            loss_scale,
            train_fraction,
        } => {
            let full = data.generate()?;
            let (train, heldout) = full.split(*train_fraction);
            if train.is_empty() {
                return Err(Error::ConfigInvalid("training split is empty".into()));
            }
            let train = Arc::new(train);
            let mlp = MlpSpec::uniform(data.dim, *hidden_layers, *width, data.n_classes, *init_seed);
            let x0 = mlp_init(&mlp)?;
            let stream = MinibatchStream::new(
                mlp.clone(),
                Arc::clone(&train),
                *batch_size,
                *loss_scale,
                RngStream::new(seed, stream_id),
            )?;
            let steps_per_epoch = stream.steps_per_epoch() as u64;
            let all = (0..train.len()).collect();
            Ok(BuiltProblem {
                stream: Box::new(stream),
                x0,
                steps_per_epoch,
                adagrad_box: None,
                eval: Evaluator::Mlp {
                    spec: mlp,
                    train,
                    heldout,
                    all,
                },
            })
        }
    }
}

/// Runs `a`'s optimizer from `a`'s starting point on the problems of `a`
/// and `b` in lockstep (both on RNG stream `stream_id`) and reports the
/// iterate deviation. Only the problems may differ.
pub fn compare_configs(a: &ExperimentConfig, b: &ExperimentConfig, stream_id: u64, tol: f64) -> Result<EquivalenceReport> {
    a.validate()?;
    b.validate()?;
    if (a.optimizer, a.hyper, &a.schedule, a.steps, a.seed) != (b.optimizer, b.hyper, &b.schedule, b.steps, b.seed) {
        return Err(Error::ConfigInvalid("compared configs differ outside the problem".into()));
    }
    let pa = build_problem(&a.problem, a.seed, stream_id)?;
    let pb = build_problem(&b.problem, b.seed, stream_id)?;
    pb.x0.check_dim(pa.x0.dim())?;
    compare_runs(a.optimizer, a.hyper, &a.schedule, &pa.x0, pa.stream, pb.stream, a.steps, tol)
}

/// Runs `cfg` on RNG stream 0.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let outcome = run_with_stream(cfg, 0)?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(outcome.output),
    }
}

/// Runs `cfg` on the given RNG stream, stopping at the first failing step.
///
/// Invalid configurations are returned as `Err`; failures during the run
/// (typically divergence) are reported in [`RunOutcome::failure`] next to
/// the partial output.
pub fn run_with_stream(cfg: &ExperimentConfig, stream_id: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut built = build_problem(&cfg.problem, cfg.seed, stream_id)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.hyper, built.x0.clone(), built.adagrad_box.clone())?;
    let star = built.minimizer();
    let spe = built.steps_per_epoch;
    let epochs = cfg.steps.div_ceil(spe);
    let hist_epochs: Vec<u64> = if !cfg.diagnostics.histograms {
        Vec::new()
    } else if cfg.diagnostics.hist_epochs.is_empty() {
        vec![epochs]
    } else {
        cfg.diagnostics.hist_epochs.clone()
    };
    let mut histograms: Vec<(u64, UpdateHistogram)> =
        hist_epochs.iter().map(|&e| (e, UpdateHistogram::new())).collect();
    let mut raw: Vec<(u64, Vec<f64>)> = if cfg.diagnostics.retain_raw {
        hist_epochs.iter().map(|&e| (e, Vec::new())).collect()
    } else {
        Vec::new()
    };
    let meta = TraceMeta {
        optimizer: cfg.optimizer.name().to_string(),
        hyper: cfg.hyper,
        seed: cfg.seed,
        problem_id: cfg.problem.id(),
    };
    let mut trace = RunTrace::new(meta, built.x0.dim());
    let alpha = cfg.hyper.alpha;
    let keep_trace = cfg.diagnostics.trace;

    let result = drive(&mut opt, built.stream.as_mut(), &cfg.schedule, cfg.steps, |s| {
        let epoch = (s.t - 1) / spe + 1;
        if let Some(k) = hist_epochs.iter().position(|&e| e == epoch) {
            histograms[k].1.record_step(s.prev, s.next, alpha)?;
            if let Some((_, r)) = raw.get_mut(k) {
                r.extend(s.prev.iter().zip(s.next.iter()).map(|(a, b)| (b - a).abs() / alpha));
            }
        }
        if keep_trace {
            trace.push(TraceRecord {
                t: s.t,
                eta: s.eta,
                loss: s.loss,
                dist_inf: match &star {
                    Some(x) => Some(linf_distance(s.prev, x)?),
                    None => None,
                },
                grad_norm_sq: Some(s.grad.squared_norm()),
                update_abs: None,
            })?;
        }
        Ok(())
    });
    let reached = trace.records().last().map_or(0, |r| r.t);
    let failure = result.err();
    let final_params = opt.params().clone();
    let metrics = if failure.is_some() {
        RunMetrics {
            final_loss: f64::INFINITY,
            final_error: f64::INFINITY,
        }
    } else {
        built.metrics(&final_params)?
    };
    // histograms of epochs that were never completed are dropped
    let done_epochs = if failure.is_some() { reached / spe } else { epochs };
    histograms.retain(|(e, _)| *e <= done_epochs);
    raw.retain(|(e, _)| *e <= done_epochs);
    Ok(RunOutcome {
        output: RunOutput {
            trace,
            histograms,
            raw_updates: raw,
            final_params,
            metrics,
            steps_per_epoch: spe,
        },
        failure,
    })
}

/// The `(α, λ)` axes of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub boundary_extension: bool,
}

impl GridSpec {
    /// `α ∈ {5e-5, 1e-4, 5e-4, 1e-3, 5e-3}`, `λ ∈ {0, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3}`.
    pub fn standard() -> Self {
        Self {
            alphas: vec![5e-5, 1e-4, 5e-4, 1e-3, 5e-3],
            lambdas: vec![0.0, 1e-5, 5e-5, 1e-4, 5e-4, 1e-3],
            boundary_extension: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.lambdas.is_empty() {
            return Err(Error::ConfigInvalid("grid axes must be nonempty".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::ConfigInvalid("grid alphas must be positive".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::ConfigInvalid("grid lambdas must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.alphas.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    FinalLoss,
    FinalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub lambda: f64,
    /// `+∞` when the run failed.
    pub metric: f64,
    pub error: Option<String>,
}

/// Result of a grid search, cells in α-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cells: Vec<GridCell>,
    /// Index of the smallest metric (first one on ties).
    pub best: usize,
    /// The best cell lies on the edge of the grid.
    pub boundary: bool,
    /// Directions the grid should be extended in (`alpha_below`,
    /// `alpha_above`, `lambda_below`, `lambda_above`); only filled when the
    /// spec asked for boundary extension. `λ = 0` is never extended below.
    pub extension_required: Vec<String>,
}

impl GridTable {
    /// Assembles a table, computing the argmin and the boundary report.
    pub fn new(alphas: Vec<f64>, lambdas: Vec<f64>, cells: Vec<GridCell>, boundary_extension: bool) -> Result<Self> {
        let expected = alphas.len() * lambdas.len();
        if cells.len() != expected || expected == 0 {
            return Err(Error::NonRectangularGrid {
                expected,
                found: cells.len(),
            });
        }
        let best = cells
            .iter()
            .enumerate()
            .fold(0, |b, (k, c)| if c.metric < cells[b].metric { k } else { b });
        let nl = lambdas.len();
        let (i, j) = (best / nl, best % nl);
        let mut ext = Vec::new();
        if i == 0 {
            ext.push("alpha_below");
        }
        if i + 1 == alphas.len() {
            ext.push("alpha_above");
        }
        if j == 0 && lambdas[0] > 0.0 {
            ext.push("lambda_below");
        }
        if j + 1 == nl {
            ext.push("lambda_above");
        }
        let boundary = i == 0 || i + 1 == alphas.len() || j == 0 || j + 1 == nl;
        Ok(Self {
            alphas,
            lambdas,
            cells,
            best,
            boundary,
            extension_required: if boundary_extension {
                ext.into_iter().map(String::from).collect()
            } else {
                Vec::new()
            },
        })
    }

    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }

    /// Index of the best cell with `λ > 0` (first one on ties).
    pub fn best_with_decay(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, c) in self.cells.iter().enumerate() {
            if c.lambda > 0.0 && best.is_none_or(|b| c.metric < self.cells[b].metric) {
                best = Some(k);
            }
        }
        best
    }

    /// `(α index, λ index)` of cell `k`.
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.lambdas.len(), k % self.lambdas.len())
    }

    pub fn on_edge(&self, k: usize) -> bool {
        let (i, j) = self.coords(k);
        i == 0 || j == 0 || i + 1 == self.alphas.len() || j + 1 == self.lambdas.len()
    }
}

/// The configuration of grid cell `index` (α-major).
pub fn grid_cell_config(base: &ExperimentConfig, grid: &GridSpec, index: usize) -> ExperimentConfig {
    let nl = grid.lambdas.len();
    let mut cfg = base.clone();
    cfg.hyper.alpha = grid.alphas[index / nl];
    cfg.hyper.lambda = grid.lambdas[index % nl];
    cfg.diagnostics = DiagnosticsToggles {
        trace: false,
        ..DiagnosticsToggles::default()
    };
    cfg
}

/// Runs one grid cell on its own RNG stream. Failures become `+∞`.
pub fn run_grid_cell(base: &ExperimentConfig, grid: &GridSpec, metric: GridMetric, index: usize) -> GridCell {
    let cfg = grid_cell_config(base, grid, index);
    let outcome = run_with_stream(&cfg, index as u64);
    let (value, error) = match outcome {
        Ok(RunOutcome { failure: None, output }) => {
            let m = match metric {
                GridMetric::FinalLoss => output.metrics.final_loss,
                GridMetric::FinalError => output.metrics.final_error,
            };
            (if m.is_nan() { f64::INFINITY } else { m }, None)
        }
        Ok(RunOutcome { failure: Some(e), .. }) | Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    GridCell {
        alpha: cfg.hyper.alpha,
        lambda: cfg.hyper.lambda,
        metric: value,
        error,
    }
}

/// One run per `(α, λ)` cell on a pool of `jobs` threads. Results are
/// keyed by cell index, so any `jobs` gives the same table.
pub fn run_grid(base: &ExperimentConfig, grid: &GridSpec, metric: GridMetric, jobs: usize) -> Result<GridTable> {
    grid.validate()?;
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    let cells: Vec<GridCell> = pool.install(|| {
        (0..grid.len())
            .into_par_iter()
            .map(|k| run_grid_cell(base, grid, metric, k))
            .collect()
    });
    GridTable::new(grid.alphas.clone(), grid.lambdas.clone(), cells, grid.boundary_extension)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_cfg(kind: OptimizerKind, lambda: f64) -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::Quadratic {
                h_diag: vec![1.0, 10.0],
                b: vec![-1.0, 5.0],
                c: 0.0,
                x0: vec![2.0, 2.0],
                box_radius: None,
            },
            optimizer: kind,
            hyper: AdamHyper::default().with_alpha(0.05).with_lambda(lambda),
            schedule: Schedule::default(),
            steps: 40,
            seed: 3,
            diagnostics: DiagnosticsToggles::default(),
            out_dir: None,
        }
    }

    fn tiny_mlp_cfg() -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::Mlp {
                data: BlobsConfig {
                    seed: 1,
                    n_per_class: 20,
                    n_classes: 3,
                    dim: 4,
                    spread: 1.0,
                },
                hidden_layers: 2,
                width: 6,
                init_seed: 5,
                batch_size: 8,
                loss_scale: 1.0,
                train_fraction: 0.8,
            },
            optimizer: OptimizerKind::Adamw,
            hyper: AdamHyper::default().with_alpha(1e-2),
            schedule: Schedule::default(),
            steps: 30,
            seed: 9,
            diagnostics: DiagnosticsToggles {
                histograms: true,
                retain_raw: true,
                ..DiagnosticsToggles::default()
            },
            out_dir: None,
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        for cfg in [quad_cfg(OptimizerKind::Adamproxl2, 0.1), tiny_mlp_cfg()] {
            let text = cfg.to_json().unwrap();
            assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        }
        let mut v: serde_json::Value = serde_json::from_str(&quad_cfg(OptimizerKind::Gd, 0.0).to_json().unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::ConfigInvalid(_))));
        let mut v: serde_json::Value = serde_json::from_str(&tiny_mlp_cfg().to_json().unwrap()).unwrap();
        v["problem"]["depth"] = serde_json::json!(3);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let text = r#"{"problem":{"kind":"quadratic","h_diag":[1],"b":[0],"x0":[1]},"optimizer":"gd","hyper":{"alpha":0.1},"steps":2}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.hyper.beta2, 0.999);
    }

    #[test]
    fn config_validation() {
        let mut cfg = quad_cfg(OptimizerKind::Adamw, 0.0);
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = quad_cfg(OptimizerKind::Adamw, 0.0);
        cfg.schedule = Schedule::Cosine { eta0: 1.0, horizon: 10 };
        assert!(cfg.validate().is_err());
        cfg.steps = 11;
        cfg.validate().unwrap();
        let mut cfg = quad_cfg(OptimizerKind::Adamw, 0.0);
        if let ProblemSpec::Quadratic { x0, .. } = &mut cfg.problem {
            x0.push(1.0);
        }
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        for cfg in [quad_cfg(OptimizerKind::Adamw, 0.01), tiny_mlp_cfg()] {
            let a = run_experiment(&cfg).unwrap();
            let b = run_experiment(&cfg).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.final_params, b.final_params);
            assert_eq!(a.histograms, b.histograms);
        }
    }

    #[test]
    fn zero_lambda_makes_adamw_and_adam_l2_coincide() {
        let a = run_experiment(&quad_cfg(OptimizerKind::Adamw, 0.0)).unwrap();
        let b = run_experiment(&quad_cfg(OptimizerKind::AdamL2, 0.0)).unwrap();
        assert_eq!(a.trace.records(), b.trace.records());
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn trace_contents() {
        let out = run_experiment(&quad_cfg(OptimizerKind::Gd, 0.0)).unwrap();
        let recs = out.trace.records();
        assert_eq!(recs.len(), 40);
        // first record describes x0 = (2, 2): f = ½(4) − 2 + ½·10·4 + 10
        assert_eq!(recs[0].loss, 30.0);
        assert_eq!(recs[0].dist_inf, Some(2.5));
        assert_eq!(recs[0].grad_norm_sq, Some(1.0 + 625.0));
        assert!(out.metrics.final_loss >= 0.0);
        assert_eq!(out.trace.meta().seed, 3);
    }

    #[test]
    fn histograms_cover_the_final_epoch() {
        let cfg = tiny_mlp_cfg();
        let out = run_experiment(&cfg).unwrap();
        // 48 training rows in batches of 8
        assert_eq!(out.steps_per_epoch, 6);
        assert_eq!(out.histograms.len(), 1);
        let (epoch, h) = &out.histograms[0];
        assert_eq!(*epoch, 5);
        let dim = out.final_params.dim() as u64;
        assert_eq!(h.total(), 6 * dim);
        assert_eq!(out.raw_updates[0].1.len() as u64, 6 * dim);
        assert!(out.metrics.final_error >= 0.0 && out.metrics.final_error <= 1.0);
    }

    #[test]
    fn divergence_is_reported_with_partial_output() {
        let mut cfg = quad_cfg(OptimizerKind::Gd, 0.0);
        cfg.hyper.alpha = 1e30;
        let outcome = run_with_stream(&cfg, 0).unwrap();
        assert!(matches!(outcome.failure, Some(Error::AtStep { .. })));
        assert!(outcome.output.trace.len() < 40);
        assert!(outcome.output.metrics.final_loss.is_infinite());
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn grid_basics() {
        let base = quad_cfg(OptimizerKind::Adamw, 0.0);
        let one = GridSpec {
            alphas: vec![0.1],
            lambdas: vec![0.0],
            boundary_extension: true,
        };
        let t = run_grid(&base, &one, GridMetric::FinalLoss, 1).unwrap();
        assert_eq!(t.best, 0);
        assert!(t.boundary);

        let g = GridSpec {
            alphas: vec![1e-3, 0.05, 1e30],
            lambdas: vec![0.0, 1e-3],
            boundary_extension: true,
        };
        let mut base_gd = quad_cfg(OptimizerKind::Gd, 0.0);
        base_gd.steps = 60;
        let t = run_grid(&base_gd, &g, GridMetric::FinalLoss, 4).unwrap();
        assert_eq!(t.cells.len(), 6);
        // α = 1e30 diverges and is recorded, not fatal
        assert!(t.cells[4].metric.is_infinite() && t.cells[4].error.is_some());
        assert_eq!(t.coords(t.best).0, 1);
        assert!(t.boundary);
        assert!(t.extension_required.iter().all(|d| d.starts_with("lambda")));
        assert!(!t.extension_required.contains(&"lambda_below".to_string()));
        let d = t.best_with_decay().unwrap();
        assert!(t.cells[d].lambda > 0.0);
        assert!(t.cells.iter().filter(|c| c.lambda > 0.0).all(|c| c.metric >= t.cells[d].metric));
        assert_eq!(run_grid(&base, &one, GridMetric::FinalLoss, 1).unwrap().best_with_decay(), None);

        let bad = GridSpec {
            alphas: vec![],
            lambdas: vec![0.0],
            boundary_extension: false,
        };
        assert!(run_grid(&base, &bad, GridMetric::FinalLoss, 1).is_err());
    }

    #[test]
    fn grid_is_independent_of_thread_count_and_cells_rerun_alone() {
        let base = tiny_mlp_cfg();
        let g = GridSpec {
            alphas: vec![1e-3, 1e-2],
            lambdas: vec![0.0, 1e-3, 1e-2],
            boundary_extension: false,
        };
        let serial = run_grid(&base, &g, GridMetric::FinalLoss, 1).unwrap();
        let parallel = run_grid(&base, &g, GridMetric::FinalLoss, 8).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(run_grid_cell(&base, &g, GridMetric::FinalLoss, 4), serial.cells[4]);
        assert!(serial.extension_required.is_empty());
    }

    #[test]
    fn table_rejects_ragged_input() {
        let cell = GridCell {
            alpha: 1.0,
            lambda: 0.0,
            metric: 1.0,
            error: None,
        };
        assert!(matches!(
            GridTable::new(vec![1.0, 2.0], vec![0.0], vec![cell], false),
            Err(Error::NonRectangularGrid { expected: 2, found: 1 })
        ));
    }
}
