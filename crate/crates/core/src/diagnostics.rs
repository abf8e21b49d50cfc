//! Executable checks: scale-free equivalence between paired runs,
//! update-magnitude histograms, dispersion of update magnitudes, and
//! verifiers for the AdaGrad regret bound and the restart contraction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{linf_distance, ParamVector};
use crate::optim::{schedule_eval, AdamHyper, Optimizer, OptimizerKind, RestartRun, Schedule};
use crate::problems::{GradientStream, Problem, ScaledStream};

/// Number of histogram bins: a lower catch-all, 27 octaves, an upper catch-all.
pub const HIST_BINS: usize = 29;
/// Exponent of the lowest octave edge, `2⁻²⁷`.
pub const HIST_MIN_EXP: i32 = -27;

/// Floor of the relative-deviation denominator.
pub const REL_DEV_FLOOR: f64 = 1e-12;

/// Streaming histogram of `|Δx_i| / α` over octave bins.
///
/// Bin 0 holds everything `≤ 2⁻²⁷` (zeros included), bins `1..=27` hold
/// `[2^e, 2^{e+1})` for `e = −27..=−1` (except the point `2⁻²⁷` itself), and
/// bin 28 holds everything `≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateHistogram {
    counts: Vec<u64>,
    zeros: u64,
}

impl Default for UpdateHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl UpdateHistogram {
    pub fn new() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
            zeros: 0,
        }
    }

    /// `{0, 2⁻²⁷, 2⁻²⁶, …, 2⁻¹, 1, +∞}`.
    pub fn bin_edges() -> [f64; HIST_BINS + 1] {
        let mut edges = [0.0; HIST_BINS + 1];
        for (k, e) in edges.iter_mut().enumerate().skip(1).take(HIST_BINS - 1) {
            *e = 2f64.powi(HIST_MIN_EXP + k as i32 - 1);
        }
        edges[HIST_BINS] = f64::INFINITY;
        edges
    }

    /// Always true: recorded magnitudes are divided by `α`.
    pub fn normalize_by_alpha(&self) -> bool {
        true
    }

    pub fn bin_index(v: f64) -> usize {
        if v <= 2f64.powi(HIST_MIN_EXP) {
            0
        } else if v >= 1.0 {
            HIST_BINS - 1
        } else {
            // v is a normal number here, so the biased exponent is exact
            let e = ((v.to_bits() >> 52) & 0x7ff) as i32 - 1023;
            (e - HIST_MIN_EXP + 1) as usize
        }
    }

    /// Records one already-normalized magnitude.
    pub fn record(&mut self, v: f64) -> Result<()> {
        if !(v >= 0.0) {
            return Err(Error::NonFiniteValue { context: "histogram magnitude" });
        }
        if v == 0.0 {
            self.zeros += 1;
        }
        self.counts[Self::bin_index(v)] += 1;
        Ok(())
    }

    /// Records `|next_i − prev_i| / α` for every coordinate.
    pub fn record_step(&mut self, prev: &ParamVector, next: &ParamVector, alpha: f64) -> Result<()> {
        next.check_dim(prev.dim())?;
        check_alpha(alpha)?;
        for (a, b) in prev.iter().zip(next.iter()) {
            self.record((b - a).abs() / alpha)?;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// How many recorded magnitudes were exactly zero (all in bin 0).
    pub fn zeros(&self) -> u64 {
        self.zeros
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum; associative and commutative.
    pub fn merge(&mut self, other: &UpdateHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.zeros += other.zeros;
    }

    /// `(bin_lo, bin_hi, count)` rows; the lower catch-all starts at `−∞`.
    pub fn rows(&self) -> Vec<(f64, f64, u64)> {
        let edges = Self::bin_edges();
        (0..HIST_BINS)
            .map(|k| {
                let lo = if k == 0 { f64::NEG_INFINITY } else { edges[k] };
                (lo, edges[k + 1], self.counts[k])
            })
            .collect()
    }

    /// Rebuilds a histogram from `rows()`-shaped data, checking the edges.
    pub fn from_rows(rows: &[(f64, f64, u64)]) -> Result<Self> {
        let expected = Self::new().rows();
        if rows.len() != HIST_BINS {
            return Err(Error::InvalidTrace(format!("histogram needs {HIST_BINS} rows, got {}", rows.len())));
        }
        let mut h = Self::new();
        for (k, (row, want)) in rows.iter().zip(&expected).enumerate() {
            if row.0 != want.0 || row.1 != want.1 {
                return Err(Error::InvalidTrace(format!("bin {k} has edges ({}, {})", row.0, row.1)));
            }
            h.counts[k] = row.2;
        }
        Ok(h)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidHyper(format!("alpha must be positive, got {alpha}")))
    }
}

/// Run identity attached to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub optimizer: String,
    pub hyper: AdamHyper,
    pub seed: u64,
    pub problem_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub eta: f64,
    /// Loss at the iterate the step's gradient was taken at.
    pub loss: f64,
    pub dist_inf: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    /// Per-coordinate `|Δx|` (not yet divided by `α`).
    pub update_abs: Option<Vec<f64>>,
}

/// Per-step records of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    meta: TraceMeta,
    dim: usize,
    records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new(meta: TraceMeta, dim: usize) -> Self {
        Self {
            meta,
            dim,
            records: Vec::new(),
        }
    }

    /// Appends a record. Steps must strictly increase, optional fields must
    /// be present in all records or none, and update vectors must have the
    /// trace's dimension.
    pub fn push(&mut self, rec: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t <= last.t {
                return Err(Error::InvalidTrace(format!("step {} follows step {}", rec.t, last.t)));
            }
            let shape = |r: &TraceRecord| (r.dist_inf.is_some(), r.grad_norm_sq.is_some(), r.update_abs.is_some());
            if shape(last) != shape(&rec) {
                return Err(Error::InvalidTrace(format!("step {} changes the recorded fields", rec.t)));
            }
        }
        if let Some(u) = &rec.update_abs {
            if u.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: u.len(),
                });
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn window(&self, window: &Range<u64>) -> Result<Vec<&Vec<f64>>> {
        let recs: Vec<&TraceRecord> = self.records.iter().filter(|r| window.contains(&r.t)).collect();
        if recs.is_empty() {
            return Err(Error::EmptyWindow);
        }
        recs.into_iter()
            .map(|r| r.update_abs.as_ref().ok_or(Error::MissingTraceFields("update_abs")))
            .collect()
    }
}

/// Histogram of `|Δx_i| / α` over all coordinates of the steps in `window`.
pub fn record_update_histogram(trace: &RunTrace, alpha: f64, window: Range<u64>) -> Result<UpdateHistogram> {
    check_alpha(alpha)?;
    let mut h = UpdateHistogram::new();
    for u in trace.window(&window)? {
        for &d in u {
            h.record(d / alpha)?;
        }
    }
    Ok(h)
}

/// The raw `|Δx_i| / α` values of `window`, for exact dispersion statistics.
pub fn update_magnitudes(trace: &RunTrace, alpha: f64, window: Range<u64>) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    Ok(trace.window(&window)?.into_iter().flatten().map(|d| d / alpha).collect())
}

/// Spread of update magnitudes in octaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub median_log2: f64,
    pub iqr_octaves: f64,
    pub p5_log2: f64,
    pub p95_log2: f64,
    pub nonzero: u64,
    /// Zero magnitudes, excluded from the statistics.
    pub zeros: u64,
}

/// Source for [`dispersion`].
#[derive(Debug, Clone, Copy)]
pub enum Magnitudes<'a> {
    /// Exact quantiles.
    Raw(&'a [f64]),
    /// Bin-resolution quantiles: octave bins stand at their geometric
    /// midpoint, the nonzero part of the lower catch-all at `2⁻²⁸` and the
    /// upper catch-all at `2^{1/2}`.
    Histogram(&'a UpdateHistogram),
}

/// Linear-interpolation quantile position `p (n − 1)`.
fn quantile_pos(n: u64, p: f64) -> (u64, f64) {
    let pos = p * (n - 1) as f64;
    let lo = pos.floor();
    (lo as u64, pos - lo)
}

pub fn dispersion(source: Magnitudes<'_>) -> Result<DispersionStats> {
    match source {
        Magnitudes::Raw(values) => dispersion_raw(values),
        Magnitudes::Histogram(h) => dispersion_hist(h),
    }
}

fn dispersion_raw(values: &[f64]) -> Result<DispersionStats> {
    if let Some(bad) = values.iter().find(|v| !(**v >= 0.0) || v.is_infinite()) {
        return Err(Error::InvalidTrace(format!("magnitude {bad} is not a finite nonnegative number")));
    }
    let mut s: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let zeros = (values.len() - s.len()) as u64;
    if s.is_empty() {
        return Err(Error::AllZero);
    }
    s.sort_by(f64::total_cmp);
    let n = s.len() as u64;
    // Quantiles are interpolated in the log domain through ratios of order
    // statistics, so rescaling all magnitudes by 2^k leaves every ratio, and
    // therefore the IQR, bit-identical.
    let upper_step = |lo: u64, frac: f64| {
        let lo = lo as usize;
        if frac == 0.0 {
            0.0
        } else {
            frac * (s[lo + 1] / s[lo]).log2()
        }
    };
    let q = |p: f64| {
        let (lo, frac) = quantile_pos(n, p);
        s[lo as usize].log2() + upper_step(lo, frac)
    };
    let (lo25, f25) = quantile_pos(n, 0.25);
    let (lo75, f75) = quantile_pos(n, 0.75);
    let iqr = (s[lo75 as usize] / s[lo25 as usize]).log2() + upper_step(lo75, f75) - upper_step(lo25, f25);
    Ok(DispersionStats {
        median_log2: q(0.5),
        iqr_octaves: iqr.max(0.0),
        p5_log2: q(0.05),
        p95_log2: q(0.95),
        nonzero: n,
        zeros,
    })
}

fn dispersion_hist(h: &UpdateHistogram) -> Result<DispersionStats> {
    let mut bins: Vec<(f64, u64)> = Vec::with_capacity(HIST_BINS);
    bins.push(((HIST_MIN_EXP - 1) as f64, h.counts[0] - h.zeros));
    for k in 1..HIST_BINS - 1 {
        bins.push(((HIST_MIN_EXP + k as i32 - 1) as f64 + 0.5, h.counts[k]));
    }
    bins.push((0.5, h.counts[HIST_BINS - 1]));
    let n: u64 = bins.iter().map(|b| b.1).sum();
    if n == 0 {
        return Err(Error::AllZero);
    }
    let at = |k: u64| {
        let mut seen = 0;
        for &(v, c) in &bins {
            seen += c;
            if k < seen {
                return v;
            }
        }
        unreachable!("index below total count")
    };
    let q = |p: f64| {
        let (lo, frac) = quantile_pos(n, p);
        let a = at(lo);
        if frac == 0.0 {
            a
        } else {
            a + frac * (at(lo + 1) - a)
        }
    };
    Ok(DispersionStats {
        median_log2: q(0.5),
        iqr_octaves: (q(0.75) - q(0.25)).max(0.0),
        p5_log2: q(0.05),
        p95_log2: q(0.95),
        nonzero: n,
        zeros: h.zeros,
    })
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, 1e-12)` and the worst coordinate.
pub fn max_rel_deviation(a: &ParamVector, b: &ParamVector) -> Result<(f64, usize)> {
    b.check_dim(a.dim())?;
    let mut worst = (0.0, 0);
    for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        let rel = (x - y).abs() / x.abs().max(y.abs()).max(REL_DEV_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(worst)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, 1e-12)`, the whole-vector counterpart of
/// [`max_rel_deviation`]. Coordinates passing through zero make the
/// per-coordinate measure blow up on networks; this one does not.
pub fn norm_rel_deviation(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    b.check_dim(a.dim())?;
    let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(diff / a.l2_norm().max(b.l2_norm()).max(REL_DEV_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_rel_dev: f64,
    /// Largest [`norm_rel_deviation`] over the steps; informational, `pass`
    /// is decided by `max_rel_dev`.
    pub max_norm_rel_dev: f64,
    pub worst_step: u64,
    pub worst_coord: usize,
    pub steps: u64,
    pub tol: f64,
    pub pass: bool,
}

/// Runs the same optimizer from the same `x0` on two gradient streams in
/// lockstep and reports the largest relative iterate deviation.
///
/// The comparison is symmetric: swapping the streams gives the same report.
#[allow(clippy::too_many_arguments)]
pub fn compare_runs<A: GradientStream, B: GradientStream>(
    kind: OptimizerKind,
    hyper: AdamHyper,
    schedule: &Schedule,
    x0: &ParamVector,
    mut a: A,
    mut b: B,
    steps: u64,
    tol: f64,
) -> Result<EquivalenceReport> {
    schedule.validate()?;
    let mut run_a = Optimizer::new(kind, hyper, x0.clone(), None)?;
    let mut run_b = Optimizer::new(kind, hyper, x0.clone(), None)?;
    let mut report = EquivalenceReport {
        max_rel_dev: 0.0,
        max_norm_rel_dev: 0.0,
        worst_step: 0,
        worst_coord: 0,
        steps,
        tol,
        pass: true,
    };
    for t in 1..=steps {
        let step = |opt: &mut Optimizer, s: &mut dyn FnMut(&ParamVector) -> Result<(f64, ParamVector)>| {
            let eta = schedule_eval(schedule, t)?;
            let (_, g) = s(opt.params())?;
            opt.step(&g, eta)
        };
        step(&mut run_a, &mut |x| a.next_grad(x)).map_err(|e| e.at_step(t))?;
        step(&mut run_b, &mut |x| b.next_grad(x)).map_err(|e| e.at_step(t))?;
        let (dev, coord) = max_rel_deviation(run_a.params(), run_b.params())?;
        report.max_norm_rel_dev = report.max_norm_rel_dev.max(norm_rel_deviation(run_a.params(), run_b.params())?);
        if dev > report.max_rel_dev {
            report.max_rel_dev = dev;
            report.worst_step = t;
            report.worst_coord = coord;
        }
    }
    report.pass = report.max_rel_dev <= tol;
    Ok(report)
}

/// Compares a run on `stream` with a run on the same stream whose gradients
/// are multiplied coordinatewise by `lambda_diag`.
#[allow(clippy::too_many_arguments)]
pub fn scalefree_equivalence<S: GradientStream + Clone>(
    kind: OptimizerKind,
    hyper: AdamHyper,
    schedule: &Schedule,
    x0: &ParamVector,
    stream: S,
    lambda_diag: &ParamVector,
    steps: u64,
    tol: f64,
) -> Result<EquivalenceReport> {
    let scaled = ScaledStream::new(stream.clone(), lambda_diag.clone())?;
    compare_runs(kind, hyper, schedule, x0, stream, scaled, steps, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// `max_x (Σ f(x_t) − T f(x)) − √(2 d D∞² Σ ‖∇f(x_t)‖²)`; `≤ 0` means
    /// the bound held against every comparator.
    pub max_violation: f64,
    pub worst_comparator: usize,
    pub regret: f64,
    pub bound: f64,
}

/// Checks the projected-AdaGrad regret bound on a completed trace.
///
/// `d_inf` is the ℓ∞ diameter of the feasible box. The trace must carry the
/// loss and squared gradient norm of every step; the bound is only
/// guaranteed when the run used `η = D∞/√2`, which is not checked here.
pub fn check_regret_bound(
    trace: &RunTrace,
    problem: &dyn Problem,
    comparators: &[ParamVector],
    d_inf: f64,
) -> Result<RegretReport> {
    if comparators.is_empty() {
        return Err(Error::ConfigInvalid("comparator grid is empty".into()));
    }
    let mut loss_sum = 0.0;
    let mut grad_sq_sum = 0.0;
    for r in trace.records() {
        if !r.loss.is_finite() {
            return Err(Error::MissingTraceFields("loss"));
        }
        loss_sum += r.loss;
        grad_sq_sum += r.grad_norm_sq.ok_or(Error::MissingTraceFields("grad_norm_sq"))?;
    }
    let steps = trace.len() as f64;
    let d = problem.dim() as f64;
    let bound = (2.0 * d * d_inf * d_inf * grad_sq_sum).sqrt();
    let mut best: Option<RegretReport> = None;
    for (k, x) in comparators.iter().enumerate() {
        let regret = loss_sum - steps * problem.value(x)?;
        let violation = regret - bound;
        if best.is_none_or(|b| violation > b.max_violation) {
            best = Some(RegretReport {
                max_violation: violation,
                worst_comparator: k,
                regret,
                bound,
            });
        }
    }
    Ok(best.expect("comparators are nonempty"))
}

/// Tensor grid of `per_axis^d` points covering the box `center ± radius`,
/// corners included.
pub fn comparator_grid(center: &ParamVector, radius: f64, per_axis: usize) -> Result<Vec<ParamVector>> {
    if per_axis < 2 || !(radius >= 0.0) {
        return Err(Error::ConfigInvalid("comparator grid needs ≥ 2 points per axis".into()));
    }
    let d = center.dim();
    let total = per_axis.checked_pow(d as u32).filter(|&n| n <= 1 << 24).ok_or_else(|| {
        Error::ConfigInvalid(format!("{per_axis}^{d} comparator points is too many"))
    })?;
    let offset = |k: usize| -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64;
    (0..total)
        .map(|mut idx| {
            let coords = center.iter().map(|c| {
                let k = idx % per_axis;
                idx /= per_axis;
                c + offset(k)
            });
            ParamVector::collect_finite(coords, "comparator_grid")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCheck {
    pub round: u32,
    pub dist_sq: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Per-round test of `‖x̄_i − x*‖∞² ≤ D∞² / 4^i`, starting with the input
/// point as round 0.
pub fn check_restart_contraction(run: &RestartRun, x_star: &ParamVector) -> Result<Vec<RoundCheck>> {
    let points = std::iter::once((0, &run.x0)).chain(run.rounds.iter().map(|r| (r.index, &r.average)));
    points
        .map(|(round, x)| {
            let dist = linf_distance(x, x_star)?;
            let dist_sq = dist * dist;
            let bound = run.d_inf * run.d_inf / 4f64.powi(round as i32);
            Ok(RoundCheck {
                round,
                dist_sq,
                bound,
                pass: dist_sq <= bound,
            })
        })
        .collect()
}
