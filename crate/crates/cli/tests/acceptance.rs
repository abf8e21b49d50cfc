//! Acceptance suite: one line per criterion, `PASS` or `FAIL` with the
//! measured numbers. Exits nonzero when any criterion fails.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use scalefree::diagnostics::{
    check_regret_bound, check_restart_contraction, comparator_grid, compare_runs, dispersion, norm_rel_deviation,
    Magnitudes,
};
use scalefree::harness::{
    self, emit_csv, presets, read_histogram_csv, run_experiment, run_grid, CsvData, GridMetric, ProblemSpec,
};
use scalefree::numerics::{fd_gradient, DEFAULT_FD_STEP};
use scalefree::optim::{adamprox_step, adamw_step, restarted_adagrad, AdamHyper, AdamState, OptimizerKind, Schedule};
use scalefree::problems::{gen_blobs, mlp_init, FullBatch, MlpObjective, MlpSpec, Problem, RescaledOracle};
use scalefree::{ParamVector, Result, RngStream};

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn pv(v: Vec<f64>) -> ParamVector {
    ParamVector::new(v).unwrap()
}

fn fig1() -> Result<Outcome> {
    let start = Instant::now();
    let (unit, hard) = presets::fig1_quadratics();
    let x0 = presets::fig1_x0();
    let steps = presets::FIG1_STEPS;
    let inv = compare_runs(
        OptimizerKind::Adamw,
        presets::fig1_adamw(),
        &Schedule::default(),
        &x0,
        FullBatch(unit.clone()),
        FullBatch(hard.clone()),
        steps,
        1e-9,
    )?;
    let configs = presets::fig1_configs()?;
    let cfg = |label: &str| configs.iter().find(|(l, _)| l == label).unwrap().1.clone();
    let adamw = run_experiment(&cfg("kappa100000/adamw"))?;
    let adamw_dist = adamw.metrics.final_error;
    let gd = harness::run_with_stream(&cfg("kappa100000/gd"), 0)?;
    let (gd_ok, gd_note) = match &gd.failure {
        Some(e) => (true, format!("GD diverged ({e})")),
        None => {
            let d = gd.output.metrics.final_error;
            (d >= 1e3 * adamw_dist, format!("GD dist {d:.3e} vs AdamW {adamw_dist:.3e}"))
        }
    };
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: inv.pass && gd_ok && within(elapsed, Duration::from_secs(1)),
        detail: format!(
            "AdamW κ=1 vs κ=1e5 max rel dev {:.2e} (≤ 1e-9); {gd_note}; {:.2}s",
            inv.max_rel_dev,
            elapsed.as_secs_f64()
        ),
    })
}

fn theorem1() -> Result<Outcome> {
    let start = Instant::now();
    let (q, x0, lam) = presets::theorem1_setup();
    let octaves = (lam.iter().cloned().fold(f64::MIN, f64::max) / lam.iter().cloned().fold(f64::MAX, f64::min)).log2();
    let mut pass = octaves >= 4.0;
    let mut parts = vec![format!("Λ spans {octaves} octaves")];
    for kind in [OptimizerKind::Adamw, OptimizerKind::Adamprox] {
        let r = compare_runs(
            kind,
            presets::theorem1_hyper(),
            &Schedule::default(),
            &x0,
            FullBatch(q.clone()),
            FullBatch(RescaledOracle::new(q.clone(), lam.clone())?),
            presets::THEOREM1_STEPS,
            1e-12,
        )?;
        pass &= r.pass;
        parts.push(format!("{} max rel dev {:.2e}", kind.name(), r.max_rel_dev));
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: pass && within(elapsed, Duration::from_secs(1)),
        detail: format!("{} (≤ 1e-12); {:.2}s", parts.join(", "), elapsed.as_secs_f64()),
    })
}

/// Per-coordinate `|AdamW − AdamProx|` after one step from `state`, and the
/// largest error against `expected(x_i, p_i)` relative to the iterate scale.
fn gap_error(state: &AdamState, h: &AdamHyper, g: &ParamVector, eta: f64, exact_form: bool) -> Result<f64> {
    let w = adamw_step(state, h, g, eta)?;
    let p = adamprox_step(state, h, g, eta)?;
    let t = state.t + 1;
    let (bc1, bc2) = (1.0 - h.beta1.powi(t as i32), 1.0 - h.beta2.powi(t as i32));
    let (lam, mut worst) = (h.lambda, 0.0f64);
    for i in 0..g.dim() {
        let x = state.x[i];
        let m_hat = w.m[i] / bc1;
        let v_hat = w.v[i] / bc2;
        let dir = h.alpha * m_hat / (v_hat.sqrt() + h.epsilon);
        let expected = if exact_form {
            lam * eta * eta * (lam * x + dir).abs() / (1.0 + lam * eta)
        } else {
            lam * lam * eta * eta * x.abs() / (1.0 + lam * eta)
        };
        let gap = (w.x[i] - p.x[i]).abs();
        let scale = x.abs().max((eta * dir).abs()).max(1.0);
        worst = worst.max((gap - expected).abs() / scale);
    }
    Ok(worst)
}

fn taylor_gap() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = RngStream::new(7, 0).rng();
    let (mut worst_p0, mut worst_general) = (0.0f64, 0.0f64);
    for k in 0..10_000 {
        let d = 4;
        let x = pv((0..d).map(|_| rng.random_range(-10.0..10.0)).collect());
        let h = AdamHyper::default()
            .with_alpha(rng.random_range(1e-4..1e-1))
            .with_lambda(rng.random_range(0.0..0.1));
        let eta = rng.random_range(0.0..1.0);
        let t = rng.random_range(0..1000);
        // p = 0 states: zero first moment and zero gradient
        let mut state = AdamState::new(x.clone());
        state.v = pv((0..d).map(|_| rng.random_range(0.0..1.0)).collect());
        state.t = t;
        worst_p0 = worst_p0.max(gap_error(&state, &h, &ParamVector::zeros(d), eta, false)?);
        // general states
        state.m = pv((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let g = pv((0..d).map(|_| rng.random_range(-3.0..3.0)).collect());
        if k % 2 == 0 {
            state.v = pv((0..d).map(|_| rng.random_range(1e-8..4.0)).collect());
        }
        worst_general = worst_general.max(gap_error(&state, &h, &g, eta, true)?);
    }

    // η = 1, every λ > 0 of the standard grid (all ≤ 1e-3), 8-layer preset
    // at Adam's default α
    let mut mlp = Vec::new();
    let mut mlp_pass = true;
    for lambda in presets::grid().lambdas.into_iter().filter(|&l| l > 0.0) {
        let hyper = AdamHyper::default().with_alpha(1e-3).with_lambda(lambda);
        let a = run_experiment(&presets::mlp_config(8, OptimizerKind::Adamw, hyper, 2000))?;
        let b = run_experiment(&presets::mlp_config(8, OptimizerKind::Adamprox, hyper, 2000))?;
        let rel = norm_rel_deviation(&a.final_params, &b.final_params)?;
        mlp_pass &= rel <= 1e-2;
        mlp.push(format!("λ={lambda}: {rel:.2e}"));
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: worst_p0 <= 1e-12 && worst_general <= 1e-12 && mlp_pass && within(elapsed, Duration::from_secs(30)),
        detail: format!(
            "gap λ²η²|x|/(1+λη) on p=0 states err {worst_p0:.1e}, λη²|λx+p|/(1+λη) on general states err {worst_general:.1e} (≤ 1e-12); \
             MLP 2000 steps rel distance {} (≤ 1e-2); {:.1}s",
            mlp.join(", "),
            elapsed.as_secs_f64()
        ),
    })
}

fn restart() -> Result<Outcome> {
    let start = Instant::now();
    let s = presets::restart_setup();
    let run = restarted_adagrad(&s.problem, &s.x0, s.d_inf, s.mu, s.m_smooth, s.rounds)?;
    let checks = check_restart_contraction(&run, &s.problem.argmin())?;
    let elapsed = start.elapsed();
    let rounds: Vec<String> = checks.iter().map(|c| format!("{:.2e}≤{:.2e}", c.dist_sq, c.bound)).collect();
    Ok(Outcome {
        pass: checks.len() == s.rounds as usize + 1 && checks.iter().all(|c| c.pass) && within(elapsed, Duration::from_secs(5)),
        detail: format!("rounds 0..{}: {}; {:.2}s", s.rounds, rounds.join(" "), elapsed.as_secs_f64()),
    })
}

fn regret() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = presets::regret_config();
    let ProblemSpec::Quadratic { h_diag, b, x0, box_radius, .. } = &cfg.problem else {
        unreachable!("regret preset is a quadratic")
    };
    let q = scalefree::problems::Quadratic::new(pv(h_diag.clone()), pv(b.clone()), 0.0)?;
    let radius = box_radius.unwrap();
    let d_inf = 2.0 * radius;
    let eta_ok = (cfg.hyper.alpha - d_inf / 2f64.sqrt()).abs() < 1e-15;
    let out = run_experiment(&cfg)?;
    let grid = comparator_grid(&pv(x0.clone()), radius, presets::REGRET_GRID_PER_AXIS)?;
    let r = check_regret_bound(&out.trace, &q, &grid, d_inf)?;
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: eta_ok
            && cfg.steps == 500
            && grid.len() == 100
            && r.max_violation <= 0.0
            && within(elapsed, Duration::from_secs(5)),
        detail: format!(
            "T={} η=D∞/√2={:.4}, {} comparators, regret {:.4} bound {:.4}, max_violation {:.4}; {:.2}s",
            cfg.steps,
            cfg.hyper.alpha,
            grid.len(),
            r.regret,
            r.bound,
            r.max_violation,
            elapsed.as_secs_f64()
        ),
    })
}

fn with_scale(mut cfg: harness::ExperimentConfig, factor: f64) -> harness::ExperimentConfig {
    if let ProblemSpec::Mlp { loss_scale, .. } = &mut cfg.problem {
        *loss_scale = factor;
    }
    cfg
}

fn loss_multiplication() -> Result<Outcome> {
    let start = Instant::now();
    let grid = presets::grid();
    let base = presets::mlp_config(8, OptimizerKind::Adamw, AdamHyper::default(), presets::MLP_STEPS);
    let mut bests = Vec::new();
    for factor in [1.0, 10.0, 100.0] {
        bests.push(run_grid(&with_scale(base.clone(), factor), &grid, GridMetric::FinalLoss, 1)?.best);
    }
    let grid_time = start.elapsed();
    let same_argmin = bests.iter().all(|&b| b == bests[0]);

    // deviation at the factor-1 argmin; the ε = 0 run is a control
    let cell = harness::grid_cell_config(&base, &grid, bests[0]);
    let mut devs = Vec::new();
    for factor in [10.0, 100.0] {
        devs.push(harness::compare_configs(&cell, &with_scale(cell.clone(), factor), bests[0] as u64, 1e-3)?.max_norm_rel_dev);
    }
    let mut cell0 = cell.clone();
    cell0.hyper.epsilon = 0.0;
    let control = harness::compare_configs(&cell0, &with_scale(cell0.clone(), 100.0), bests[0] as u64, 1e-3)?.max_norm_rel_dev;

    let l2_base = presets::mlp_config(8, OptimizerKind::AdamL2, AdamHyper::default(), presets::MLP_STEPS);
    let l2_table = run_grid(&l2_base, &grid, GridMetric::FinalLoss, 1)?;
    let l2_best = l2_table.best_with_decay().expect("grid has λ > 0 cells");
    let l2_cell = harness::grid_cell_config(&l2_base, &grid, l2_best);
    let l2_dev = harness::compare_configs(&l2_cell, &with_scale(l2_cell.clone(), 100.0), l2_best as u64, 1e-1)?.max_norm_rel_dev;

    let deviation_ok = devs.iter().all(|&d| d <= 1e-3);
    Ok(Outcome {
        pass: same_argmin && deviation_ok && l2_dev > 1e-1 && within(grid_time, Duration::from_secs(600)),
        detail: format!(
            "AdamW argmin cells ×1/×10/×100 = {bests:?}; AdamW iterate deviation ×10 {:.2e}, ×100 {:.2e} (≤ 1e-3; ε=0 control ×100 {control:.2e}); \
             Adam-ℓ2 cell {l2_best} (α={}, λ={}) ×100 {l2_dev:.2e} (> 1e-1); grids {:.0}s",
            devs[0],
            devs[1],
            l2_cell.hyper.alpha,
            l2_cell.hyper.lambda,
            grid_time.as_secs_f64()
        ),
    })
}

fn dispersion_trend(dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let mut gaps = Vec::new();
    let mut csv_ok = true;
    for depth in presets::HIST_DEPTHS {
        let mut iqr = Vec::new();
        for kind in [OptimizerKind::AdamL2, OptimizerKind::Adamw] {
            let out = run_experiment(&presets::hist_config(depth, kind))?;
            let (epoch, raw) = out.raw_updates.last().expect("final epoch histogrammed");
            let (h_epoch, hist) = out.histograms.last().expect("final epoch histogrammed");
            iqr.push(dispersion(Magnitudes::Raw(raw))?.iqr_octaves);

            let path = dir.join(format!("hist_{}_{epoch}.csv", kind.name()));
            emit_csv(CsvData::Histogram(hist), &path)?;
            let text = std::fs::read_to_string(&path)?;
            let lines: Vec<&str> = text.lines().collect();
            let back = read_histogram_csv(&path)?;
            csv_ok &= epoch == h_epoch
                && lines.len() == 30
                && lines[0] == "bin_lo,bin_hi,count"
                && lines[1].starts_with("-inf,7.4505805969238281e-9,")
                && lines[29].starts_with("1.0000000000000000e0,inf,")
                && back.counts() == hist.counts()
                && hist.total() == raw.len() as u64;
        }
        gaps.push(iqr[0] - iqr[1]);
    }
    let positive = gaps.iter().all(|&g| g > 0.0);
    let monotone = gaps.windows(2).all(|w| w[1] >= w[0]);
    let elapsed = start.elapsed();
    let shown: Vec<String> = presets::HIST_DEPTHS.iter().zip(&gaps).map(|(d, g)| format!("depth {d}: {g:+.3}")).collect();
    Ok(Outcome {
        pass: positive && monotone && csv_ok && within(elapsed, Duration::from_secs(600)),
        detail: format!(
            "iqr(Adam-ℓ2) − iqr(AdamW) octaves {} (positive: {positive}, nondecreasing: {monotone}); 29-bin CSVs exact: {csv_ok}; {:.0}s",
            shown.join(", "),
            elapsed.as_secs_f64()
        ),
    })
}

fn gradient_check() -> Result<Outcome> {
    let start = Instant::now();
    let data = Arc::new(gen_blobs(3, 4, 3, 5, 1.0)?);
    let spec = MlpSpec::uniform(5, 2, 6, 3, 11);
    let obj = MlpObjective::new(spec.clone(), data)?;
    let base = mlp_init(&spec)?;
    let mut rng = RngStream::new(5, 0).rng();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = pv(base.iter().map(|w| w + rng.random_range(-0.5..0.5)).collect());
        let g = obj.gradient(&x)?;
        let fd = fd_gradient(&obj, &x, DEFAULT_FD_STEP)?;
        let diff = g.iter().zip(fd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(diff / g.l2_norm().max(fd.l2_norm()));
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: worst <= 1e-5 && within(elapsed, Duration::from_secs(10)),
        detail: format!("{} params, 10 points, worst relative error {worst:.2e} (≤ 1e-5); {:.2}s", spec.param_count(), elapsed.as_secs_f64()),
    })
}

fn cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_scalefree"))
        .args(args)
        .arg("--out")
        .arg(out)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    !names.is_empty()
        && names
            .iter()
            .all(|n| std::fs::read(a.join(n)).ok() == std::fs::read(b.join(n)).ok())
}

fn determinism(dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, args) in [
        ("fig1", &["quadratic", "--preset", "fig1"][..]),
        ("regret", &["regret", "--preset", "regret"]),
        ("mlp8", &["train-mlp", "--preset", "mlp8", "--histograms"]),
    ] {
        let (a, b) = (dir.join(format!("{name}_a")), dir.join(format!("{name}_b")));
        let ok = cli(args, &a) && cli(args, &b) && same_files(&a, &b);
        pass &= ok;
        notes.push(format!("{name} rerun {}", if ok { "identical" } else { "DIFFERS" }));
    }
    let (serial, parallel) = (dir.join("grid_j1"), dir.join("grid_j8"));
    let ok = cli(&["grid", "--preset", "mlp8", "--jobs", "1"], &serial)
        && cli(&["grid", "--preset", "mlp8", "--jobs", "8"], &parallel)
        && std::fs::read(serial.join("grid.csv"))? == std::fs::read(parallel.join("grid.csv"))?
        && same_files(&serial, &parallel);
    pass &= ok;
    notes.push(format!("grid --jobs 1 vs 8 {}", if ok { "identical" } else { "DIFFERS" }));
    Ok(Outcome {
        pass,
        detail: format!("{}; {:.0}s", notes.join(", "), start.elapsed().as_secs_f64()),
    })
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Outcome>>)> = vec![
        ("condition-number invariance", Box::new(fig1)),
        ("rescaled-oracle equivalence", Box::new(theorem1)),
        ("AdamW/AdamProx gap", Box::new(taylor_gap)),
        ("restart contraction", Box::new(restart)),
        ("AdaGrad regret bound", Box::new(regret)),
        ("loss multiplication", Box::new(loss_multiplication)),
        ("dispersion trend", Box::new(|| dispersion_trend(dir.path()))),
        ("gradient correctness", Box::new(gradient_check)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    let mut stdout = std::io::stdout();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let outcome = run().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        failed += usize::from(!outcome.pass);
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        writeln!(stdout, "criterion {} {verdict} {name}: {}", k + 1, outcome.detail).unwrap();
        stdout.flush().unwrap();
    }
    writeln!(stdout, "acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len()).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
