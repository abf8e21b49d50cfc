use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use scalefree::diagnostics::{
    check_regret_bound, check_restart_contraction, comparator_grid, compare_runs, dispersion, scalefree_equivalence,
    Magnitudes,
};
use scalefree::harness::{
    self, emit_csv, emit_svg, presets, read_grid_csv, read_histogram_csv, read_trace_csv, CsvData, ExperimentConfig,
    GridMetric, ProblemSpec, RunOutput, Series, SvgData, DEFAULT_SEED,
};
use scalefree::optim::{restarted_adagrad, AdamHyper, OptimizerKind, Schedule};
use scalefree::problems::{FullBatch, Quadratic, RescaledOracle};
use scalefree::{Error, ParamVector, Result};

/// Experiments on scale-free adaptive optimizers.
///
/// Every verb writes its outputs and a `report.json` into `--out`. Checks
/// that do not hold exit with status 1 after writing their report.
#[derive(Debug, Parser)]
#[command(name = "scalefree", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,

    /// JSON experiment config; replaces the verb's preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// RNG seed [default: the config's seed, else 42].
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for grid search; outputs do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,

    /// Named configuration; each verb accepts the presets listed in its help.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Fig1,
    Theorem1,
    Restart,
    Regret,
    Scalefree,
    Mlp8,
    Depth4,
    Depth8,
    Depth16,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    FinalLoss,
    FinalError,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// GD and AdamW on two quadratics with equal minimizer and condition
    /// numbers 1 and 1e5 (preset: fig1), or any single config.
    Quadratic {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// AdamW and AdamProx with ε = 0 on a quadratic and on its coordinate-
    /// rescaled gradient oracle (preset: theorem1).
    Theorem1 {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// AdaGrad with restarts and the per-round contraction check (preset:
    /// restart).
    RestartAdagrad {
        #[arg(long)]
        rounds: Option<u32>,
    },
    /// Projected AdaGrad and its regret bound over a comparator grid
    /// (preset: regret).
    Regret {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Runs an optimizer on a quadratic with raw and coordinate-scaled
    /// gradients and compares the iterates (preset: scalefree).
    Scalefree {
        #[arg(long, default_value = "adamw")]
        optimizer: OptimizerKind,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        /// Per-coordinate gradient factors, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        scale: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 200)]
        steps: u64,
    },
    /// Trains the network (presets: mlp8, depth4, depth8, depth16).
    TrainMlp {
        #[command(flatten)]
        net: NetArgs,
        /// Record update histograms of the final epoch.
        #[arg(long)]
        histograms: bool,
    },
    /// `(α, λ)` grid search on the network (presets: mlp8, depth4, depth8,
    /// depth16).
    Grid {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_enum, default_value = "final-loss")]
        metric: Metric,
    },
    /// Final-epoch update histograms and dispersion of Adam-ℓ2 and AdamW
    /// with tuned hyperparameters (presets: depth4, depth8, depth16).
    Hist {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Renders a trace, grid or histogram CSV as SVG.
    Plot {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct NetArgs {
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Hidden layers.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    loss_scale: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
}

fn usage_error(msg: String) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

/// Rejects presets a verb does not understand, before anything is written.
fn check_usage(cli: &Cli) {
    let allowed: &[Preset] = match &cli.verb {
        Verb::Quadratic { .. } => &[Preset::Fig1],
        Verb::Theorem1 { .. } => &[Preset::Theorem1],
        Verb::RestartAdagrad { .. } => &[Preset::Restart],
        Verb::Regret { .. } => &[Preset::Regret],
        Verb::Scalefree { .. } => &[Preset::Scalefree],
        Verb::TrainMlp { .. } | Verb::Grid { .. } => &[Preset::Mlp8, Preset::Depth4, Preset::Depth8, Preset::Depth16],
        Verb::Hist { .. } => &[Preset::Depth4, Preset::Depth8, Preset::Depth16],
        Verb::Plot { .. } => &[],
    };
    if let Some(p) = cli.preset {
        if !allowed.contains(&p) {
            let name = p.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            usage_error(format!("preset `{name}` does not apply to this verb"));
        }
        if cli.config.is_some() {
            usage_error("--preset and --config are mutually exclusive".into());
        }
    }
    if cli.config.is_some() && matches!(cli.verb, Verb::Theorem1 { .. } | Verb::RestartAdagrad { .. } | Verb::Hist { .. } | Verb::Plot { .. }) {
        usage_error("this verb does not take --config".into());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    check_usage(&cli);
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed; see {}", cli.out.join("report.json").display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// Runs the verb; `Ok(false)` means a check did not hold.
fn run(cli: &Cli) -> Result<bool> {
    fs::create_dir_all(&cli.out)?;
    match &cli.verb {
        Verb::Quadratic { steps } => quadratic(cli, *steps),
        Verb::Theorem1 { steps } => theorem1(cli, *steps),
        Verb::RestartAdagrad { rounds } => restart(cli, *rounds),
        Verb::Regret { steps } => regret(cli, *steps),
        Verb::Scalefree {
            optimizer,
            eps,
            scale,
            lambda,
            steps,
        } => scalefree(cli, *optimizer, *eps, scale.as_deref(), *lambda, *steps),
        Verb::TrainMlp { net, histograms } => train_mlp(cli, net, *histograms),
        Verb::Grid { net, metric } => grid(cli, net, *metric),
        Verb::Hist { depth, steps } => hist(cli, *depth, *steps),
        Verb::Plot { input } => plot(cli, input),
    }
}

fn write_report(cli: &Cli, report: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(cli.out.join("report.json"), text + "\n")?;
    Ok(())
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(DEFAULT_SEED)
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(Some(cfg))
}

fn quadratic_of(spec: &ProblemSpec) -> Result<(Quadratic, ParamVector, Option<f64>)> {
    match spec {
        ProblemSpec::Quadratic {
            h_diag,
            b,
            c,
            x0,
            box_radius,
        } => Ok((
            Quadratic::new(ParamVector::new(h_diag.clone())?, ParamVector::new(b.clone())?, *c)?,
            ParamVector::new(x0.clone())?,
            *box_radius,
        )),
        ProblemSpec::Mlp { .. } => Err(Error::ConfigInvalid("this verb needs a quadratic problem".into())),
    }
}

fn dist_series(label: &str, out: &RunOutput) -> Series {
    Series {
        label: label.to_string(),
        points: out
            .trace
            .records()
            .iter()
            .filter_map(|r| r.dist_inf.map(|d| (r.t as f64, d)))
            .collect(),
    }
}

fn loss_series(label: &str, out: &RunOutput) -> Series {
    Series {
        label: label.to_string(),
        points: out.trace.records().iter().map(|r| (r.t as f64, r.loss)).collect(),
    }
}

fn quadratic(cli: &Cli, steps: Option<u64>) -> Result<bool> {
    if let Some(mut cfg) = load_config(cli)? {
        if let Some(s) = steps {
            cfg.steps = s;
        }
        let outcome = harness::run_with_stream(&cfg, 0)?;
        let out = &outcome.output;
        emit_csv(CsvData::Traces(&[&out.trace]), &cli.out.join("trace.csv"))?;
        let series = [dist_series(cfg.optimizer.name(), out)];
        emit_svg(SvgData::Curves { series: &series, title: "‖x_t − x*‖∞" }, &cli.out.join("trace.svg"))?;
        write_report(
            cli,
            &json!({
                "verb": "quadratic",
                "seed": cfg.seed,
                "metrics": out.metrics,
                "failure": outcome.failure.as_ref().map(ToString::to_string),
            }),
        )?;
        return Ok(outcome.failure.is_none());
    }

    let mut configs = presets::fig1_configs()?;
    for (_, cfg) in &mut configs {
        cfg.seed = seed(cli);
        if let Some(s) = steps {
            cfg.steps = s;
        }
    }
    let mut runs = Vec::new();
    for (label, cfg) in &configs {
        let outcome = harness::run_with_stream(cfg, 0)?;
        runs.push((label.clone(), cfg.hyper.alpha, outcome));
    }
    let mut series = Vec::new();
    let mut summary = serde_json::Map::new();
    for tag in ["kappa1", "kappa100000"] {
        let group: Vec<_> = runs.iter().filter(|(l, ..)| l.starts_with(&format!("{tag}/"))).collect();
        let traces: Vec<_> = group.iter().map(|(_, _, o)| &o.output.trace).collect();
        emit_csv(CsvData::Traces(&traces), &cli.out.join(format!("trace_{tag}.csv")))?;
        for (label, alpha, o) in group {
            series.push(dist_series(label, &o.output));
            summary.insert(
                label.clone(),
                json!({
                    "step_size": alpha,
                    "final_dist_inf": o.output.metrics.final_error,
                    "diverged_at": o.failure.as_ref().map(|e| match e {
                        Error::AtStep { step, .. } => json!(step),
                        other => json!(other.to_string()),
                    }),
                }),
            );
        }
    }
    emit_svg(SvgData::Curves { series: &series, title: "‖x_t − x*‖∞" }, &cli.out.join("trace.svg"))?;

    let (unit, hard) = presets::fig1_quadratics();
    let steps = configs[0].1.steps;
    let invariance = compare_runs(
        OptimizerKind::Adamw,
        presets::fig1_adamw(),
        &Schedule::default(),
        &presets::fig1_x0(),
        FullBatch(unit),
        FullBatch(hard),
        steps,
        1e-9,
    )?;
    write_report(
        cli,
        &json!({"verb": "quadratic", "preset": "fig1", "seed": seed(cli), "runs": summary, "adamw_invariance": invariance}),
    )?;
    Ok(invariance.pass)
}

fn theorem1(cli: &Cli, steps: Option<u64>) -> Result<bool> {
    let (q, x0, lam) = presets::theorem1_setup();
    let hyper = presets::theorem1_hyper();
    let steps = steps.unwrap_or(presets::THEOREM1_STEPS);
    let mut reports = serde_json::Map::new();
    let mut pass = true;
    for kind in [OptimizerKind::Adamw, OptimizerKind::Adamprox] {
        let rescaled = RescaledOracle::new(q.clone(), lam.clone())?;
        let r = compare_runs(kind, hyper, &Schedule::default(), &x0, FullBatch(q.clone()), FullBatch(rescaled), steps, 1e-12)?;
        pass &= r.pass;
        reports.insert(kind.name().to_string(), serde_json::to_value(r)?);
    }
    write_report(
        cli,
        &json!({"verb": "theorem1", "seed": seed(cli), "lambda_diag": lam.as_slice(), "hyper": hyper, "reports": reports}),
    )?;
    Ok(pass)
}

fn restart(cli: &Cli, rounds: Option<u32>) -> Result<bool> {
    let s = presets::restart_setup();
    let run = restarted_adagrad(&s.problem, &s.x0, s.d_inf, s.mu, s.m_smooth, rounds.unwrap_or(s.rounds))?;
    let checks = check_restart_contraction(&run, &s.problem.argmin())?;
    let series = [
        Series {
            label: "‖x̄_i − x*‖∞²".into(),
            points: checks.iter().map(|c| (c.round as f64, c.dist_sq)).collect(),
        },
        Series {
            label: "D∞²/4^i".into(),
            points: checks.iter().map(|c| (c.round as f64, c.bound)).collect(),
        },
    ];
    emit_svg(SvgData::Curves { series: &series, title: "restart rounds" }, &cli.out.join("rounds.svg"))?;
    let round_info: Vec<Value> = run
        .rounds
        .iter()
        .map(|r| json!({"round": r.index, "radius": r.radius, "eta": r.eta, "steps": r.steps, "average": r.average.as_slice()}))
        .collect();
    write_report(
        cli,
        &json!({"verb": "restart-adagrad", "seed": seed(cli), "rounds": round_info, "checks": checks}),
    )?;
    Ok(checks.iter().all(|c| c.pass))
}

fn regret(cli: &Cli, steps: Option<u64>) -> Result<bool> {
    let mut cfg = match load_config(cli)? {
        Some(cfg) => cfg,
        None => {
            let mut cfg = presets::regret_config();
            cfg.seed = seed(cli);
            cfg
        }
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    let (q, x0, radius) = quadratic_of(&cfg.problem)?;
    let radius = radius.ok_or_else(|| Error::ConfigInvalid("regret needs a box_radius".into()))?;
    let out = harness::run_experiment(&cfg)?;
    let grid = comparator_grid(&x0, radius, presets::REGRET_GRID_PER_AXIS)?;
    let report = check_regret_bound(&out.trace, &q, &grid, 2.0 * radius)?;
    emit_csv(CsvData::Traces(&[&out.trace]), &cli.out.join("trace.csv"))?;
    let series = [loss_series("adagrad", &out)];
    emit_svg(SvgData::Curves { series: &series, title: "f(x_t)" }, &cli.out.join("trace.svg"))?;
    write_report(
        cli,
        &json!({"verb": "regret", "seed": cfg.seed, "steps": cfg.steps, "comparators": grid.len(), "report": report}),
    )?;
    Ok(report.max_violation <= 0.0)
}

fn scalefree(cli: &Cli, kind: OptimizerKind, eps: f64, scale: Option<&[f64]>, lambda: f64, steps: u64) -> Result<bool> {
    let (mut q, mut x0, mut lam) = presets::scalefree_setup();
    let mut alpha = 0.01;
    if let Some(cfg) = load_config(cli)? {
        (q, x0, _) = quadratic_of(&cfg.problem)?;
        alpha = cfg.hyper.alpha;
    }
    if let Some(s) = scale {
        lam = ParamVector::new(s.to_vec())?;
    }
    let hyper = AdamHyper {
        alpha,
        epsilon: eps,
        lambda,
        ..AdamHyper::default()
    };
    let report = scalefree_equivalence(kind, hyper, &Schedule::default(), &x0, FullBatch(q), &lam, steps, 1e-12)?;
    write_report(
        cli,
        &json!({"verb": "scalefree", "seed": seed(cli), "optimizer": kind.name(), "hyper": hyper, "scale": lam.as_slice(), "report": report}),
    )?;
    Ok(report.pass)
}

fn depth_of(preset: Option<Preset>, default: usize) -> usize {
    match preset {
        Some(Preset::Depth4) => 4,
        Some(Preset::Depth16) => 16,
        Some(Preset::Depth8 | Preset::Mlp8) => 8,
        _ => default,
    }
}

fn net_config(cli: &Cli, net: &NetArgs) -> Result<ExperimentConfig> {
    let mut cfg = match load_config(cli)? {
        Some(cfg) => cfg,
        None => {
            let depth = net.depth.unwrap_or(depth_of(cli.preset, 8));
            let kind = net.optimizer.unwrap_or(OptimizerKind::Adamw);
            let mut cfg = presets::mlp_config(depth, kind, presets::tuned_hyper(depth, kind), presets::MLP_STEPS);
            cfg.seed = seed(cli);
            cfg
        }
    };
    if let Some(k) = net.optimizer {
        cfg.optimizer = k;
    }
    if let Some(a) = net.alpha {
        cfg.hyper.alpha = a;
    }
    if let Some(l) = net.lambda {
        cfg.hyper.lambda = l;
    }
    if let Some(e) = net.eps {
        cfg.hyper.epsilon = e;
    }
    if let Some(s) = net.steps {
        cfg.steps = s;
    }
    if let ProblemSpec::Mlp {
        hidden_layers,
        loss_scale,
        ..
    } = &mut cfg.problem
    {
        if let Some(d) = net.depth {
            *hidden_layers = d;
        }
        if let Some(f) = net.loss_scale {
            *loss_scale = f;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_histograms(cli: &Cli, optimizer: &str, out: &RunOutput) -> Result<()> {
    for (epoch, h) in &out.histograms {
        let stem = format!("hist_{optimizer}_{epoch}");
        emit_csv(CsvData::Histogram(h), &cli.out.join(format!("{stem}.csv")))?;
        let title = format!("{optimizer}, epoch {epoch}");
        emit_svg(SvgData::Histogram { hist: h, title: &title }, &cli.out.join(format!("{stem}.svg")))?;
    }
    Ok(())
}

fn train_mlp(cli: &Cli, net: &NetArgs, histograms: bool) -> Result<bool> {
    let mut cfg = net_config(cli, net)?;
    cfg.diagnostics.histograms |= histograms;
    let outcome = harness::run_with_stream(&cfg, 0)?;
    let out = &outcome.output;
    let name = cfg.optimizer.name();
    emit_csv(CsvData::Traces(&[&out.trace]), &cli.out.join("trace.csv"))?;
    let series = [loss_series(name, out)];
    emit_svg(SvgData::Curves { series: &series, title: "minibatch loss" }, &cli.out.join("trace.svg"))?;
    write_histograms(cli, name, out)?;
    write_report(
        cli,
        &json!({
            "verb": "train-mlp",
            "config": cfg,
            "metrics": out.metrics,
            "steps_per_epoch": out.steps_per_epoch,
            "failure": outcome.failure.as_ref().map(ToString::to_string),
        }),
    )?;
    Ok(outcome.failure.is_none())
}

fn grid(cli: &Cli, net: &NetArgs, metric: Metric) -> Result<bool> {
    let cfg = net_config(cli, net)?;
    let metric = match metric {
        Metric::FinalLoss => GridMetric::FinalLoss,
        Metric::FinalError => GridMetric::FinalError,
    };
    let table = harness::run_grid(&cfg, &presets::grid(), metric, cli.jobs as usize)?;
    emit_csv(CsvData::Grid(&table), &cli.out.join("grid.csv"))?;
    emit_svg(SvgData::Heatmap(&table), &cli.out.join("grid.svg"))?;
    let best = table.best_cell();
    write_report(
        cli,
        &json!({
            "verb": "grid",
            "config": cfg,
            "metric": metric,
            "best": {"index": table.best, "alpha": best.alpha, "lambda": best.lambda, "metric": best.metric},
            "boundary": table.boundary,
            "extension_required": table.extension_required,
            "failed_cells": table.cells.iter().filter(|c| c.error.is_some()).count(),
        }),
    )?;
    Ok(true)
}

fn hist(cli: &Cli, depth: Option<usize>, steps: Option<u64>) -> Result<bool> {
    let depth = depth.unwrap_or(depth_of(cli.preset, 8));
    let mut per_opt = serde_json::Map::new();
    let mut iqr = Vec::new();
    for kind in [OptimizerKind::AdamL2, OptimizerKind::Adamw] {
        let mut cfg = presets::hist_config(depth, kind);
        cfg.seed = seed(cli);
        if let Some(s) = steps {
            cfg.steps = s;
        }
        let out = harness::run_experiment(&cfg)?;
        write_histograms(cli, kind.name(), &out)?;
        let (epoch, raw) = out
            .raw_updates
            .last()
            .ok_or_else(|| Error::ConfigInvalid("no histogram epoch was reached".into()))?;
        let stats = dispersion(Magnitudes::Raw(raw))?;
        iqr.push(stats.iqr_octaves);
        per_opt.insert(
            kind.name().to_string(),
            json!({"hyper": cfg.hyper, "epoch": epoch, "dispersion": stats, "metrics": out.metrics}),
        );
    }
    write_report(
        cli,
        &json!({"verb": "hist", "depth": depth, "seed": seed(cli), "optimizers": per_opt, "iqr_gap": iqr[0] - iqr[1]}),
    )?;
    Ok(true)
}

fn plot(cli: &Cli, input: &Path) -> Result<bool> {
    let header = fs::read_to_string(input)?.lines().next().unwrap_or("").to_string();
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let target = cli.out.join(format!("{stem}.svg"));
    match header.as_str() {
        "alpha,lambda,metric,boundary" => emit_svg(SvgData::Heatmap(&read_grid_csv(input)?), &target)?,
        "bin_lo,bin_hi,count" => {
            let h = read_histogram_csv(input)?;
            emit_svg(SvgData::Histogram { hist: &h, title: stem }, &target)?;
        }
        _ => {
            let rows = read_trace_csv(input)?;
            let mut series: Vec<Series> = Vec::new();
            for r in rows {
                // a new series starts whenever the step counter restarts
                match series.last_mut() {
                    Some(s) if s.label == r.optimizer && s.points.last().is_some_and(|p| p.0 < r.t as f64) => {
                        s.points.push((r.t as f64, r.loss))
                    }
                    _ => series.push(Series {
                        label: r.optimizer.clone(),
                        points: vec![(r.t as f64, r.loss)],
                    }),
                }
            }
            emit_svg(SvgData::Curves { series: &series, title: "loss" }, &target)?;
        }
    }
    Ok(true)
}
