//! Named, ready-to-run configurations. Step counts and network sizes are
//! desk-scale calibration choices; the optimizer defaults are β₁ = 0.9,
//! β₂ = 0.999, ε = 1e-8 unless a preset needs ε = 0.

use crate::error::{Error, Result};
use crate::harness::{DiagnosticsToggles, ExperimentConfig, GridSpec, ProblemSpec, DEFAULT_SEED};
use crate::numerics::ParamVector;
use crate::optim::{drive, AdamHyper, Optimizer, OptimizerKind, Schedule};
use crate::problems::{corollary1_pair, BlobsConfig, FullBatch, Problem, Quadratic};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).expect("preset vectors are finite")
}

/// Steps of the condition-number comparison.
pub const FIG1_STEPS: u64 = 500;

/// `(κ = 1, κ = 1e5)` quadratics sharing the minimizer `(−1, −1)`.
pub fn fig1_quadratics() -> (Quadratic, Quadratic) {
    let hard = Quadratic::new(pv(&[1.0, 1e5]), pv(&[1.0, 1e5]), 0.0).expect("valid quadratic");
    let (hard, unit) = corollary1_pair(&hard);
    (unit, hard)
}

pub fn fig1_x0() -> ParamVector {
    pv(&[1.0, 1.0])
}

/// AdamW with `ε = 0`, `λ = 0` under the constant schedule `η_t = 1`.
pub fn fig1_adamw() -> AdamHyper {
    AdamHyper {
        alpha: 0.05,
        epsilon: 0.0,
        ..AdamHyper::default()
    }
}

/// Step sizes tried when tuning GD on the well-conditioned problem.
pub const GD_STEP_CANDIDATES: [f64; 9] = [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 0.5, 1.0, 1.5];

/// The candidate step with the smallest final objective after `steps`
/// GD iterations (ties go to the smaller step; divergent runs lose).
pub fn tune_gd_step(q: &Quadratic, x0: &ParamVector, steps: u64, candidates: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &step in candidates {
        let mut opt = Optimizer::new(OptimizerKind::Gd, AdamHyper::default().with_alpha(step), x0.clone(), None)?;
        let value = match drive(&mut opt, &mut FullBatch(q), &Schedule::default(), steps, |_| Ok(())) {
            Ok(()) => q.value(opt.params()).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        };
        if best.is_none_or(|(_, v)| value < v) {
            best = Some((step, value));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::ConfigInvalid("no GD step candidates".into()))
}

fn quadratic_config(q: &Quadratic, x0: &ParamVector, optimizer: OptimizerKind, hyper: AdamHyper, steps: u64) -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::quadratic(q, x0),
        optimizer,
        hyper,
        schedule: Schedule::default(),
        steps,
        seed: DEFAULT_SEED,
        diagnostics: DiagnosticsToggles::default(),
        out_dir: None,
    }
}

/// `(label, config)` for GD and AdamW on both condition numbers. GD uses
/// the step tuned on `κ = 1` for both problems.
pub fn fig1_configs() -> Result<Vec<(String, ExperimentConfig)>> {
    let (unit, hard) = fig1_quadratics();
    let x0 = fig1_x0();
    let gd_step = tune_gd_step(&unit, &x0, FIG1_STEPS, &GD_STEP_CANDIDATES)?;
    let gd = AdamHyper::default().with_alpha(gd_step);
    let mut out = Vec::new();
    for (tag, q) in [("kappa1", &unit), ("kappa100000", &hard)] {
        out.push((format!("{tag}/gd"), quadratic_config(q, &x0, OptimizerKind::Gd, gd, FIG1_STEPS)));
        out.push((
            format!("{tag}/adamw"),
            quadratic_config(q, &x0, OptimizerKind::Adamw, fig1_adamw(), FIG1_STEPS),
        ));
    }
    Ok(out)
}

/// Base quadratic, start, and a coordinate scaling spanning four octaves
/// (`4.8 / 0.3 = 2⁴`), none of them powers of two.
pub fn theorem1_setup() -> (Quadratic, ParamVector, ParamVector) {
    // minimizer (0.5, 0.5, 2.5): 200 steps from (5, 5, 7) neither reach it
    // nor cross zero, where rounding in the gradient would be amplified
    let q = Quadratic::new(pv(&[1.0, 30.0, 0.2]), pv(&[-0.5, -15.0, -0.5]), 0.0).expect("valid quadratic");
    (q, pv(&[5.0, 5.0, 7.0]), pv(&[0.3, 1.1, 4.8]))
}

pub const THEOREM1_STEPS: u64 = 200;

pub fn theorem1_hyper() -> AdamHyper {
    AdamHyper {
        alpha: 0.01,
        epsilon: 0.0,
        lambda: 1e-3,
        ..AdamHyper::default()
    }
}

/// Two-dimensional base problem, start and default scaling of the
/// `scalefree` verb.
pub fn scalefree_setup() -> (Quadratic, ParamVector, ParamVector) {
    let q = Quadratic::new(pv(&[1.0, 30.0]), pv(&[-0.5, -15.0]), 0.0).expect("valid quadratic");
    (q, pv(&[5.0, 5.0]), pv(&[10.0, 0.01]))
}

/// Restart setup: `f(x) = ½(x₁² + 2x₂²)`, `μ = 1`, `M = 2`, `D∞ = 1`.
pub struct RestartSetup {
    pub problem: Quadratic,
    pub x0: ParamVector,
    pub d_inf: f64,
    pub mu: f64,
    pub m_smooth: f64,
    pub rounds: u32,
}

pub fn restart_setup() -> RestartSetup {
    RestartSetup {
        problem: Quadratic::new(pv(&[1.0, 2.0]), pv(&[0.0, 0.0]), 0.0).expect("valid quadratic"),
        x0: pv(&[1.0, -1.0]),
        d_inf: 1.0,
        mu: 1.0,
        m_smooth: 2.0,
        rounds: 5,
    }
}

/// Projected AdaGrad on `h = (1, 4)` inside the box `[−1, 1]²` (ℓ∞
/// diameter 2) with `η = 2/√2`. The unconstrained minimizer `(1.5, −0.25)`
/// lies outside the box.
pub fn regret_config() -> ExperimentConfig {
    let q = Quadratic::new(pv(&[1.0, 4.0]), pv(&[-1.5, 1.0]), 0.0).expect("valid quadratic");
    let mut cfg = quadratic_config(
        &q,
        &pv(&[0.0, 0.0]),
        OptimizerKind::Adagrad,
        AdamHyper::default().with_alpha(REGRET_D_INF / 2f64.sqrt()),
        500,
    );
    if let ProblemSpec::Quadratic { box_radius, .. } = &mut cfg.problem {
        *box_radius = Some(REGRET_D_INF / 2.0);
    }
    cfg
}

pub const REGRET_D_INF: f64 = 2.0;
pub const REGRET_GRID_PER_AXIS: usize = 10;

/// Synthetic classification data shared by the network presets.
pub fn mlp_data() -> BlobsConfig {
    BlobsConfig {
        seed: 0,
        n_per_class: MLP_N_PER_CLASS,
        n_classes: 3,
        dim: 16,
        spread: MLP_SPREAD,
    }
}

pub const MLP_N_PER_CLASS: usize = 256;
pub const MLP_SPREAD: f64 = 2.0;
pub const MLP_WIDTH: usize = 32;
pub const MLP_BATCH: usize = 32;
pub const MLP_INIT_SEED: u64 = 1;
/// Steps of the loss-scaling and grid presets.
pub const MLP_STEPS: u64 = 500;

pub fn mlp_problem(hidden_layers: usize, loss_scale: f64) -> ProblemSpec {
    ProblemSpec::Mlp {
        data: mlp_data(),
        hidden_layers,
        width: MLP_WIDTH,
        init_seed: MLP_INIT_SEED,
        batch_size: MLP_BATCH,
        loss_scale,
        train_fraction: 0.8,
    }
}

pub fn mlp_config(hidden_layers: usize, optimizer: OptimizerKind, hyper: AdamHyper, steps: u64) -> ExperimentConfig {
    ExperimentConfig {
        problem: mlp_problem(hidden_layers, 1.0),
        optimizer,
        hyper,
        schedule: Schedule::default(),
        steps,
        seed: DEFAULT_SEED,
        diagnostics: DiagnosticsToggles::default(),
        out_dir: None,
    }
}

/// Depths of the dispersion comparison.
pub const HIST_DEPTHS: [usize; 3] = [4, 8, 16];

/// `(α, λ)` per depth and optimizer: the best `λ > 0` cell of the standard
/// grid on final training loss (seed 42, [`MLP_STEPS`] steps). `λ = 0` is
/// excluded because there Adam-ℓ2 and AdamW coincide. Other optimizers and
/// depths get `α = 1e-3`, `λ = 0`.
pub fn tuned_hyper(hidden_layers: usize, optimizer: OptimizerKind) -> AdamHyper {
    let (alpha, lambda) = match (optimizer, hidden_layers) {
        (OptimizerKind::AdamL2, 4) => (5e-3, 5e-5),
        (OptimizerKind::AdamL2, 8) => (1e-3, 5e-4),
        (OptimizerKind::AdamL2, 16) => (1e-3, 5e-5),
        (OptimizerKind::Adamw, 4) => (5e-3, 1e-5),
        (OptimizerKind::Adamw, 8) => (5e-3, 5e-4),
        (OptimizerKind::Adamw, 16) => (1e-3, 5e-4),
        _ => (1e-3, 0.0),
    };
    AdamHyper::default().with_alpha(alpha).with_lambda(lambda)
}

/// Tuned run with raw update magnitudes of the final epoch retained.
pub fn hist_config(hidden_layers: usize, optimizer: OptimizerKind) -> ExperimentConfig {
    let mut cfg = mlp_config(hidden_layers, optimizer, tuned_hyper(hidden_layers, optimizer), MLP_STEPS);
    cfg.diagnostics.histograms = true;
    cfg.diagnostics.retain_raw = true;
    cfg
}

/// The standard `(α, λ)` grid.
pub fn grid() -> GridSpec {
    GridSpec::standard()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linf_distance;

    #[test]
    fn fig1_pair_shares_the_minimizer() {
        let (unit, hard) = fig1_quadratics();
        assert_eq!(unit.condition_number(), 1.0);
        assert_eq!(hard.condition_number(), 1e5);
        assert_eq!(unit.argmin(), hard.argmin());
        assert_eq!(unit.argmin().as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn gd_tuning_picks_the_exact_step_on_unit_curvature() {
        let (unit, _) = fig1_quadratics();
        assert_eq!(tune_gd_step(&unit, &fig1_x0(), 5, &GD_STEP_CANDIDATES).unwrap(), 1.0);
        // after many steps several candidates reach f* exactly; the smaller wins
        assert_eq!(tune_gd_step(&unit, &fig1_x0(), 200, &[0.5, 1.0]).unwrap(), 0.5);
        assert!(tune_gd_step(&unit, &fig1_x0(), 50, &[]).is_err());
    }

    #[test]
    fn presets_validate() {
        for (_, cfg) in fig1_configs().unwrap() {
            cfg.validate().unwrap();
        }
        regret_config().validate().unwrap();
        mlp_config(8, OptimizerKind::Adamw, AdamHyper::default(), MLP_STEPS).validate().unwrap();
        let (q, x0, lam) = theorem1_setup();
        assert_eq!(lam[2] / lam[0], 16.0);
        assert!(linf_distance(&x0, &q.argmin()).unwrap() > 1.0);
        let r = restart_setup();
        assert!(linf_distance(&r.x0, &r.problem.argmin()).unwrap() <= r.d_inf);
    }
}
