//! Optimizer update rules.
//!
//! Every rule is an instance of the generic update `x_t = x_{t−1} − η_t p_t`
//! (or its proximal counterpart `x_t = (I + λη_t)⁻¹ (x_{t−1} − η_t p_t)`),
//! where `η_t` comes from a [`Schedule`] and `p_t` is the method's direction.
//! Gradient oracles never include the regularizer; each rule handles `λ`
//! itself.

mod adagrad;
mod adam;

pub use adagrad::{
    adagrad_step, project_hypercube, restart_round_length, restart_round_settings, restarted_adagrad,
    AdaGradState, RestartRound, RestartRun,
};
pub use adam::{
    adam_l2_step, adamprox_step, adamproxl2_step, adamw_step, AdamHyper, AdamState, AdamVariant,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;
use crate::problems::GradientStream;

/// Learning-rate multiplier `η_t`, evaluated at 1-based steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant { eta0: f64 },
    /// `η_t = η₀ · ½(1 + cos(π (t−1) / T))`, defined for `1 ≤ t ≤ T+1`.
    Cosine { eta0: f64, horizon: u64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { eta0: 1.0 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let (eta0, horizon) = match *self {
            Schedule::Constant { eta0 } => (eta0, 1),
            Schedule::Cosine { eta0, horizon } => (eta0, horizon),
        };
        if !(eta0 > 0.0 && eta0.is_finite()) || horizon == 0 {
            return Err(Error::InvalidHyper(
                "schedule needs eta0 > 0 and a positive horizon".into(),
            ));
        }
        Ok(())
    }
}

pub fn schedule_eval(s: &Schedule, t: u64) -> Result<f64> {
    s.validate()?;
    if t == 0 {
        return Err(Error::InvalidHyper("schedules start at t = 1".into()));
    }
    match *s {
        Schedule::Constant { eta0 } => Ok(eta0),
        Schedule::Cosine { eta0, horizon } => {
            if t > horizon + 1 {
                return Err(Error::OutOfHorizon { t, horizon });
            }
            let phase = std::f64::consts::PI * (t - 1) as f64 / horizon as f64;
            Ok(eta0 * 0.5 * (1.0 + phase.cos()))
        }
    }
}

/// `x − step · grad`.
pub fn gd_step(x: &ParamVector, grad: &ParamVector, step: f64) -> Result<ParamVector> {
    grad.check_dim(x.dim())?;
    ParamVector::collect_finite(x.iter().zip(grad.iter()).map(|(x, g)| x - step * g), "gd_step")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdamL2,
    #[serde(alias = "adam_w")]
    Adamw,
    Adamprox,
    Adamproxl2,
    Gd,
    Adagrad,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::AdamL2 => "adam_l2",
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::Adamprox => "adamprox",
            OptimizerKind::Adamproxl2 => "adamproxl2",
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adagrad => "adagrad",
        }
    }

    pub fn adam_variant(self) -> Option<AdamVariant> {
        match self {
            OptimizerKind::AdamL2 => Some(AdamVariant::AdamL2),
            OptimizerKind::Adamw => Some(AdamVariant::AdamW),
            OptimizerKind::Adamprox => Some(AdamVariant::AdamProx),
            OptimizerKind::Adamproxl2 => Some(AdamVariant::AdamProxL2),
            _ => None,
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::ConfigInvalid(format!("unknown optimizer `{s}`")))
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A running optimizer of any kind, advanced one gradient at a time.
///
/// Plain GD uses `p_t = α g_t`, so its effective step is `η_t α`. AdaGrad
/// uses `α` as its base step `η` and ignores the schedule.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam {
        variant: AdamVariant,
        hyper: AdamHyper,
        state: AdamState,
    },
    Gd {
        alpha: f64,
        x: ParamVector,
    },
    AdaGrad(AdaGradState),
}

impl Optimizer {
    /// `adagrad_box` gives the `(center, radius)` of the feasible box; without
    /// it AdaGrad runs unconstrained.
    pub fn new(
        kind: OptimizerKind,
        hyper: AdamHyper,
        x0: ParamVector,
        adagrad_box: Option<(ParamVector, f64)>,
    ) -> Result<Self> {
        hyper.validate()?;
        Ok(match kind.adam_variant() {
            Some(variant) => Optimizer::Adam {
                variant,
                hyper,
                state: AdamState::new(x0),
            },
            None if kind == OptimizerKind::Gd => Optimizer::Gd { alpha: hyper.alpha, x: x0 },
            None => {
                let (center, radius) = adagrad_box.unwrap_or_else(|| (x0.clone(), f64::INFINITY));
                Optimizer::AdaGrad(AdaGradState::new(&x0, hyper.alpha, center, radius)?)
            }
        })
    }

    pub fn params(&self) -> &ParamVector {
        match self {
            Optimizer::Adam { state, .. } => &state.x,
            Optimizer::Gd { x, .. } => x,
            Optimizer::AdaGrad(s) => &s.x,
        }
    }

    pub fn step(&mut self, grad: &ParamVector, eta_t: f64) -> Result<()> {
        match self {
            Optimizer::Adam { variant, hyper, state } => {
                let current = std::mem::replace(state, AdamState::new(ParamVector::zeros(0)));
                *state = adam::advance(current, *variant, hyper, grad, eta_t)?;
            }
            Optimizer::Gd { alpha, x } => *x = gd_step(x, grad, eta_t * *alpha)?,
            Optimizer::AdaGrad(s) => *s = adagrad_step(s, grad)?,
        }
        Ok(())
    }
}

/// What [`drive`] reports after each step.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub t: u64,
    pub eta: f64,
    /// Loss at the iterate where the gradient was taken.
    pub loss: f64,
    pub grad: &'a ParamVector,
    pub prev: &'a ParamVector,
    pub next: &'a ParamVector,
}

/// Runs `steps` updates of `opt` on `stream`, calling `observe` after each.
///
/// Failures are tagged with the 1-based step at which they occurred.
pub fn drive<S: GradientStream + ?Sized>(
    opt: &mut Optimizer,
    stream: &mut S,
    schedule: &Schedule,
    steps: u64,
    mut observe: impl FnMut(StepInfo<'_>) -> Result<()>,
) -> Result<()> {
    schedule.validate()?;
    for t in 1..=steps {
        let eta = schedule_eval(schedule, t)?;
        let prev = opt.params().clone();
        let (loss, grad) = stream.next_grad(&prev).map_err(|e| e.at_step(t))?;
        opt.step(&grad, eta).map_err(|e| e.at_step(t))?;
        observe(StepInfo {
            t,
            eta,
            loss,
            grad: &grad,
            prev: &prev,
            next: opt.params(),
        })
        .map_err(|e| e.at_step(t))?;
    }
    Ok(())
}
