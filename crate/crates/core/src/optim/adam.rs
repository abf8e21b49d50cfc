//! The Adam family: Adam-ℓ2 (regularizer gradient fed into the moments),
//! AdamW (decoupled decay), AdamProx (closed-form proximal step for
//! `λ/2 ‖x‖²`) and AdamProxL2 (proximal step for `λ ‖x‖₂`).
//!
//! All four share the moment recursion and bias correction. With the
//! direction `p = α m̂ / (√v̂ + ε)` they differ only in how the iterate moves:
//!
//! | variant     | moments fed with | new iterate                          |
//! |-------------|------------------|--------------------------------------|
//! | Adam-ℓ2     | `∇f + λx`        | `x − η p`                            |
//! | AdamW       | `∇f`             | `(1 − λη) x − η p`                   |
//! | AdamProx    | `∇f`             | `(x − η p) / (1 + λη)`               |
//! | AdamProxL2  | `∇f`             | `max(1 − λη/‖u‖, 0) u`, `u = x − η p` |
//!
//! The decay in AdamW is `η λ x`; it is *not* multiplied by `α`, unlike
//! several popular framework implementations. `ε` sits outside the root.
//!
//! A coordinate that has only ever seen zero gradient (`v̂ = 0`, hence
//! `m̂ = 0`) gets a zero direction even when `ε = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub alpha: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub lambda: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            lambda: 0.0,
        }
    }
}

impl AdamHyper {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, epsilon: f64, lambda: f64) -> Result<Self> {
        let h = Self {
            alpha,
            beta1,
            beta2,
            epsilon,
            lambda,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidHyper(what.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be nonnegative");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: u64,
    pub x: ParamVector,
}

impl AdamState {
    pub fn new(x0: ParamVector) -> Self {
        let d = x0.dim();
        Self {
            m: ParamVector::zeros(d),
            v: ParamVector::zeros(d),
            t: 0,
            x: x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamVariant {
    AdamL2,
    AdamW,
    AdamProx,
    AdamProxL2,
}

impl AdamVariant {
    pub const ALL: [AdamVariant; 4] = [
        AdamVariant::AdamL2,
        AdamVariant::AdamW,
        AdamVariant::AdamProx,
        AdamVariant::AdamProxL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdamVariant::AdamL2 => "adam_l2",
            AdamVariant::AdamW => "adamw",
            AdamVariant::AdamProx => "adamprox",
            AdamVariant::AdamProxL2 => "adamproxl2",
        }
    }

    pub fn step(self, state: &AdamState, h: &AdamHyper, grad_f: &ParamVector, eta_t: f64) -> Result<AdamState> {
        advance(state.clone(), self, h, grad_f, eta_t)
    }
}

pub fn adam_l2_step(state: &AdamState, h: &AdamHyper, grad_f: &ParamVector, eta_t: f64) -> Result<AdamState> {
    AdamVariant::AdamL2.step(state, h, grad_f, eta_t)
}

pub fn adamw_step(state: &AdamState, h: &AdamHyper, grad_f: &ParamVector, eta_t: f64) -> Result<AdamState> {
    AdamVariant::AdamW.step(state, h, grad_f, eta_t)
}

pub fn adamprox_step(state: &AdamState, h: &AdamHyper, grad_f: &ParamVector, eta_t: f64) -> Result<AdamState> {
    AdamVariant::AdamProx.step(state, h, grad_f, eta_t)
}

pub fn adamproxl2_step(state: &AdamState, h: &AdamHyper, grad_f: &ParamVector, eta_t: f64) -> Result<AdamState> {
    AdamVariant::AdamProxL2.step(state, h, grad_f, eta_t)
}

/// One step of `variant`, reusing the buffers of `state`.
pub(crate) fn advance(
    mut state: AdamState,
    variant: AdamVariant,
    h: &AdamHyper,
    grad_f: &ParamVector,
    eta_t: f64,
) -> Result<AdamState> {
    grad_f.check_dim(state.x.dim())?;
    if !(eta_t >= 0.0 && eta_t.is_finite()) {
        return Err(Error::InvalidHyper(format!("eta_t must be nonnegative, got {eta_t}")));
    }
    let t = state.t + 1;
    let bc1 = 1.0 - h.beta1.powf(t as f64);
    let bc2 = 1.0 - h.beta2.powf(t as f64);
    let lam = h.lambda;
    let decay = lam * eta_t;

    let x = state.x.as_slice();
    let mut m = std::mem::take(&mut state.m).into_inner();
    let mut v = std::mem::take(&mut state.v).into_inner();
    let mut next = Vec::with_capacity(x.len());

    for i in 0..x.len() {
        let g = match variant {
            AdamVariant::AdamL2 => grad_f[i] + lam * x[i],
            _ => grad_f[i],
        };
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let p = if v_hat == 0.0 {
            0.0
        } else {
            h.alpha * m_hat / (v_hat.sqrt() + h.epsilon)
        };
        let xi = match variant {
            AdamVariant::AdamL2 | AdamVariant::AdamProxL2 => x[i] - eta_t * p,
            AdamVariant::AdamW => (1.0 - decay) * x[i] - eta_t * p,
            AdamVariant::AdamProx => (x[i] - eta_t * p) / (1.0 + decay),
        };
        next.push(xi);
    }

    if variant == AdamVariant::AdamProxL2 && decay != 0.0 {
        let norm = next.iter().map(|u| u * u).sum::<f64>().sqrt();
        // prox of λη‖·‖₂ is the zero vector at the origin
        let factor = if norm == 0.0 { 0.0 } else { (1.0 - decay / norm).max(0.0) };
        next.iter_mut().for_each(|u| *u *= factor);
    }

    ensure_finite(&m, "adam first moment")?;
    ensure_finite(&v, "adam second moment")?;
    ensure_finite(&next, "adam iterate")?;
    Ok(AdamState {
        m: ParamVector::from_vec_unchecked(m),
        v: ParamVector::from_vec_unchecked(v),
        t,
        x: ParamVector::from_vec_unchecked(next),
    })
}
