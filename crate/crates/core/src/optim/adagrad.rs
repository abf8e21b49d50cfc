//! Projected diagonal AdaGrad over an ℓ∞ box, and the restart scheme that
//! turns its `√T` regret into linear convergence on strongly convex,
//! smooth objectives.

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ParamVector};
use crate::problems::Problem;

/// Per-coordinate clamp of `x` into `[center − radius, center + radius]`.
pub fn project_hypercube(x: &ParamVector, center: &ParamVector, radius: f64) -> Result<ParamVector> {
    center.check_dim(x.dim())?;
    if !(radius >= 0.0) {
        return Err(Error::InvalidConstants(format!("box radius must be nonnegative, got {radius}")));
    }
    Ok(ParamVector::from_vec_unchecked(
        x.iter()
            .zip(center.iter())
            .map(|(x, c)| x.max(c - radius).min(c + radius))
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    /// Running `Σ g_i²` per coordinate.
    pub sumsq: ParamVector,
    /// Current iterate `x_t`.
    pub x: ParamVector,
    /// `Σ_{s ≤ t} x_s` over the iterates at which gradients were queried.
    pub x_sum: ParamVector,
    pub t: u64,
    pub eta: f64,
    pub box_center: ParamVector,
    pub box_radius: f64,
}

impl AdaGradState {
    /// Starts at the projection of `x1` onto the box.
    pub fn new(x1: &ParamVector, eta: f64, box_center: ParamVector, box_radius: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidHyper(format!("adagrad eta must be positive, got {eta}")));
        }
        let x = project_hypercube(x1, &box_center, box_radius)?;
        let d = x.dim();
        Ok(Self {
            sumsq: ParamVector::zeros(d),
            x,
            x_sum: ParamVector::zeros(d),
            t: 0,
            eta,
            box_center,
            box_radius,
        })
    }

    /// `x̄ = (1/T) Σ_{t=1}^{T} x_t`, the iterates at which gradients were taken.
    pub fn average(&self) -> Result<ParamVector> {
        if self.t == 0 {
            return Ok(self.x.clone());
        }
        let n = self.t as f64;
        ParamVector::collect_finite(self.x_sum.iter().map(|s| s / n), "adagrad average")
    }
}

/// One projected AdaGrad step with gradient `grad = ∇f(x_t)`.
///
/// Coordinates whose accumulated squared gradient is still zero take a zero
/// step.
pub fn adagrad_step(state: &AdaGradState, grad: &ParamVector) -> Result<AdaGradState> {
    grad.check_dim(state.x.dim())?;
    let mut sumsq = state.sumsq.as_slice().to_vec();
    let mut moved = Vec::with_capacity(grad.dim());
    for i in 0..grad.dim() {
        let g = grad[i];
        sumsq[i] += g * g;
        let rate = if sumsq[i] == 0.0 { 0.0 } else { state.eta / sumsq[i].sqrt() };
        moved.push(state.x[i] - rate * g);
    }
    ensure_finite(&sumsq, "adagrad accumulator")?;
    ensure_finite(&moved, "adagrad iterate")?;
    let x_sum = ParamVector::collect_finite(
        state.x_sum.iter().zip(state.x.iter()).map(|(s, x)| s + x),
        "adagrad running sum",
    )?;
    let x = project_hypercube(&ParamVector::from_vec_unchecked(moved), &state.box_center, state.box_radius)?;
    Ok(AdaGradState {
        sumsq: ParamVector::from_vec_unchecked(sumsq),
        x,
        x_sum,
        t: state.t + 1,
        eta: state.eta,
        box_center: state.box_center.clone(),
        box_radius: state.box_radius,
    })
}

/// Box radius and step size of restart round `round` (1-based):
/// `D∞ / 2^{i−1}` and `(D∞/√2) / 2^{i−1}`.
pub fn restart_round_settings(d_inf: f64, round: u32) -> (f64, f64) {
    let shrink = 0.5f64.powi(round as i32 - 1);
    (d_inf * shrink, d_inf / std::f64::consts::SQRT_2 * shrink)
}

/// Inner AdaGrad steps per round, `⌈32 d M / μ⌉`.
pub fn restart_round_length(dim: usize, mu: f64, m_smooth: f64) -> u64 {
    (32.0 * dim as f64 * m_smooth / mu).ceil() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRound {
    pub index: u32,
    pub center: ParamVector,
    pub radius: f64,
    pub eta: f64,
    pub steps: u64,
    pub average: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    pub x0: ParamVector,
    pub d_inf: f64,
    pub rounds: Vec<RestartRound>,
}

impl RestartRun {
    /// `x̄_N`, or `x0` when no round ran.
    pub fn output(&self) -> &ParamVector {
        self.rounds.last().map_or(&self.x0, |r| &r.average)
    }
}

/// AdaGrad with restarts: round `i` runs projected AdaGrad from the previous
/// average inside the box of radius `D∞/2^{i−1}` around it.
pub fn restarted_adagrad(
    problem: &dyn Problem,
    x0: &ParamVector,
    d_inf: f64,
    mu: f64,
    m_smooth: f64,
    rounds: u32,
) -> Result<RestartRun> {
    if !(mu > 0.0) || !(m_smooth >= mu) || !m_smooth.is_finite() {
        return Err(Error::InvalidConstants(format!(
            "need 0 < mu <= M, got mu={mu}, M={m_smooth}"
        )));
    }
    if !(d_inf > 0.0 && d_inf.is_finite()) || rounds == 0 {
        return Err(Error::InvalidConstants(
            "d_inf must be positive and rounds at least 1".into(),
        ));
    }
    x0.check_dim(problem.dim())?;
    let steps = restart_round_length(x0.dim(), mu, m_smooth);
    let mut center = x0.clone();
    let mut out = Vec::with_capacity(rounds as usize);
    for index in 1..=rounds {
        let (radius, eta) = restart_round_settings(d_inf, index);
        let mut state = AdaGradState::new(&center, eta, center.clone(), radius)?;
        for _ in 0..steps {
            let g = problem.gradient(&state.x)?;
            state = adagrad_step(&state, &g)?;
        }
        let average = state.average()?;
        out.push(RestartRound {
            index,
            center: center.clone(),
            radius,
            eta,
            steps,
            average: average.clone(),
        });
        center = average;
    }
    Ok(RestartRun {
        x0: x0.clone(),
        d_inf,
        rounds: out,
    })
}
