//! Objectives and gradient oracles.
//!
//! Oracles return the gradient of the loss only. Each optimizer decides how
//! (and whether) the weight-decay term enters its update.

mod data;
mod mlp;

pub use data::{gen_blobs, load_dataset_csv, write_dataset_csv, BlobsConfig, Dataset};
pub use mlp::{
    accuracy, layer_ranges, mlp_init, mlp_loss_grad, Activation, LossKind, MinibatchStream,
    MlpObjective, MlpSpec,
};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// A differentiable objective with value and gradient oracles.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &ParamVector) -> Result<f64>;

    fn gradient(&self, x: &ParamVector) -> Result<ParamVector>;

    /// The minimizer, when it is known in closed form.
    fn minimizer(&self) -> Option<ParamVector> {
        None
    }

    fn as_quadratic(&self) -> Option<&Quadratic> {
        None
    }
}

impl<P: Problem + ?Sized> Problem for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &ParamVector) -> Result<f64> {
        (**self).value(x)
    }
    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        (**self).gradient(x)
    }
    fn minimizer(&self) -> Option<ParamVector> {
        (**self).minimizer()
    }
    fn as_quadratic(&self) -> Option<&Quadratic> {
        (**self).as_quadratic()
    }
}

/// Separable quadratic `½ Σ h_i x_i² + Σ b_i x_i + c` with `h_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    h_diag: ParamVector,
    b: ParamVector,
    c: f64,
}

impl Quadratic {
    pub fn new(h_diag: ParamVector, b: ParamVector, c: f64) -> Result<Self> {
        b.check_dim(h_diag.dim())?;
        if h_diag.dim() == 0 {
            return Err(Error::InvalidConstants("quadratic must have dim ≥ 1".into()));
        }
        if let Some(i) = h_diag.iter().position(|&h| h <= 0.0) {
            return Err(Error::InvalidConstants(format!(
                "diagonal entry {i} is not strictly positive"
            )));
        }
        if !c.is_finite() {
            return Err(Error::NonFiniteValue { context: "quadratic constant" });
        }
        Ok(Self { h_diag, b, c })
    }

    pub fn h_diag(&self) -> &ParamVector {
        &self.h_diag
    }

    pub fn b(&self) -> &ParamVector {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `max(h) / min(h)`.
    pub fn condition_number(&self) -> f64 {
        let max = self.h_diag.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.h_diag.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn argmin(&self) -> ParamVector {
        ParamVector::from_vec_unchecked(
            self.h_diag
                .iter()
                .zip(self.b.iter())
                .map(|(h, b)| -b / h)
                .collect(),
        )
    }

    /// Smallest and largest curvature, i.e. the strong-convexity and
    /// smoothness constants.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        let max = self.h_diag.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.h_diag.iter().cloned().fold(f64::MAX, f64::min);
        (min, max)
    }
}

/// `h ⊙ x + b`.
pub fn quadratic_grad(q: &Quadratic, x: &ParamVector) -> Result<ParamVector> {
    x.check_dim(q.h_diag.dim())?;
    ParamVector::collect_finite(
        x.iter()
            .zip(q.h_diag.iter().zip(q.b.iter()))
            .map(|(x, (h, b))| h * x + b),
        "quadratic_grad",
    )
}

impl Problem for Quadratic {
    fn dim(&self) -> usize {
        self.h_diag.dim()
    }

    fn value(&self, x: &ParamVector) -> Result<f64> {
        x.check_dim(self.dim())?;
        let v = x
            .iter()
            .zip(self.h_diag.iter().zip(self.b.iter()))
            .map(|(x, (h, b))| 0.5 * h * x * x + b * x)
            .sum::<f64>()
            + self.c;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteValue { context: "quadratic value" })
        }
    }

    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        quadratic_grad(self, x)
    }

    fn minimizer(&self) -> Option<ParamVector> {
        Some(self.argmin())
    }

    fn as_quadratic(&self) -> Option<&Quadratic> {
        Some(self)
    }
}

/// Returns `(q, q̃)` where `q̃ = ½ xᵀx + (H⁻¹b)ᵀx + c` has unit curvature and
/// the same minimizer as `q`.
pub fn corollary1_pair(q: &Quadratic) -> (Quadratic, Quadratic) {
    let b = ParamVector::from_vec_unchecked(
        q.b.iter()
            .zip(q.h_diag.iter())
            .map(|(b, h)| b / h)
            .collect(),
    );
    let unit = Quadratic {
        h_diag: ParamVector::filled(q.dim(), 1.0),
        b,
        c: q.c,
    };
    (q.clone(), unit)
}

/// Gradient oracle `Λ ⊙ ∇f`, the member of the rescaled family whose Hessian
/// is `Λ∇²f` and whose stationary point is unchanged.
#[derive(Debug, Clone)]
pub struct RescaledOracle<P> {
    base: P,
    lambda_diag: ParamVector,
}

impl<P: Problem> RescaledOracle<P> {
    pub fn new(base: P, lambda_diag: ParamVector) -> Result<Self> {
        lambda_diag.check_dim(base.dim())?;
        if let Some(i) = lambda_diag.iter().position(|&l| l <= 0.0) {
            return Err(Error::InvalidConstants(format!(
                "scaling entry {i} is not strictly positive"
            )));
        }
        Ok(Self { base, lambda_diag })
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn lambda_diag(&self) -> &ParamVector {
        &self.lambda_diag
    }
}

/// `Λ ⊙ base.gradient(x)`.
pub fn rescaled_grad<P: Problem>(r: &RescaledOracle<P>, x: &ParamVector) -> Result<ParamVector> {
    let g = r.base.gradient(x)?;
    ParamVector::collect_finite(
        g.iter().zip(r.lambda_diag.iter()).map(|(g, l)| l * g),
        "rescaled_grad",
    )
}

impl<P: Problem> Problem for RescaledOracle<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Only available when the base is a quadratic, where the rescaled
    /// function is `½ Σ λ_i h_i (x_i − x*_i)² + f(x*)`.
    fn value(&self, x: &ParamVector) -> Result<f64> {
        let q = self.base.as_quadratic().ok_or(Error::ValueUnavailable)?;
        x.check_dim(q.dim())?;
        let star = q.argmin();
        let floor = q.value(&star)?;
        let v = x
            .iter()
            .zip(star.iter())
            .zip(q.h_diag.iter().zip(self.lambda_diag.iter()))
            .map(|((x, s), (h, l))| 0.5 * l * h * (x - s) * (x - s))
            .sum::<f64>()
            + floor;
        Ok(v)
    }

    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        rescaled_grad(self, x)
    }

    fn minimizer(&self) -> Option<ParamVector> {
        self.base.minimizer()
    }
}

/// Multiplies both the loss and its gradient by a positive constant.
#[derive(Debug, Clone)]
pub struct LossScaler<P> {
    inner: P,
    factor: f64,
}

impl<P: Problem> LossScaler<P> {
    pub fn new(inner: P, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConstants(format!(
                "loss factor must be positive, got {factor}"
            )));
        }
        Ok(Self { inner, factor })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

/// `(factor · value, factor · gradient)`.
pub fn scale_loss<P: Problem>(l: &LossScaler<P>, x: &ParamVector) -> Result<(f64, ParamVector)> {
    Ok((l.value(x)?, l.gradient(x)?))
}

impl<P: Problem> Problem for LossScaler<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &ParamVector) -> Result<f64> {
        Ok(self.factor * self.inner.value(x)?)
    }
    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        self.inner.gradient(x)?.scaled(self.factor)
    }
    fn minimizer(&self) -> Option<ParamVector> {
        self.inner.minimizer()
    }
}

/// A sequence of loss functions `f_1, f_2, …` queried once per step.
///
/// Full-batch problems return the same function every step; minibatch
/// streams advance through a seeded epoch order.
pub trait GradientStream {
    fn dim(&self) -> usize;

    /// Loss and gradient of the next function at `x`.
    fn next_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)>;
}

/// Presents a deterministic [`Problem`] as a stream.
#[derive(Debug, Clone)]
pub struct FullBatch<P>(pub P);

impl<P: Problem> GradientStream for FullBatch<P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn next_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        let g = self.0.gradient(x)?;
        // rescaled oracles without a value oracle still stream gradients
        let v = match self.0.value(x) {
            Ok(v) => v,
            Err(Error::ValueUnavailable) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok((v, g))
    }
}

/// Multiplies every gradient of an inner stream coordinatewise by `Λ`.
#[derive(Debug, Clone)]
pub struct ScaledStream<S> {
    inner: S,
    lambda_diag: ParamVector,
}

impl<S: GradientStream> ScaledStream<S> {
    pub fn new(inner: S, lambda_diag: ParamVector) -> Result<Self> {
        lambda_diag.check_dim(inner.dim())?;
        if lambda_diag.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidConstants("scaling must be positive".into()));
        }
        Ok(Self { inner, lambda_diag })
    }
}

impl<S: GradientStream> GradientStream for ScaledStream<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn next_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        let (v, g) = self.inner.next_grad(x)?;
        let g = ParamVector::collect_finite(
            g.iter().zip(self.lambda_diag.iter()).map(|(g, l)| l * g),
            "scaled stream",
        )?;
        Ok((v, g))
    }
}

impl<S: GradientStream + ?Sized> GradientStream for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn next_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        (**self).next_grad(x)
    }
}
