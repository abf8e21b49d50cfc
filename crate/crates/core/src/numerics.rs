//! Dense vector arithmetic, seeded random streams and a central-difference
//! gradient checker.
//!
//! Every optimizer iterate and every per-coordinate state vector in this crate
//! is a [`ParamVector`]. Operations that could produce NaN or infinity report
//! [`Error::NonFiniteValue`] instead of returning a poisoned vector.

use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Problem;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Dense vector of 64-bit parameter coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "ParamVector::new")?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    /// Wraps values the caller has already checked.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Builds a vector from a finite-checked iterator.
    pub(crate) fn collect_finite(
        values: impl IntoIterator<Item = f64>,
        context: &'static str,
    ) -> Result<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        ensure_finite(&values, context)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Multiplies every coordinate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::collect_finite(self.0.iter().map(|v| v * factor), "scaled")
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl<'a> IntoIterator for &'a ParamVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub(crate) fn ensure_finite(values: &[f64], context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { context })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

pub fn elementwise(op: ElementwiseOp, a: &ParamVector, b: &ParamVector) -> Result<ParamVector> {
    b.check_dim(a.dim())?;
    let pairs = a.iter().zip(b.iter());
    let out: Vec<f64> = match op {
        ElementwiseOp::Add => pairs.map(|(x, y)| x + y).collect(),
        ElementwiseOp::Sub => pairs.map(|(x, y)| x - y).collect(),
        ElementwiseOp::Mul => pairs.map(|(x, y)| x * y).collect(),
        ElementwiseOp::Max => pairs.map(|(x, y)| x.max(*y)).collect(),
        ElementwiseOp::Div => {
            if let Some(index) = b.iter().position(|&y| y == 0.0) {
                return Err(Error::DivisionByZero { index });
            }
            pairs.map(|(x, y)| x / y).collect()
        }
    };
    ensure_finite(&out, "elementwise")?;
    Ok(ParamVector(out))
}

/// `max_i |a_i|`, zero for the empty or zero vector.
pub fn linf_norm(a: &ParamVector) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `‖a − b‖∞` without allocating.
pub fn linf_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    b.check_dim(a.dim())?;
    Ok(a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs())))
}

/// Central-difference gradient `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn fd_gradient(problem: &dyn Problem, x: &ParamVector, h: f64) -> Result<ParamVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidHyper(format!("fd step must be positive, got {h}")));
    }
    x.check_dim(problem.dim())?;
    let mut probe = x.0.clone();
    let mut grad = Vec::with_capacity(x.dim());
    for i in 0..x.dim() {
        let orig = probe[i];
        let (up, down) = (orig + h, orig - h);
        probe[i] = up;
        let plus = problem.value(&ParamVector(probe.clone()))?;
        probe[i] = down;
        let minus = problem.value(&ParamVector(probe.clone()))?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteValue {
                context: "fd_gradient probe",
            });
        }
        // divide by the realised step, not 2h: `orig ± h` is rounded
        grad.push((plus - minus) / (up - down));
    }
    ParamVector::new(grad)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with different ids are independent ChaCha8 streams under the same
/// key, so a grid cell's draws never depend on which thread runs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Quadratic;
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    struct Product;

    impl Problem for Product {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &ParamVector) -> Result<f64> {
            Ok(x[0] * x[1])
        }
        fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
            Ok(pv(&[x[1], x[0]]))
        }
    }

    #[test]
    fn elementwise_examples() {
        let sum = elementwise(ElementwiseOp::Add, &pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap();
        assert_eq!(sum.as_slice(), &[4.0, 6.0]);
        let sq = elementwise(ElementwiseOp::Mul, &pv(&[2.0, -3.0]), &pv(&[2.0, -3.0])).unwrap();
        assert_eq!(sq.as_slice(), &[4.0, 9.0]);
        let err = elementwise(ElementwiseOp::Div, &pv(&[1.0, 1.0]), &pv(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::DivisionByZero { index: 0 }));
        let mx = elementwise(ElementwiseOp::Max, &pv(&[1.0, -2.0]), &pv(&[0.0, 5.0])).unwrap();
        assert_eq!(mx.as_slice(), &[1.0, 5.0]);
    }

    #[test]
    fn elementwise_rejects_mismatch_and_overflow() {
        let err = elementwise(ElementwiseOp::Sub, &pv(&[1.0]), &pv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, found: 2 }));
        let err = elementwise(ElementwiseOp::Mul, &pv(&[1e300]), &pv(&[1e300])).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn linf_examples() {
        assert_eq!(linf_norm(&pv(&[3.0, -4.0])), 4.0);
        assert_eq!(linf_norm(&pv(&[0.0, 0.0])), 0.0);
        assert_eq!(linf_norm(&pv(&[-7.0, 2.0, 7.0])), 7.0);
    }

    #[test]
    fn fd_gradient_examples() {
        let half_square = Quadratic::new(pv(&[1.0]), pv(&[0.0]), 0.0).unwrap();
        let g = fd_gradient(&half_square, &pv(&[2.0]), DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 2.0).abs() <= 1e-8);

        let g = fd_gradient(&Product, &pv(&[3.0, 5.0]), DEFAULT_FD_STEP).unwrap();
        assert!((g[0] - 5.0).abs() <= 1e-8);
        assert!((g[1] - 3.0).abs() <= 1e-8);
    }

    #[test]
    fn fd_gradient_reports_non_finite_probe() {
        struct Blowup;
        impl Problem for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, x: &ParamVector) -> Result<f64> {
                Ok(1.0 / (x[0] - 1e-5))
            }
            fn gradient(&self, _x: &ParamVector) -> Result<ParamVector> {
                unreachable!()
            }
        }
        let err = fd_gradient(&Blowup, &pv(&[0.0]), 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
    }

    #[test]
    fn rng_stream_reproducible_and_independent() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(42, 3).rng();
            (0..10_000).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(42, 3).rng();
            (0..10_000).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
        let mut other = RngStream::new(42, 4).rng();
        let c: Vec<u64> = (0..16).map(|_| other.random()).collect();
        assert_ne!(&a[..16], &c[..]);
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    proptest! {
        #[test]
        fn add_commutes(pairs in prop::collection::vec((finite(), finite()), 1..32)) {
            let a = pv(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = pv(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
            let ab = elementwise(ElementwiseOp::Add, &a, &b).unwrap();
            let ba = elementwise(ElementwiseOp::Add, &b, &a).unwrap();
            for (x, y) in ab.iter().zip(ba.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn linf_is_absolutely_homogeneous(
            values in prop::collection::vec(finite(), 1..32),
            alpha in -1e3f64..1e3,
        ) {
            let a = pv(&values);
            let scaled = a.scaled(alpha).unwrap();
            let lhs = linf_norm(&scaled);
            let rhs = alpha.abs() * linf_norm(&a);
            prop_assert!((lhs - rhs).abs() <= f64::EPSILON * rhs.abs());
        }

        #[test]
        fn fd_matches_diagonal_quadratic(
            coords in prop::collection::vec((-10.0f64..10.0, 1e-3f64..1e5, -10.0f64..10.0), 1..6),
        ) {
            let x = pv(&coords.iter().map(|c| c.0).collect::<Vec<_>>());
            let h = pv(&coords.iter().map(|c| c.1).collect::<Vec<_>>());
            let b = pv(&coords.iter().map(|c| c.2).collect::<Vec<_>>());
            let q = Quadratic::new(h.clone(), b.clone(), 0.0).unwrap();
            let fd = fd_gradient(&q, &x, DEFAULT_FD_STEP).unwrap();
            // Two probes of a value of magnitude |f| carry up to one ulp of
            // rounding each; below that floor no difference quotient can go.
            let fmag = q.value(&x).unwrap().abs() + coords.iter().map(|c| c.1 * 100.0).sum::<f64>();
            let floor = 2.0 * f64::EPSILON * fmag / (2.0 * DEFAULT_FD_STEP);
            for i in 0..x.dim() {
                let exact = h[i] * x[i] + b[i];
                prop_assert!((fd[i] - exact).abs() <= 1e-6 + floor, "coord {} fd {} exact {}", i, fd[i], exact);
            }
        }
    }
}
