//! Adaptive optimizers with coupled and decoupled weight decay, their
//! proximal counterparts, and executable checks of scale-freeness.
//!
//! * [`optim`]: Adam-ℓ2, AdamW, AdamProx, AdamProxL2, GD, projected AdaGrad
//!   and AdaGrad with restarts.
//! * [`problems`]: quadratics, rescaled gradient oracles, loss scaling and a
//!   small fully-connected network.
//! * [`diagnostics`]: update-magnitude histograms, dispersion statistics and
//!   bound checkers.
//! * [`harness`]: JSON-configured runs, `(α, λ)` grid search, CSV and SVG
//!   output.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod optim;
pub mod problems;

pub use error::{Error, Result};
pub use numerics::{ParamVector, RngStream};
