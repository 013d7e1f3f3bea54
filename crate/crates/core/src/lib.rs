//! Grokking dynamics under weight decay.
//!
//! The crate pairs exact optimiser steppers with the measurements needed to
//! test the claim that delayed generalisation is a norm-contraction escape:
//! the delay scales as `(1/γ)·ln(V_mem/V_post)` where `V` is the squared
//! parameter norm and `γ` the effective contraction rate.
//!
//! * [`dynamics`]: SGD and AdamW steps, plus an on-manifold synthetic process
//!   with closed-form expectations.
//! * [`models`]: modular-arithmetic and sparse-parity data, a two-layer MLP
//!   with hand-written gradients, and explicit lookup/Fourier interpolants.
//! * [`spectral`]: DFT over `Z_p`, model spectra, the non-Fourier quadratic
//!   form and the softmax curvature floor.
//! * [`analysis`]: exponential fits, escape-time formulas, regressions and
//!   regime labels.
//! * [`detection`]: the sequential stopping-time simulator and its bounds.
//! * [`harness`]: end-to-end training runs, sweeps and their on-disk format.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the harness.

pub mod analysis;
pub mod detection;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type Params = dynamics::ParamVector<Real>;
pub type Params32 = dynamics::ParamVector<f32>;
pub type Hyper = dynamics::SgdHyper<Real>;
pub type AdamW = dynamics::AdamWState<Real>;
pub type Mlp = models::MlpModel<Real>;
pub type Mlp32 = models::MlpModel<f32>;
