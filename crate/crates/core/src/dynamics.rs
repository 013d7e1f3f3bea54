//! Regularised optimiser dynamics.
//!
//! Two steppers act on a flat parameter vector:
//!
//! * [`sgd_step`]: `theta - eta * (grad + 2 * lambda * theta) + eta * noise`
//! * [`adamw_step`]: Adam moments on the raw gradient, decay applied
//!   multiplicatively as `(1 - eta * lambda) * theta` outside the moments.
//!
//! [`simulate_on_manifold`] runs the zero-gradient process
//! `theta <- (1 - 2 eta lambda) theta + eta xi` whose mean squared norm has the
//! closed form returned by [`closed_form_mean_v`].

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Trajectories whose squared norm exceeds this are aborted.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("dim", "parameter vector must be non-empty"));
        }
        check_finite("parameter vector", &values)?;
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must be non-empty");
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    /// `V = sum theta_i^2`.
    pub fn squared_norm(&self) -> T {
        squared_norm(&self.values)
    }
}

pub fn squared_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

fn check_finite<T: Scalar>(what: &'static str, v: &[T]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper<T> {
    pub eta: T,
    pub lambda: T,
    pub sigma: T,
}

impl<T: Scalar> SgdHyper<T> {
    pub fn new(eta: T, lambda: T, sigma: T) -> Result<Self> {
        let h = Self { eta, lambda, sigma };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "must be finite and > 0"));
        }
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Per-coordinate multiplier `1 - 2 eta lambda` on the zero-gradient manifold.
    pub fn contraction(&self) -> T {
        T::one() - T::lit(2.0) * self.eta * self.lambda
    }
}

/// One regularised SGD step; inputs are left untouched.
pub fn sgd_step<T: Scalar>(
    theta: &ParamVector<T>,
    grad: &ParamVector<T>,
    hyper: &SgdHyper<T>,
    noise: &ParamVector<T>,
) -> Result<ParamVector<T>> {
    hyper.validate()?;
    check_dim("sgd_step: grad", theta.dim(), grad.dim())?;
    check_dim("sgd_step: noise", theta.dim(), noise.dim())?;
    let mut out = theta.values.clone();
    sgd_update_in_place(&mut out, &grad.values, hyper.eta, hyper.lambda, Some(&noise.values));
    check_finite("sgd_step result", &out)?;
    Ok(ParamVector { values: out })
}

/// In-place form of [`sgd_step`] used by the training loop.
pub fn sgd_update_in_place<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    eta: T,
    lambda: T,
    noise: Option<&[T]>,
) {
    let two_lambda = T::lit(2.0) * lambda;
    match noise {
        Some(xi) => {
            for ((t, &g), &n) in theta.iter_mut().zip(grad).zip(xi) {
                *t = *t - eta * (g + two_lambda * *t) + eta * n;
            }
        }
        None => {
            for (t, &g) in theta.iter_mut().zip(grad) {
                *t = *t - eta * (g + two_lambda * *t);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamWState<T> {
    /// Fresh state with `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(dim: usize) -> Self {
        Self::with_betas(dim, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_betas(dim: usize, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            step_count: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    fn validate(&self) -> Result<()> {
        let unit = |x: T| x > T::zero() && x < T::one();
        if !unit(self.beta1) {
            return Err(Error::invalid("beta1", "must lie in (0, 1)"));
        }
        if !unit(self.beta2) {
            return Err(Error::invalid("beta2", "must lie in (0, 1)"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        check_dim("adamw: second moment", self.m.len(), self.v.len())
    }
}

/// One AdamW step returning the new parameters and state.
pub fn adamw_step<T: Scalar>(
    theta: &ParamVector<T>,
    grad: &ParamVector<T>,
    state: &AdamWState<T>,
    eta: T,
    lambda: T,
) -> Result<(ParamVector<T>, AdamWState<T>)> {
    check_dim("adamw_step: grad", theta.dim(), grad.dim())?;
    check_dim("adamw_step: state", theta.dim(), state.dim())?;
    let mut out = theta.values.clone();
    let mut next = state.clone();
    adamw_update_in_place(&mut out, &grad.values, &mut next, eta, lambda)?;
    check_finite("adamw_step result", &out)?;
    Ok((ParamVector { values: out }, next))
}

/// In-place AdamW update. Weight decay never enters the moment estimates.
pub fn adamw_update_in_place<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    state: &mut AdamWState<T>,
    eta: T,
    lambda: T,
) -> Result<()> {
    state.validate()?;
    if !(eta > T::zero()) {
        return Err(Error::invalid("eta", "must be > 0"));
    }
    check_dim("adamw: grad", theta.len(), grad.len())?;
    check_dim("adamw: state", theta.len(), state.m.len())?;
    let t = state.step_count.checked_add(1).ok_or(Error::StepOverflow)?;
    let exponent = i32::try_from(t).unwrap_or(i32::MAX);
    state.step_count = t;

    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = T::one() - b1.powi(exponent);
    let bc2 = T::one() - b2.powi(exponent);
    let decay = T::one() - eta * lambda;
    for i in 0..theta.len() {
        let g = grad[i];
        let m = b1 * state.m[i] + (T::one() - b1) * g;
        let v = b2 * state.v[i] + (T::one() - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        theta[i] = decay * theta[i] - eta * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrajectory<T> {
    pub v_series: Vec<T>,
    pub eta: T,
    pub lambda: T,
    pub sigma: T,
    pub seed: u64,
    pub dim: usize,
}

impl<T: Scalar> SyntheticTrajectory<T> {
    /// First index `t` with `V_t <= threshold`.
    pub fn first_below(&self, threshold: T) -> Option<usize> {
        self.v_series.iter().position(|&v| v <= threshold)
    }
}

/// Zero-gradient SGD from `theta_0 = sqrt(v0 / dim) * 1` with isotropic
/// Gaussian noise of total variance `sigma^2`. The returned series has
/// `steps + 1` entries, starting at `V_0`.
pub fn simulate_on_manifold<T: Scalar>(
    dim: usize,
    v0: T,
    hyper: &SgdHyper<T>,
    steps: usize,
    seed: u64,
) -> Result<SyntheticTrajectory<T>> {
    hyper.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dim", "must be >= 1"));
    }
    if !(v0 > T::zero()) {
        return Err(Error::invalid("v0", "must be > 0"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "must be >= 1"));
    }
    let contraction = hyper.contraction();
    if !(contraction > T::zero()) {
        return Err(Error::NonPositiveContraction(
            (T::lit(2.0) * hyper.eta * hyper.lambda).as_f64(),
        ));
    }

    let mut theta = vec![(v0 / T::from_usize_lossy(dim)).sqrt(); dim];
    let noise_sd = hyper.eta * hyper.sigma / T::from_usize_lossy(dim).sqrt();
    let mut rng = rng::seeded(seed);
    let limit = T::lit(DIVERGENCE_LIMIT);

    let mut v_series = Vec::with_capacity(steps + 1);
    v_series.push(squared_norm(&theta));
    for step in 1..=steps {
        if noise_sd > T::zero() {
            for x in theta.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = contraction * *x + noise_sd * T::lit(z);
            }
        } else {
            for x in theta.iter_mut() {
                *x = contraction * *x;
            }
        }
        let v = squared_norm(&theta);
        if !(v <= limit) {
            return Err(Error::Diverged {
                step: step as u64,
                value: v.as_f64(),
            });
        }
        v_series.push(v);
    }
    Ok(SyntheticTrajectory {
        v_series,
        eta: hyper.eta,
        lambda: hyper.lambda,
        sigma: hyper.sigma,
        seed,
        dim,
    })
}

/// Stationary mean squared norm `eta^2 sigma^2 / (1 - (1 - 2 eta lambda)^2)`
/// of the on-manifold process.
pub fn stationary_floor<T: Scalar>(hyper: &SgdHyper<T>) -> Result<T> {
    hyper.validate()?;
    let c = hyper.contraction();
    if !(c > T::zero()) {
        return Err(Error::NonPositiveContraction(
            (T::lit(2.0) * hyper.eta * hyper.lambda).as_f64(),
        ));
    }
    let noise = hyper.eta * hyper.eta * hyper.sigma * hyper.sigma;
    let gap = T::one() - c * c;
    if gap == T::zero() {
        if noise > T::zero() {
            return Err(Error::NoStationaryFloor);
        }
        return Ok(T::zero());
    }
    Ok(noise / gap)
}

/// `E[V_t] = c^{2t} (v0 - V') + V'` with `c = 1 - 2 eta lambda`.
pub fn closed_form_mean_v<T: Scalar>(t: usize, v0: T, hyper: &SgdHyper<T>) -> Result<T> {
    let floor = stationary_floor(hyper)?;
    let c2 = hyper.contraction().powi(2);
    let decay = c2.powf(T::from_usize_lossy(t));
    Ok(decay * (v0 - floor) + floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector<f64> {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_sgd_contracts() {
        let h = SgdHyper::new(0.1, 0.5, 0.0).unwrap();
        let out = sgd_step(&pv(&[1.0, -2.0]), &pv(&[0.0, 0.0]), &h, &pv(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(out.values()[0], 0.9, epsilon = 1e-15);
        assert_relative_eq!(out.values()[1], -1.8, epsilon = 1e-15);
    }

    #[test]
    fn origin_is_fixed() {
        let h = SgdHyper::new(0.3, 2.0, 0.0).unwrap();
        let z = ParamVector::<f64>::zeros(4);
        assert_eq!(sgd_step(&z, &z, &h, &z).unwrap(), z);
    }

    #[test]
    fn plain_gradient_step() {
        let h = SgdHyper::new(0.1, 0.0, 0.0).unwrap();
        let out = sgd_step(&pv(&[1.0]), &pv(&[2.0]), &h, &pv(&[0.0])).unwrap();
        assert_relative_eq!(out.values()[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn sgd_rejects_mismatch_and_overflow() {
        let h = SgdHyper::new(0.1, 0.0, 0.0).unwrap();
        let err = sgd_step(&pv(&[1.0, 2.0]), &pv(&[1.0]), &h, &pv(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let huge = pv(&[0.0, f64::MAX]);
        let g = pv(&[0.0, -f64::MAX]);
        let h = SgdHyper::new(10.0, 0.0, 0.0).unwrap();
        let err = sgd_step(&huge, &g, &h, &pv(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn adamw_pure_decay() {
        let theta = pv(&[1.0, -3.0, 0.5]);
        let state = AdamWState::new(3);
        let (out, next) = adamw_step(&theta, &ParamVector::zeros(3), &state, 0.1, 0.5).unwrap();
        for (o, t) in out.values().iter().zip(theta.values()) {
            assert_eq!(*o, 0.95 * t);
        }
        assert!(next.m.iter().chain(&next.v).all(|&x| x == 0.0));
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn adamw_first_step_is_sign_descent() {
        let (out, next) =
            adamw_step(&pv(&[0.0]), &pv(&[1.0]), &AdamWState::new(1), 0.001, 0.0).unwrap();
        assert_relative_eq!(out.values()[0], -0.000999999990, epsilon = 1e-15);
        assert_relative_eq!(next.m[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(next.v[0], 0.001, epsilon = 1e-15);
    }

    #[test]
    fn adamw_decay_stays_out_of_moments() {
        let theta = pv(&[2.0, -1.0]);
        let g = pv(&[0.3, 0.7]);
        let (_, a) = adamw_step(&theta, &g, &AdamWState::new(2), 0.01, 0.0).unwrap();
        let (_, b) = adamw_step(&theta, &g, &AdamWState::new(2), 0.01, 5.0).unwrap();
        assert_eq!(a.m, b.m);
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn adamw_step_counter_overflow() {
        let mut state = AdamWState::<f64>::new(1);
        state.step_count = u64::MAX;
        let err = adamw_step(&pv(&[1.0]), &pv(&[1.0]), &state, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::StepOverflow));
    }

    #[test]
    fn noiseless_manifold_series() {
        let h = SgdHyper::new(0.1, 0.5, 0.0).unwrap();
        let traj = simulate_on_manifold(10, 100.0, &h, 3, 1).unwrap();
        let expect = [100.0, 81.0, 65.61, 53.1441];
        for (v, e) in traj.v_series.iter().zip(expect) {
            assert_relative_eq!(*v, e, max_relative = 1e-13);
        }
    }

    #[test]
    fn manifold_rejects_non_positive_contraction() {
        let h = SgdHyper::new(1.0, 0.5, 0.0).unwrap();
        assert!(matches!(
            simulate_on_manifold(3, 1.0, &h, 5, 0),
            Err(Error::NonPositiveContraction(_))
        ));
    }

    #[test]
    fn manifold_diverges_loudly() {
        // Negative lambda is rejected, so drive divergence through noise.
        let h = SgdHyper::new(1.0, 0.0, 1e7).unwrap();
        assert!(matches!(
            simulate_on_manifold(1, 1.0, &h, 10, 0),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn closed_form_examples() {
        let h = SgdHyper::new(0.1, 0.5, 0.0).unwrap();
        assert_relative_eq!(closed_form_mean_v(1, 100.0, &h).unwrap(), 81.0, epsilon = 1e-12);
        let noisy = SgdHyper::new(0.1, 0.5, 1.0).unwrap();
        let floor = stationary_floor(&noisy).unwrap();
        assert_relative_eq!(floor, 0.01 / 0.19, epsilon = 1e-15);
        assert_relative_eq!(
            closed_form_mean_v(5000, 100.0, &noisy).unwrap(),
            floor,
            epsilon = 1e-12
        );
        assert_eq!(closed_form_mean_v(0, 42.0, &noisy).unwrap(), 42.0);
        let no_decay = SgdHyper::new(0.1, 0.0, 1.0).unwrap();
        assert!(matches!(
            closed_form_mean_v(3, 1.0, &no_decay),
            Err(Error::NoStationaryFloor)
        ));
    }

    proptest! {
        #[test]
        fn zero_gradient_sgd_is_exact_scaling(
            theta in prop::collection::vec(-10.0f64..10.0, 1..8),
            eta in 1e-4f64..0.5,
            lambda in 0.0f64..0.9,
        ) {
            let h = SgdHyper::new(eta, lambda, 0.0).unwrap();
            let t = ParamVector::new(theta.clone()).unwrap();
            let z = ParamVector::zeros(theta.len());
            let out = sgd_step(&t, &z, &h, &z).unwrap();
            let c = 1.0 - 2.0 * eta * lambda;
            for (o, x) in out.values().iter().zip(&theta) {
                prop_assert!((o - c * x).abs() <= 1e-12 * x.abs().max(1.0));
            }
            let ratio = out.squared_norm() / t.squared_norm().max(1e-300);
            if t.squared_norm() > 1e-12 {
                prop_assert!((ratio - c * c).abs() < 1e-10);
            }
        }

        #[test]
        fn memorisation_points_are_not_stationary(
            theta in prop::collection::vec(-10.0f64..10.0, 1..8),
            lambda in 1e-3f64..2.0,
        ) {
            prop_assume!(theta.iter().any(|&x| x.abs() > 1e-6));
            let h = SgdHyper::new(0.01, lambda, 0.0).unwrap();
            let t = ParamVector::new(theta.clone()).unwrap();
            let z = ParamVector::zeros(theta.len());
            prop_assert_ne!(sgd_step(&t, &z, &h, &z).unwrap(), t);
        }

        #[test]
        fn noiseless_norm_dynamics_ignore_dim(dim in 1usize..50, seed in any::<u64>()) {
            let h = SgdHyper::new(0.01f64, 1.0, 0.0).unwrap();
            let a = simulate_on_manifold(dim, 500.0, &h, 40, seed).unwrap();
            let b = simulate_on_manifold(1, 500.0, &h, 40, seed ^ 1).unwrap();
            for (x, y) in a.v_series.iter().zip(&b.v_series) {
                prop_assert!((x - y).abs() <= 1e-10 * y);
            }
        }
    }
}
