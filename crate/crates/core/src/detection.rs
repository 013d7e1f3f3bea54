//! Sequential confirmation of a validation-loss gap.
//!
//! Increments `X_t ∈ [0, M]` with mean at least `Δ_min` are summed until the
//! running total crosses `γ = ln(p/δ)`. The stopping time obeys
//! `γ/Δ_min ≤ E[τ] ≤ 2γ/Δ_min + 8M²·ln(1/δ)/Δ_min²`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Paths longer than this are treated as a non-terminating law.
const MAX_PATH: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    pub delta_min: f64,
    pub m_bound: f64,
    pub p: usize,
    pub delta: f64,
    pub gamma_thresh: f64,
}

impl DetectionSpec {
    pub fn new(delta_min: f64, m_bound: f64, p: usize, delta: f64) -> Result<Self> {
        if !(delta_min > 0.0) {
            return Err(Error::invalid("delta_min", "must be > 0"));
        }
        if !(m_bound >= delta_min) || !m_bound.is_finite() {
            return Err(Error::invalid("m_bound", "must be finite and ≥ delta_min"));
        }
        if p == 0 {
            return Err(Error::invalid("p", "must be ≥ 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        Ok(Self {
            delta_min,
            m_bound,
            p,
            delta,
            gamma_thresh: gamma_threshold(p, delta),
        })
    }
}

/// `ln(p/δ)`.
pub fn gamma_threshold(p: usize, delta: f64) -> f64 {
    (p as f64 / delta).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBounds {
    pub lower: f64,
    pub upper: f64,
}

pub fn detection_bounds(spec: &DetectionSpec) -> DetectionBounds {
    let (g, d, m) = (spec.gamma_thresh, spec.delta_min, spec.m_bound);
    DetectionBounds {
        lower: g / d,
        upper: 2.0 * g / d + 8.0 * m * m * (1.0 / spec.delta).ln() / (d * d),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum IncrementLaw {
    /// Every increment equals `value`.
    Constant { value: f64 },
    /// `M·Bernoulli(Δ_min/M)`: mean exactly `Δ_min`, mass only at the ends.
    BernoulliScaled,
    /// `clamp(N(μ, σ²), 0, M)` with `μ` solved so the clipped mean is `Δ_min`.
    ClippedGaussian { sigma: f64 },
}

enum Sampler {
    Constant(f64),
    Bernoulli { prob: f64, m: f64 },
    Clipped { normal: Normal<f64>, m: f64 },
}

impl Sampler {
    fn draw(&self, r: &mut rng::Rng) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Bernoulli { prob, m } => {
                if r.random::<f64>() < *prob {
                    *m
                } else {
                    0.0
                }
            }
            Sampler::Clipped { normal, m } => normal.sample(r).clamp(0.0, *m),
        }
    }
}

/// Mean of `clamp(N(mu, sigma²), 0, m)`.
pub fn clipped_gaussian_mean(mu: f64, sigma: f64, m: f64) -> f64 {
    let n = StdNormal::standard();
    let a = -mu / sigma;
    let b = (m - mu) / sigma;
    mu * (n.cdf(b) - n.cdf(a)) + sigma * (n.pdf(a) - n.pdf(b)) + m * (1.0 - n.cdf(b))
}

/// Location whose clipped mean equals `target`, by bisection.
pub fn clipped_gaussian_location(target: f64, sigma: f64, m: f64) -> f64 {
    let (mut lo, mut hi) = (-m - 40.0 * sigma, 2.0 * m + 40.0 * sigma);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_gaussian_mean(mid, sigma, m) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl IncrementLaw {
    fn sampler(&self, spec: &DetectionSpec) -> Result<Sampler> {
        let m = spec.m_bound;
        let bad = |reason: &str| Error::IncrementLaw {
            m_bound: m,
            reason: reason.to_string(),
        };
        match *self {
            IncrementLaw::Constant { value } => {
                if !(0.0..=m).contains(&value) {
                    return Err(bad("constant outside the support"));
                }
                if value < spec.delta_min {
                    return Err(bad("mean below delta_min"));
                }
                Ok(Sampler::Constant(value))
            }
            IncrementLaw::BernoulliScaled => Ok(Sampler::Bernoulli {
                prob: spec.delta_min / m,
                m,
            }),
            IncrementLaw::ClippedGaussian { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(bad("sigma must be positive"));
                }
                if spec.delta_min >= m {
                    return Err(bad("clipped law needs delta_min < m_bound"));
                }
                let mu = clipped_gaussian_location(spec.delta_min, sigma, m);
                let normal = Normal::new(mu, sigma).map_err(|e| bad(&e.to_string()))?;
                Ok(Sampler::Clipped { normal, m })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEstimate {
    pub mean_tau: f64,
    pub stderr: f64,
    pub n_mc: usize,
}

/// Monte-Carlo estimate of `E[τ]`, `τ = inf{t ≥ 1 : S_t ≥ γ}`.
pub fn simulate_detection(spec: &DetectionSpec, law: IncrementLaw, n_mc: usize, seed: u64) -> Result<DetectionEstimate> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be ≥ 1"));
    }
    let sampler = law.sampler(spec)?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n_mc {
        let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
        let mut s = 0.0;
        let mut t = 0u64;
        loop {
            t += 1;
            s += sampler.draw(&mut r);
            if s >= spec.gamma_thresh {
                break;
            }
            if t >= MAX_PATH {
                return Err(Error::IncrementLaw {
                    m_bound: spec.m_bound,
                    reason: "path did not cross the threshold".into(),
                });
            }
        }
        let tf = t as f64;
        sum += tf;
        sum_sq += tf * tf;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = if n_mc > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(DetectionEstimate {
        mean_tau: mean,
        stderr: (var / n).sqrt(),
        n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_bounds() {
        let s = DetectionSpec::new(0.5, 1.0, 97, 0.05).unwrap();
        assert!((s.gamma_thresh - 1940f64.ln()).abs() < 1e-15);
        let b = detection_bounds(&s);
        assert!((b.lower - 15.1408).abs() < 1e-3, "{b:?}");
        assert!((b.upper - 126.14).abs() < 1e-2, "{b:?}");
    }

    #[test]
    fn boundary_delta_equals_m() {
        let s = DetectionSpec::new(2.0, 2.0, 11, 0.1).unwrap();
        assert_eq!(detection_bounds(&s).lower, s.gamma_thresh / 2.0);
    }

    #[test]
    fn constant_law_is_deterministic() {
        let s = DetectionSpec::new(0.5, 1.0, 97, 0.05).unwrap();
        let e = simulate_detection(&s, IncrementLaw::Constant { value: 0.5 }, 100, 0).unwrap();
        assert_eq!(e.mean_tau, (s.gamma_thresh / 0.5).ceil());
        assert_eq!(e.stderr, 0.0);
        let big = DetectionSpec::new(10.0, 10.0, 2, 0.5).unwrap();
        let e = simulate_detection(&big, IncrementLaw::Constant { value: 10.0 }, 10, 0).unwrap();
        assert_eq!(e.mean_tau, 1.0);
    }

    #[test]
    fn clipped_mean_is_solved() {
        let mu = clipped_gaussian_location(0.3, 0.5, 1.0);
        assert!((clipped_gaussian_mean(mu, 0.5, 1.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn support_violations() {
        let s = DetectionSpec::new(0.5, 1.0, 97, 0.05).unwrap();
        assert!(matches!(
            simulate_detection(&s, IncrementLaw::Constant { value: 1.5 }, 10, 0),
            Err(Error::IncrementLaw { .. })
        ));
        assert!(simulate_detection(&s, IncrementLaw::Constant { value: 0.2 }, 10, 0).is_err());
        assert!(DetectionSpec::new(2.0, 1.0, 97, 0.05).is_err());
    }
}
