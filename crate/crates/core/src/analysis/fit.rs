//! Offset-exponential fits and escape-time formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const GRID_POINTS: usize = 200;
const MIN_POINTS: usize = 8;

/// `V_t ≈ a·rho^t + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub rho: f64,
    pub c: f64,
    pub r2: f64,
    pub gamma_fit: f64,
}

impl FitResult {
    fn new(a: f64, rho: f64, c: f64, r2: f64) -> Self {
        Self {
            a,
            rho,
            c,
            r2,
            gamma_fit: 1.0 - rho,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.a * self.rho.powf(t) + self.c
    }
}

/// Fits a series sampled at `t = 0, 1, 2, ...`.
pub fn fit_exponential(series: &[f64]) -> Result<FitResult> {
    let times: Vec<f64> = (0..series.len()).map(|t| t as f64).collect();
    fit_exponential_sampled(&times, series)
}

#[derive(Clone, Copy)]
struct Candidate {
    a: f64,
    rho: f64,
    c: f64,
    sse: f64,
}

fn sse(t: &[f64], v: &[f64], a: f64, rho: f64, c: f64) -> f64 {
    t.iter()
        .zip(v)
        .map(|(&t, &v)| {
            let r = v - (a * rho.powf(t) + c);
            r * r
        })
        .sum()
}

/// Log-linear fit of `ln(v - c)` against `t`, scored on the original scale.
fn profile(t: &[f64], v: &[f64], c: f64) -> Option<Candidate> {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&ti, &vi) in t.iter().zip(v) {
        let r = vi - c;
        if r > 0.0 {
            let y = r.ln();
            n += 1.0;
            sx += ti;
            sy += y;
            sxx += ti * ti;
            sxy += ti * y;
        }
    }
    if n < 3.0 {
        return None;
    }
    let det = n * sxx - sx * sx;
    if det <= 0.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / det;
    let icpt = (sy - slope * sx) / n;
    let (a, rho) = (icpt.exp(), slope.exp());
    if !(a.is_finite() && rho.is_finite()) {
        return None;
    }
    Some(Candidate {
        a,
        rho,
        c,
        sse: sse(t, v, a, rho, c),
    })
}

/// Damped Gauss-Newton on all three parameters from a profiled start.
fn polish(t: &[f64], v: &[f64], start: Candidate) -> Candidate {
    let mut cur = start;
    let mut mu = 1e-3;
    for _ in 0..100 {
        let mut jtj = [0.0; 9];
        let mut jtr = [0.0; 3];
        for (&ti, &vi) in t.iter().zip(v) {
            let pw = cur.rho.powf(ti);
            let dr = if ti == 0.0 { 0.0 } else { cur.a * ti * cur.rho.powf(ti - 1.0) };
            let j = [pw, dr, 1.0];
            let r = vi - (cur.a * pw + cur.c);
            for i in 0..3 {
                jtr[i] += j[i] * r;
                for k in 0..3 {
                    jtj[i * 3 + k] += j[i] * j[k];
                }
            }
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[i * 4] *= 1.0 + mu;
            }
            let Ok(step) = linalg::solve(&damped, 3, &jtr, 1) else {
                mu *= 10.0;
                continue;
            };
            let (a, rho, c) = (cur.a + step[0], cur.rho + step[1], cur.c + step[2]);
            if rho > 0.0 && rho < 1.0 && a.is_finite() {
                let s = sse(t, v, a, rho, c);
                if s < cur.sse {
                    let rel = (cur.sse - s) / cur.sse.max(f64::MIN_POSITIVE);
                    cur = Candidate { a, rho, c, sse: s };
                    mu = (mu * 0.3).max(1e-12);
                    improved = rel > 1e-15;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    cur
}

/// Fits `v ≈ a·rho^t + c` at arbitrary sample times.
///
/// The offset is profiled out: a 200-point grid over `[0, 1.05·min v)` with a
/// log-linear fit at each offset, golden-section refinement around the best
/// grid cell, then a damped Gauss-Newton polish that is kept only if it
/// lowers the residual sum of squares.
pub fn fit_exponential_sampled(times: &[f64], values: &[f64]) -> Result<FitResult> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "fit times vs values",
            expected: times.len(),
            got: values.len(),
        });
    }
    if values.len() < MIN_POINTS {
        return Err(Error::invalid("series", format!("need at least {MIN_POINTS} points")));
    }
    if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("series", format!("value at {i} is not positive and finite")));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sst: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst <= 1e-24 * mean * mean * values.len() as f64 {
        return Err(Error::Unidentifiable("constant series"));
    }
    // fit in shifted time so rho^t stays well scaled
    let t0 = times.iter().copied().fold(f64::INFINITY, f64::min);
    let t: Vec<f64> = times.iter().map(|x| x - t0).collect();

    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = 1.05 * vmin;
    let step = hi / GRID_POINTS as f64;
    let mut best: Option<(usize, Candidate)> = None;
    for i in 0..GRID_POINTS {
        if let Some(cand) = profile(&t, values, i as f64 * step) {
            if best.is_none_or(|(_, b)| cand.sse < b.sse) {
                best = Some((i, cand));
            }
        }
    }
    let (idx, grid_best) = best.ok_or(Error::OffsetExhaustsSignal)?;

    let score = |c: f64| profile(&t, values, c).map_or(f64::INFINITY, |k| k.sse);
    let (mut lo, mut up) = (idx.saturating_sub(1) as f64 * step, ((idx + 1) as f64 * step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = up - g * (up - lo);
    let mut x2 = lo + g * (up - lo);
    let (mut f1, mut f2) = (score(x1), score(x2));
    while up - lo > 1e-6 * vmin.max(1e-300) * 1e-3 {
        if f1 <= f2 {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - g * (up - lo);
            f1 = score(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (up - lo);
            f2 = score(x2);
        }
    }
    let mut cand = grid_best;
    if let Some(k) = profile(&t, values, 0.5 * (lo + up)) {
        if k.sse <= cand.sse {
            cand = k;
        }
    }
    let polished = polish(&t, values, cand);
    if polished.sse < cand.sse {
        cand = polished;
    }
    if !(cand.rho > 0.0 && cand.rho < 1.0) {
        return Err(Error::Unidentifiable("decay base outside (0, 1)"));
    }
    // undo the time shift: a·rho^(t - t0) = (a·rho^-t0)·rho^t
    let a = cand.a * cand.rho.powf(-t0);
    let r2 = 1.0 - cand.sse / sst;
    Ok(FitResult::new(a, cand.rho, cand.c, r2))
}

/// `(1/gamma)·ln(v_mem/v_post)`; negative when no escape is needed.
pub fn predict_escape(gamma: f64, v_mem: f64, v_post: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma", "must be > 0"));
    }
    if !(v_mem > 0.0) {
        return Err(Error::invalid("v_mem", "must be > 0"));
    }
    if !(v_post > 0.0) {
        return Err(Error::invalid("v_post", "must be > 0"));
    }
    Ok((v_mem / v_post).ln() / gamma)
}

/// Escape-time sandwich for the decayed-plus-noise norm recursion.
///
/// `lower = ln(v0/v_post)/(4ηλ)` and
/// `upper = ln((v0 - V∞)/(v_post - V∞))/(ηλ)` with `V∞ = ησ²/λ`.
pub fn escape_bounds(eta: f64, lambda: f64, v0: f64, v_post: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", "must be > 0"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be > 0"));
    }
    let el = eta * lambda;
    if el >= 0.25 {
        return Err(Error::invalid("eta*lambda", "must be < 1/4"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma", "must be ≥ 0"));
    }
    let v_inf = eta * sigma * sigma / lambda;
    if !(v_post > v_inf) {
        return Err(Error::invalid("v_post", "must exceed the noise floor"));
    }
    if !(v0 > v_post) {
        return Err(Error::invalid("v0", "must exceed v_post"));
    }
    let lower = (v0 / v_post).ln() / (4.0 * el);
    let upper = ((v0 - v_inf) / (v_post - v_inf)).ln() / el;
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery() {
        let v: Vec<f64> = (0..=50).map(|t| 5.0 * 0.9f64.powi(t) + 1.0).collect();
        let f = fit_exponential(&v).unwrap();
        assert!((f.a - 5.0).abs() < 1e-6, "{f:?}");
        assert!((f.rho - 0.9).abs() < 1e-6);
        assert!((f.c - 1.0).abs() < 1e-6);
        assert!(f.r2 >= 1.0 - 1e-9);
        assert_eq!(f.gamma_fit, 1.0 - f.rho);
    }

    #[test]
    fn shifted_times_report_absolute_amplitude() {
        let t: Vec<f64> = (100..140).map(|x| x as f64).collect();
        let v: Vec<f64> = t.iter().map(|&x| 7.0 * 0.95f64.powf(x) + 0.5).collect();
        let f = fit_exponential_sampled(&t, &v).unwrap();
        assert!((f.rho - 0.95).abs() < 1e-8);
        assert!((f.a / 7.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_is_unidentifiable() {
        assert!(matches!(fit_exponential(&[3.0; 20]), Err(Error::Unidentifiable(_))));
        assert!(fit_exponential(&[1.0; 5]).is_err());
    }

    #[test]
    fn predict_examples() {
        assert!((predict_escape(0.001, 4000.0, 300.0).unwrap() - 2590.27).abs() < 0.01);
        assert_eq!(predict_escape(0.1, 5.0, 5.0).unwrap(), 0.0);
        assert!(predict_escape(0.1, 0.0, 5.0).is_err());
    }

    #[test]
    fn bounds_examples() {
        let (lo, hi) = escape_bounds(1e-3, 1.0, 4000.0, 300.0, 0.0).unwrap();
        assert!((lo - 647.57).abs() < 0.01, "{lo}");
        assert!((hi - 2590.27).abs() < 0.01, "{hi}");
        // V∞ = 100
        let (_, hi2) = escape_bounds(1e-3, 1.0, 4000.0, 300.0, 1e5f64.sqrt()).unwrap();
        assert!(hi2 > hi);
        assert!(escape_bounds(1e-3, 1.0, 200.0, 300.0, 0.0).is_err());
        assert!(escape_bounds(0.5, 1.0, 4000.0, 300.0, 0.0).is_err());
    }
}
