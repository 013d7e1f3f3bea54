//! Line fits: ordinary least squares, percentile bootstrap, RANSAC.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub inlier_mask: Option<Vec<bool>>,
    pub inlier_r2: Option<f64>,
}

fn check_xy(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "regression x vs y",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min_n {
        return Err(Error::invalid("n", format!("need at least {min_n} points")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("data", "non-finite value"));
    }
    Ok(())
}

/// `(slope, intercept, r2)` without input validation beyond degenerate `x`.
fn line(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 1e-300) || sxx <= 1e-24 * x.iter().map(|v| v * v).sum::<f64>() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let r = yi - (slope * xi + intercept);
                r * r
            })
            .sum();
        (1.0 - sse / syy).min(1.0)
    } else {
        // constant y: slope is exactly zero and R² is defined as 0
        0.0
    };
    Some((slope, intercept, r2))
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    check_xy(x, y, 3)?;
    let (slope, intercept, r2) = line(x, y).ok_or(Error::DegenerateX)?;
    Ok(RegressionResult {
        slope,
        intercept,
        r2,
        n: x.len(),
        ci_low: None,
        ci_high: None,
        inlier_mask: None,
        inlier_r2: None,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Percentile CI for the OLS slope from `n_boot` case resamples.
///
/// Resample `i` draws from its own derived seed, so the interval does not
/// depend on evaluation order. Resamples with constant `x` are redrawn.
pub fn bootstrap_slope_ci(x: &[f64], y: &[f64], n_boot: usize, alpha: f64, seed: u64) -> Result<(f64, f64)> {
    check_xy(x, y, 5)?;
    if n_boot < 100 {
        return Err(Error::invalid("n_boot", "must be ≥ 100"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    line(x, y).ok_or(Error::DegenerateX)?;
    let n = x.len();
    let mut slopes = Vec::with_capacity(n_boot);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n_boot {
        let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
        loop {
            for j in 0..n {
                let k = r.random_range(0..n);
                bx[j] = x[k];
                by[j] = y[k];
            }
            if let Some((s, _, _)) = line(&bx, &by) {
                slopes.push(s);
                break;
            }
        }
    }
    slopes.sort_by(f64::total_cmp);
    Ok((quantile(&slopes, alpha / 2.0), quantile(&slopes, 1.0 - alpha / 2.0)))
}

/// OLS plus a bootstrap CI on the slope.
pub fn ols_with_ci(x: &[f64], y: &[f64], n_boot: usize, alpha: f64, seed: u64) -> Result<RegressionResult> {
    let mut fit = ols_fit(x, y)?;
    if x.len() >= 5 {
        let (lo, hi) = bootstrap_slope_ci(x, y, n_boot, alpha, seed)?;
        fit.ci_low = Some(lo);
        fit.ci_high = Some(hi);
    }
    Ok(fit)
}

/// RANSAC line fit from two-point samples, refit by OLS on the best consensus set.
pub fn ransac_fit(
    x: &[f64],
    y: &[f64],
    n_iters: usize,
    inlier_tol: f64,
    min_inlier_frac: f64,
    seed: u64,
) -> Result<RegressionResult> {
    check_xy(x, y, 5)?;
    if !(inlier_tol > 0.0) {
        return Err(Error::invalid("inlier_tol", "must be > 0"));
    }
    if n_iters == 0 {
        return Err(Error::invalid("n_iters", "must be ≥ 1"));
    }
    let n = x.len();
    let required = (min_inlier_frac * n as f64).ceil() as usize;
    let mut r = rng::seeded(seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..n_iters {
        let pick = index::sample(&mut r, n, 2);
        let (i, j) = (pick.index(0), pick.index(1));
        if x[i] == x[j] {
            continue;
        }
        let slope = (y[j] - y[i]) / (x[j] - x[i]);
        let icpt = y[i] - slope * x[i];
        let mut mask = vec![false; n];
        let mut count = 0;
        let mut err = 0.0;
        for k in 0..n {
            let res = (y[k] - (slope * x[k] + icpt)).abs();
            if res <= inlier_tol {
                mask[k] = true;
                count += 1;
                err += res * res;
            }
        }
        let better = match &best {
            None => true,
            Some((c, e, _)) => count > *c || (count == *c && err < *e),
        };
        if better {
            best = Some((count, err, mask));
        }
    }
    let (count, _, mask) = best.unwrap_or((0, 0.0, vec![false; n]));
    if count < required.max(2) {
        return Err(Error::NoConsensus {
            best: count as f64 / n as f64,
            required: min_inlier_frac,
        });
    }
    let (ix, iy): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a, b))
        .unzip();
    let (slope, intercept, inlier_r2) = line(&ix, &iy).ok_or(Error::DegenerateX)?;
    let full = line(x, y).map_or(0.0, |_| {
        let my = y.iter().sum::<f64>() / n as f64;
        let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| (b - slope * a - intercept).powi(2))
            .sum();
        if syy > 0.0 {
            1.0 - sse / syy
        } else {
            0.0
        }
    });
    Ok(RegressionResult {
        slope,
        intercept,
        r2: full,
        n,
        ci_low: None,
        ci_high: None,
        inlier_mask: Some(mask),
        inlier_r2: Some(inlier_r2),
    })
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_xy(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = ols_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_y_has_zero_r2() {
        let f = ols_fit(&[1.0, 2.0, 3.0], &[4.0; 3]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r2, 0.0);
        assert!(matches!(ols_fit(&[2.0; 4], &[1.0, 2.0, 3.0, 4.0]), Err(Error::DegenerateX)));
    }

    #[test]
    fn noiseless_bootstrap_collapses() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let (lo, hi) = bootstrap_slope_ci(&x, &y, 200, 0.05, 1).unwrap();
        assert!((lo - 3.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        assert!(bootstrap_slope_ci(&x, &y, 50, 0.05, 1).is_err());
    }

    #[test]
    fn ransac_matches_ols_without_outliers() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + 2.0).collect();
        let r = ransac_fit(&x, &y, 50, 1e-6, 0.5, 3).unwrap();
        let o = ols_fit(&x, &y).unwrap();
        assert!((r.slope - o.slope).abs() < 1e-9);
        assert!(r.inlier_mask.unwrap().iter().all(|&m| m));
    }

    #[test]
    fn pearson_signs() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-14);
    }
}
