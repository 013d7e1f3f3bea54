//! Fourier analysis over `Z_p`.
//!
//! The model spectrum is taken over the full `p x p` input grid and the `p`
//! output channels at once. Modular addition lives on the matched triples
//! `(k, k, k)` of the 3-D transform, so only those are credited to frequency
//! `k`; every other coefficient is leakage and counts as non-Fourier energy.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::ModularLogits;
use crate::scalar::Scalar;

/// `f̂(k) = (1/p) Σ_x f(x) e^{-2πi kx/p}`, by direct summation.
pub fn dft_zp<T: Scalar>(values: &[Complex<T>]) -> Vec<Complex<T>> {
    let p = values.len();
    if p == 0 {
        return Vec::new();
    }
    let pf = T::from_usize_lossy(p);
    let tau = T::TAU();
    // twiddles indexed by (k x) mod p keep the phase argument small
    let twiddle: Vec<Complex<T>> = (0..p)
        .map(|j| Complex::from_polar(T::one(), -tau * T::from_usize_lossy(j) / pf))
        .collect();
    (0..p)
        .map(|k| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (x, v) in values.iter().enumerate() {
                acc = acc + *v * twiddle[(k * x) % p];
            }
            acc / pf
        })
        .collect()
}

/// Real-input convenience wrapper around [`dft_zp`].
pub fn dft_real<T: Scalar>(values: &[T]) -> Vec<Complex<T>> {
    let c: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
    dft_zp(&c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub p: usize,
    /// Energy of the matched coefficient at each frequency.
    pub energy: Vec<f64>,
    /// Energy of every coefficient, matched or not.
    pub total: f64,
    /// `total - Σ energy`: the part no frequency can claim.
    pub leak: f64,
    pub support: Option<Vec<usize>>,
    pub r_value: Option<f64>,
}

#[derive(Serialize)]
struct SpectrumSidecar<'a> {
    p: usize,
    support: &'a Option<Vec<usize>>,
    r_value: Option<f64>,
    total: f64,
    leak: f64,
}

impl SpectrumReport {
    /// Non-Fourier energy share outside `support`, clamped to `[0, 1]`.
    pub fn r_for(&self, support: &[usize]) -> f64 {
        let kept: f64 = support.iter().filter(|&&k| k < self.p).map(|&k| self.energy[k]).sum();
        ((self.total - kept) / self.total).clamp(0.0, 1.0)
    }

    pub fn with_support(mut self, support: Vec<usize>) -> Self {
        self.r_value = Some(self.r_for(&support));
        self.support = Some(support);
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "energy"])?;
        for (k, e) in self.energy.iter().enumerate() {
            out.write_record([k.to_string(), format!("{e:.16e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(file).map_err(|e| Error::Csv {
            path: csv_path.clone(),
            source: e,
        })?;
        let json_path = dir.join(format!("{stem}.json"));
        let sidecar = SpectrumSidecar {
            p: self.p,
            support: &self.support,
            r_value: self.r_value,
            total: self.total,
            leak: self.leak,
        };
        let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Json {
            path: json_path.clone(),
            source: e,
        })?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

/// Spectrum of a logit grid laid out as `[(a * p + b) * p + c]`.
///
/// Logits are centred over the output channel first, since a per-input
/// offset leaves the softmax unchanged.
pub fn logit_spectrum(p: usize, grid: &[f64]) -> Result<SpectrumReport> {
    if p < 2 {
        return Err(Error::invalid("p", "must be ≥ 2"));
    }
    if grid.len() != p * p * p {
        return Err(Error::DimensionMismatch {
            what: "logit grid",
            expected: p * p * p,
            got: grid.len(),
        });
    }
    let p3 = (p * p * p) as f64;
    let mut total = 0.0;
    // g[s] accumulates logits over the level set a + b - c ≡ s.
    let mut g = vec![0.0; p];
    for a in 0..p {
        for b in 0..p {
            let row = &grid[(a * p + b) * p..(a * p + b + 1) * p];
            let mean = row.iter().sum::<f64>() / p as f64;
            for (c, &z) in row.iter().enumerate() {
                let zc = z - mean;
                total += zc * zc;
                g[(a + b + p - c) % p] += zc;
            }
        }
    }
    total /= p3;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateSpectrum);
    }
    let p2 = (p * p) as f64;
    let energy: Vec<f64> = dft_real(&g).iter().map(|c| (c / p2).norm_sqr()).collect();
    let matched: f64 = energy.iter().sum();
    Ok(SpectrumReport {
        p,
        energy,
        total,
        leak: (total - matched).max(0.0),
        support: None,
        r_value: None,
    })
}

/// Spectrum of anything with modular logits; support is left unset.
pub fn model_spectrum<M: ModularLogits + ?Sized>(model: &M) -> Result<SpectrumReport> {
    let p = model.modulus();
    if !(2..=crate::models::dataset::MAX_MODULUS).contains(&p) {
        return Err(Error::invalid("p", "modulus out of range"));
    }
    logit_spectrum(p, &model.logit_grid()?)
}

/// Smallest frequency set reaching `coverage` of the averaged matched energy.
///
/// Each spectrum is normalised to unit matched energy before averaging, so
/// late checkpoints with larger logits do not dominate.
pub fn select_support(spectra: &[SpectrumReport], coverage: f64) -> Result<Vec<usize>> {
    let first = spectra.first().ok_or(Error::EmptyInput("spectra"))?;
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::invalid("coverage", "must lie in (0, 1)"));
    }
    let p = first.p;
    let mut mean = vec![0.0; p];
    let mut used = 0usize;
    for s in spectra {
        if s.p != p {
            return Err(Error::DimensionMismatch {
                what: "spectrum modulus",
                expected: p,
                got: s.p,
            });
        }
        let sum: f64 = s.energy.iter().sum();
        if sum > 0.0 {
            for (m, e) in mean.iter_mut().zip(&s.energy) {
                *m += e / sum;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::DegenerateSpectrum);
    }
    let total: f64 = mean.iter().sum();
    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps the lower index first among equal energies
    order.sort_by(|&i, &j| mean[j].partial_cmp(&mean[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut support = Vec::new();
    let mut cum = 0.0;
    for k in order {
        support.push(k);
        cum += mean[k] / total;
        if cum >= coverage - 1e-12 {
            break;
        }
    }
    support.sort_unstable();
    Ok(support)
}

/// Real quadratic form with `θᵀQθ = Σ_{k∉κ} |f̂_θ(k)|²` for the linear model
/// `f_θ(x) = ⟨θ, Φ(x)⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QForm {
    pub d: usize,
    pub q_matrix: Vec<f64>,
    pub kappa: Vec<usize>,
    pub feature_map_id: String,
}

/// Character projections `φ_k = (1/p) Σ_x χ_k(x) Φ(x)` as `(re, im)` rows.
pub fn character_features(feature_map: &[f64], p: usize, d: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if d == 0 || feature_map.len() != p * d {
        return Err(Error::DimensionMismatch {
            what: "feature map",
            expected: p * d.max(1),
            got: feature_map.len(),
        });
    }
    let pf = p as f64;
    Ok((0..p)
        .map(|k| {
            let mut re = vec![0.0; d];
            let mut im = vec![0.0; d];
            for x in 0..p {
                let phase = -std::f64::consts::TAU * ((k * x) % p) as f64 / pf;
                let (s, c) = phase.sin_cos();
                for j in 0..d {
                    re[j] += c * feature_map[x * d + j] / pf;
                    im[j] += s * feature_map[x * d + j] / pf;
                }
            }
            (re, im)
        })
        .collect())
}

pub fn build_q_form(feature_map: &[f64], p: usize, d: usize, kappa: &[usize], feature_map_id: &str) -> Result<QForm> {
    let phi = character_features(feature_map, p, d)?;
    let keep: BTreeSet<usize> = kappa.iter().copied().collect();
    let mut q = vec![0.0; d * d];
    for (k, (re, im)) in phi.iter().enumerate() {
        if keep.contains(&k) {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                q[i * d + j] += re[i] * re[j] + im[i] * im[j];
            }
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..d {
        for j in i + 1..d {
            let m = 0.5 * (q[i * d + j] + q[j * d + i]);
            q[i * d + j] = m;
            q[j * d + i] = m;
        }
    }
    Ok(QForm {
        d,
        q_matrix: q,
        kappa: keep.into_iter().collect(),
        feature_map_id: feature_map_id.to_string(),
    })
}

pub fn q_form_energy(theta: &[f64], q: &QForm) -> Result<f64> {
    if theta.len() != q.d {
        return Err(Error::DimensionMismatch {
            what: "theta vs Q",
            expected: q.d,
            got: theta.len(),
        });
    }
    let mut acc = 0.0;
    for (i, &ti) in theta.iter().enumerate() {
        let row = &q.q_matrix[i * q.d..(i + 1) * q.d];
        acc += ti * row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianFloor {
    pub min_eig: f64,
    pub floor: f64,
    pub ok: bool,
}

/// Smallest curvature of the softmax cross-entropy in logit space, restricted
/// to directions orthogonal to the all-ones vector, against `e^{-2B}/p`.
pub fn softmax_hessian_floor(z: &[f64], b_bound: f64) -> Result<HessianFloor> {
    let p = z.len();
    if p < 2 {
        return Err(Error::invalid("z", "need at least two logits"));
    }
    if !(b_bound >= 0.0) {
        return Err(Error::invalid("b_bound", "must be ≥ 0"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite() || v.abs() > b_bound * (1.0 + 1e-12)) {
        return Err(Error::invalid("z", format!("|z[{i}]| exceeds bound {b_bound}")));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = ex.iter().sum();
    let q: Vec<f64> = ex.iter().map(|e| e / s).collect();
    // H·1 = 0, so lifting the ones direction to eigenvalue 2 (> any
    // eigenvalue of H) leaves the smallest eigenvalue on its complement.
    let lift = 2.0 / p as f64;
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            let diag = if i == j { q[i] } else { 0.0 };
            h[i * p + j] = diag - q[i] * q[j] + lift;
        }
    }
    let eig = linalg::symmetric_eigenvalues(&h, p)?;
    let min_eig = eig[0];
    let floor = (-2.0 * b_bound).exp() / p as f64;
    Ok(HessianFloor {
        min_eig,
        floor,
        ok: min_eig >= floor - 1e-12,
    })
}
