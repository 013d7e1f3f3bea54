//! Explicit interpolants of modular addition with known parameter norms.
//!
//! Both constructions share one bilinear family: each operand is embedded by
//! its own `d x p` table, the two embeddings are combined by a fixed pairing,
//! and a `p x d` readout produces logits. The lookup solution stores one
//! direction per sum and so pays `Θ(p)` in squared norm, while the Fourier
//! solution keeps only the frequencies in `κ` and pays `Θ(|κ|)`.
//!
//! An additive pairing `e_a + e_b` cannot interpolate the table linearly (the
//! least-squares readout fails the argmax check already at `p = 2`), which is
//! why the lookup uses a cyclic convolution instead. [`Pairing::Sum`] is kept
//! so that failure stays demonstrable.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::dataset::is_prime;
use crate::models::mlp::{forward, InputKind, Inputs, MlpModel};
use crate::scalar::Scalar;

/// Largest modulus accepted by the dense lookup solve.
pub const MAX_LOOKUP_P: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionKind {
    Lookup,
    Fourier,
}

/// How the two embedded operands are combined before the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `u + v`.
    Sum,
    /// Cyclic convolution over `Z_d`; maps `e_a, e_b` to `e_{a+b}`.
    Convolution,
    /// Complex multiplication of consecutive `(re, im)` pairs. A trailing
    /// `true` in `real_only` marks a block stored as a single real coordinate.
    ComplexProduct { real_only: Vec<bool> },
}

impl Pairing {
    fn apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Pairing::Sum => u.iter().zip(v).map(|(x, y)| x + y).collect(),
            Pairing::Convolution => {
                let d = u.len();
                let mut out = vec![0.0; d];
                for (i, &ui) in u.iter().enumerate() {
                    if ui == 0.0 {
                        continue;
                    }
                    for (j, &vj) in v.iter().enumerate() {
                        out[(i + j) % d] += ui * vj;
                    }
                }
                out
            }
            Pairing::ComplexProduct { real_only } => {
                let mut out = Vec::with_capacity(u.len());
                let mut i = 0;
                for &real in real_only {
                    if real {
                        out.push(u[i] * v[i]);
                        i += 1;
                    } else {
                        let (ur, ui, vr, vi) = (u[i], u[i + 1], v[i], v[i + 1]);
                        out.push(ur * vr - ui * vi);
                        out.push(ur * vi + ui * vr);
                        i += 2;
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstruction {
    pub kind: ConstructionKind,
    pub p: usize,
    /// Frequency set; empty for the lookup construction.
    pub kappa: Vec<usize>,
    pub d: usize,
    pub pairing: Pairing,
    /// `E_a (d x p), E_b (d x p), W (p x d)`, all row-major.
    pub params: Vec<f64>,
    pub sq_norm: f64,
}

impl LinearConstruction {
    fn embed_a(&self) -> &[f64] {
        &self.params[..self.d * self.p]
    }

    fn embed_b(&self) -> &[f64] {
        &self.params[self.d * self.p..2 * self.d * self.p]
    }

    fn readout(&self) -> &[f64] {
        &self.params[2 * self.d * self.p..]
    }

    fn column(table: &[f64], d: usize, p: usize, a: usize) -> Vec<f64> {
        (0..d).map(|r| table[r * p + a]).collect()
    }

    /// Logits for the pair `(a, b)`.
    pub fn logits(&self, a: usize, b: usize) -> Vec<f64> {
        let u = Self::column(self.embed_a(), self.d, self.p, a);
        let v = Self::column(self.embed_b(), self.d, self.p, b);
        let x = self.pairing.apply(&u, &v);
        self.readout()
            .chunks_exact(self.d)
            .map(|row| row.iter().zip(&x).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Checks that every pair's logits peak strictly at `(a + b) mod p`.
    pub fn verify_interpolation(&self) -> Result<()> {
        let p = self.p;
        for a in 0..p {
            for b in 0..p {
                let z = self.logits(a, b);
                let target = (a + b) % p;
                let scale = z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let margin = 1e-9 * scale;
                if let Some((c, _)) = z
                    .iter()
                    .enumerate()
                    .find(|&(c, &zc)| c != target && zc >= z[target] - margin)
                {
                    return Err(match self.kind {
                        ConstructionKind::Lookup => Error::LookupInfeasible(p),
                        ConstructionKind::Fourier => Error::ArgmaxTie { a: target, b: c },
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_modulus(p: usize, max: usize) -> Result<()> {
    if !(2..=max).contains(&p) {
        return Err(Error::invalid("p", format!("must lie in [2, {max}]")));
    }
    Ok(())
}

/// Lookup interpolant with identity embeddings and a least-squares readout.
pub fn build_lookup_solution(p: usize) -> Result<LinearConstruction> {
    build_lookup_with(p, Pairing::Convolution)
}

/// Lookup construction with an explicit pairing. Only
/// [`Pairing::Convolution`] interpolates; [`Pairing::Sum`] is the naive
/// additive variant and fails verification.
pub fn build_lookup_with(p: usize, pairing: Pairing) -> Result<LinearConstruction> {
    check_modulus(p, MAX_LOOKUP_P)?;
    if matches!(pairing, Pairing::ComplexProduct { .. }) {
        return Err(Error::invalid("pairing", "lookup takes sum or convolution"));
    }
    let d = p;
    let identity: Vec<f64> = (0..p * p).map(|i| if i / p == i % p { 1.0 } else { 0.0 }).collect();

    // Design rows over the p(p+1)/2 distinct unordered pairs.
    let mut xtx = vec![0.0; d * d];
    let mut xty = vec![0.0; d * p];
    for a in 0..p {
        for b in a..p {
            let ea = LinearConstruction::column(&identity, d, p, a);
            let eb = LinearConstruction::column(&identity, d, p, b);
            let x = pairing.apply(&ea, &eb);
            let label = (a + b) % p;
            for i in 0..d {
                if x[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    xtx[i * d + j] += x[i] * x[j];
                }
                xty[i * p + label] += x[i];
            }
        }
    }
    // xtx · Wᵀ = xty
    let wt = linalg::solve(&xtx, d, &xty, p)?;
    let mut w = vec![0.0; p * d];
    for i in 0..d {
        for c in 0..p {
            w[c * d + i] = wt[i * p + c];
        }
    }
    let mut params = identity.clone();
    params.extend_from_slice(&identity);
    params.extend_from_slice(&w);
    let sq_norm = params.iter().map(|x| x * x).sum();
    let out = LinearConstruction {
        kind: ConstructionKind::Lookup,
        p,
        kappa: Vec::new(),
        d,
        pairing,
        params,
        sq_norm,
    };
    out.verify_interpolation()?;
    Ok(out)
}

/// Sorted, deduplicated `κ`, checked to be nonzero, in range and closed under negation.
pub fn normalize_kappa(p: usize, kappa: &[usize]) -> Result<Vec<usize>> {
    let set: BTreeSet<usize> = kappa.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::invalid("kappa", "must be nonempty"));
    }
    for &k in &set {
        if k == 0 || k >= p {
            return Err(Error::invalid("kappa", format!("frequency {k} outside 1..{p}")));
        }
        if !set.contains(&(p - k)) {
            return Err(Error::invalid("kappa", format!("not closed under negation: {k} without {}", p - k)));
        }
    }
    Ok(set.into_iter().collect())
}

/// Fourier interpolant on the frequencies `κ`.
///
/// Each retained conjugate pair `±k` contributes the unit-normalised rows
/// `sqrt(2/p)·cos(2πka/p)` and `sqrt(2/p)·sin(2πka/p)` to both embeddings and
/// matching columns to the readout, so the logits are proportional to
/// `Σ_{k∈κ} cos(2πk(a+b−c)/p)` and the squared norm is `3|κ|`.
pub fn build_fourier_solution(p: usize, kappa: &[usize]) -> Result<LinearConstruction> {
    check_modulus(p, usize::MAX)?;
    if !is_prime(p) {
        return Err(Error::NotPrime(p));
    }
    let kappa = normalize_kappa(p, kappa)?;
    let half: Vec<usize> = kappa.iter().copied().filter(|&k| 2 * k <= p).collect();
    let real_only: Vec<bool> = half.iter().map(|&k| 2 * k == p).collect();
    let d: usize = real_only.iter().map(|&r| if r { 1 } else { 2 }).sum();
    let pf = p as f64;

    let mut embed = vec![0.0; d * p];
    let mut w = vec![0.0; p * d];
    let mut row = 0;
    for (&k, &real) in half.iter().zip(&real_only) {
        let amp = if real { (1.0 / pf).sqrt() } else { (2.0 / pf).sqrt() };
        for x in 0..p {
            let phase = TAU * (k * x % p) as f64 / pf;
            embed[row * p + x] = amp * phase.cos();
            w[x * d + row] = amp * phase.cos();
            if !real {
                embed[(row + 1) * p + x] = amp * phase.sin();
                w[x * d + row + 1] = amp * phase.sin();
            }
        }
        row += if real { 1 } else { 2 };
    }
    let mut params = embed.clone();
    params.extend_from_slice(&embed);
    params.extend_from_slice(&w);
    let sq_norm = params.iter().map(|x| x * x).sum();
    let out = LinearConstruction {
        kind: ConstructionKind::Fourier,
        p,
        kappa,
        d,
        pairing: Pairing::ComplexProduct { real_only },
        params,
        sq_norm,
    };
    out.verify_interpolation()?;
    Ok(out)
}

/// Anything that assigns logits to every `(a, b)` pair of a modular task.
pub trait ModularLogits {
    fn modulus(&self) -> usize;

    /// Logits over the full grid, laid out as `[(a * p + b) * p + c]`.
    fn logit_grid(&self) -> Result<Vec<f64>>;
}

impl ModularLogits for LinearConstruction {
    fn modulus(&self) -> usize {
        self.p
    }

    fn logit_grid(&self) -> Result<Vec<f64>> {
        let p = self.p;
        let mut out = Vec::with_capacity(p * p * p);
        for a in 0..p {
            for b in 0..p {
                out.extend(self.logits(a, b));
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> ModularLogits for MlpModel<T> {
    fn modulus(&self) -> usize {
        match self.shape().input {
            InputKind::Tokens { vocab, .. } => vocab,
            InputKind::Dense { .. } => 0,
        }
    }

    fn logit_grid(&self) -> Result<Vec<f64>> {
        let p = self.modulus();
        if p == 0 || self.shape().outputs != p {
            return Err(Error::invalid("model", "spectrum needs a modular-task model"));
        }
        let pairs = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
        let (logits, _) = forward(self, &Inputs::Tokens(pairs))?;
        Ok(logits.into_iter().map(Scalar::as_f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_lookup_is_infeasible() {
        assert!(matches!(build_lookup_with(2, Pairing::Sum), Err(Error::LookupInfeasible(2))));
    }

    #[test]
    fn lookup_at_p2_interpolates() {
        let c = build_lookup_solution(2).unwrap();
        assert_eq!(c.logits(1, 1), vec![1.0, 0.0]);
        assert_eq!(c.logits(0, 1), vec![0.0, 1.0]);
    }

    #[test]
    fn lookup_norm_is_three_p() {
        for p in [3, 5, 7, 11] {
            let c = build_lookup_solution(p).unwrap();
            assert!((c.sq_norm - 3.0 * p as f64).abs() < 1e-9, "p={p}: {}", c.sq_norm);
        }
    }

    #[test]
    fn fourier_p5_logits_are_cosines() {
        let c = build_fourier_solution(5, &[1, 4]).unwrap();
        let z = c.logits(2, 4);
        let scale = z[1];
        for (ci, zc) in z.iter().enumerate() {
            let want = (TAU * ((2 + 4 + 5 - ci) % 5) as f64 / 5.0).cos();
            assert!((zc / scale - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_norm_is_three_kappa() {
        for p in [11, 23, 47] {
            let c = build_fourier_solution(p, &[1, p - 1]).unwrap();
            assert!((c.sq_norm - 6.0).abs() < 1e-9);
            let full: Vec<usize> = (1..p).collect();
            let f = build_fourier_solution(p, &full).unwrap();
            assert!((f.sq_norm - 3.0 * (p - 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn kappa_validation() {
        assert!(build_fourier_solution(7, &[1]).is_err());
        assert!(build_fourier_solution(7, &[]).is_err());
        assert!(build_fourier_solution(7, &[0, 7]).is_err());
        assert!(build_fourier_solution(9, &[1, 8]).is_err());
    }

    #[test]
    fn binary_fourier_uses_real_block() {
        let c = build_fourier_solution(2, &[1]).unwrap();
        assert_eq!(c.d, 1);
        assert!((c.sq_norm - 3.0).abs() < 1e-12);
    }
}
