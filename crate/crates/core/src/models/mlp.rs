//! Two-layer MLP with hand-derived gradients.
//!
//! Modular tasks embed `a` and `b` separately, concatenate the two
//! embeddings and feed them through `hidden -> activation -> logits`. Parity
//! feeds raw `±1` coordinates into the same stack. All parameters live in a
//! single flat buffer, in the order
//! `embed_a, embed_b, w1, b1, w2, b2`, so optimiser steps act directly on it.

use std::ops::Range;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{squared_norm, ParamVector};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Quadratic,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Quadratic => x * x,
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Quadratic => x + x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputKind {
    /// Two tokens in `Z_p`, each embedded into `d_e` dimensions.
    Tokens { vocab: usize, d_e: usize },
    /// A dense real input of width `width`.
    Dense { width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: InputKind,
    pub hidden: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl MlpShape {
    pub fn modular(p: usize, d_e: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            input: InputKind::Tokens { vocab: p, d_e },
            hidden,
            outputs: p,
            activation,
        }
    }

    pub fn dense(width: usize, hidden: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            input: InputKind::Dense { width },
            hidden,
            outputs,
            activation,
        }
    }

    /// Width of the first linear layer's input.
    pub fn input_width(&self) -> usize {
        match self.input {
            InputKind::Tokens { d_e, .. } => 2 * d_e,
            InputKind::Dense { width } => width,
        }
    }

    fn embed_len(&self) -> usize {
        match self.input {
            InputKind::Tokens { vocab, d_e } => vocab * d_e,
            InputKind::Dense { .. } => 0,
        }
    }

    pub fn embed_a_range(&self) -> Range<usize> {
        0..self.embed_len()
    }

    pub fn embed_b_range(&self) -> Range<usize> {
        let e = self.embed_len();
        e..2 * e
    }

    pub fn w1_range(&self) -> Range<usize> {
        let s = 2 * self.embed_len();
        s..s + self.hidden * self.input_width()
    }

    pub fn b1_range(&self) -> Range<usize> {
        let s = self.w1_range().end;
        s..s + self.hidden
    }

    pub fn w2_range(&self) -> Range<usize> {
        let s = self.b1_range().end;
        s..s + self.outputs * self.hidden
    }

    pub fn b2_range(&self) -> Range<usize> {
        let s = self.w2_range().end;
        s..s + self.outputs
    }

    pub fn num_params(&self) -> usize {
        self.b2_range().end
    }

    fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.outputs > 0
            && match self.input {
                InputKind::Tokens { vocab, d_e } => vocab > 0 && d_e > 0,
                InputKind::Dense { width } => width > 0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("shape", "all layer sizes must be positive"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T> {
    shape: MlpShape,
    params: Vec<T>,
}

/// A batch of model inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs<T> {
    Tokens(Vec<(usize, usize)>),
    Dense { data: Vec<T>, width: usize },
}

impl<T> Inputs<T> {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Tokens(t) => t.len(),
            Inputs::Dense { data, width } => {
                if *width == 0 {
                    0
                } else {
                    data.len() / width
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Clone> Inputs<T> {
    /// Sub-batch made of the given rows.
    pub fn select(&self, rows: &[usize]) -> Self {
        match self {
            Inputs::Tokens(t) => Inputs::Tokens(rows.iter().map(|&i| t[i]).collect()),
            Inputs::Dense { data, width } => Inputs::Dense {
                data: rows
                    .iter()
                    .flat_map(|&i| data[i * width..(i + 1) * width].iter().cloned())
                    .collect(),
                width: *width,
            },
        }
    }
}

/// Activations kept from [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    input: Vec<T>,
    tokens: Option<Vec<(usize, usize)>>,
    pre: Vec<T>,
    hidden: Vec<T>,
    logits: Vec<T>,
    shape: MlpShape,
}

impl<T> ForwardCache<T> {
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn hidden(&self) -> &[T] {
        &self.hidden
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Scalar> MlpModel<T> {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            shape,
            params: vec![T::zero(); shape.num_params()],
        }
    }

    /// Gaussian initialisation with per-matrix std `1/sqrt(fan_in)`; biases
    /// start at zero. Embedding tables have fan-in one.
    pub fn init(shape: MlpShape, seed: u64) -> Result<Self> {
        Self::init_scaled(shape, seed, 1.0)
    }

    /// As [`init`](Self::init) with every matrix std multiplied by `scale`.
    pub fn init_scaled(shape: MlpShape, seed: u64, scale: f64) -> Result<Self> {
        Self::init_with(shape, seed, scale, 1.0)
    }

    /// As [`init_scaled`](Self::init_scaled) with the embedding tables drawn
    /// at std `scale * embed_std` instead of `scale`.
    pub fn init_with(shape: MlpShape, seed: u64, scale: f64, embed_std: f64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng::seeded(seed);
        let mut params = vec![T::zero(); shape.num_params()];
        let mut fill = |range: Range<usize>, std: f64| {
            for x in &mut params[range] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = T::lit(scale * std * z);
            }
        };
        fill(shape.embed_a_range(), embed_std);
        fill(shape.embed_b_range(), embed_std);
        fill(shape.w1_range(), 1.0 / (shape.input_width() as f64).sqrt());
        fill(shape.w2_range(), 1.0 / (shape.hidden as f64).sqrt());
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn flatten(&self) -> ParamVector<T> {
        ParamVector::new(self.params.clone()).expect("model parameters are finite")
    }

    pub fn unflatten(shape: MlpShape, flat: ParamVector<T>) -> Result<Self> {
        if flat.dim() != shape.num_params() {
            return Err(Error::DimensionMismatch {
                what: "unflatten",
                expected: shape.num_params(),
                got: flat.dim(),
            });
        }
        Ok(Self {
            shape,
            params: flat.into_inner(),
        })
    }

    pub fn squared_norm(&self) -> T {
        squared_norm(&self.params)
    }

    fn input_matrix(&self, inputs: &Inputs<T>) -> Result<Vec<T>> {
        let width = self.shape.input_width();
        match (&self.shape.input, inputs) {
            (InputKind::Tokens { vocab, d_e }, Inputs::Tokens(tokens)) => {
                let (vocab, d_e) = (*vocab, *d_e);
                let ea = &self.params[self.shape.embed_a_range()];
                let eb = &self.params[self.shape.embed_b_range()];
                let mut x = vec![T::zero(); tokens.len() * width];
                for (row, &(a, b)) in x.chunks_exact_mut(width).zip(tokens) {
                    for (tok, what) in [(a, "token a"), (b, "token b")] {
                        if tok >= vocab {
                            return Err(Error::IndexOutOfRange {
                                what,
                                index: tok,
                                size: vocab,
                            });
                        }
                    }
                    row[..d_e].copy_from_slice(&ea[a * d_e..(a + 1) * d_e]);
                    row[d_e..].copy_from_slice(&eb[b * d_e..(b + 1) * d_e]);
                }
                Ok(x)
            }
            (InputKind::Dense { width: w }, Inputs::Dense { data, width: iw }) => {
                if w != iw {
                    return Err(Error::DimensionMismatch {
                        what: "dense input width",
                        expected: *w,
                        got: *iw,
                    });
                }
                Ok(data.clone())
            }
            _ => Err(Error::invalid("inputs", "input kind does not match model")),
        }
    }
}

/// Logits (`batch x outputs`, row-major) plus the cache for [`backward`].
pub fn forward<T: Scalar>(model: &MlpModel<T>, inputs: &Inputs<T>) -> Result<(Vec<T>, ForwardCache<T>)> {
    let batch = inputs.len();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    let shape = model.shape;
    let x = model.input_matrix(inputs)?;
    let (din, h, out) = (shape.input_width(), shape.hidden, shape.outputs);
    let p = &model.params;
    let w1 = &p[shape.w1_range()];
    let b1 = &p[shape.b1_range()];
    let w2 = &p[shape.w2_range()];
    let b2 = &p[shape.b2_range()];

    let mut pre = vec![T::zero(); batch * h];
    for row in pre.chunks_exact_mut(h) {
        row.copy_from_slice(b1);
    }
    // pre = x @ w1^T + b1
    T::gemm(batch, din, h, T::one(), &x, din, 1, w1, 1, din, T::one(), &mut pre, h, 1);
    let hidden: Vec<T> = pre.iter().map(|&z| shape.activation.apply(z)).collect();
    if hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("hidden"));
    }

    let mut logits = vec![T::zero(); batch * out];
    for row in logits.chunks_exact_mut(out) {
        row.copy_from_slice(b2);
    }
    T::gemm(batch, h, out, T::one(), &hidden, h, 1, w2, 1, h, T::one(), &mut logits, out, 1);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation("output"));
    }

    let tokens = match inputs {
        Inputs::Tokens(t) => Some(t.clone()),
        Inputs::Dense { .. } => None,
    };
    let cache = ForwardCache {
        batch,
        input: x,
        tokens,
        pre,
        hidden,
        logits: logits.clone(),
        shape,
    };
    Ok((logits, cache))
}

/// Mean softmax cross-entropy, accuracy, and (optionally) the softmax
/// residual `(softmax - onehot) / batch`.
///
/// Accuracy counts a row correct only when the target logit is strictly
/// larger than every other logit, so ties always score as wrong.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[T],
    outputs: usize,
    targets: &[usize],
    want_residual: bool,
) -> Result<(T, T, Option<Vec<T>>)> {
    let batch = targets.len();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if logits.len() != batch * outputs {
        return Err(Error::DimensionMismatch {
            what: "logits vs targets",
            expected: batch * outputs,
            got: logits.len(),
        });
    }
    let inv_b = T::one() / T::from_usize_lossy(batch);
    let mut loss = T::zero();
    let mut correct = 0usize;
    let mut residual = want_residual.then(|| vec![T::zero(); logits.len()]);
    for (i, row) in logits.chunks_exact(outputs).enumerate() {
        let y = targets[i];
        if y >= outputs {
            return Err(Error::IndexOutOfRange {
                what: "target",
                index: y,
                size: outputs,
            });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        if row.iter().enumerate().all(|(c, &z)| c == y || z < row[y]) {
            correct += 1;
        }
        if let Some(r) = residual.as_mut() {
            let rr = &mut r[i * outputs..(i + 1) * outputs];
            for (c, (&z, slot)) in row.iter().zip(rr.iter_mut()).enumerate() {
                let q = (z - lse).exp();
                let onehot = if c == y { T::one() } else { T::zero() };
                *slot = (q - onehot) * inv_b;
            }
        }
    }
    Ok((loss * inv_b, T::from_usize_lossy(correct) * inv_b, residual))
}

/// Gradient of the mean cross-entropy with respect to every parameter.
/// Weight decay is not included; it belongs to the optimiser.
pub fn backward<T: Scalar>(
    model: &MlpModel<T>,
    cache: &ForwardCache<T>,
    targets: &[usize],
) -> Result<(Vec<T>, T, T)> {
    let shape = model.shape;
    if cache.shape != shape {
        return Err(Error::invalid("cache", "forward cache built for a different model shape"));
    }
    if targets.len() != cache.batch {
        return Err(Error::DimensionMismatch {
            what: "targets vs cache batch",
            expected: cache.batch,
            got: targets.len(),
        });
    }
    let (batch, din, h, out) = (cache.batch, shape.input_width(), shape.hidden, shape.outputs);
    let (loss, acc, residual) = softmax_cross_entropy(&cache.logits, out, targets, true)?;
    let dlogits = residual.expect("residual requested");

    let p = &model.params;
    let w1 = &p[shape.w1_range()];
    let w2 = &p[shape.w2_range()];
    let mut grads = vec![T::zero(); shape.num_params()];

    {
        // dW2 = dlogits^T @ hidden
        let gw2 = &mut grads[shape.w2_range()];
        T::gemm(out, batch, h, T::one(), &dlogits, 1, out, &cache.hidden, h, 1, T::zero(), gw2, h, 1);
    }
    {
        let gb2 = &mut grads[shape.b2_range()];
        for row in dlogits.chunks_exact(out) {
            for (g, &d) in gb2.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    // dpre = (dlogits @ w2) * act'(pre)
    let mut dpre = vec![T::zero(); batch * h];
    T::gemm(batch, out, h, T::one(), &dlogits, out, 1, w2, h, 1, T::zero(), &mut dpre, h, 1);
    for (d, &z) in dpre.iter_mut().zip(&cache.pre) {
        *d *= shape.activation.derivative(z);
    }
    {
        let gw1 = &mut grads[shape.w1_range()];
        T::gemm(h, batch, din, T::one(), &dpre, 1, h, &cache.input, din, 1, T::zero(), gw1, din, 1);
    }
    {
        let gb1 = &mut grads[shape.b1_range()];
        for row in dpre.chunks_exact(h) {
            for (g, &d) in gb1.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    if let (InputKind::Tokens { d_e, .. }, Some(tokens)) = (shape.input, cache.tokens.as_ref()) {
        let mut dx = vec![T::zero(); batch * din];
        T::gemm(batch, h, din, T::one(), &dpre, h, 1, w1, din, 1, T::zero(), &mut dx, din, 1);
        let ea = shape.embed_a_range().start;
        let eb = shape.embed_b_range().start;
        for (row, &(a, b)) in dx.chunks_exact(din).zip(tokens) {
            for k in 0..d_e {
                grads[ea + a * d_e + k] += row[k];
                grads[eb + b * d_e + k] += row[d_e + k];
            }
        }
    }
    Ok((grads, loss, acc))
}

/// Mean loss and accuracy without gradients.
pub fn evaluate<T: Scalar>(model: &MlpModel<T>, inputs: &Inputs<T>, targets: &[usize]) -> Result<(T, T)> {
    let (logits, _) = forward(model, inputs)?;
    let (loss, acc, _) = softmax_cross_entropy(&logits, model.shape.outputs, targets, false)?;
    Ok((loss, acc))
}

/// Coordinates checked exhaustively below this parameter count; above it a
/// seeded sample of this many coordinates is used.
pub const GRAD_CHECK_EXHAUSTIVE: usize = 10_000;

/// Largest relative error between the analytic gradient and a central finite
/// difference, with denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &Inputs<T>,
    targets: &[usize],
    fd_step: T,
) -> Result<T> {
    Ok(grad_check_detail(model, inputs, targets, fd_step)?.max_rel_err)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub max_rel_err: T,
    pub max_abs_err: T,
    pub coords_checked: usize,
}

pub fn grad_check_detail<T: Scalar>(
    model: &MlpModel<T>,
    inputs: &Inputs<T>,
    targets: &[usize],
    fd_step: T,
) -> Result<GradCheckReport<T>> {
    if !(fd_step > T::zero()) {
        return Err(Error::invalid("fd_step", "must be > 0"));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (_, cache) = forward(model, inputs)?;
    let (analytic, _, _) = backward(model, &cache, targets)?;
    let n = model.num_params();
    let coords: Vec<usize> = if n <= GRAD_CHECK_EXHAUSTIVE {
        (0..n).collect()
    } else {
        let mut rng = rng::seeded(0x6AD_C4EC);
        index::sample(&mut rng, n, GRAD_CHECK_EXHAUSTIVE).into_vec()
    };
    let mut probe = model.clone();
    let floor = T::lit(1e-12);
    let mut max_rel = T::zero();
    let mut max_abs = T::zero();
    for &i in &coords {
        let orig = probe.params[i];
        probe.params[i] = orig + fd_step;
        let (lp, _) = evaluate(&probe, inputs, targets)?;
        probe.params[i] = orig - fd_step;
        let (lm, _) = evaluate(&probe, inputs, targets)?;
        probe.params[i] = orig;
        let numeric = (lp - lm) / (fd_step + fd_step);
        let diff = (numeric - analytic[i]).abs();
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        max_rel = max_rel.max(diff / denom);
        max_abs = max_abs.max(diff);
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        coords_checked: coords.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_modular(seed: u64, act: Activation) -> MlpModel<f64> {
        MlpModel::init(MlpShape::modular(7, 4, 6, act), seed).unwrap()
    }

    fn pairs(n: usize, p: usize) -> (Inputs<f64>, Vec<usize>) {
        let toks: Vec<(usize, usize)> = (0..n).map(|i| ((3 * i + 1) % p, (5 * i + 2) % p)).collect();
        let targets = toks.iter().map(|&(a, b)| (a + b) % p).collect();
        (Inputs::Tokens(toks), targets)
    }

    #[test]
    fn layout_covers_buffer() {
        let s = MlpShape::modular(5, 3, 4, Activation::Relu);
        assert_eq!(s.num_params(), 2 * 15 + 4 * 6 + 4 + 5 * 4 + 5);
        let d = MlpShape::dense(20, 8, 2, Activation::Relu);
        assert_eq!(d.w1_range(), 0..160);
        assert_eq!(d.num_params(), 160 + 8 + 16 + 2);
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::<f64>::zeros(MlpShape::modular(5, 3, 4, Activation::Quadratic));
        let (inputs, targets) = pairs(6, 5);
        let (logits, cache) = forward(&m, &inputs).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        let (grads, loss, acc) = backward(&m, &cache, &targets).unwrap();
        assert_relative_eq!(loss, 5f64.ln(), epsilon = 1e-14);
        assert_eq!(acc, 0.0);
        assert_eq!(grads.len(), m.num_params());
    }

    #[test]
    fn confident_logits_have_vanishing_loss() {
        let mut logits = vec![0.0; 3 * 4];
        let targets = [2usize, 0, 3];
        for (i, &t) in targets.iter().enumerate() {
            logits[i * 4 + t] = 30.0;
        }
        let (loss, acc, _) = softmax_cross_entropy(&logits, 4, &targets, false).unwrap();
        assert!(loss < 1e-12);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn tie_against_target_is_wrong() {
        let logits = [1.0, 1.0, 0.0];
        let (_, acc, _) = softmax_cross_entropy(&logits, 3, &[0], false).unwrap();
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn quadratic_hidden_toy() {
        let shape = MlpShape::dense(2, 2, 1, Activation::Quadratic);
        let mut m = MlpModel::<f64>::zeros(shape);
        m.params_mut()[shape.w1_range()].copy_from_slice(&[1.0, 0.0, 0.0, 2.0]);
        let (_, cache) = forward(&m, &Inputs::Dense { data: vec![1.0, 1.0], width: 2 }).unwrap();
        assert_eq!(cache.hidden(), &[1.0, 4.0]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = small_modular(3, Activation::Quadratic);
        let (inputs, _) = pairs(5, 7);
        let (all, _) = forward(&m, &inputs).unwrap();
        for i in 0..5 {
            let (one, _) = forward(&m, &inputs.select(&[i])).unwrap();
            assert_eq!(&all[i * 7..(i + 1) * 7], one.as_slice());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Quadratic, Activation::Relu] {
            let m = small_modular(11, act);
            let (inputs, targets) = pairs(8, 7);
            let err = grad_check(&m, &inputs, &targets, 1e-4).unwrap();
            assert!(err < 1e-5, "{act:?}: {err}");
        }
        let d = MlpModel::<f64>::init(MlpShape::dense(6, 5, 2, Activation::Relu), 4).unwrap();
        let data: Vec<f64> = (0..8 * 6).map(|i| if (i * 7) % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let inputs = Inputs::Dense { data, width: 6 };
        let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
        assert!(grad_check(&d, &inputs, &targets, 1e-4).unwrap() < 1e-5);
    }

    #[test]
    fn grad_check_rejects_empty_batch() {
        let m = small_modular(0, Activation::Quadratic);
        assert!(matches!(
            grad_check(&m, &Inputs::Tokens(vec![]), &[], 1e-4),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let m = small_modular(5, Activation::Quadratic);
        let (inputs, targets) = pairs(8, 7);
        let e1 = grad_check_detail(&m, &inputs, &targets, 2e-2).unwrap().max_abs_err;
        let e2 = grad_check_detail(&m, &inputs, &targets, 4e-2).unwrap().max_abs_err;
        let ratio = e2 / e1;
        assert!((2.5..6.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn out_of_range_token() {
        let m = small_modular(0, Activation::Relu);
        assert!(matches!(
            forward(&m, &Inputs::Tokens(vec![(7, 0)])),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn f32_forward_agrees_with_f64() {
        let m64 = small_modular(2, Activation::Quadratic);
        let m32 = MlpModel::<f32>::unflatten(
            *m64.shape(),
            ParamVector::new(m64.params().iter().map(|&x| x as f32).collect()).unwrap(),
        )
        .unwrap();
        let (toks, _) = pairs(4, 7);
        let Inputs::Tokens(t) = toks else { unreachable!() };
        let (a, _) = forward(&m64, &Inputs::Tokens(t.clone())).unwrap();
        let (b, _) = forward(&m32, &Inputs::Tokens(t)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-4 * x.abs().max(1.0));
        }
    }

    #[test]
    fn first_order_taylor_consistency() {
        let m = small_modular(9, Activation::Quadratic);
        let (inputs, targets) = pairs(10, 7);
        let (_, cache) = forward(&m, &inputs).unwrap();
        let (g, l0, _) = backward(&m, &cache, &targets).unwrap();
        let dir: Vec<f64> = (0..m.num_params()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let mut prev = f64::INFINITY;
        for scale in [1e-2, 5e-3, 2.5e-3] {
            let mut moved = m.clone();
            for (p, d) in moved.params_mut().iter_mut().zip(&dir) {
                *p += scale * d;
            }
            let (l1, _) = evaluate(&moved, &inputs, &targets).unwrap();
            let lin: f64 = g.iter().zip(&dir).map(|(a, b)| a * b * scale).sum();
            let resid = (l1 - l0 - lin).abs();
            // second order: halving the step should cut the residual ~4x
            assert!(resid < prev / 3.0 || prev.is_infinite(), "{resid} vs {prev}");
            prev = resid;
        }
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in any::<u64>(), h in 1usize..6, d in 1usize..4) {
            let shape = MlpShape::modular(5, d, h, Activation::Relu);
            let m = MlpModel::<f64>::init(shape, seed).unwrap();
            let back = MlpModel::unflatten(shape, m.flatten()).unwrap();
            prop_assert_eq!(&back, &m);
            let direct: f64 = m.params().iter().map(|x| x * x).sum();
            prop_assert_eq!(m.squared_norm(), direct);
        }
    }
}
