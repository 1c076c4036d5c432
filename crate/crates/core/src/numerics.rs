// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense f32 tensors and the information-theoretic primitives used by every
//! analysis: softmax, entropy and KL divergence.
//!
//! Storage is `f32`; every reduction (dot products, sums, normalizers)
//! accumulates in `f64` and rounds once at the end.

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-5;

/// Rank-N row-major array of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dims must be non-empty and positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Contiguous sub-array at index `i` along the first axis.
    pub fn outer(&self, i: usize) -> &[f32] {
        let stride = self.data.len() / self.dims[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [f32] {
        let stride = self.data.len() / self.dims[0];
        &mut self.data[i * stride..(i + 1) * stride]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NumericInput(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }
}

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f32>,
}

impl Distribution {
    /// Validates that every entry lies in `[0, 1]` and the total mass is
    /// within [`MASS_TOLERANCE`] of one.
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NumericInput("empty distribution".into()));
        }
        let mut total = 0.0f64;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::NumericInput(format!(
                    "probability {p} at index {i} outside [0, 1]"
                )));
            }
            total += f64::from(p);
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NumericInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, index: usize) -> f64 {
        f64::from(self.probs[index])
    }

    /// Index of the largest probability (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f32]) -> Result<Distribution> {
    if logits.is_empty() {
        return Err(Error::NumericInput("softmax of an empty vector".into()));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!(
            "non-finite logit {} at index {i}",
            logits[i]
        )));
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (f64::from(z) - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs = exps.iter().map(|&e| (e / total) as f32).collect();
    Distribution::new(probs)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &Distribution) -> f64 {
    let h: f64 = dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let p = f64::from(p);
            -p * p.ln()
        })
        .sum();
    // rounding can push a one-hot slightly negative
    h.max(0.0)
}

/// `KL(p || q)` in nats.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "KL over distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0f64;
    for (i, (&pi, &qi)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::DivergenceUndefined {
                index: i,
                p: f64::from(pi),
            });
        }
        let (pi, qi) = (f64::from(pi), f64::from(qi));
        total += pi * (pi / qi).ln();
    }
    Ok(total.max(0.0))
}

/// Row-major product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    let (m, k) = (a.dims[0], a.dims[1]);
    let (k2, n) = (b.dims[0], b.dims[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "inner dimensions disagree: {:?} x {:?}",
            a.dims, b.dims
        )));
    }
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (p, &av) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            let av = f64::from(av);
            for (slot, &bv) in acc.iter_mut().zip(&b.data[p * n..(p + 1) * n]) {
                *slot += av * f64::from(bv);
            }
        }
        for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = *v as f32;
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum::<f64>() as f32
}

/// `out = W x` with `W` stored row-major as `rows x x.len()`.
pub(crate) fn matvec(weight: &[f32], x: &[f32], out: &mut [f32]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(weight.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// RMS normalization with a learned per-dimension gain.
pub(crate) fn rms_norm(x: &[f32], gain: &[f32], eps: f32) -> Vec<f32> {
    let mean_sq = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / x.len() as f64;
    let scale = 1.0 / (mean_sq + f64::from(eps)).sqrt();
    x.iter()
        .zip(gain)
        .map(|(&v, &g)| (f64::from(v) * scale * f64::from(g)) as f32)
        .collect()
}
