use std::ops::Deref;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Tolerance on `Σ p = 1` accepted by [`Distribution::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over action labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<T>(Vec<T>);

impl<T: Scalar> Distribution<T> {
    /// Validates entries in `[0, 1]` summing to one.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution over zero labels"));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            let p = p.as_f64();
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("probability {i} = {p} outside [0, 1]")));
            }
            sum += p;
        }
        // f32 rounding in the sum is looser than 1e-9
        let tol = SUM_TOLERANCE.max(T::epsilon().as_f64() * probs.len() as f64 * 4.0);
        if (sum - 1.0).abs() > tol {
            return Err(invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Distribution(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![T::one() / T::lit(n as f64); n])
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<T>) -> Self {
        Distribution(probs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Most probable label; exact ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Entropy in nats, `-Σ p ln p` with `0 ln 0 = 0`.
    pub fn entropy(&self) -> T {
        let mut h = T::zero();
        for &p in &self.0 {
            if p > T::zero() {
                h = h - p * p.ln();
            }
        }
        h.max(T::zero())
    }

    /// Entropy divided by `ln N`: 1 for uniform, 0 for one-hot.
    pub fn uncertainty(&self) -> T {
        if self.0.len() < 2 {
            return T::zero();
        }
        let u = self.entropy() / T::lit(self.0.len() as f64).ln();
        u.min(T::one())
    }
}

impl<T> Deref for Distribution<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Distribution<T>> {
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(invalid("softmax of non-finite logits"));
    }
    Ok(Distribution(softmax_unchecked(logits)))
}

/// Softmax without the finiteness check, so NaN logits propagate into the loss
/// where training can report divergence.
pub(crate) fn softmax_unchecked<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().fold(T::zero(), |a, &b| a + b);
    for p in &mut out {
        *p = *p / sum;
    }
    out
}

pub fn entropy<T: Scalar>(d: &Distribution<T>) -> T {
    d.entropy()
}
