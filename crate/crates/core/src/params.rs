//! Uniform access to a model's trainable tensors.
//!
//! Optimizers, clipping, serialization and the gradient checker all walk the
//! same flat list of `(name, slice)` pairs, so the declaration order here is
//! the on-disk order too.

use crate::scalar::Scalar;

pub trait ParamSet<T: Scalar> {
    /// Every trainable tensor as `(name, flat values)`, in a fixed order.
    fn tensors(&self) -> Vec<(&'static str, &[T])>;

    /// Same order as [`ParamSet::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn norm(&self) -> T {
        let mut acc = T::zero();
        for (_, t) in self.tensors() {
            for &v in t {
                acc = acc + v * v;
            }
        }
        acc.sqrt()
    }

    fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for v in t {
                *v = *v * factor;
            }
        }
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    /// `self += other`; both must share a layout.
    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            assert_eq!(dst.len(), s.len(), "parameter layouts differ");
            for (d, &v) in dst.iter_mut().zip(s) {
                *d = *d + v;
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
    fn clip_norm(&mut self, max_norm: T) -> T {
        let norm = self.norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Position of one scalar inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIndex {
    pub tensor: usize,
    pub offset: usize,
}

pub fn get_param<T: Scalar, P: ParamSet<T>>(p: &P, at: ParamIndex) -> T {
    p.tensors()[at.tensor].1[at.offset]
}

pub fn set_param<T: Scalar, P: ParamSet<T>>(p: &mut P, at: ParamIndex, v: T) {
    p.tensors_mut()[at.tensor][at.offset] = v;
}
