//! Seeded randomness. Every stream is ChaCha8 keyed by `seed_from_u64`, and
//! normal draws use `rand_distr::StandardNormal` (ziggurat). Both are fixed
//! algorithms, so a given seed reproduces bit-identical values on every run
//! of the same build.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::{Matrix, Vector};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One standard-normal draw scaled by `std`.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

pub fn randn_matrix<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(normal(rng, std)))
}

pub fn randn_vector<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> Vector<T> {
    (0..dim).map(|_| T::lit(normal(rng, std))).collect()
}

/// `rows × cols` matrix of independent `N(0, std²)` entries from a fresh stream keyed by `seed`.
pub fn randn_init<T: Scalar>(rows: usize, cols: usize, std: f64, seed: u64) -> Result<Matrix<T>> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(invalid(format!("init std must be positive, got {std}")));
    }
    Ok(randn_matrix(&mut seeded_rng(seed), rows, cols, std))
}

/// Fisher-Yates shuffle driven by the seeded stream.
pub fn shuffle<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = randn_init::<f64>(7, 9, 0.5, 42).unwrap();
        let b = randn_init::<f64>(7, 9, 0.5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_std_matches() {
        let m = randn_init::<f64>(100, 100, 0.01, 7).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.009..=0.011).contains(&sd), "std {sd}");
        assert!(mean.abs() <= 5.0 * 0.01 / n.sqrt());
    }

    #[test]
    fn different_seeds_differ() {
        let a = randn_init::<f64>(50, 50, 1.0, 1).unwrap();
        let b = randn_init::<f64>(50, 50, 1.0, 2).unwrap();
        let same = a.as_slice().iter().zip(b.as_slice()).filter(|(x, y)| x == y).count();
        assert!(same as f64 <= 0.01 * 2500.0);
    }

    #[test]
    fn rejects_non_positive_std() {
        assert!(randn_init::<f64>(2, 2, 0.0, 1).is_err());
        assert!(randn_init::<f64>(2, 2, -1.0, 1).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..20).collect();
        shuffle(&mut seeded_rng(3), &mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert_ne!(v, s);
    }
}
