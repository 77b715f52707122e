use nalgebra::DMatrix;

use super::matrix::{dot, Matrix, Vector};
use crate::error::{check_dim, invalid, Result};
use crate::scalar::Scalar;

/// Principal axes fitted to a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vector<T>,
    /// `k × d`, orthonormal rows in order of decreasing variance.
    pub components: Matrix<T>,
    pub explained_variance: Vector<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// `components · (x − mean)`.
    pub fn transform(&self, x: &[T]) -> Result<Vector<T>> {
        check_dim("pca input", self.input_dim(), x.len())?;
        let centered: Vec<T> = x.iter().zip(self.mean.iter()).map(|(&a, &m)| a - m).collect();
        self.components.matvec(&centered)
    }

    /// `mean + componentsᵀ · z`.
    pub fn reconstruct(&self, z: &[T]) -> Result<Vector<T>> {
        check_dim("pca coordinates", self.output_dim(), z.len())?;
        let mut out = self.mean.to_vec();
        self.components.tr_matvec_acc(z, &mut out);
        Ok(out.into())
    }
}

pub fn pca_transform<T: Scalar>(model: &PcaModel<T>, x: &[T]) -> Result<Vector<T>> {
    model.transform(x)
}

/// Fits the top-`k` principal axes by symmetric eigendecomposition.
///
/// Uses the `d × d` covariance when `d ≤ n` and the `n × n` Gram matrix
/// otherwise, so 4096-dimensional features with a few hundred samples stay
/// cheap. Each component is sign-fixed so its largest-magnitude entry is
/// positive.
pub fn pca_fit<T: Scalar, S: AsRef<[T]>>(samples: &[S], k: usize) -> Result<PcaModel<T>> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid(format!("pca needs at least 2 samples, got {n}")));
    }
    let d = samples[0].as_ref().len();
    if k == 0 || k > n.min(d) {
        return Err(invalid(format!("pca k = {k} outside 1..={}", n.min(d))));
    }
    let mut mean = vec![0.0f64; d];
    for s in samples {
        let s = s.as_ref();
        check_dim("pca sample", d, s.len())?;
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v.as_f64();
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |r, c| samples[r].as_ref()[c].as_f64() - mean[c]);
    let denom = (n - 1) as f64;

    let mut axes: Vec<(f64, Vec<f64>)> = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = cov.symmetric_eigen();
        (0..d)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
            .collect()
    } else {
        let gram = &centered * centered.transpose();
        let eig = gram.symmetric_eigen();
        (0..n)
            .map(|i| {
                let lambda = eig.eigenvalues[i].max(0.0);
                let u = eig.eigenvectors.column(i);
                let v = centered.transpose() * u;
                let norm = v.norm();
                let dir = if norm > 1e-12 * (1.0 + lambda.sqrt()) {
                    v.iter().map(|x| x / norm).collect()
                } else {
                    Vec::new()
                };
                (lambda / denom, dir)
            })
            .collect()
    };
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    axes.truncate(k);

    // Null-space directions from the Gram route come back empty; complete them
    // against the standard basis so the rows stay orthonormal.
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    let mut basis = 0;
    for (var, dir) in axes {
        let v = if dir.is_empty() {
            loop {
                let mut e = vec![0.0; d];
                e[basis] = 1.0;
                basis += 1;
                if let Some(v) = orthonormalize(e, &rows) {
                    break v;
                }
            }
        } else {
            dir
        };
        rows.push(fix_sign(v));
        variances.push(var.max(0.0));
    }

    let components = Matrix::from_fn(k, d, |r, c| T::lit(rows[r][c]));
    Ok(PcaModel {
        mean: mean.into_iter().map(T::lit).collect(),
        components,
        explained_variance: variances.into_iter().map(T::lit).collect(),
    })
}

fn orthonormalize(mut v: Vec<f64>, against: &[Vec<f64>]) -> Option<Vec<f64>> {
    for u in against {
        let p = dot(&v, u);
        for (a, b) in v.iter_mut().zip(u) {
            *a -= p * b;
        }
    }
    let norm = dot(&v, &v).sqrt();
    if norm < 1e-8 {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{normal, seeded_rng};

    fn random_samples(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        // anisotropic so the eigenvalues are well separated
        (0..n)
            .map(|_| (0..d).map(|j| normal(&mut rng, 1.0 + j as f64 * 0.3)).collect())
            .collect()
    }

    #[test]
    fn points_on_a_line() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let m = pca_fit(&pts, 2).unwrap();
        let ev = &m.explained_variance;
        assert!(ev[1].abs() < 1e-9 * ev[0]);
        let s5 = 5f64.sqrt();
        assert!((m.components.get(0, 0) - 1.0 / s5).abs() < 1e-12);
        assert!((m.components.get(0, 1) - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn full_rank_roundtrip() {
        let xs = random_samples(40, 6, 11);
        let m = pca_fit(&xs, 6).unwrap();
        for x in &xs {
            let back = m.reconstruct(&m.transform(x).unwrap()).unwrap();
            for (a, b) in back.iter().zip(x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transform_of_mean_and_axis() {
        let xs = random_samples(30, 4, 5);
        let m = pca_fit(&xs, 3).unwrap();
        let z = m.transform(&m.mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let shifted: Vec<f64> = m.mean.iter().zip(m.components.row(0)).map(|(a, b)| a + b).collect();
        let z = m.transform(&shifted).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12 && z[2].abs() < 1e-12);
    }

    #[test]
    fn rows_orthonormal_and_sign_fixed() {
        let xs = random_samples(25, 8, 9);
        let m = pca_fit(&xs, 5).unwrap();
        for i in 0..5 {
            let ri = m.components.row(i);
            let big = ri.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(ri, m.components.row(j)) - want).abs() < 1e-9);
            }
        }
        for w in m.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        // n < d forces the Gram matrix path
        let xs = random_samples(6, 12, 21);
        let wide = pca_fit(&xs, 4).unwrap();
        let mut cov = DMatrix::<f64>::zeros(12, 12);
        let mean = &wide.mean;
        for x in &xs {
            let c = DMatrix::from_fn(12, 1, |r, _| x[r] - mean[r]);
            cov += &c * c.transpose();
        }
        cov /= 5.0;
        for i in 0..4 {
            let v = DMatrix::from_row_slice(12, 1, wide.components.row(i));
            let rayleigh = (v.transpose() * &cov * &v)[(0, 0)];
            assert!((rayleigh - wide.explained_variance[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_gram_completion_stays_orthonormal() {
        // 3 samples in 5-D: centered rank is 2, k = 3 needs one completed axis
        let xs = random_samples(3, 5, 4);
        let m = pca_fit(&xs, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(m.components.row(i), m.components.row(j)) - want).abs() < 1e-9);
            }
        }
        assert!(m.explained_variance[2].abs() < 1e-9);
    }

    #[test]
    fn k_out_of_range() {
        let xs = random_samples(5, 3, 1);
        assert!(pca_fit(&xs, 0).is_err());
        assert!(pca_fit(&xs, 4).is_err());
        assert!(pca_fit(&xs[..1], 1).is_err());
        let m = pca_fit(&xs, 2).unwrap();
        assert!(m.transform(&[1.0, 2.0]).is_err());
    }
}
