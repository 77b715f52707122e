//! Input projection and the two per-frame output heads.

use rand::Rng;

use crate::error::{check_dim, invalid, Result};
use crate::numerics::rng::randn_matrix;
use crate::numerics::{softmax, Distribution, Matrix, Vector};
use crate::scalar::Scalar;

/// Affine map from raw features into the recurrent input space.
///
/// `weight` is stored `n_out × n_in` so that the forward map is `weight · x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub weight: Matrix<T>,
    pub bias: Vector<T>,
}

impl<T: Scalar> Projection<T> {
    pub fn identity(dim: usize) -> Self {
        Projection {
            weight: Matrix::identity(dim),
            bias: Vector::zeros(dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_in: usize, n_out: usize, std: f64) -> Self {
        Projection {
            weight: randn_matrix(rng, n_out, n_in, std),
            bias: Vector::zeros(n_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn project(&self, x: &[T]) -> Result<Vector<T>> {
        check_dim("projection input", self.input_dim(), x.len())?;
        let mut out = self.bias.to_vec();
        self.weight.matvec_acc(x, &mut out);
        Ok(out.into())
    }
}

pub fn project<T: Scalar>(p: &Projection<T>, x: &[T]) -> Result<Vector<T>> {
    p.project(x)
}

/// Softmax classifier over `N` action labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T> {
    pub weight: Matrix<T>,
    pub bias: Vector<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn zeros(labels: usize, hidden: usize) -> Self {
        ClassifierHead {
            weight: Matrix::zeros(labels, hidden),
            bias: Vector::zeros(labels),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, labels: usize, hidden: usize, std: f64) -> Self {
        ClassifierHead {
            weight: randn_matrix(rng, labels, hidden, std),
            bias: Vector::zeros(labels),
        }
    }

    pub fn labels(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, h: &[T]) -> Result<Vector<T>> {
        check_dim("classifier input", self.weight.cols(), h.len())?;
        let mut z = self.bias.to_vec();
        self.weight.matvec_acc(h, &mut z);
        Ok(z.into())
    }

    pub fn classify(&self, h: &[T]) -> Result<Distribution<T>> {
        softmax(&self.logits(h)?)
    }
}

pub fn classify_frame<T: Scalar>(head: &ClassifierHead<T>, h: &[T]) -> Result<Distribution<T>> {
    head.classify(h)
}

/// Argmax label, lowest index on ties.
pub fn predict_label<T: Scalar>(d: &Distribution<T>) -> usize {
    d.argmax()
}

/// `Σ −ln p(label)` over every frame given.
pub fn nll_loss<T: Scalar>(predictions: &[Distribution<T>], labels: &[usize]) -> Result<T> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut loss = T::zero();
    for (d, &y) in predictions.iter().zip(labels) {
        if y >= d.len() {
            return Err(invalid(format!("label {y} out of range for {} classes", d.len())));
        }
        loss = loss - d[y].ln();
    }
    Ok(loss)
}

/// Affine force regressor, one output per force channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorHead<T> {
    pub weight: Matrix<T>,
    pub bias: Vector<T>,
}

impl<T: Scalar> RegressorHead<T> {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        RegressorHead {
            weight: Matrix::zeros(channels, hidden),
            bias: Vector::zeros(channels),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, channels: usize, hidden: usize, std: f64) -> Self {
        RegressorHead {
            weight: randn_matrix(rng, channels, hidden, std),
            bias: Vector::zeros(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.rows()
    }

    /// Unbounded `W_v h + b_v`; clamping happens only when forces are reported.
    pub fn regress(&self, h: &[T]) -> Result<Vector<T>> {
        check_dim("regressor input", self.weight.cols(), h.len())?;
        let mut v = self.bias.to_vec();
        self.weight.matvec_acc(h, &mut v);
        Ok(v.into())
    }
}

pub fn regress_forces<T: Scalar>(head: &RegressorHead<T>, h: &[T]) -> Result<Vector<T>> {
    head.regress(h)
}

/// `Σ_t ‖pred_t − truth_t‖²`.
pub fn l2_loss<T: Scalar, A: AsRef<[T]>, B: AsRef<[T]>>(pred: &[A], truth: &[B]) -> Result<T> {
    if pred.len() != truth.len() {
        return Err(invalid(format!("{} predicted frames vs {} true frames", pred.len(), truth.len())));
    }
    let mut loss = T::zero();
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.as_ref(), t.as_ref());
        check_dim("force channels", t.len(), p.len())?;
        for (&a, &b) in p.iter().zip(t) {
            loss = loss + (a - b) * (a - b);
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::{normal, seeded_rng};

    #[test]
    fn projection_examples() {
        let id = Projection::<f64>::identity(3);
        assert_eq!(&*id.project(&[1.0, -2.0, 0.5]).unwrap(), &[1.0, -2.0, 0.5]);
        let mut rng = seeded_rng(1);
        let mut p = Projection::<f64>::random(&mut rng, 4, 2, 1.0);
        p.bias = vec![0.3, -0.1].into();
        assert_eq!(&*p.project(&[0.0; 4]).unwrap(), &[0.3, -0.1]);
        let x = [0.5, 1.0, -1.5, 2.0];
        let got = p.project(&x).unwrap();
        for r in 0..2 {
            let mut s = p.bias[r];
            for c in 0..4 {
                s += p.weight.get(r, c) * x[c];
            }
            assert!((got[r] - s).abs() < 1e-15);
        }
        assert!(p.project(&[1.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        let head = ClassifierHead::<f64>::zeros(5, 3);
        let d = head.classify(&[0.4, 0.1, -0.2]).unwrap();
        assert!(d.iter().all(|&p| (p - 0.2).abs() < 1e-15));

        let mut head = ClassifierHead::<f64>::zeros(5, 3);
        head.bias[0] = 10.0;
        assert!(head.classify(&[1.0, 2.0, 3.0]).unwrap()[0] > 0.999);

        let mut rng = seeded_rng(2);
        let mut head = ClassifierHead::<f64>::random(&mut rng, 4, 3, 1.0);
        head.bias = (0..4).map(|_| normal(&mut rng, 1.0)).collect();
        let h = [0.2, -0.7, 0.9];
        let got = head.classify(&h).unwrap();
        let z: Vec<f64> = (0..4)
            .map(|r| head.bias[r] + (0..3).map(|c| head.weight.get(r, c) * h[c]).sum::<f64>())
            .collect();
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        for r in 0..4 {
            assert!((got[r] - z[r].exp() / total).abs() < 1e-14);
        }
        assert!(head.classify(&[1.0]).is_err());
    }

    #[test]
    fn predict_label_ties() {
        let d = Distribution::new(vec![0.1f64, 0.7, 0.2]).unwrap();
        assert_eq!(predict_label(&d), 1);
        assert_eq!(predict_label(&Distribution::new(vec![0.5f64, 0.5]).unwrap()), 0);
        assert_eq!(predict_label(&Distribution::<f64>::uniform(5)), 0);
    }

    #[test]
    fn nll_examples() {
        let perfect = Distribution::new(vec![0.0f64, 1.0, 0.0]).unwrap();
        assert_eq!(nll_loss(&[perfect], &[1]).unwrap(), 0.0);
        let u = Distribution::<f64>::uniform(5);
        assert!((nll_loss(std::slice::from_ref(&u), &[3]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((nll_loss(&[u.clone(), u.clone()], &[0, 4]).unwrap() - 2.0 * 5f64.ln()).abs() < 1e-12);
        assert!(nll_loss(std::slice::from_ref(&u), &[5]).is_err());
        assert!(nll_loss(&[u], &[0, 1]).is_err());
    }

    #[test]
    fn regress_examples() {
        let mut head = RegressorHead::<f64>::zeros(4, 3);
        head.bias = vec![0.1, 0.2, 0.3, 0.4].into();
        assert_eq!(&*head.regress(&[5.0, 6.0, 7.0]).unwrap(), &[0.1, 0.2, 0.3, 0.4]);
        let mut rng = seeded_rng(3);
        let head = RegressorHead::<f64>::random(&mut rng, 2, 3, 1.0);
        assert_eq!(&*head.regress(&[0.0; 3]).unwrap(), &[0.0, 0.0]);
        let h = [1.0, -1.0, 0.5];
        let got = head.regress(&h).unwrap();
        for r in 0..2 {
            let s: f64 = (0..3).map(|c| head.weight.get(r, c) * h[c]).sum();
            assert!((got[r] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_examples() {
        let truth = vec![vec![0.5; 4]; 2];
        assert_eq!(l2_loss(&truth, &truth).unwrap(), 0.0);
        let off: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + 1.0).collect()).collect();
        assert_eq!(l2_loss(&off, &truth).unwrap(), 8.0);
        let off3: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + 3.0).collect()).collect();
        assert_eq!(l2_loss(&off3, &truth).unwrap(), 72.0);
        assert!(l2_loss(&off[..1], &truth).is_err());
        assert!(l2_loss(&[vec![0.0; 3]], &[vec![0.0; 4]]).is_err());
    }
}
