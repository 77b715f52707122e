//! PCA + sliding-window linear classifier with majority voting.
//!
//! Frames are reduced by PCA, each window is summarized by its mean, and a
//! one-vs-rest linear model scores every window. The sequence label is the
//! majority over window labels.

use rand::Rng;

use crate::data::FeatureSequence;
use crate::error::{check_dim, invalid, Result};
use crate::numerics::rng::seeded_rng;
use crate::numerics::{argmax, pca_fit, Matrix, PcaModel, Vector};

pub const DEFAULT_WINDOW: usize = 36;
pub const DEFAULT_PCA_DIM: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub window: usize,
    pub stride: usize,
    /// Requested PCA width, reduced to what the training data supports.
    pub pca_dim: usize,
    /// Passes over the window set.
    pub epochs: usize,
    /// Hinge-loss regularization strength.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: DEFAULT_WINDOW,
            stride: 1,
            pca_dim: DEFAULT_PCA_DIM,
            epochs: 20,
            lambda: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowClassifier {
    pub window: usize,
    pub stride: usize,
    pub pca: PcaModel<f64>,
    /// `N × k`, one row per class.
    pub weights: Matrix<f64>,
    pub bias: Vector<f64>,
}

/// `[start, end)` window bounds. A sequence shorter than `window` gets one window over all of it.
pub fn window_bounds(len: usize, window: usize, stride: usize) -> Vec<(usize, usize)> {
    if len == 0 {
        return Vec::new();
    }
    if len < window {
        return vec![(0, len)];
    }
    (0..=len - window).step_by(stride.max(1)).map(|s| (s, s + window)).collect()
}

/// Most frequent label; ties go to the lowest index.
pub fn majority_vote(labels: &[usize], n: usize) -> usize {
    let mut counts = vec![0usize; n.max(1)];
    for &l in labels {
        if l < counts.len() {
            counts[l] += 1;
        }
    }
    argmax(&counts)
}

fn window_summaries(pca: &PcaModel<f64>, frames: &[Vector<f64>], window: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    let z: Vec<Vector<f64>> = frames.iter().map(|f| pca.transform(f)).collect::<Result<_>>()?;
    let k = pca.output_dim();
    Ok(window_bounds(z.len(), window, stride)
        .into_iter()
        .map(|(a, b)| {
            let mut m = vec![0.0; k];
            for f in &z[a..b] {
                for (acc, &v) in m.iter_mut().zip(f.iter()) {
                    *acc += v;
                }
            }
            let n = (b - a) as f64;
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
        .collect())
}

impl WindowClassifier {
    pub fn labels(&self) -> usize {
        self.weights.rows()
    }

    pub fn window_scores(&self, summary: &[f64]) -> Result<Vector<f64>> {
        let mut s = self.weights.matvec(summary)?;
        for (v, &b) in s.iter_mut().zip(self.bias.iter()) {
            *v += b;
        }
        Ok(s)
    }

    /// Per-window labels in window order.
    pub fn window_labels(&self, frames: &[Vector<f64>]) -> Result<Vec<usize>> {
        window_summaries(&self.pca, frames, self.window, self.stride)?
            .iter()
            .map(|s| Ok(argmax(&self.window_scores(s)?)))
            .collect()
    }

    pub fn classify(&self, frames: &[Vector<f64>]) -> Result<usize> {
        if frames.is_empty() {
            return Err(invalid("cannot classify an empty sequence"));
        }
        Ok(majority_vote(&self.window_labels(frames)?, self.labels()))
    }
}

pub fn window_classify(c: &WindowClassifier, xs: &FeatureSequence<f64>) -> Result<usize> {
    c.classify(&xs.frames)
}

/// Fits PCA on every training frame, then one hinge-loss linear model per
/// class on the window summaries by seeded stochastic subgradient steps with
/// step size `1 / (λ t)`. The bias is treated as a weight on a constant input.
pub fn window_fit(data: &[FeatureSequence<f64>], labels: usize, cfg: &WindowConfig) -> Result<WindowClassifier> {
    if cfg.window == 0 || cfg.stride == 0 {
        return Err(invalid("window and stride must be at least 1"));
    }
    if !(cfg.lambda > 0.0) {
        return Err(invalid("regularization must be positive"));
    }
    if labels < 2 {
        return Err(invalid("window classifier needs at least two labels"));
    }
    let frames: Vec<&Vector<f64>> = data.iter().flat_map(|s| s.frames.iter()).collect();
    if frames.len() < 2 {
        return Err(invalid("window classifier needs at least two training frames"));
    }
    let d = frames[0].dim();
    for f in &frames {
        check_dim("window classifier frame", d, f.dim())?;
    }
    let k = cfg.pca_dim.min(d).min(frames.len()).max(1);
    let pca = pca_fit(&frames, k)?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let y = s.label.ok_or_else(|| invalid(format!("training sequence {i} has no label")))?;
        if y >= labels {
            return Err(invalid(format!("label {y} out of range for {labels} labels")));
        }
        for w in window_summaries(&pca, &s.frames, cfg.window, cfg.stride)? {
            xs.push(w);
            ys.push(y);
        }
    }

    let mut weights = Matrix::zeros(labels, k);
    let mut bias = Vector::zeros(labels);
    let mut rng = seeded_rng(cfg.seed);
    let steps = cfg.epochs.max(1) * xs.len();
    for t in 1..=steps {
        let i = rng.random_range(0..xs.len());
        let eta = 1.0 / (cfg.lambda * t as f64);
        let decay = 1.0 - eta * cfg.lambda;
        for c in 0..labels {
            let y = if ys[i] == c { 1.0 } else { -1.0 };
            let score = crate::numerics::dot(weights.row(c), &xs[i]) + bias[c];
            for j in 0..k {
                let w = weights.get(c, j) * decay;
                weights.set(c, j, w);
            }
            bias[c] *= decay;
            if y * score < 1.0 {
                for j in 0..k {
                    let w = weights.get(c, j) + eta * y * xs[i][j];
                    weights.set(c, j, w);
                }
                bias[c] += eta * y;
            }
        }
    }
    Ok(WindowClassifier {
        window: cfg.window,
        stride: cfg.stride,
        pca,
        weights,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::normal;

    #[test]
    fn vote_rules() {
        assert_eq!(majority_vote(&[0, 0, 1], 2), 0);
        assert_eq!(majority_vote(&[1, 3, 3, 1], 4), 1);
        assert_eq!(majority_vote(&[2, 4, 4, 2, 0], 5), 2);
        assert_eq!(majority_vote(&[], 3), 0);
    }

    #[test]
    fn bounds() {
        assert_eq!(window_bounds(10, 36, 1), vec![(0, 10)]);
        let b = window_bounds(40, 36, 1);
        assert_eq!(b.len(), 5);
        assert_eq!(b[4], (4, 40));
        assert_eq!(window_bounds(40, 36, 3), vec![(0, 36), (3, 39)]);
        assert_eq!(window_bounds(36, 36, 1), vec![(0, 36)]);
    }

    fn blobs(n: usize, t: usize, seed: u64) -> Vec<FeatureSequence<f64>> {
        let mut rng = seeded_rng(seed);
        let centers = [[2.0, 0.0, 0.0, 1.0], [0.0, 2.0, 0.0, -1.0], [0.0, 0.0, 2.0, 0.0]];
        (0..n)
            .map(|i| {
                let y = i % 3;
                let frames = (0..t)
                    .map(|_| centers[y].iter().map(|&c| c + normal(&mut rng, 0.5)).collect())
                    .collect();
                FeatureSequence::new(frames).unwrap().with_label(y)
            })
            .collect()
    }

    #[test]
    fn separable_blobs() {
        let cfg = WindowConfig {
            window: 5,
            pca_dim: 3,
            ..Default::default()
        };
        let train = blobs(30, 12, 1);
        let c = window_fit(&train, 3, &cfg).unwrap();
        assert_eq!(c.pca.output_dim(), 3);
        let test = blobs(30, 12, 2);
        let hits = test
            .iter()
            .filter(|s| window_classify(&c, s).unwrap() == s.label.unwrap())
            .count();
        assert_eq!(hits, 30);
        let again = window_fit(&train, 3, &cfg).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn short_sequence_gets_one_window() {
        let train = blobs(9, 12, 3);
        let c = window_fit(&train, 3, &WindowConfig { pca_dim: 2, ..Default::default() }).unwrap();
        assert_eq!(c.window_labels(&train[0].frames[..10]).unwrap().len(), 1);
    }

    #[test]
    fn trailing_frames_without_a_new_window_change_nothing() {
        let train = blobs(9, 12, 4);
        let cfg = WindowConfig {
            window: 4,
            stride: 3,
            pca_dim: 2,
            ..Default::default()
        };
        let c = window_fit(&train, 3, &cfg).unwrap();
        let frames = &train[1].frames;
        // 10 frames: windows start at 0,3,6; an 11th frame opens no new window
        assert_eq!(
            c.window_labels(&frames[..10]).unwrap(),
            c.window_labels(&frames[..11]).unwrap()
        );
    }
}
