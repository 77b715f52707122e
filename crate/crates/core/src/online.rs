//! Streaming per-frame inference.
//!
//! A [`Session`] owns the recurrent state for one video and advances it by
//! exactly one cell step per fed frame, so feeding a sequence frame by frame
//! gives bit-identical beliefs to evaluating it offline.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::model::ModelParams;
use crate::numerics::{Distribution, Vector};
use crate::recurrent::{cell_step, CellState};
use crate::scalar::Scalar;

/// Default number of identical consecutive labels that counts as convergence.
pub const DEFAULT_CONVERGENCE_WINDOW: usize = 5;

/// Output of one streamed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBelief<T> {
    pub dist: Distribution<T>,
    /// Entropy over `ln N`, in `[0, 1]`.
    pub uncertainty: T,
    pub label: usize,
}

impl<T: Scalar> FrameBelief<T> {
    fn from_dist(dist: Distribution<T>) -> Self {
        FrameBelief {
            uncertainty: dist.uncertainty(),
            label: dist.argmax(),
            dist,
        }
    }

    /// `frame,p_0,…,p_{N−1},uncertainty,label`
    pub fn record(&self, frame: usize) -> String {
        let mut s = frame.to_string();
        for p in self.dist.iter() {
            let _ = write!(s, ",{p}");
        }
        let _ = write!(s, ",{},{}", self.uncertainty, self.label);
        s
    }
}

/// CSV header matching [`FrameBelief::record`] for `n` labels.
pub fn record_header(n: usize) -> String {
    let mut s = String::from("frame");
    for i in 0..n {
        let _ = write!(s, ",p{i}");
    }
    s.push_str(",uncertainty,label");
    s
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BeliefTrajectory<T> {
    pub dists: Vec<Distribution<T>>,
    pub uncertainty: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> BeliefTrajectory<T> {
    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn push(&mut self, b: &FrameBelief<T>) {
        self.dists.push(b.dist.clone());
        self.uncertainty.push(b.uncertainty);
        self.labels.push(b.label);
    }

    pub fn frame(&self, t: usize) -> FrameBelief<T> {
        FrameBelief {
            dist: self.dists[t].clone(),
            uncertainty: self.uncertainty[t],
            label: self.labels[t],
        }
    }

    /// Line-delimited export, one record per frame after a header line.
    pub fn to_csv(&self) -> String {
        let n = self.dists.first().map_or(0, |d| d.len());
        let mut s = record_header(n);
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&self.frame(t).record(t));
            s.push('\n');
        }
        s
    }
}

/// Single-owner streaming state over a shared read-only model.
pub struct Session<'m, T> {
    model: &'m ModelParams<T>,
    state: CellState<T>,
    frames: usize,
    recent: VecDeque<usize>,
    window: usize,
    trajectory: Option<BeliefTrajectory<T>>,
}

impl<'m, T: Scalar> Session<'m, T> {
    pub fn new(model: &'m ModelParams<T>) -> Self {
        Self::with_window(model, DEFAULT_CONVERGENCE_WINDOW)
    }

    /// `window` bounds the label history kept for [`Session::converged`].
    pub fn with_window(model: &'m ModelParams<T>, window: usize) -> Self {
        Session {
            model,
            state: CellState::zeros(model.cell.hidden_dim()),
            frames: 0,
            recent: VecDeque::with_capacity(window),
            window: window.max(1),
            trajectory: None,
        }
    }

    /// Keeps every emitted belief in an owned trajectory log.
    pub fn record_trajectory(mut self) -> Self {
        self.trajectory = Some(BeliefTrajectory::default());
        self
    }

    pub fn frames_fed(&self) -> usize {
        self.frames
    }

    pub fn state(&self) -> &CellState<T> {
        &self.state
    }

    pub fn trajectory(&self) -> Option<&BeliefTrajectory<T>> {
        self.trajectory.as_ref()
    }

    /// Projects `x`, advances the cell once, returns the new hidden state.
    pub fn advance(&mut self, x: &[T]) -> Result<&[T]> {
        let z = self.model.projection.project(x)?;
        let (next, _) = cell_step(&self.model.cell, &self.state, &z)?;
        self.state = next;
        self.frames += 1;
        Ok(&self.state.h)
    }

    pub fn feed_frame(&mut self, x: &[T]) -> Result<FrameBelief<T>> {
        let head = self
            .model
            .classifier
            .as_ref()
            .ok_or_else(|| invalid("model has no classifier head"))?;
        let h = self.advance(x)?;
        let belief = FrameBelief::from_dist(head.classify(h)?);
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(belief.label);
        if let Some(traj) = &mut self.trajectory {
            traj.push(&belief);
        }
        Ok(belief)
    }

    /// Advances once and returns the forces clamped to `[0, 1]`.
    pub fn feed_force_frame(&mut self, x: &[T]) -> Result<Vector<T>> {
        let head = self
            .model
            .regressor
            .as_ref()
            .ok_or_else(|| invalid("model has no regression head"))?;
        let h = self.advance(x)?;
        Ok(head.regress(h)?.map(|v| v.max(T::zero()).min(T::one())))
    }

    /// The label if the last `k` predictions agree and at least `k` frames were fed.
    pub fn converged(&self, k: usize) -> Option<usize> {
        if k == 0 || k > self.recent.len() {
            return None;
        }
        let mut last = self.recent.iter().rev().take(k);
        let first = *last.next()?;
        last.all(|&l| l == first).then_some(first)
    }
}

/// Per-frame beliefs from one offline forward pass.
pub fn offline_trajectory<T: Scalar, X: AsRef<[T]>>(
    model: &ModelParams<T>,
    xs: &[X],
) -> Result<BeliefTrajectory<T>> {
    let head = model
        .classifier
        .as_ref()
        .ok_or_else(|| invalid("model has no classifier head"))?;
    let tape = model.forward(xs)?;
    let mut traj = BeliefTrajectory::default();
    for step in &tape.steps {
        traj.push(&FrameBelief::from_dist(head.classify(&step.h)?));
    }
    Ok(traj)
}

/// Linearly weighted average `Σ t·p_t / Σ t` over `t = 1..T`, so the last frame weighs most.
pub fn weighted_average<T: Scalar>(dists: &[Distribution<T>]) -> Result<Distribution<T>> {
    let n = dists.first().ok_or_else(|| invalid("weighted average of zero frames"))?.len();
    let t = dists.len();
    let total = T::lit((t * (t + 1) / 2) as f64);
    let mut acc = vec![T::zero(); n];
    for (i, d) in dists.iter().enumerate() {
        if d.len() != n {
            return Err(invalid("distributions over different label counts"));
        }
        let w = T::lit((i + 1) as f64) / total;
        for (a, &p) in acc.iter_mut().zip(d.iter()) {
            *a = *a + w * p;
        }
    }
    Ok(Distribution::from_vec_unchecked(acc))
}

/// Whole-sequence label from the linearly weighted frame beliefs.
pub fn classify_sequence<T: Scalar, X: AsRef<[T]>>(
    model: &ModelParams<T>,
    xs: &[X],
) -> Result<(usize, Distribution<T>)> {
    if xs.is_empty() {
        return Err(invalid("cannot classify an empty sequence"));
    }
    let traj = offline_trajectory(model, xs)?;
    let avg = weighted_average(&traj.dists)?;
    Ok((avg.argmax(), avg))
}

/// Per-frame force estimates clamped to `[0, 1]`, `T × M`.
pub fn estimate_forces<T: Scalar, X: AsRef<[T]>>(model: &ModelParams<T>, xs: &[X]) -> Result<Vec<Vector<T>>> {
    let head = model
        .regressor
        .as_ref()
        .ok_or_else(|| invalid("model has no regression head"))?;
    let tape = model.forward(xs)?;
    tape.steps
        .iter()
        .map(|s| Ok(head.regress(&s.h)?.map(|v| v.max(T::zero()).min(T::one()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use crate::numerics::rng::{normal, seeded_rng};

    fn shape(labels: Option<usize>, channels: Option<usize>) -> ModelShape {
        ModelShape {
            input_dim: 6,
            projected_dim: 4,
            hidden_dim: 5,
            labels,
            channels,
        }
    }

    fn inputs(t: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..t).map(|_| (0..6).map(|_| normal(&mut rng, 1.0)).collect()).collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelParams::<f64>::zeros(shape(Some(5), None));
        let mut s = Session::new(&m);
        let b = s.feed_frame(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(b.dist.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!((b.uncertainty - 1.0).abs() < 1e-12);
        assert_eq!(b.label, 0);
        assert!(s.feed_frame(&[1.0]).is_err());
    }

    #[test]
    fn streaming_matches_offline_bitwise() {
        let m = ModelParams::<f64>::random(&mut seeded_rng(1), shape(Some(3), None), 0.5, 0.0);
        let xs = inputs(9, 2);
        let offline = offline_trajectory(&m, &xs).unwrap();
        let mut s = Session::new(&m).record_trajectory();
        for x in &xs {
            s.feed_frame(x).unwrap();
        }
        assert_eq!(s.trajectory().unwrap(), &offline);
        assert_eq!(s.frames_fed(), 9);
    }

    fn session_with_labels<'m>(m: &'m ModelParams<f64>, labels: &[usize]) -> Session<'m, f64> {
        let mut s = Session::new(m);
        for &l in labels {
            s.recent.push_back(l);
            if s.recent.len() > s.window {
                s.recent.pop_front();
            }
        }
        s
    }

    #[test]
    fn convergence_rule() {
        let m = ModelParams::<f64>::zeros(shape(Some(3), None));
        assert_eq!(session_with_labels(&m, &[2, 2, 2, 2, 2]).converged(5), Some(2));
        assert_eq!(session_with_labels(&m, &[2, 2, 1, 2, 2]).converged(5), None);
        assert_eq!(session_with_labels(&m, &[2, 2, 2]).converged(5), None);
        assert_eq!(session_with_labels(&m, &[0, 1, 1, 1]).converged(3), Some(1));
        assert_eq!(session_with_labels(&m, &[1]).converged(0), None);
    }

    #[test]
    fn ring_buffer_is_bounded() {
        let m = ModelParams::<f64>::zeros(shape(Some(3), None));
        let mut s = Session::with_window(&m, 3);
        for x in inputs(50, 3) {
            s.feed_frame(&x).unwrap();
        }
        assert_eq!(s.recent.len(), 3);
        assert!(s.trajectory().is_none());
        assert_eq!(s.converged(3), Some(0));
    }

    #[test]
    fn weighted_average_rule() {
        let p1 = Distribution::new(vec![1.0f64, 0.0]).unwrap();
        let p2 = Distribution::new(vec![0.25f64, 0.75]).unwrap();
        let one = weighted_average(std::slice::from_ref(&p1)).unwrap();
        assert_eq!(one, p1);
        let two = weighted_average(&[p1.clone(), p2.clone()]).unwrap();
        assert!((two[0] - (1.0 + 2.0 * 0.25) / 3.0).abs() < 1e-15);
        assert!((two[1] - 1.5 / 3.0).abs() < 1e-15);
        let same = weighted_average(&vec![p2.clone(); 7]).unwrap();
        for (a, b) in same.iter().zip(p2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(weighted_average::<f64>(&[]).is_err());
    }

    #[test]
    fn classify_sequence_output_is_a_distribution() {
        let m = ModelParams::<f64>::random(&mut seeded_rng(4), shape(Some(4), None), 0.5, 0.0);
        let (label, d) = classify_sequence(&m, &inputs(11, 5)).unwrap();
        assert!(Distribution::new(d.to_vec()).is_ok());
        assert_eq!(label, d.argmax());
        assert!(classify_sequence::<f64, Vec<f64>>(&m, &[]).is_err());
    }

    #[test]
    fn force_estimates() {
        let mut m = ModelParams::<f64>::zeros(shape(None, Some(4)));
        m.regressor.as_mut().unwrap().bias = Vector::filled(4, 0.3);
        let f = estimate_forces(&m, &inputs(6, 6)).unwrap();
        assert_eq!(f.len(), 6);
        assert!(f.iter().all(|r| r.iter().all(|&v| v == 0.3)));
        m.regressor.as_mut().unwrap().bias = Vector::filled(4, 1.7);
        let f = estimate_forces(&m, &inputs(2, 6)).unwrap();
        assert!(f.iter().all(|r| r.iter().all(|&v| v == 1.0)));
        let cls = ModelParams::<f64>::zeros(shape(Some(2), None));
        assert!(estimate_forces(&cls, &inputs(2, 6)).is_err());
        let mut s = Session::new(&m);
        assert_eq!(&*s.feed_force_frame(&inputs(1, 7)[0]).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn record_format() {
        let b = FrameBelief::from_dist(Distribution::new(vec![0.25f64, 0.75]).unwrap());
        assert_eq!(record_header(2), "frame,p0,p1,uncertainty,label");
        let rec = b.record(3);
        assert!(rec.starts_with("3,0.25,0.75,"));
        assert!(rec.ends_with(",1"));
    }
}
