//! The full trainable network: input projection → peephole LSTM → heads.

use rand::Rng;

use crate::error::{check_dim, invalid, Result};
use crate::force::NormParams;
use crate::heads::{ClassifierHead, Projection, RegressorHead};
use crate::numerics::prob::softmax_unchecked;
use crate::numerics::{Matrix, Vector};
use crate::params::ParamSet;
use crate::recurrent::{backward_sequence, forward_sequence, CellParams, ForwardTape};
use crate::scalar::Scalar;

/// What a sequence is trained against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a, T> {
    /// Every frame carries the sequence's action label.
    Label(usize),
    /// One force vector per frame, already normalized.
    Forces(&'a [Vec<T>]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Action,
    Force,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub projection: Projection<T>,
    pub cell: CellParams<T>,
    pub classifier: Option<ClassifierHead<T>>,
    pub regressor: Option<RegressorHead<T>>,
}

/// Sizes needed to build a fresh model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub projected_dim: usize,
    pub hidden_dim: usize,
    pub labels: Option<usize>,
    pub channels: Option<usize>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(shape: ModelShape) -> Self {
        ModelParams {
            projection: Projection {
                weight: Matrix::zeros(shape.projected_dim, shape.input_dim),
                bias: Vector::zeros(shape.projected_dim),
            },
            cell: CellParams::zeros(shape.projected_dim, shape.hidden_dim),
            classifier: shape.labels.map(|n| ClassifierHead::zeros(n, shape.hidden_dim)),
            regressor: shape.channels.map(|m| RegressorHead::zeros(m, shape.hidden_dim)),
        }
    }

    /// All weights drawn from `N(0, std²)`, biases zero except the forget gate.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, shape: ModelShape, std: f64, forget_bias: f64) -> Self {
        let projection = Projection::random(rng, shape.input_dim, shape.projected_dim, std);
        let cell = CellParams::random(rng, shape.projected_dim, shape.hidden_dim, std, forget_bias);
        let classifier = shape.labels.map(|n| ClassifierHead::random(rng, n, shape.hidden_dim, std));
        let regressor = shape.channels.map(|m| RegressorHead::random(rng, m, shape.hidden_dim, std));
        ModelParams {
            projection,
            cell,
            classifier,
            regressor,
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.projection.input_dim(),
            projected_dim: self.projection.output_dim(),
            hidden_dim: self.cell.hidden_dim(),
            labels: self.classifier.as_ref().map(|h| h.labels()),
            channels: self.regressor.as_ref().map(|h| h.channels()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.projection.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("projection output vs cell input", self.cell.input_dim(), self.projection.output_dim())?;
        check_dim("projection bias", self.projection.output_dim(), self.projection.bias.dim())?;
        self.cell.validate()?;
        let n = self.cell.hidden_dim();
        if let Some(h) = &self.classifier {
            check_dim("classifier input", n, h.weight.cols())?;
            check_dim("classifier bias", h.labels(), h.bias.dim())?;
            if h.labels() < 2 {
                return Err(invalid("classifier needs at least 2 labels"));
            }
        }
        if let Some(h) = &self.regressor {
            check_dim("regressor input", n, h.weight.cols())?;
            check_dim("regressor bias", h.channels(), h.bias.dim())?;
            if h.channels() < 1 {
                return Err(invalid("regressor needs at least 1 channel"));
            }
        }
        if !self.all_finite() {
            return Err(invalid("model parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Projects every frame and unrolls the cell.
    pub fn forward<X: AsRef<[T]>>(&self, xs: &[X]) -> Result<ForwardTape<T>> {
        let projected = xs
            .iter()
            .map(|x| self.projection.project(x.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        forward_sequence(&self.cell, &projected)
    }

    /// Summed sequence loss and its gradient with respect to every parameter.
    ///
    /// The loss is the per-frame negative log-likelihood or squared error,
    /// summed over frames. Non-finite values are propagated, not rejected, so
    /// the caller can detect divergence.
    pub fn loss_and_grad<X: AsRef<[T]>>(
        &self,
        xs: &[X],
        target: Target<'_, T>,
        truncation: Option<usize>,
    ) -> Result<(T, ModelParams<T>)> {
        let tape = self.forward(xs)?;
        let mut grads = ModelParams::zeros(self.shape());
        let n = self.cell.hidden_dim();
        let mut dh = vec![vec![T::zero(); n]; tape.len()];
        let mut loss = T::zero();

        match target {
            Target::Label(y) => {
                let head = self
                    .classifier
                    .as_ref()
                    .ok_or_else(|| invalid("model has no classifier head"))?;
                if y >= head.labels() {
                    return Err(invalid(format!("label {y} out of range for {} classes", head.labels())));
                }
                let g = grads.classifier.as_mut().expect("shape mirrors params");
                for (t, step) in tape.steps.iter().enumerate() {
                    let probs = softmax_unchecked(&head.logits(&step.h)?);
                    loss = loss - probs[y].ln();
                    let mut dz = probs;
                    dz[y] = dz[y] - T::one();
                    head.weight.tr_matvec_acc(&dz, &mut dh[t]);
                    g.weight.add_outer(&dz, &step.h);
                    for (b, &v) in g.bias.iter_mut().zip(&dz) {
                        *b = *b + v;
                    }
                }
            }
            Target::Forces(truth) => {
                let head = self
                    .regressor
                    .as_ref()
                    .ok_or_else(|| invalid("model has no regression head"))?;
                if truth.len() != tape.len() {
                    return Err(invalid(format!(
                        "{} force frames for {} feature frames",
                        truth.len(),
                        tape.len()
                    )));
                }
                let g = grads.regressor.as_mut().expect("shape mirrors params");
                let two = T::lit(2.0);
                for (t, step) in tape.steps.iter().enumerate() {
                    check_dim("force target", head.channels(), truth[t].len())?;
                    let pred = head.regress(&step.h)?;
                    let dv: Vec<T> = pred
                        .iter()
                        .zip(&truth[t])
                        .map(|(&p, &v)| {
                            loss = loss + (p - v) * (p - v);
                            two * (p - v)
                        })
                        .collect();
                    head.weight.tr_matvec_acc(&dv, &mut dh[t]);
                    g.weight.add_outer(&dv, &step.h);
                    for (b, &v) in g.bias.iter_mut().zip(&dv) {
                        *b = *b + v;
                    }
                }
            }
        }

        let back = backward_sequence(&self.cell, &tape, &dh, truncation)?;
        grads.cell = back.grads;
        for (x, dx) in xs.iter().zip(&back.dx) {
            grads.projection.weight.add_outer(dx, x.as_ref());
            for (b, &v) in grads.projection.bias.iter_mut().zip(dx.iter()) {
                *b = *b + v;
            }
        }
        Ok((loss, grads))
    }

    /// Loss only; same definition as [`ModelParams::loss_and_grad`].
    pub fn loss<X: AsRef<[T]>>(&self, xs: &[X], target: Target<'_, T>) -> Result<T> {
        let tape = self.forward(xs)?;
        let mut loss = T::zero();
        match target {
            Target::Label(y) => {
                let head = self
                    .classifier
                    .as_ref()
                    .ok_or_else(|| invalid("model has no classifier head"))?;
                for step in &tape.steps {
                    let probs = softmax_unchecked(&head.logits(&step.h)?);
                    loss = loss - probs[y].ln();
                }
            }
            Target::Forces(truth) => {
                let head = self
                    .regressor
                    .as_ref()
                    .ok_or_else(|| invalid("model has no regression head"))?;
                if truth.len() != tape.len() {
                    return Err(invalid("force/feature frame count mismatch"));
                }
                for (step, v) in tape.steps.iter().zip(truth) {
                    let pred = head.regress(&step.h)?;
                    loss = loss + crate::heads::l2_loss(&[pred], &[v])?;
                }
            }
        }
        Ok(loss)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            projection: Projection {
                weight: self.projection.weight.cast(),
                bias: self.projection.bias.cast(),
            },
            cell: {
                let mut c = CellParams::zeros(self.cell.input_dim(), self.cell.hidden_dim());
                for (dst, (_, src)) in c.tensors_mut().into_iter().zip(self.cell.tensors()) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = U::lit(s.as_f64());
                    }
                }
                c
            },
            classifier: self.classifier.as_ref().map(|h| ClassifierHead {
                weight: h.weight.cast(),
                bias: h.bias.cast(),
            }),
            regressor: self.regressor.as_ref().map(|h| RegressorHead {
                weight: h.weight.cast(),
                bias: h.bias.cast(),
            }),
        }
    }
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut out = vec![
            ("proj_w", self.projection.weight.as_slice()),
            ("proj_b", &self.projection.bias[..]),
        ];
        out.extend(self.cell.tensors());
        if let Some(h) = &self.classifier {
            out.push(("cls_w", h.weight.as_slice()));
            out.push(("cls_b", &h.bias[..]));
        }
        if let Some(h) = &self.regressor {
            out.push(("reg_w", h.weight.as_slice()));
            out.push(("reg_b", &h.bias[..]));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![self.projection.weight.as_mut_slice(), &mut self.projection.bias[..]];
        out.extend(self.cell.tensors_mut());
        if let Some(h) = &mut self.classifier {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.bias[..]);
        }
        if let Some(h) = &mut self.regressor {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.bias[..]);
        }
        out
    }
}

/// Trained network plus the metadata needed to interpret its outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub params: ModelParams<T>,
    /// Action names, index = label id. Empty when there is no classifier.
    pub labels: Vec<String>,
    /// Force channel names. Empty when there is no regressor.
    pub channels: Vec<String>,
    /// Training-set force normalization, kept so test data is scaled identically.
    pub norm: Option<NormParams>,
}

impl<T: Scalar> Model<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        let shape = params.shape();
        Model {
            labels: (0..shape.labels.unwrap_or(0)).map(|i| format!("label{i}")).collect(),
            channels: (0..shape.channels.unwrap_or(0)).map(|i| format!("ch{i}")).collect(),
            params,
            norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let shape = self.params.shape();
        check_dim("label names", shape.labels.unwrap_or(0), self.labels.len())?;
        check_dim("channel names", shape.channels.unwrap_or(0), self.channels.len())?;
        if let Some(norm) = &self.norm {
            check_dim("normalization channels", self.channels.len(), norm.channels())?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn label_count(&self) -> Option<usize> {
        self.params.classifier.as_ref().map(|h| h.labels())
    }

    pub fn channel_count(&self) -> Option<usize> {
        self.params.regressor.as_ref().map(|h| h.channels())
    }
}
