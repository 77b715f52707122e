//! Minibatch training with per-parameter adaptive step sizes.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::write_atomic;
use crate::data::{FeatureSequence, ForceSequence};
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{Model, ModelParams, ModelShape, Target, Task};
use crate::numerics::rng::{seeded_rng, shuffle};
use crate::online::{classify_sequence, estimate_forces};
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const ACTION_HIDDEN: usize = 64;
pub const FORCE_HIDDEN: usize = 128;
const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_rate: f64,
    pub init_std: f64,
    /// Global gradient-norm ceiling; `inf` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    /// Block length for truncated backpropagation; `None` is full BPTT.
    pub truncation: Option<usize>,
    /// Recurrent width; defaults to 64 for actions and 128 for forces.
    pub hidden: Option<usize>,
    /// Projection output width; defaults to the hidden width.
    pub projected: Option<usize>,
    pub forget_bias: f64,
    /// Where to write the per-epoch `epoch,loss,metric` log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            epochs: 100,
            base_rate: 0.01,
            init_std: 0.01,
            clip_norm: 5.0,
            seed: 0,
            truncation: None,
            hidden: None,
            projected: None,
            forget_bias: 0.0,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.base_rate > 0.0 && self.base_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.base_rate)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(invalid(format!("init std must be positive, got {}", self.init_std)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if self.truncation == Some(0) {
            return Err(invalid("truncation length must be at least 1"));
        }
        if self.hidden == Some(0) || self.projected == Some(0) {
            return Err(invalid("layer widths must be at least 1"));
        }
        if !self.forget_bias.is_finite() {
            return Err(invalid("forget bias must be finite"));
        }
        Ok(())
    }

    pub fn hidden_for(&self, task: Task) -> usize {
        self.hidden.unwrap_or(match task {
            Task::Action => ACTION_HIDDEN,
            Task::Force => FORCE_HIDDEN,
        })
    }
}

/// `accum += g²; param −= rate · g / (√accum + 1e-8)`, elementwise.
pub fn adaptive_update<T: Scalar>(param: &mut [T], grad: &[T], accum: &mut [T], base_rate: T) -> Result<()> {
    check_dim("gradient", param.len(), grad.len())?;
    check_dim("accumulator", param.len(), accum.len())?;
    let eps = T::lit(ADAGRAD_EPS);
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(accum.iter_mut()) {
        *a = *a + g * g;
        *p = *p - base_rate * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// Squared-gradient accumulators laid out like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub accum: ModelParams<T>,
    pub steps: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(shape: ModelShape) -> Self {
        OptimizerState {
            accum: ModelParams::zeros(shape),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, base_rate: T) -> Result<()> {
        let g = grads.tensors();
        for ((p, a), (name, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.accum.tensors_mut())
            .zip(g)
        {
            adaptive_update(p, g, a, base_rate).map_err(|e| invalid(format!("{name}: {e}")))?;
        }
        self.steps += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-frame training loss over the epoch.
    pub loss: f64,
    /// Held-out accuracy (actions) or mean absolute error (forces).
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-frame loss of the initialized model, before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,metric\n");
        for r in &self.epochs {
            let _ = write!(s, "{},{},", r.epoch, r.loss);
            if let Some(m) = r.metric {
                let _ = write!(s, "{m}");
            }
            s.push('\n');
        }
        s
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }
}

struct Example<'a, T> {
    xs: &'a [crate::numerics::Vector<T>],
    target: Target<'a, T>,
}

fn frames<T>(ex: &[Example<'_, T>]) -> usize {
    ex.iter().map(|e| e.xs.len()).sum()
}

fn mean_loss<T: Scalar>(params: &ModelParams<T>, ex: &[Example<'_, T>]) -> Result<f64> {
    let losses: Vec<Result<T>> = ex.par_iter().map(|e| params.loss(e.xs, e.target)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?.as_f64();
    }
    Ok(total / frames(ex) as f64)
}

fn fit<T: Scalar>(
    mut params: ModelParams<T>,
    examples: &[Example<'_, T>],
    cfg: &TrainConfig,
    rng: &mut crate::numerics::SeededRng,
    mut metric: impl FnMut(&ModelParams<T>) -> Result<Option<f64>>,
) -> Result<(ModelParams<T>, TrainLog)> {
    let mut log = TrainLog {
        initial_loss: mean_loss(&params, examples)?,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut opt = OptimizerState::new(params.shape());
    let rate = T::lit(cfg.base_rate);
    let clip = T::lit(cfg.clip_norm);
    let total_frames = frames(examples) as f64;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle(rng, &mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(T, ModelParams<T>)>> = batch
                .par_iter()
                .map(|&i| params.loss_and_grad(examples[i].xs, examples[i].target, cfg.truncation))
                .collect();
            let mut grads = ModelParams::zeros(params.shape());
            let mut batch_loss = T::zero();
            for r in results {
                let (l, g) = r?;
                batch_loss = batch_loss + l;
                grads.add_assign(&g);
            }
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {batch_loss}"),
                });
            }
            if cfg.clip_norm.is_finite() {
                grads.clip_norm(clip);
            }
            let mut next = params.clone();
            opt.step(&mut next, &grads, rate)?;
            if !next.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "parameter update produced a non-finite value".into(),
                });
            }
            params = next;
            epoch_loss += batch_loss.as_f64();
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss: epoch_loss / total_frames,
            metric: metric(&params)?,
        });
    }
    if let Some(path) = &cfg.log_path {
        write_atomic(path, log.to_csv().as_bytes())?;
    }
    Ok((params, log))
}

fn common_dim<'a, T: Scalar + 'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence<T>>) -> Result<usize> {
    let mut dim = None;
    for (i, s) in seqs.into_iter().enumerate() {
        s.validate()?;
        match dim {
            None => dim = Some(s.dim()),
            Some(d) if d != s.dim() => {
                return Err(invalid(format!("sequence {i} has dimension {}, expected {d}", s.dim())))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| invalid("no training sequences"))
}

/// Fraction of `seqs` whose [`classify_sequence`] label matches.
pub fn sequence_accuracy<T: Scalar>(params: &ModelParams<T>, seqs: &[FeatureSequence<T>]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(invalid("accuracy over zero sequences"));
    }
    let hits: Vec<Result<bool>> = seqs
        .par_iter()
        .map(|s| {
            let y = s.label.ok_or_else(|| invalid("sequence has no label"))?;
            Ok(classify_sequence(params, &s.frames)?.0 == y)
        })
        .collect();
    let mut n = 0usize;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / seqs.len() as f64)
}

/// Mean absolute error of clamped force estimates over every frame and channel.
pub fn force_mae<T: Scalar>(params: &ModelParams<T>, seqs: &[ForceSequence<T>]) -> Result<f64> {
    let errs: Vec<Result<(f64, usize)>> = seqs
        .par_iter()
        .map(|s| {
            let est = estimate_forces(params, &s.features.frames)?;
            check_dim("force frames", est.len(), s.forces.len())?;
            let mut e = 0.0;
            let mut n = 0;
            for (p, v) in est.iter().zip(&s.forces) {
                check_dim("force channels", p.len(), v.len())?;
                for (&a, &b) in p.iter().zip(v) {
                    e += (a - b).abs().as_f64();
                    n += 1;
                }
            }
            Ok((e, n))
        })
        .collect();
    let (mut e, mut n) = (0.0, 0);
    for r in errs {
        let (a, b) = r?;
        e += a;
        n += b;
    }
    if n == 0 {
        return Err(invalid("force error over zero frames"));
    }
    Ok(e / n as f64)
}

/// Trains projection, cell and softmax head on labeled sequences.
///
/// `labels` is the size of the label set; at least two distinct labels must
/// occur in `data`. `held_out` (may be empty) is scored after every epoch.
pub fn train_classifier<T: Scalar>(
    data: &[FeatureSequence<T>],
    held_out: &[FeatureSequence<T>],
    labels: usize,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    let dim = common_dim(data.iter().chain(held_out))?;
    let mut seen = vec![false; labels];
    let mut examples = Vec::with_capacity(data.len());
    for (i, s) in data.iter().enumerate() {
        let y = s.label.ok_or_else(|| invalid(format!("training sequence {i} has no label")))?;
        if y >= labels {
            return Err(invalid(format!("label {y} out of range for {labels} labels")));
        }
        seen[y] = true;
        examples.push(Example {
            xs: &s.frames,
            target: Target::Label(y),
        });
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(invalid("training data must contain at least two labels"));
    }
    for s in held_out {
        if s.label.is_none_or(|y| y >= labels) {
            return Err(invalid("held-out sequence without a valid label"));
        }
    }
    let hidden = cfg.hidden_for(Task::Action);
    let shape = ModelShape {
        input_dim: dim,
        projected_dim: cfg.projected.unwrap_or(hidden),
        hidden_dim: hidden,
        labels: Some(labels),
        channels: None,
    };
    let mut rng = seeded_rng(cfg.seed);
    let init = ModelParams::random(&mut rng, shape, cfg.init_std, cfg.forget_bias);
    let (params, log) = fit(init, &examples, cfg, &mut rng, |p| {
        if held_out.is_empty() {
            Ok(None)
        } else {
            sequence_accuracy(p, held_out).map(Some)
        }
    })?;
    Ok((Model::new(params), log))
}

/// Trains projection, cell and affine force head on normalized force targets.
pub fn train_regressor<T: Scalar>(
    data: &[ForceSequence<T>],
    held_out: &[ForceSequence<T>],
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    let dim = common_dim(data.iter().chain(held_out).map(|s| &s.features))?;
    let channels = data[0].forces.first().map_or(0, |f| f.len());
    if channels == 0 {
        return Err(invalid("force targets have no channels"));
    }
    for (i, s) in data.iter().chain(held_out).enumerate() {
        if s.forces.len() != s.features.len() {
            return Err(invalid(format!(
                "sequence {i}: {} force frames for {} feature frames",
                s.forces.len(),
                s.features.len()
            )));
        }
        if let Some(f) = s.forces.iter().find(|f| f.len() != channels) {
            return Err(invalid(format!("sequence {i}: {} force channels, expected {channels}", f.len())));
        }
        if s.forces.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(format!("sequence {i}: non-finite force target")));
        }
    }
    let examples: Vec<Example<'_, T>> = data
        .iter()
        .map(|s| Example {
            xs: &s.features.frames,
            target: Target::Forces(&s.forces),
        })
        .collect();
    let hidden = cfg.hidden_for(Task::Force);
    let shape = ModelShape {
        input_dim: dim,
        projected_dim: cfg.projected.unwrap_or(hidden),
        hidden_dim: hidden,
        labels: None,
        channels: Some(channels),
    };
    let mut rng = seeded_rng(cfg.seed);
    let init = ModelParams::random(&mut rng, shape, cfg.init_std, cfg.forget_bias);
    let (params, log) = fit(init, &examples, cfg, &mut rng, |p| {
        if held_out.is_empty() {
            Ok(None)
        } else {
            force_mae(p, held_out).map(Some)
        }
    })?;
    Ok((Model::new(params), log))
}
