//! Leave-one-subject-out evaluation of a manifest: the recurrent model, both
//! baselines, online curves, offset tables, confusion, force regression and
//! bimodal fusion. Produces plot-ready CSV files.

use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::{hmm_fit, window_fit, GaussianHmm, HmmConfig, WindowConfig, DEFAULT_PCA_DIM};
use crate::binio::write_atomic;
use crate::container::HmmSet;
use crate::data::eval::{
    action_error_csv, align_at_touching_point, channel_error_csv, confusion_csv, confusion_matrix, force_error,
    fuse_modalities, fusion_csv, loso_splits, resample_frames, summarize_force_errors, AccuracyTable, AlignItem,
    AlignedCurves, FramePredictions, OffsetTable, DEFAULT_L_POST, DEFAULT_L_PRE, DEFAULT_OFFSETS,
};
use crate::data::manifest::{load_record, DatasetManifest, Record};
use crate::data::{FeatureSequence, ForceSequence};
use crate::error::{invalid, Result};
use crate::force::{Conditioning, ForceRecording, NormParams};
use crate::numerics::{pca_fit, Vector};
use crate::online::{classify_sequence, estimate_forces, offline_trajectory};
use crate::training::{train_classifier, train_regressor, TrainConfig};

pub const METHODS: [&str; 3] = ["SVM", "HMM", "LSTM"];

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub train: TrainConfig,
    /// Used for the force regressor; its hidden size defaults per task.
    pub force_train: TrainConfig,
    pub hmm: HmmConfig,
    pub hmm_pca_dim: usize,
    pub window: WindowConfig,
    pub offsets: Vec<i64>,
    pub l_pre: usize,
    pub l_post: usize,
    pub conditioning: Conditioning,
    pub baselines: bool,
    /// Force regression and fusion, for objects whose records all carry forces.
    pub forces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            train: TrainConfig::default(),
            force_train: TrainConfig::default(),
            hmm: HmmConfig::default(),
            hmm_pca_dim: DEFAULT_PCA_DIM,
            window: WindowConfig::default(),
            offsets: DEFAULT_OFFSETS.to_vec(),
            l_pre: DEFAULT_L_PRE,
            l_post: DEFAULT_L_POST,
            conditioning: Conditioning::default(),
            baselines: true,
            forces: true,
        }
    }
}

/// Outcome for one held-out sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceResult {
    /// Index into the manifest's records.
    pub record: usize,
    pub subject: String,
    pub label: usize,
    pub touch: Option<usize>,
    pub predicted: usize,
    pub svm: Option<usize>,
    pub hmm: Option<usize>,
    /// Per-frame argmax of the online belief.
    pub frame_labels: Vec<usize>,
    pub uncertainty: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldSummary {
    pub subject: String,
    pub train: usize,
    pub test: usize,
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceReport {
    pub channels: Vec<String>,
    pub per_channel: Vec<f64>,
    pub per_action: Vec<Option<f64>>,
    pub vision_accuracy: f64,
    pub fused_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectReport {
    pub name: String,
    pub labels: Vec<String>,
    pub sequences: Vec<SequenceResult>,
    pub folds: Vec<FoldSummary>,
    /// Absent when some sequence has no touching point.
    pub offsets: Option<OffsetTable>,
    pub accuracy_curves: Option<AlignedCurves>,
    pub uncertainty_curves: Option<AlignedCurves>,
    pub forces: Option<ForceReport>,
}

impl ObjectReport {
    pub fn accuracy(&self) -> f64 {
        let hits = self.sequences.iter().filter(|s| s.predicted == s.label).count();
        hits as f64 / self.sequences.len().max(1) as f64
    }

    fn method_accuracy(&self, label: usize, pick: impl Fn(&SequenceResult) -> Option<usize>) -> Option<f64> {
        let of_label: Vec<&SequenceResult> = self.sequences.iter().filter(|s| s.label == label).collect();
        let preds: Vec<usize> = of_label.iter().filter_map(|s| pick(s)).collect();
        if of_label.is_empty() || preds.len() != of_label.len() {
            return None;
        }
        Some(preds.iter().filter(|&&p| p == label).count() as f64 / preds.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub objects: Vec<ObjectReport>,
    /// Conditions worth knowing about that did not stop the run.
    pub notes: Vec<String>,
}

/// Reads a record's force file and converts it to Newtons. A notch at or above
/// the recording's Nyquist frequency is skipped and noted.
pub fn load_forces(r: &Record, cond: &Conditioning, notes: &mut Vec<String>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let path = r.forces.as_ref().ok_or_else(|| invalid("record has no force file"))?;
    let rec = ForceRecording::read(path)?;
    let mut cond = *cond;
    if let Some((f0, _)) = cond.notch {
        if f0 >= rec.sample_rate / 2.0 {
            let note = format!(
                "notch at {f0} Hz skipped: at or above the Nyquist frequency of {} Hz recordings",
                rec.sample_rate
            );
            if !notes.contains(&note) {
                notes.push(note);
            }
            cond.notch = None;
        }
    }
    let trace = cond.newtons(&rec)?;
    Ok((trace.channels, trace.values))
}

/// Min-max scales Newton frames with `norm` and resamples them to `len` frames.
pub fn force_targets(newtons: &[Vec<f64>], norm: &NormParams, len: usize) -> Result<Vec<Vec<f64>>> {
    let scaled: Vec<Vec<f64>> = newtons
        .iter()
        .map(|v| v.iter().enumerate().map(|(c, &x)| norm.apply(c, x)).collect())
        .collect();
    resample_frames(&scaled, len)
}

/// PCA on every training frame, then one HMM per label on the reduced frames.
pub fn fit_hmm_set(train: &[&FeatureSequence<f64>], labels: usize, cfg: &HmmConfig, pca_dim: usize) -> Result<HmmSet> {
    let frames: Vec<&Vector<f64>> = train.iter().flat_map(|s| s.frames.iter()).collect();
    let d = frames.first().map_or(0, |f| f.dim());
    let k = pca_dim.min(d).min(frames.len());
    let pca = pca_fit(&frames, k)?;
    let mut models: Vec<GaussianHmm> = Vec::with_capacity(labels);
    for c in 0..labels {
        let reduced: Vec<Vec<Vector<f64>>> = train
            .iter()
            .filter(|s| s.label == Some(c))
            .map(|s| s.frames.iter().map(|f| pca.transform(f)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        if reduced.is_empty() {
            return Err(invalid(format!("no training sequences for label {c}")));
        }
        let refs: Vec<&[Vector<f64>]> = reduced.iter().map(|s| s.as_slice()).collect();
        models.push(hmm_fit(&refs, cfg)?.model);
    }
    Ok(HmmSet {
        pca: Some(pca),
        labels: (0..labels).map(|i| i.to_string()).collect(),
        models,
    })
}

fn evaluate_object(
    manifest: &DatasetManifest,
    name: &str,
    opts: &EvalOptions,
    notes: &mut Vec<String>,
) -> Result<ObjectReport> {
    let spec = manifest.object(name).ok_or_else(|| invalid(format!("unknown object {name:?}")))?;
    let labels = spec.labels.len();
    let idx = manifest.records_for(name);
    let seqs: Vec<FeatureSequence<f64>> = idx.iter().map(|&i| load_record(&manifest.records[i])).collect::<Result<_>>()?;
    let subjects: Vec<&str> = idx.iter().map(|&i| manifest.records[i].subject.as_str()).collect();
    let folds = loso_splits(&subjects).map_err(|e| invalid(format!("object {name}: {e}")))?;

    let with_forces = opts.forces && idx.iter().all(|&i| manifest.records[i].forces.is_some());
    let raw_forces = if with_forces {
        Some(
            idx.iter()
                .map(|&i| load_forces(&manifest.records[i], &opts.conditioning, notes))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };

    let mut results: Vec<Option<SequenceResult>> = vec![None; seqs.len()];
    let mut fold_summaries = Vec::with_capacity(folds.len());
    let mut force_errors: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut fused_hits = 0usize;
    let mut channels = Vec::new();

    for fold in &folds {
        let train: Vec<FeatureSequence<f64>> = fold.train.iter().map(|&i| seqs[i].clone()).collect();
        let (model, log) = train_classifier(&train, &[], labels, &opts.train)?;
        let train_refs: Vec<&FeatureSequence<f64>> = train.iter().collect();
        let (svm, hmms) = if opts.baselines {
            (Some(window_fit(&train, labels, &opts.window)?), Some(fit_hmm_set(&train_refs, labels, &opts.hmm, opts.hmm_pca_dim)?))
        } else {
            (None, None)
        };
        let mut hits = 0;
        for &i in &fold.test {
            let s = &seqs[i];
            let label = s.label.ok_or_else(|| invalid(format!("object {name}: sequence without label")))?;
            let (predicted, _) = classify_sequence(&model.params, &s.frames)?;
            let traj = offline_trajectory(&model.params, &s.frames)?;
            hits += usize::from(predicted == label);
            results[i] = Some(SequenceResult {
                record: idx[i],
                subject: fold.subject.clone(),
                label,
                touch: s.touch,
                predicted,
                svm: svm.as_ref().map(|c| c.classify(&s.frames)).transpose()?,
                hmm: hmms.as_ref().map(|h| h.classify(&s.frames)).transpose()?,
                frame_labels: traj.labels,
                uncertainty: traj.uncertainty,
            });
        }
        fold_summaries.push(FoldSummary {
            subject: fold.subject.clone(),
            train: fold.train.len(),
            test: fold.test.len(),
            accuracy: hits as f64 / fold.test.len().max(1) as f64,
            final_loss: log.final_loss().unwrap_or(log.initial_loss),
        });

        if let Some(raw) = &raw_forces {
            channels = raw[0].0.clone();
            let m = channels.len();
            let norm = NormParams::fit_frames(
                fold.train.iter().flat_map(|&i| raw[i].1.iter().map(|v| v.as_slice())),
                m,
            );
            let target = |i: usize| force_targets(&raw[i].1, &norm, seqs[i].len());
            let force_train: Vec<ForceSequence<f64>> = fold
                .train
                .iter()
                .map(|&i| {
                    Ok(ForceSequence {
                        features: seqs[i].clone(),
                        forces: target(i)?,
                    })
                })
                .collect::<Result<_>>()?;
            let (regressor, _) = train_regressor(&force_train, &[], &opts.force_train)?;
            let regress = |s: &FeatureSequence<f64>| -> Result<Vec<Vec<f64>>> {
                Ok(estimate_forces(&regressor.params, &s.frames)?.into_iter().map(|v| v.into_vec()).collect())
            };
            for &i in &fold.test {
                let pred = regress(&seqs[i])?;
                force_errors.push((seqs[i].label.unwrap_or(0), force_error(&pred, &target(i)?)?));
            }
            let fused_train: Vec<FeatureSequence<f64>> =
                train.iter().map(|s| fuse_modalities(s, &regress(s)?)).collect::<Result<_>>()?;
            let (fused, _) = train_classifier(&fused_train, &[], labels, &opts.train)?;
            for &i in &fold.test {
                let x = fuse_modalities(&seqs[i], &regress(&seqs[i])?)?;
                fused_hits += usize::from(classify_sequence(&fused.params, &x.frames)?.0 == seqs[i].label.unwrap_or(0));
            }
        }
    }

    let sequences: Vec<SequenceResult> = results.into_iter().map(|r| r.expect("every sequence is tested once")).collect();
    let all_touched = sequences.iter().all(|s| s.touch.is_some());
    let (offsets, accuracy_curves, uncertainty_curves) = if all_touched {
        let items: Vec<FramePredictions<'_>> = sequences
            .iter()
            .map(|s| FramePredictions {
                predicted: &s.frame_labels,
                touch: s.touch,
                label: s.label,
            })
            .collect();
        let table = OffsetTable::from_predictions(&items, labels, &opts.offsets)?;
        let correct: Vec<Vec<f64>> = sequences
            .iter()
            .map(|s| s.frame_labels.iter().map(|&p| f64::from(u8::from(p == s.label))).collect())
            .collect();
        let align = |values: &[Vec<f64>]| {
            let items: Vec<AlignItem<'_>> = sequences
                .iter()
                .zip(values)
                .map(|(s, v)| AlignItem {
                    values: v,
                    touch: s.touch,
                    label: s.label,
                })
                .collect();
            align_at_touching_point(&items, labels, opts.l_pre, opts.l_post)
        };
        let unc: Vec<Vec<f64>> = sequences.iter().map(|s| s.uncertainty.clone()).collect();
        (Some(table), Some(align(&correct)?), Some(align(&unc)?))
    } else {
        notes.push(format!("object {name}: some sequences lack a touching point; curves and offsets skipped"));
        (None, None, None)
    };

    let forces = if with_forces {
        let summary = summarize_force_errors(&force_errors, labels)?;
        let n = sequences.len() as f64;
        let vision = sequences.iter().filter(|s| s.predicted == s.label).count() as f64 / n;
        Some(ForceReport {
            channels,
            per_channel: summary.per_channel,
            per_action: summary.per_action,
            vision_accuracy: vision,
            fused_accuracy: fused_hits as f64 / n,
        })
    } else {
        None
    };

    Ok(ObjectReport {
        name: name.to_string(),
        labels: spec.labels.clone(),
        sequences,
        folds: fold_summaries,
        offsets,
        accuracy_curves,
        uncertainty_curves,
        forces,
    })
}

/// Runs the full evaluation for every object in the manifest.
pub fn evaluate_manifest(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalReport> {
    opts.train.validate()?;
    opts.force_train.validate()?;
    if opts.l_pre == 0 || opts.l_post < 2 {
        return Err(invalid("l_pre must be at least 1 and l_post at least 2"));
    }
    let mut notes = Vec::new();
    let objects = manifest
        .objects
        .iter()
        .filter(|o| !manifest.records_for(&o.name).is_empty())
        .map(|o| evaluate_object(manifest, &o.name, opts, &mut notes))
        .collect::<Result<Vec<_>>>()?;
    if objects.is_empty() {
        return Err(invalid("manifest has no records"));
    }
    Ok(EvalReport { objects, notes })
}

fn curves_csv(acc: &AlignedCurves, unc: &AlignedCurves, labels: &[String]) -> String {
    let mut s = String::from("index,phase,accuracy,uncertainty");
    for l in labels {
        let _ = write!(s, ",accuracy_{l}");
    }
    s.push('\n');
    let (a, u) = (acc.overall(), unc.overall());
    for j in 0..acc.len() {
        let phase = if j < acc.l_pre { "pre" } else { "post" };
        let _ = write!(s, "{j},{phase},{:.6},{:.6}", a[j], u[j]);
        for c in &acc.curves {
            match c {
                Some(c) => {
                    let _ = write!(s, ",{:.6}", c[j]);
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

fn offsets_csv(t: &OffsetTable, labels: &[String]) -> String {
    let mut s = String::from("action");
    for o in &t.offsets {
        let _ = write!(s, ",{o:+}");
    }
    s.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
    for (c, l) in labels.iter().enumerate() {
        s.push_str(l);
        for k in 0..t.offsets.len() {
            let _ = write!(s, ",{}", cell(t.accuracy(c, k)));
        }
        s.push('\n');
    }
    s.push_str("Avg.");
    for k in 0..t.offsets.len() {
        let _ = write!(s, ",{}", cell(t.overall(k)));
    }
    s.push('\n');
    s
}

impl EvalReport {
    /// Pooled sequence accuracy of the recurrent model over all objects.
    pub fn accuracy(&self) -> f64 {
        let n: usize = self.objects.iter().map(|o| o.sequences.len()).sum();
        let hits: usize = self
            .objects
            .iter()
            .flat_map(|o| &o.sequences)
            .filter(|s| s.predicted == s.label)
            .count();
        hits as f64 / n.max(1) as f64
    }

    pub fn accuracy_table(&self) -> AccuracyTable {
        let mut rows = Vec::new();
        for o in &self.objects {
            for (c, a) in o.labels.iter().enumerate() {
                rows.push((
                    o.name.clone(),
                    a.clone(),
                    vec![
                        o.method_accuracy(c, |s| s.svm),
                        o.method_accuracy(c, |s| s.hmm),
                        o.method_accuracy(c, |s| Some(s.predicted)),
                    ],
                ));
            }
        }
        AccuracyTable {
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            rows,
        }
    }

    /// `(file name, contents)` for every output, in a fixed order.
    pub fn files(&self) -> Result<Vec<(String, String)>> {
        let mut out = vec![("accuracy.csv".to_string(), self.accuracy_table().to_csv())];

        let mut folds = String::from("object,subject,train,test,accuracy,final_loss\n");
        let mut seqs = String::from("object,record,subject,label,lstm,svm,hmm\n");
        let mut skipped = String::from("object,sequence,offset,frame,length\n");
        let opt = |v: Option<usize>| v.map_or_else(String::new, |x| x.to_string());
        for o in &self.objects {
            for f in &o.folds {
                let _ = writeln!(
                    folds,
                    "{},{},{},{},{:.4},{:.6}",
                    o.name, f.subject, f.train, f.test, f.accuracy, f.final_loss
                );
            }
            for s in &o.sequences {
                let _ = writeln!(
                    seqs,
                    "{},{},{},{},{},{},{}",
                    o.name,
                    s.record,
                    s.subject,
                    s.label,
                    s.predicted,
                    opt(s.svm),
                    opt(s.hmm)
                );
            }
            let preds: Vec<usize> = o.sequences.iter().map(|s| s.predicted).collect();
            let truth: Vec<usize> = o.sequences.iter().map(|s| s.label).collect();
            let cm = confusion_matrix(&preds, &truth, o.labels.len())?;
            out.push((format!("confusion_{}.csv", o.name), confusion_csv(&o.labels, &cm)));
            if let (Some(a), Some(u)) = (&o.accuracy_curves, &o.uncertainty_curves) {
                out.push((format!("curves_{}.csv", o.name), curves_csv(a, u, &o.labels)));
            }
            if let Some(t) = &o.offsets {
                out.push((format!("offsets_{}.csv", o.name), offsets_csv(t, &o.labels)));
                for k in &t.skipped {
                    let _ = writeln!(
                        skipped,
                        "{},{},{:+},{},{}",
                        o.name, o.sequences[k.sequence].record, k.offset, k.frame, k.len
                    );
                }
            }
        }
        out.push(("folds.csv".into(), folds));
        out.push(("sequences.csv".into(), seqs));
        out.push(("skipped.csv".into(), skipped));

        let with_forces: Vec<&ObjectReport> = self.objects.iter().filter(|o| o.forces.is_some()).collect();
        if let Some(first) = with_forces.first() {
            let f0 = first.forces.as_ref().expect("filtered");
            let m = f0.channels.len();
            let mut per_channel = vec![0.0; m];
            for o in &with_forces {
                let f = o.forces.as_ref().expect("filtered");
                if f.channels.len() != m {
                    return Err(invalid("objects disagree on force channel count"));
                }
                for (a, v) in per_channel.iter_mut().zip(&f.per_channel) {
                    *a += v / with_forces.len() as f64;
                }
            }
            out.push(("force_channels.csv".into(), channel_error_csv(&f0.channels, &per_channel)));
            let actions: Vec<(String, Vec<String>, Vec<Option<f64>>)> = with_forces
                .iter()
                .map(|o| (o.name.clone(), o.labels.clone(), o.forces.as_ref().expect("filtered").per_action.clone()))
                .collect();
            out.push(("force_actions.csv".into(), action_error_csv(&actions)));
            let fusion: Vec<(String, f64, f64)> = with_forces
                .iter()
                .map(|o| {
                    let f = o.forces.as_ref().expect("filtered");
                    (o.name.clone(), f.vision_accuracy, f.fused_accuracy)
                })
                .collect();
            out.push(("fusion.csv".into(), fusion_csv(&fusion)));
        }

        let mut notes = String::new();
        for n in &self.notes {
            let _ = writeln!(notes, "{n}");
        }
        out.push(("notes.txt".into(), notes));
        Ok(out)
    }

    /// Writes every output file into `dir`, each atomically.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
        let files = self.files()?;
        for (name, text) in &files {
            write_atomic(&dir.join(name), text.as_bytes())?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}
