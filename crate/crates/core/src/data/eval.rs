//! Metrics and table layouts for the evaluation harness.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::fseq::FeatureSequence;
use crate::error::{check_dim, invalid, Result};
use crate::model::ModelParams;
use crate::numerics::{Matrix, Vector};
use crate::online::offline_trajectory;

pub const DEFAULT_OFFSETS: [i64; 4] = [-10, 0, 10, 25];
pub const DEFAULT_L_PRE: usize = 50;
pub const DEFAULT_L_POST: usize = 100;

/// One leave-one-subject-out round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub subject: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per distinct subject (sorted), over item indices.
pub fn loso_splits<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let distinct: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    if distinct.len() < 2 {
        return Err(invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            distinct.len()
        )));
    }
    Ok(distinct
        .into_iter()
        .map(|subj| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..subjects.len()).partition(|&i| subjects[i].as_ref() == subj);
            Fold {
                subject: subj.to_string(),
                train,
                test,
            }
        })
        .collect())
}

fn interp(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    let i = (pos.floor() as usize).min(last);
    let frac = pos - i as f64;
    if i == last || frac == 0.0 {
        values[i]
    } else {
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }
}

/// Resamples a per-frame series around its touching point.
///
/// Pre-contact indices `j < l_pre` sample position `j·tp/l_pre`; post-contact
/// indices sample `tp + j·(T−1−tp)/(l_post−1)`. Index `l_pre` is therefore
/// exactly the touching point and the last index is the last frame.
pub fn resample_aligned(values: &[f64], touch: usize, l_pre: usize, l_post: usize) -> Result<Vec<f64>> {
    if l_pre == 0 || l_post < 2 {
        return Err(invalid("aligned lengths need l_pre >= 1 and l_post >= 2"));
    }
    let t = values.len();
    if touch == 0 || touch + 1 >= t {
        return Err(invalid(format!("touching point {touch} not strictly inside {t} frames")));
    }
    let mut out = Vec::with_capacity(l_pre + l_post);
    for j in 0..l_pre {
        out.push(interp(values, j as f64 * touch as f64 / l_pre as f64));
    }
    let span = (t - 1 - touch) as f64;
    for j in 0..l_post {
        out.push(interp(values, touch as f64 + j as f64 * span / (l_post - 1) as f64));
    }
    Ok(out)
}

/// Per-label mean of aligned per-frame series.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedCurves {
    pub l_pre: usize,
    pub l_post: usize,
    /// `None` for labels with no sequences.
    pub curves: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
}

/// One series to align: per-frame values, its touching point and label.
#[derive(Clone, Copy, Debug)]
pub struct AlignItem<'a> {
    pub values: &'a [f64],
    pub touch: Option<usize>,
    pub label: usize,
}

impl AlignedCurves {
    pub fn len(&self) -> usize {
        self.l_pre + self.l_post
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence-weighted mean over all labels.
    pub fn overall(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        let mut out = vec![0.0; self.len()];
        for (c, &n) in self.curves.iter().zip(&self.counts) {
            if let Some(c) = c {
                for (o, &v) in out.iter_mut().zip(c) {
                    *o += v * n as f64 / total.max(1) as f64;
                }
            }
        }
        out
    }
}

pub fn align_at_touching_point(items: &[AlignItem<'_>], labels: usize, l_pre: usize, l_post: usize) -> Result<AlignedCurves> {
    let missing: Vec<usize> = (0..items.len()).filter(|&i| items[i].touch.is_none()).collect();
    if !missing.is_empty() {
        return Err(invalid(format!("sequences without a touching point: {missing:?}")));
    }
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; labels];
    let mut counts = vec![0usize; labels];
    for (i, it) in items.iter().enumerate() {
        if it.label >= labels {
            return Err(invalid(format!("sequence {i} label {} out of range", it.label)));
        }
        let r = resample_aligned(it.values, it.touch.expect("checked"), l_pre, l_post)
            .map_err(|e| invalid(format!("sequence {i}: {e}")))?;
        let acc = sums[it.label].get_or_insert_with(|| vec![0.0; l_pre + l_post]);
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        counts[it.label] += 1;
    }
    let curves = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.map(|v| v.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    Ok(AlignedCurves {
        l_pre,
        l_post,
        curves,
        counts,
    })
}

/// A sequence/offset pair whose frame fell outside the sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skip {
    pub sequence: usize,
    pub offset: i64,
    pub frame: i64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetTable {
    pub offsets: Vec<i64>,
    /// `hits[label][offset]`.
    pub hits: Vec<Vec<usize>>,
    pub totals: Vec<Vec<usize>>,
    pub skipped: Vec<Skip>,
}

/// Per-frame predicted labels of one sequence, with its truth.
#[derive(Clone, Copy, Debug)]
pub struct FramePredictions<'a> {
    pub predicted: &'a [usize],
    pub touch: Option<usize>,
    pub label: usize,
}

impl OffsetTable {
    pub fn accuracy(&self, label: usize, offset_idx: usize) -> Option<f64> {
        let n = self.totals[label][offset_idx];
        (n > 0).then(|| self.hits[label][offset_idx] as f64 / n as f64)
    }

    /// Accuracy over all labels at one offset.
    pub fn overall(&self, offset_idx: usize) -> Option<f64> {
        let n: usize = self.totals.iter().map(|t| t[offset_idx]).sum();
        let h: usize = self.hits.iter().map(|t| t[offset_idx]).sum();
        (n > 0).then(|| h as f64 / n as f64)
    }

    /// Scores the prediction at frame `touch + offset`. Frames outside the
    /// sequence are skipped and reported, never clamped.
    pub fn from_predictions(items: &[FramePredictions<'_>], labels: usize, offsets: &[i64]) -> Result<Self> {
        let missing: Vec<usize> = (0..items.len()).filter(|&i| items[i].touch.is_none()).collect();
        if !missing.is_empty() {
            return Err(invalid(format!("sequences without a touching point: {missing:?}")));
        }
        let mut t = OffsetTable {
            offsets: offsets.to_vec(),
            hits: vec![vec![0; offsets.len()]; labels],
            totals: vec![vec![0; offsets.len()]; labels],
            skipped: Vec::new(),
        };
        for (i, it) in items.iter().enumerate() {
            if it.label >= labels {
                return Err(invalid(format!("sequence {i} label {} out of range", it.label)));
            }
            let tp = it.touch.expect("checked") as i64;
            for (k, &off) in offsets.iter().enumerate() {
                let frame = tp + off;
                if frame < 0 || frame >= it.predicted.len() as i64 {
                    t.skipped.push(Skip {
                        sequence: i,
                        offset: off,
                        frame,
                        len: it.predicted.len(),
                    });
                    continue;
                }
                t.totals[it.label][k] += 1;
                if it.predicted[frame as usize] == it.label {
                    t.hits[it.label][k] += 1;
                }
            }
        }
        Ok(t)
    }
}

/// Runs online inference on each sequence and scores the belief at `touch + offset`.
pub fn offset_accuracy(
    model: &ModelParams<f64>,
    data: &[FeatureSequence<f64>],
    labels: usize,
    offsets: &[i64],
) -> Result<OffsetTable> {
    let preds = data
        .iter()
        .map(|s| Ok(offline_trajectory(model, &s.frames)?.labels))
        .collect::<Result<Vec<_>>>()?;
    let items = data
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(i, (s, p))| {
            Ok(FramePredictions {
                predicted: p,
                touch: s.touch,
                label: s.label.ok_or_else(|| invalid(format!("sequence {i} has no label")))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    OffsetTable::from_predictions(&items, labels, offsets)
}

/// `N × N` counts normalized per true-label row; rows of absent labels stay zero.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], n: usize) -> Result<Matrix<f64>> {
    check_dim("prediction count", labels.len(), preds.len())?;
    let mut m = Matrix::zeros(n, n);
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= n || y >= n {
            return Err(invalid(format!("label out of range for {n} classes")));
        }
        m.set(y, p, m.get(y, p) + 1.0);
    }
    for r in 0..n {
        let s: f64 = m.row(r).iter().sum();
        if s > 0.0 {
            for c in 0..n {
                m.set(r, c, m.get(r, c) / s);
            }
        }
    }
    Ok(m)
}

/// Mean `|v̂ − v|` over frames, per channel.
pub fn force_error<A: AsRef<[f64]>, B: AsRef<[f64]>>(pred: &[A], truth: &[B]) -> Result<Vec<f64>> {
    check_dim("force frames", truth.len(), pred.len())?;
    let m = truth.first().ok_or_else(|| invalid("force error over zero frames"))?.as_ref().len();
    let mut acc = vec![0.0; m];
    for (p, v) in pred.iter().zip(truth) {
        check_dim("force channels", m, p.as_ref().len())?;
        check_dim("force channels", m, v.as_ref().len())?;
        for (a, (x, y)) in acc.iter_mut().zip(p.as_ref().iter().zip(v.as_ref())) {
            *a += (x - y).abs();
        }
    }
    Ok(acc.into_iter().map(|a| a / truth.len() as f64).collect())
}

/// Per-channel error averaged over sequences, and per-action error averaged
/// over that action's sequences and channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceErrorSummary {
    pub per_channel: Vec<f64>,
    pub per_action: Vec<Option<f64>>,
}

pub fn summarize_force_errors(items: &[(usize, Vec<f64>)], labels: usize) -> Result<ForceErrorSummary> {
    let m = items.first().ok_or_else(|| invalid("no force errors to summarize"))?.1.len();
    let mut per_channel = vec![0.0; m];
    let mut sums = vec![0.0; labels];
    let mut counts = vec![0usize; labels];
    for (label, e) in items {
        check_dim("force error channels", m, e.len())?;
        if *label >= labels {
            return Err(invalid(format!("label {label} out of range")));
        }
        for (a, v) in per_channel.iter_mut().zip(e) {
            *a += v / items.len() as f64;
        }
        sums[*label] += e.iter().sum::<f64>() / m as f64;
        counts[*label] += 1;
    }
    Ok(ForceErrorSummary {
        per_channel,
        per_action: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
    })
}

/// Per-frame concatenation `[x_t, v_t]`.
pub fn fuse_modalities<F: AsRef<[f64]>>(features: &FeatureSequence<f64>, forces: &[F]) -> Result<FeatureSequence<f64>> {
    if features.len() != forces.len() {
        return Err(invalid(format!(
            "{} feature frames but {} force frames",
            features.len(),
            forces.len()
        )));
    }
    let frames = features
        .frames
        .iter()
        .zip(forces)
        .map(|(x, v)| x.iter().chain(v.as_ref()).copied().collect::<Vector<f64>>())
        .collect();
    Ok(FeatureSequence {
        frames,
        touch: features.touch,
        label: features.label,
    })
}

/// Linear resampling of a `T_src × M` series onto `t_dst` evenly spaced frames.
pub fn resample_frames(values: &[Vec<f64>], t_dst: usize) -> Result<Vec<Vec<f64>>> {
    let src = values.len();
    if src == 0 || t_dst == 0 {
        return Err(invalid("cannot resample an empty series"));
    }
    if src == t_dst {
        return Ok(values.to_vec());
    }
    let m = values[0].len();
    Ok((0..t_dst)
        .map(|i| {
            let pos = if t_dst == 1 { 0.0 } else { i as f64 * (src - 1) as f64 / (t_dst - 1) as f64 };
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            let frac = pos - lo as f64;
            (0..m).map(|c| values[lo][c] * (1.0 - frac) + values[hi][c] * frac).collect()
        })
        .collect())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

/// Accuracy per object/action for each method, plus an average row.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    pub methods: Vec<String>,
    /// `(object, action, accuracy per method)`.
    pub rows: Vec<(String, String, Vec<Option<f64>>)>,
}

impl AccuracyTable {
    pub fn averages(&self) -> Vec<Option<f64>> {
        (0..self.methods.len())
            .map(|k| {
                let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.2[k]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("object/action");
        for m in &self.methods {
            let _ = write!(s, ",{m}");
        }
        s.push('\n');
        for (o, a, v) in &self.rows {
            let _ = write!(s, "{o}/{a}");
            for x in v {
                let _ = write!(s, ",{}", fmt(*x));
            }
            s.push('\n');
        }
        s.push_str("Avg.");
        for x in self.averages() {
            let _ = write!(s, ",{}", fmt(x));
        }
        s.push('\n');
        s
    }
}

/// Average force error per channel: a header of channel names and one `Avg.` row.
pub fn channel_error_csv(channels: &[String], per_channel: &[f64]) -> String {
    let mut s = String::new();
    for c in channels {
        let _ = write!(s, ",{c}");
    }
    s.push_str("\nAvg.");
    for v in per_channel {
        let _ = write!(s, ",{v:.4}");
    }
    s.push('\n');
    s
}

/// Per object, a row of action names followed by a row of errors.
pub fn action_error_csv(objects: &[(String, Vec<String>, Vec<Option<f64>>)]) -> String {
    let width = objects.iter().map(|o| o.1.len()).max().unwrap_or(0);
    let mut s = String::from("Object");
    for i in 0..width {
        let _ = write!(s, ",Action {}", i + 1);
    }
    s.push('\n');
    for (name, actions, errs) in objects {
        s.push_str(name);
        for a in actions {
            let _ = write!(s, ",{a}");
        }
        s.push('\n');
        for e in errs {
            let _ = write!(s, ",{}", fmt(*e));
        }
        s.push('\n');
    }
    s
}

/// Vision-only vs. fused accuracy per object with an average column.
pub fn fusion_csv(objects: &[(String, f64, f64)]) -> String {
    let mut s = String::from("Object");
    for (o, _, _) in objects {
        let _ = write!(s, ",{o}");
    }
    s.push_str(",Avg.\n");
    let n = objects.len().max(1) as f64;
    for (name, pick) in [("Vision", 0usize), ("V + F", 1)] {
        s.push_str(name);
        let mut total = 0.0;
        for o in objects {
            let v = if pick == 0 { o.1 } else { o.2 };
            total += v;
            let _ = write!(s, ",{v:.4}");
        }
        let _ = writeln!(s, ",{:.4}", total / n);
    }
    s
}

pub fn confusion_csv(labels: &[String], m: &Matrix<f64>) -> String {
    let mut s = String::from("truth\\predicted");
    for l in labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (r, l) in labels.iter().enumerate() {
        s.push_str(l);
        for v in m.row(r) {
            let _ = write!(s, ",{v:.4}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use crate::numerics::rng::{normal, seeded_rng};

    #[test]
    fn loso_partitions() {
        let subj = ["b", "a", "c", "a", "b", "e", "d"];
        let folds = loso_splits(&subj).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![0; subj.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
                assert_eq!(subj[i], f.subject);
            }
            assert!(f.train.iter().all(|&i| subj[i] != f.subject));
            assert_eq!(f.train.len() + f.test.len(), subj.len());
        }
        assert!(seen.iter().all(|&n| n == 1));
        let err = loso_splits(&["a", "a"]).unwrap_err().to_string();
        assert!(err.contains("at least 2 subjects"));
    }

    #[test]
    fn alignment_arithmetic() {
        let vals: Vec<f64> = (0..30).map(|i| 3.0 + 0.5 * i as f64).collect();
        let r = resample_aligned(&vals, 10, 20, 40).unwrap();
        assert_eq!(r.len(), 60);
        assert_eq!(r[20], vals[10]);
        assert_eq!(r[59], vals[29]);
        for (j, v) in r.iter().enumerate() {
            let pos = if j < 20 { j as f64 * 10.0 / 20.0 } else { 10.0 + (j - 20) as f64 * 19.0 / 39.0 };
            assert!((v - (3.0 + 0.5 * pos)).abs() < 1e-9);
        }
        let flat = resample_aligned(&[0.7; 12], 4, 50, 100).unwrap();
        assert!(flat.iter().all(|&v| v == 0.7));
        assert!(resample_aligned(&vals, 0, 5, 5).is_err());
        assert!(resample_aligned(&vals, 29, 5, 5).is_err());
    }

    #[test]
    fn curves_average_per_label() {
        let a = [1.0; 10];
        let b = [0.0; 10];
        let items = [
            AlignItem { values: &a, touch: Some(3), label: 0 },
            AlignItem { values: &b, touch: Some(5), label: 0 },
            AlignItem { values: &a, touch: Some(4), label: 2 },
        ];
        let c = align_at_touching_point(&items, 3, 5, 10).unwrap();
        assert!(c.curves[0].as_ref().unwrap().iter().all(|&v| v == 0.5));
        assert!(c.curves[1].is_none());
        assert_eq!(c.counts, vec![2, 0, 1]);
        assert!(c.overall().iter().all(|&v| (v - 2.0 / 3.0).abs() < 1e-12));
        let bad = [AlignItem { values: &a, touch: None, label: 0 }];
        assert!(align_at_touching_point(&bad, 1, 5, 10).unwrap_err().to_string().contains("[0]"));
    }

    #[test]
    fn offsets_skip_out_of_range() {
        let p0 = vec![1usize; 20];
        let p1 = vec![0usize; 40];
        let items = [
            FramePredictions { predicted: &p0, touch: Some(5), label: 1 },
            FramePredictions { predicted: &p1, touch: Some(12), label: 1 },
        ];
        let t = OffsetTable::from_predictions(&items, 2, &DEFAULT_OFFSETS).unwrap();
        assert_eq!(t.offsets, vec![-10, 0, 10, 25]);
        // seq 0: −10 → frame −5, +25 → frame 30 ≥ 20; seq 1 all valid
        assert_eq!(t.skipped.len(), 2);
        assert_eq!(t.totals[1], vec![1, 2, 2, 1]);
        assert_eq!(t.accuracy(1, 1), Some(0.5));
        assert_eq!(t.accuracy(1, 0), Some(0.0));
        assert_eq!(t.accuracy(0, 0), None);
    }

    #[test]
    fn untrained_model_is_at_chance() {
        let shape = ModelShape {
            input_dim: 3,
            projected_dim: 2,
            hidden_dim: 2,
            labels: Some(5),
            channels: None,
        };
        let model = ModelParams::<f64>::zeros(shape);
        let mut rng = seeded_rng(1);
        let data: Vec<FeatureSequence<f64>> = (0..250)
            .map(|i| {
                let frames = (0..40).map(|_| (0..3).map(|_| normal(&mut rng, 1.0)).collect()).collect();
                FeatureSequence::new(frames).unwrap().with_label(i % 5).with_touch(12).unwrap()
            })
            .collect();
        let t = offset_accuracy(&model, &data, 5, &DEFAULT_OFFSETS).unwrap();
        for k in 0..4 {
            let acc = t.overall(k).unwrap();
            assert!((acc - 0.2).abs() <= 0.05, "{acc}");
        }
    }

    #[test]
    fn confusion_and_force_error() {
        let m = confusion_matrix(&[0, 1, 2, 2], &[0, 1, 2, 2], 4).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(m.get(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
        assert!(m.row(3).iter().all(|&v| v == 0.0));
        let m = confusion_matrix(&[1, 1, 0], &[1, 0, 0], 2).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());

        let truth = vec![vec![0.2, 0.4], vec![0.5, 0.5]];
        assert_eq!(force_error(&truth, &truth).unwrap(), vec![0.0, 0.0]);
        let shifted: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + 0.1).collect()).collect();
        for e in force_error(&shifted, &truth).unwrap() {
            assert!((e - 0.1).abs() < 1e-12);
        }
        let s = summarize_force_errors(&[(0, vec![0.1, 0.3]), (0, vec![0.3, 0.1]), (2, vec![0.0, 0.2])], 3).unwrap();
        assert!((s.per_channel[0] - 0.4 / 3.0).abs() < 1e-12);
        assert_eq!(s.per_action[1], None);
        assert!((s.per_action[0].unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn fusion_concatenates() {
        let seq = FeatureSequence::new(vec![Vector::zeros(4096); 3]).unwrap().with_label(2);
        let fused = fuse_modalities(&seq, &vec![vec![0.5; 4]; 3]).unwrap();
        assert_eq!(fused.dim(), 4100);
        assert_eq!(fused.label, Some(2));
        assert!(fuse_modalities(&seq, &vec![vec![0.5; 4]; 2]).is_err());
    }

    #[test]
    fn resample_frames_endpoints() {
        let v = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = resample_frames(&v, 5).unwrap();
        assert_eq!(r, vec![vec![0.0], vec![0.5], vec![1.0], vec![1.5], vec![2.0]]);
    }

    #[test]
    fn table_shapes() {
        let t = AccuracyTable {
            methods: vec!["window".into(), "hmm".into(), "lstm".into()],
            rows: vec![
                ("cup".into(), "drink".into(), vec![Some(0.5), Some(1.0), None]),
                ("cup".into(), "pour".into(), vec![Some(1.0), Some(0.0), Some(1.0)]),
            ],
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "object/action,window,hmm,lstm");
        assert_eq!(lines[1], "cup/drink,0.5000,1.0000,");
        assert_eq!(lines[3], "Avg.,0.7500,0.5000,1.0000");
        let f = fusion_csv(&[("cup".into(), 0.8, 0.9), ("stone".into(), 0.6, 0.7)]);
        assert_eq!(f.lines().next().unwrap(), "Object,cup,stone,Avg.");
        assert_eq!(f.lines().nth(2).unwrap(), "V + F,0.9000,0.7000,0.8000");
    }
}
