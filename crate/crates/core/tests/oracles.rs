use actpred::data::eval::fuse_modalities;
use actpred::data::synth::{SynthGenerator, SynthSpec};
use actpred::data::FeatureSequence;
use actpred::numerics::rng::{normal, seeded_rng};
use actpred::numerics::{pca_fit, Vector};
use actpred::online::offline_trajectory;
use actpred::training::{sequence_accuracy, train_classifier, TrainConfig};

/// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues, descending.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

fn covariance(xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = xs.len();
    let d = xs[0].len();
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

#[test]
fn pca_reconstruction_error_is_the_dropped_eigenvalues() {
    let mut rng = seeded_rng(50);
    // correlated columns so the spectrum is not flat
    let mix: Vec<Vec<f64>> = (0..20).map(|_| (0..20).map(|_| normal(&mut rng, 1.0)).collect()).collect();
    let xs: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let z: Vec<f64> = (0..20).map(|_| normal(&mut rng, 1.0)).collect();
            (0..20).map(|i| (0..20).map(|j| mix[i][j] * z[j] * (1.0 + j as f64 * 0.2)).sum()).collect()
        })
        .collect();
    let ev = jacobi_eigenvalues(covariance(&xs));
    let m = pca_fit(&xs, 5).unwrap();
    for (k, &v) in m.explained_variance.iter().enumerate() {
        assert!((v - ev[k]).abs() <= 1e-8 * ev[0], "component {k}: {v} vs {}", ev[k]);
    }
    let err: f64 = xs
        .iter()
        .map(|x| {
            let r = m.reconstruct(&m.transform(x).unwrap()).unwrap();
            x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum::<f64>()
        / 49.0;
    let dropped: f64 = ev[5..].iter().sum();
    assert!((err - dropped).abs() <= 1e-8 * dropped, "{err} vs {dropped}");
}

#[test]
fn pca_coordinates_are_decorrelated() {
    let mut rng = seeded_rng(51);
    let xs: Vec<Vec<f64>> = (0..80)
        .map(|_| {
            let a = normal(&mut rng, 2.0);
            let b = normal(&mut rng, 1.0);
            (0..6).map(|j| a * j as f64 - b + normal(&mut rng, 0.3)).collect()
        })
        .collect();
    let m = pca_fit(&xs, 4).unwrap();
    let z: Vec<Vec<f64>> = xs.iter().map(|x| m.transform(x).unwrap().into_vec()).collect();
    let c = covariance(&z);
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(c[i][j].abs() <= 1e-6, "cov[{i}][{j}] = {}", c[i][j]);
            }
        }
        assert!((c[i][i] - m.explained_variance[i]).abs() <= 1e-9 * c[0][0]);
    }
}

fn dist2(a: &[Vector<f64>], b: &[Vector<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q))).sum()
}

#[test]
fn zero_noise_nearest_trajectory_is_perfect() {
    let spec = SynthSpec {
        noise: 0.0,
        per_class: 10,
        ..Default::default()
    };
    let g = SynthGenerator::new(spec.clone()).unwrap();
    let samples = g.generate();
    for s in &samples {
        let (len, touch) = (s.seq.len(), s.seq.touch.unwrap());
        let best = (0..spec.classes)
            .map(|c| dist2(&s.seq.frames, &g.clean(c, s.subject, len, touch)))
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(Some(best), s.seq.label);
    }
}

#[test]
fn class_means_are_separated() {
    let spec = SynthSpec {
        noise: 0.0,
        separation: 1.5,
        ..Default::default()
    };
    let samples = SynthGenerator::new(spec.clone()).unwrap().generate();
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let frames: Vec<&Vector<f64>> = samples
                .iter()
                .filter(|s| s.seq.label == Some(c))
                .flat_map(|s| s.seq.frames[s.seq.touch.unwrap()..].iter())
                .collect();
            (0..spec.dim)
                .map(|j| frames.iter().map(|f| f[j]).sum::<f64>() / frames.len() as f64)
                .collect()
        })
        .collect();
    for a in 0..spec.classes {
        for b in a + 1..spec.classes {
            let d: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(d >= spec.separation * (1.0 - 1e-9), "classes {a},{b}: {d}");
        }
    }
}

fn noisy_sequences(n: usize, seed: u64, noise: f64) -> (Vec<FeatureSequence<f64>>, Vec<Vec<Vec<f64>>>) {
    let mut rng = seeded_rng(seed);
    let mut seqs = Vec::new();
    let mut forces = Vec::new();
    for i in 0..n {
        let y = i % 3;
        let frames: Vec<Vector<f64>> = (0..12)
            .map(|_| (0..6).map(|j| if j == y { 0.3 } else { 0.0 } + normal(&mut rng, noise)).collect())
            .collect();
        let f: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|j| if j == y { 0.8 } else { 0.2 } + normal(&mut rng, 0.05)).collect())
            .collect();
        seqs.push(FeatureSequence::new(frames).unwrap().with_label(y));
        forces.push(f);
    }
    (seqs, forces)
}

#[test]
fn informative_forces_improve_fused_accuracy() {
    let (train, train_f) = noisy_sequences(45, 60, 2.0);
    let (test, test_f) = noisy_sequences(45, 61, 2.0);
    let cfg = TrainConfig {
        epochs: 15,
        hidden: Some(8),
        seed: 4,
        ..Default::default()
    };
    let fuse = |s: &[FeatureSequence<f64>], f: &[Vec<Vec<f64>>]| -> Vec<FeatureSequence<f64>> {
        s.iter().zip(f).map(|(s, f)| fuse_modalities(s, f).unwrap()).collect()
    };
    let (vision, _) = train_classifier(&train, &[], 3, &cfg).unwrap();
    let (fused, _) = train_classifier(&fuse(&train, &train_f), &[], 3, &cfg).unwrap();
    let v = sequence_accuracy(&vision.params, &test).unwrap();
    let vf = sequence_accuracy(&fused.params, &fuse(&test, &test_f)).unwrap();
    assert!(vf > v, "fused {vf} vs vision {v}");
}

fn two_class() -> (Vec<FeatureSequence<f64>>, Vec<FeatureSequence<f64>>) {
    let spec = SynthSpec {
        classes: 2,
        dim: 16,
        per_class: 24,
        subjects: 4,
        noise: 0.15,
        seed: 8,
        ..Default::default()
    };
    let samples = SynthGenerator::new(spec).unwrap().generate();
    let (test, train): (Vec<_>, Vec<_>) = samples.into_iter().partition(|s| s.subject == 3);
    (
        train.into_iter().map(|s| s.seq).collect(),
        test.into_iter().map(|s| s.seq).collect(),
    )
}

#[test]
fn trained_uncertainty_falls_and_smoothed_loss_decreases() {
    let (train, test) = two_class();
    let cfg = TrainConfig {
        epochs: 30,
        hidden: Some(16),
        ..Default::default()
    };
    let (m, log) = train_classifier(&train, &[], 2, &cfg).unwrap();
    let (mut first, mut last) = (0.0, 0.0);
    for s in &test {
        let traj = offline_trajectory(&m.params, &s.frames).unwrap();
        first += traj.uncertainty[0];
        last += *traj.uncertainty.last().unwrap();
    }
    assert!(last < first, "uncertainty {first} -> {last}");

    let blocks: Vec<f64> = log.epochs.chunks(5).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64).collect();
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0], "smoothed loss rose: {blocks:?}");
    }
}
