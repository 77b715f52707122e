//! Seeded synthetic action data.
//!
//! A latent state is built from orthogonal blocks and embedded into the
//! feature space by a fixed random orthonormal map:
//!
//! * class offset: `separation / √2 · e_k`, so class offsets are pairwise
//!   exactly `separation` apart;
//! * class sinusoids: a bank of `(sin, cos)` pairs whose frequencies and
//!   phases are drawn per class;
//! * reach: `(sin πτ, cos πτ)` over normalized time τ, shared by all classes;
//! * subject: a small per-subject offset.
//!
//! The class blocks are scaled by a gate that rises linearly from
//! `pre_gain` at the first frame to 1 at the touching point and stays at 1
//! afterwards, so evidence is weak before contact. Gaussian noise is added
//! per feature. Optional forces are a fixed affine function of the clean
//! latent state with values inside `[0.1, 0.9]`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;

use super::fseq::{write_features, FeatureSequence};
use super::manifest::{DatasetManifest, ObjectSpec, Record};
use crate::error::{invalid, Result};
use crate::force::{ForceRecording, SensorCalibration};
use crate::numerics::rng::{normal, seeded_rng};
use crate::numerics::{Matrix, Vector};

const SINUSOIDS: usize = 2;
const SINE_AMPLITUDE: f64 = 0.5;
const SUBJECT_STD: f64 = 0.3;
/// Frame rate written into synthetic force recordings.
pub const SYNTH_RATE: f64 = 30.0;
/// Newtons corresponding to a normalized force of 1.
pub const SYNTH_FULL_SCALE_N: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub subjects: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub noise: f64,
    pub separation: f64,
    /// Class-signal gain at the first frame.
    pub pre_gain: f64,
    /// Number of force channels; `None` generates no forces.
    pub force_channels: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 5,
            dim: 32,
            per_class: 40,
            subjects: 5,
            t_min: 24,
            t_max: 32,
            noise: 0.15,
            separation: 1.0,
            pre_gain: 0.2,
            force_channels: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn latent_dim(&self) -> usize {
        self.classes + 2 * SINUSOIDS + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid("synthetic data needs at least two classes"));
        }
        if self.subjects == 0 || self.per_class == 0 {
            return Err(invalid("synthetic data needs subjects and samples"));
        }
        if self.dim < self.latent_dim() {
            return Err(invalid(format!(
                "feature dimension {} below the latent dimension {}",
                self.dim,
                self.latent_dim()
            )));
        }
        if self.t_min < 3 || self.t_max < self.t_min {
            return Err(invalid("frame range must satisfy 3 <= t_min <= t_max"));
        }
        if !(self.noise >= 0.0 && self.separation > 0.0 && (0.0..=1.0).contains(&self.pre_gain)) {
            return Err(invalid("noise >= 0, separation > 0 and pre_gain in [0, 1] required"));
        }
        if self.force_channels == Some(0) {
            return Err(invalid("force channel count must be at least 1"));
        }
        Ok(())
    }
}

/// Fixed parameters shared by every sample of one seed.
#[derive(Clone, Debug)]
pub struct SynthGenerator {
    pub spec: SynthSpec,
    /// `d × L`, orthonormal columns.
    pub embedding: Matrix<f64>,
    /// Per class, per sinusoid: (angular frequency per frame, phase).
    pub waves: Vec<Vec<(f64, f64)>>,
    pub subject_offsets: Vec<[f64; 2]>,
    /// `M × L` force weights and `M` bias.
    pub force_weights: Option<(Matrix<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub subject: usize,
    pub rep: usize,
    pub seq: FeatureSequence<f64>,
    /// `T × M`, in `[0, 1]`.
    pub forces: Option<Vec<Vec<f64>>>,
}

impl SynthGenerator {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded_rng(spec.seed);
        let l = spec.latent_dim();
        let g = DMatrix::from_fn(spec.dim, l, |_, _| normal(&mut rng, 1.0));
        let q = g.qr().q();
        let embedding = Matrix::from_fn(spec.dim, l, |r, c| q[(r, c)]);
        let waves = (0..spec.classes)
            .map(|_| {
                (0..SINUSOIDS)
                    .map(|_| (rng.random_range(0.15..0.6), rng.random_range(0.0..2.0 * PI)))
                    .collect()
            })
            .collect();
        let subject_offsets = (0..spec.subjects)
            .map(|_| [normal(&mut rng, SUBJECT_STD), normal(&mut rng, SUBJECT_STD)])
            .collect();
        let force_weights = spec.force_channels.map(|m| {
            let bound = latent_bounds(&spec);
            let mut w = Matrix::from_fn(m, l, |_, _| normal(&mut rng, 1.0));
            let bias = (0..m).map(|_| rng.random_range(0.45..0.55)).collect::<Vec<f64>>();
            for r in 0..m {
                let reach: f64 = (0..l).map(|c| w.get(r, c).abs() * bound[c]).sum();
                let room = 0.4 - (bias[r] - 0.5f64).abs();
                for c in 0..l {
                    w.set(r, c, w.get(r, c) * room / reach);
                }
            }
            (w, bias)
        });
        Ok(SynthGenerator {
            spec,
            embedding,
            waves,
            subject_offsets,
            force_weights,
        })
    }

    fn gate(&self, t: usize, touch: usize) -> f64 {
        if t >= touch || touch == 0 {
            1.0
        } else {
            self.spec.pre_gain + (1.0 - self.spec.pre_gain) * t as f64 / touch as f64
        }
    }

    /// Clean latent state for one frame.
    pub fn latent(&self, class: usize, subject: usize, t: usize, len: usize, touch: usize) -> Vec<f64> {
        let s = &self.spec;
        let mut z = vec![0.0; s.latent_dim()];
        let g = self.gate(t, touch);
        z[class] = g * s.separation * FRAC_1_SQRT_2;
        for (b, &(w, phi)) in self.waves[class].iter().enumerate() {
            let a = w * t as f64 + phi;
            z[s.classes + 2 * b] = g * SINE_AMPLITUDE * a.sin();
            z[s.classes + 2 * b + 1] = g * SINE_AMPLITUDE * a.cos();
        }
        let tau = t as f64 / (len - 1).max(1) as f64;
        let base = s.classes + 2 * SINUSOIDS;
        z[base] = (PI * tau).sin();
        z[base + 1] = (PI * tau).cos();
        z[base + 2] = self.subject_offsets[subject][0];
        z[base + 3] = self.subject_offsets[subject][1];
        z
    }

    /// Noise-free feature trajectory.
    pub fn clean(&self, class: usize, subject: usize, len: usize, touch: usize) -> Vec<Vector<f64>> {
        (0..len)
            .map(|t| {
                self.embedding
                    .matvec(&self.latent(class, subject, t, len, touch))
                    .expect("embedding shape")
            })
            .collect()
    }

    pub fn forces_at(&self, z: &[f64]) -> Option<Vec<f64>> {
        self.force_weights.as_ref().map(|(w, b)| {
            let mut v = w.matvec(z).expect("force weight shape").into_vec();
            for (x, &bb) in v.iter_mut().zip(b) {
                *x += bb;
            }
            v
        })
    }

    /// Every sample, ordered by subject, then class, then repetition.
    ///
    /// Samples of one class are spread round-robin over subjects, so each
    /// subject gets `per_class / subjects` of them (the remainder goes to the
    /// first subjects).
    pub fn generate(&self) -> Vec<SynthSample> {
        let s = &self.spec;
        let mut rng = seeded_rng(s.seed ^ 0x5EED_DA7A);
        let mut out = Vec::with_capacity(s.classes * s.per_class);
        for subject in 0..s.subjects {
            for class in 0..s.classes {
                let reps = (0..s.per_class).filter(|i| i % s.subjects == subject).count();
                for rep in 0..reps {
                    let len = rng.random_range(s.t_min..=s.t_max);
                    let lo = (len as f64 * 0.3).round() as usize;
                    let hi = ((len as f64 * 0.5).round() as usize).max(lo);
                    let touch = rng.random_range(lo..=hi).clamp(1, len - 2);
                    let mut forces = self.force_weights.as_ref().map(|_| Vec::with_capacity(len));
                    let frames = (0..len)
                        .map(|t| {
                            let z = self.latent(class, subject, t, len, touch);
                            if let Some(f) = forces.as_mut() {
                                f.push(self.forces_at(&z).expect("force weights"));
                            }
                            let mut x = self.embedding.matvec(&z).expect("embedding shape");
                            for v in x.iter_mut() {
                                *v += normal(&mut rng, s.noise);
                            }
                            x
                        })
                        .collect();
                    out.push(SynthSample {
                        subject,
                        rep,
                        seq: FeatureSequence {
                            frames,
                            touch: Some(touch),
                            label: Some(class),
                        },
                        forces,
                    });
                }
            }
        }
        out
    }
}

/// Largest magnitude each latent coordinate can take.
fn latent_bounds(spec: &SynthSpec) -> Vec<f64> {
    let mut b = vec![spec.separation * FRAC_1_SQRT_2; spec.classes];
    b.extend(std::iter::repeat_n(SINE_AMPLITUDE, 2 * SINUSOIDS));
    b.extend([1.0, 1.0, 4.0 * SUBJECT_STD, 4.0 * SUBJECT_STD]);
    b
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    Ok(SynthGenerator::new(spec.clone())?.generate())
}

pub fn subject_name(i: usize) -> String {
    format!("s{}", i + 1)
}

pub fn class_name(i: usize) -> String {
    format!("action{}", i + 1)
}

pub const SYNTH_OBJECT: &str = "synth";
pub const FORCE_CHANNEL_NAMES: [&str; 4] = ["ring", "middle", "pointer", "thumb"];

/// Writes every sample as `FSEQ` (+ `FREC` when forces exist) under `dir`
/// and returns the manifest, already saved as `dir/manifest.txt`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample], classes: usize) -> Result<(PathBuf, DatasetManifest)> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::io_err(dir, e))?;
    let cal = SensorCalibration::new(5.0, 1.0, 0.0)?;
    let labels: Vec<String> = (0..classes).map(class_name).collect();
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.seq.label.ok_or_else(|| invalid("synthetic sample without label"))?;
        let stem = format!("{}_{}_{}", subject_name(s.subject), labels[label], s.rep + 1);
        let features = dir.join(format!("{stem}.fseq"));
        write_features(&features, &s.seq)?;
        let forces = match &s.forces {
            Some(f) => {
                let m = f.first().map_or(0, |r| r.len());
                let rec = ForceRecording {
                    sample_rate: SYNTH_RATE,
                    channels: (0..m)
                        .map(|i| FORCE_CHANNEL_NAMES.get(i).map_or(format!("ch{i}"), |s| s.to_string()))
                        .collect(),
                    calibration: cal,
                    volts: f
                        .iter()
                        .map(|r| r.iter().map(|&v| cal.force_to_volts(v * SYNTH_FULL_SCALE_N) as f32).collect())
                        .collect(),
                };
                let p = dir.join(format!("{stem}.frec"));
                rec.write(&p)?;
                Some(p)
            }
            None => None,
        };
        records.push(Record {
            subject: subject_name(s.subject),
            object: SYNTH_OBJECT.into(),
            action: labels[label].clone(),
            label,
            rep: s.rep as u32 + 1,
            features,
            forces,
            touch: s.seq.touch,
        });
    }
    let manifest = DatasetManifest {
        objects: vec![ObjectSpec {
            name: SYNTH_OBJECT.into(),
            labels,
        }],
        records,
    };
    let path = dir.join("manifest.txt");
    manifest.write(&path)?;
    Ok((path, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthSpec {
        SynthSpec {
            classes: 3,
            dim: 16,
            per_class: 6,
            subjects: 3,
            noise,
            force_channels: Some(4),
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(synth_generate(&small(0.3)).unwrap(), synth_generate(&small(0.3)).unwrap());
        let other = SynthSpec { seed: 5, ..small(0.3) };
        assert_ne!(synth_generate(&small(0.3)).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn layout_and_counts() {
        let data = synth_generate(&small(0.3)).unwrap();
        assert_eq!(data.len(), 18);
        for s in &data {
            let tp = s.seq.touch.unwrap();
            assert!(tp >= 1 && tp + 1 < s.seq.len());
            assert_eq!(s.seq.dim(), 16);
            let f = s.forces.as_ref().unwrap();
            assert_eq!(f.len(), s.seq.len());
            assert!(f.iter().flatten().all(|&v| (0.1..=0.9).contains(&v)));
        }
        for subj in 0..3 {
            for c in 0..3 {
                let n = data.iter().filter(|s| s.subject == subj && s.seq.label == Some(c)).count();
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn embedding_is_orthonormal() {
        let g = SynthGenerator::new(small(0.0)).unwrap();
        let e = &g.embedding;
        for a in 0..e.cols() {
            for b in 0..e.cols() {
                let d: f64 = (0..e.rows()).map(|r| e.get(r, a) * e.get(r, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            SynthSpec { classes: 1, ..small(0.1) },
            SynthSpec { dim: 4, ..small(0.1) },
            SynthSpec { t_min: 10, t_max: 5, ..small(0.1) },
            SynthSpec { separation: 0.0, ..small(0.1) },
        ] {
            assert!(synth_generate(&bad).is_err());
        }
    }
}
