//! Fingertip force conditioning: resistive-divider calibration, zero-phase
//! mains notch, and per-channel min-max normalization.
//!
//! # Recording format (`FREC`, version 1)
//!
//! All integers and reals little-endian.
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `FREC` |
//! | 4 | `u32` version = 1 |
//! | 8 | `f64` sample rate (Hz) |
//! | 4 | `u32` channel count M |
//! | M × (4 + len) | per channel: `u32` name length, UTF-8 name |
//! | 8 | `f64` V_in (volts) |
//! | 8 | `f64` C1 |
//! | 8 | `f64` C2 |
//! | 8 | `u64` frame count T |
//! | T × M × 4 | `f32` raw V_out samples, frame-major |

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{check_dim, invalid, Error, Result};

/// Newtons per pound-force; the sensor equation is in pounds.
pub const NEWTONS_PER_LBF: f64 = 4.448;
/// Upper end of the fingertip sensor range (2 lbf).
pub const SENSOR_MAX_N: f64 = 8.896;

pub const DEFAULT_NOTCH_HZ: f64 = 60.0;
pub const DEFAULT_NOTCH_Q: f64 = 30.0;

const FREC_MAGIC: &[u8; 4] = b"FREC";
const FREC_VERSION: u32 = 1;

/// Per-device constants of the voltage-divider readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorCalibration {
    pub v_in: f64,
    pub c1: f64,
    pub c2: f64,
    pub f_max: f64,
}

impl SensorCalibration {
    pub fn new(v_in: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(v_in > 0.0 && v_in.is_finite()) {
            return Err(invalid(format!("V_in must be positive, got {v_in}")));
        }
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(invalid("calibration constants must be finite"));
        }
        Ok(SensorCalibration {
            v_in,
            c1,
            c2,
            f_max: SENSOR_MAX_N,
        })
    }

    /// `F = 4.448 · (C1 · V_out / (V_in − V_out) − C2)`, clamped to `[0, f_max]`.
    pub fn volts_to_force(&self, v_out: f64) -> Result<f64> {
        if v_out >= self.v_in {
            return Err(Error::Saturation {
                v_out,
                v_in: self.v_in,
            });
        }
        if !(v_out >= 0.0) {
            return Err(invalid(format!("negative sensor voltage {v_out}")));
        }
        Ok(self.raw_force(v_out).clamp(0.0, self.f_max))
    }

    /// The unclamped divider equation.
    pub fn raw_force(&self, v_out: f64) -> f64 {
        NEWTONS_PER_LBF * (self.c1 * v_out / (self.v_in - v_out) - self.c2)
    }

    /// Voltage that reads as `force` Newtons (inverse of the unclamped equation).
    pub fn force_to_volts(&self, force: f64) -> f64 {
        let r = force / NEWTONS_PER_LBF + self.c2;
        // C1·v / (V_in − v) = r  ⇒  v = r·V_in / (C1 + r)
        r * self.v_in / (self.c1 + r)
    }
}

pub fn volts_to_force(cal: &SensorCalibration, v_out: f64) -> Result<f64> {
    cal.volts_to_force(v_out)
}

/// `T × M` force samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceTrace {
    pub sample_rate: f64,
    pub channels: Vec<String>,
    /// Frame-major: `values[t][m]`.
    pub values: Vec<Vec<f64>>,
    pub normalized: bool,
}

impl ForceTrace {
    pub fn new(sample_rate: f64, channels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let m = channels.len();
        for (t, row) in values.iter().enumerate() {
            if row.len() != m {
                return Err(invalid(format!("frame {t} has {} channels, expected {m}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("frame {t} has non-finite force")));
            }
        }
        Ok(ForceTrace {
            sample_rate,
            channels,
            values,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, m: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[m]).collect()
    }

    fn map_channels(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.channel_count()]; self.len()];
        for m in 0..self.channel_count() {
            for (t, v) in f(m, &self.channel(m)).into_iter().enumerate() {
                out[t][m] = v;
            }
        }
        out
    }
}

/// Second-order IIR notch (RBJ cookbook), coefficients normalized so `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Notch {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Notch {
    pub fn design(f0: f64, q: f64, sample_rate: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0 < sample_rate / 2.0) {
            return Err(invalid(format!(
                "notch frequency {f0} Hz outside (0, {}) for sample rate {sample_rate} Hz",
                sample_rate / 2.0
            )));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(invalid(format!("notch q must be positive, got {q}")));
        }
        let w0 = 2.0 * PI * f0 / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Ok(Notch {
            b: [1.0 / a0, -2.0 * cw / a0, 1.0 / a0],
            a: [1.0, -2.0 * cw / a0, (1.0 - alpha) / a0],
        })
    }

    /// Steady-state DF2T state for a unit constant input.
    fn unit_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        [gain - b0, b2 - a2 * gain]
    }

    /// Causal filtering, transposed direct form II, state primed for `x[0]` held forever.
    fn run(&self, x: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let zi = self.unit_state();
        let x0 = x.first().copied().unwrap_or(0.0);
        let (mut s1, mut s2) = (zi[0] * x0, zi[1] * x0);
        x.iter()
            .map(|&v| {
                let y = b0 * v + s1;
                s1 = b1 * v - a1 * y + s2;
                s2 = b2 * v - a2 * y;
                y
            })
            .collect()
    }

    /// Forward-backward filtering with odd reflection padding at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = 9.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.run(&ext);
        y.reverse();
        let mut y = self.run(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase notch at `f0` applied to every channel independently.
pub fn notch_filter(trace: &ForceTrace, f0: f64, q: f64) -> Result<ForceTrace> {
    let notch = Notch::design(f0, q, trace.sample_rate)?;
    Ok(ForceTrace {
        values: trace.map_channels(|_, x| notch.filtfilt(x)),
        ..trace.clone()
    })
}

/// Per-channel bounds used for min-max scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormParams {
    pub fn fit(trace: &ForceTrace) -> Self {
        Self::fit_frames(trace.values.iter().map(|r| r.as_slice()), trace.channel_count())
    }

    /// Bounds over every frame of every trace (training set).
    pub fn fit_frames<'a>(frames: impl IntoIterator<Item = &'a [f64]>, channels: usize) -> Self {
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for row in frames {
            for m in 0..channels {
                min[m] = min[m].min(row[m]);
                max[m] = max[m].max(row[m]);
            }
        }
        for m in 0..channels {
            if min[m] > max[m] {
                min[m] = 0.0;
                max[m] = 0.0;
            }
        }
        NormParams { min, max }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// `(x − min)/(max − min)` clamped to `[0, 1]`; degenerate channels map to 0.
    pub fn apply(&self, m: usize, x: f64) -> f64 {
        let span = self.max[m] - self.min[m];
        if span <= 0.0 {
            0.0
        } else {
            ((x - self.min[m]) / span).clamp(0.0, 1.0)
        }
    }

    pub fn invert(&self, m: usize, x: f64) -> f64 {
        x * (self.max[m] - self.min[m]) + self.min[m]
    }
}

/// Min-max scaling to `[0, 1]`. Without `params` the bounds are fitted to this trace.
pub fn normalize(trace: &ForceTrace, params: Option<&NormParams>) -> Result<(ForceTrace, NormParams)> {
    let params = match params {
        Some(p) => {
            check_dim("normalization channels", trace.channel_count(), p.channels())?;
            p.clone()
        }
        None => NormParams::fit(trace),
    };
    let values = trace
        .values
        .iter()
        .map(|r| r.iter().enumerate().map(|(m, &v)| params.apply(m, v)).collect())
        .collect();
    Ok((
        ForceTrace {
            values,
            normalized: true,
            ..trace.clone()
        },
        params,
    ))
}

pub fn denormalize(trace: &ForceTrace, params: &NormParams) -> Result<ForceTrace> {
    check_dim("normalization channels", trace.channel_count(), params.channels())?;
    let values = trace
        .values
        .iter()
        .map(|r| r.iter().enumerate().map(|(m, &v)| params.invert(m, v)).collect())
        .collect();
    Ok(ForceTrace {
        values,
        normalized: false,
        ..trace.clone()
    })
}

/// Raw sensor voltages as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceRecording {
    pub sample_rate: f64,
    pub channels: Vec<String>,
    pub calibration: SensorCalibration,
    /// Frame-major `v_out[t][m]`.
    pub volts: Vec<Vec<f32>>,
}

impl ForceRecording {
    /// Converts every sample to Newtons.
    pub fn to_newtons(&self) -> Result<ForceTrace> {
        let values = self
            .volts
            .iter()
            .map(|r| r.iter().map(|&v| self.calibration.volts_to_force(v as f64)).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        ForceTrace::new(self.sample_rate, self.channels.clone(), values)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(FREC_MAGIC)
            .u32(FREC_VERSION)
            .f64(self.sample_rate)
            .u32(self.channels.len() as u32);
        for name in &self.channels {
            e.str(name);
        }
        e.f64(self.calibration.v_in)
            .f64(self.calibration.c1)
            .f64(self.calibration.c2)
            .u64(self.volts.len() as u64);
        for row in &self.volts {
            for &v in row {
                e.f32(v);
            }
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut d = Decoder::new(bytes, path);
        d.magic(FREC_MAGIC)?;
        let version = d.u32("version")?;
        if version != FREC_VERSION {
            return Err(d.err("version", format!("unsupported version {version}")));
        }
        let sample_rate = d.f64("sample_rate")?;
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(d.err("sample_rate", format!("must be positive, got {sample_rate}")));
        }
        let m = d.u32("channel count")? as usize;
        if m == 0 {
            return Err(d.err("channel count", "zero channels"));
        }
        let channels = (0..m).map(|_| d.str("channel name")).collect::<Result<Vec<_>>>()?;
        let (v_in, c1, c2) = (d.f64("V_in")?, d.f64("C1")?, d.f64("C2")?);
        let calibration = SensorCalibration::new(v_in, c1, c2).map_err(|e| d.err("calibration", e.to_string()))?;
        let t = d.u64("frame count")? as usize;
        let need = t.checked_mul(m).and_then(|x| x.checked_mul(4));
        if need != Some(d.remaining()) {
            return Err(d.err(
                "samples",
                format!("header declares {t} frames x {m} channels, {} sample bytes present", d.remaining()),
            ));
        }
        let mut volts = Vec::with_capacity(t);
        for _ in 0..t {
            volts.push((0..m).map(|_| d.f32("samples")).collect::<Result<Vec<_>>>()?);
        }
        Ok(ForceRecording {
            sample_rate,
            channels,
            calibration,
            volts,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

/// Calibration, optional notch, then normalization (fitted when `norm` is `None`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conditioning {
    pub notch: Option<(f64, f64)>,
}

impl Default for Conditioning {
    fn default() -> Self {
        Conditioning {
            notch: Some((DEFAULT_NOTCH_HZ, DEFAULT_NOTCH_Q)),
        }
    }
}

impl Conditioning {
    /// Newton-domain trace after calibration and the optional notch.
    pub fn newtons(&self, rec: &ForceRecording) -> Result<ForceTrace> {
        let trace = rec.to_newtons()?;
        match self.notch {
            Some((f0, q)) => notch_filter(&trace, f0, q),
            None => Ok(trace),
        }
    }
}
