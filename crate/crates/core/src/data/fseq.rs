//! `FSEQ` feature-sequence container.
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `FSEQ` |
//! | 4 | `u32` version = 1 |
//! | 4 | `u32` feature dimension d |
//! | 4 | `u32` frame count T (`0xFFFF_FFFF` = unbounded stream, read to EOF) |
//! | 4 | `i32` touching-point frame, −1 if absent |
//! | 4 | `i32` label id, −1 if absent |
//! | T × d × 4 | `f32` features, frame-major |
//!
//! All fields little-endian.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::binio::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{format_err, invalid, io_err, Result};
use crate::numerics::Vector;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"FSEQ";
const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
/// Frame count marking an open-ended stream.
pub const STREAM_FRAMES: u32 = u32::MAX;

/// Time-ordered feature vectors of one action sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<T> {
    pub frames: Vec<Vector<T>>,
    pub touch: Option<usize>,
    pub label: Option<usize>,
}

impl<T: Scalar> FeatureSequence<T> {
    pub fn new(frames: Vec<Vector<T>>) -> Result<Self> {
        let seq = FeatureSequence {
            frames,
            touch: None,
            label: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_touch(mut self, touch: usize) -> Result<Self> {
        if touch >= self.len() {
            return Err(invalid(format!("touching point {touch} outside {} frames", self.len())));
        }
        self.touch = Some(touch);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(invalid("feature sequence has no frames"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(invalid("feature dimension is zero"));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.dim() != d {
                return Err(invalid(format!("frame {t} has dimension {}, expected {d}", f.dim())));
            }
        }
        if let Some(tp) = self.touch {
            if tp >= self.len() {
                return Err(invalid(format!("touching point {tp} outside {} frames", self.len())));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            frames: self.frames.iter().map(|f| f.cast()).collect(),
            touch: self.touch,
            label: self.label,
        }
    }
}

fn header(e: &mut Encoder, d: usize, t: u32, touch: Option<usize>, label: Option<usize>) {
    e.bytes(MAGIC)
        .u32(VERSION)
        .u32(d as u32)
        .u32(t)
        .i32(touch.map_or(-1, |v| v as i32))
        .i32(label.map_or(-1, |v| v as i32));
}

pub fn encode<T: Scalar>(seq: &FeatureSequence<T>) -> Vec<u8> {
    let mut e = Encoder::new();
    header(&mut e, seq.dim(), seq.len() as u32, seq.touch, seq.label);
    for f in &seq.frames {
        for &v in f.iter() {
            e.f32(v.as_f64() as f32);
        }
    }
    e.finish()
}

pub fn write_features<T: Scalar>(path: &Path, seq: &FeatureSequence<T>) -> Result<()> {
    seq.validate()?;
    write_atomic(path, &encode(seq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub dim: usize,
    /// `None` for an unbounded stream.
    pub frames: Option<usize>,
    pub touch: Option<usize>,
    pub label: Option<usize>,
}

pub(crate) fn decode_header(d: &mut Decoder<'_>) -> Result<Header> {
    d.magic(MAGIC)?;
    let version = d.u32("version")?;
    if version != VERSION {
        return Err(d.err("version", format!("unsupported version {version}")));
    }
    let dim = d.u32("dimension")? as usize;
    if dim == 0 {
        return Err(d.err("dimension", "zero"));
    }
    let t = d.u32("frame count")?;
    let frames = (t != STREAM_FRAMES).then_some(t as usize);
    let touch = d.i32("touching point")?;
    let label = d.i32("label")?;
    if touch < -1 {
        return Err(d.err("touching point", format!("{touch} is negative")));
    }
    if label < -1 {
        return Err(d.err("label", format!("{label} is negative")));
    }
    let touch = (touch >= 0).then_some(touch as usize);
    if let (Some(tp), Some(n)) = (touch, frames) {
        if tp >= n {
            return Err(d.err("touching point", format!("frame {tp} outside {n} frames")));
        }
    }
    Ok(Header {
        dim,
        frames,
        touch,
        label: (label >= 0).then_some(label as usize),
    })
}

pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<FeatureSequence<T>> {
    let mut d = Decoder::new(bytes, path);
    let h = decode_header(&mut d)?;
    let t = h.frames.ok_or_else(|| d.err("frame count", "stream marker in a file"))?;
    if t == 0 {
        return Err(d.err("frame count", "zero frames"));
    }
    let need = t.checked_mul(h.dim).and_then(|v| v.checked_mul(4));
    if need != Some(d.remaining()) {
        return Err(d.err(
            "frames",
            format!("header declares {t} x {} values, {} bytes present", h.dim, d.remaining()),
        ));
    }
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let mut f = Vec::with_capacity(h.dim);
        for _ in 0..h.dim {
            let v = d.f32("frames")?;
            if !v.is_finite() {
                return Err(d.err("frames", format!("non-finite value in frame {i}")));
            }
            f.push(T::lit(v as f64));
        }
        frames.push(f.into());
    }
    Ok(FeatureSequence {
        frames,
        touch: h.touch,
        label: h.label,
    })
}

pub fn read_features<T: Scalar>(path: &Path) -> Result<FeatureSequence<T>> {
    decode(&read_file(path)?, path)
}

/// Incremental reader: header first, then one frame per call. Used for
/// standard-input streaming.
pub struct FrameReader<R> {
    inner: R,
    header: Header,
    read: usize,
    name: String,
}

impl<R: Read> FrameReader<R> {
    pub fn new(mut inner: R, name: &str) -> Result<Self> {
        let path = Path::new(name);
        let mut buf = [0u8; HEADER_LEN];
        inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => format_err(path, "header", "truncated"),
            _ => io_err(path, e),
        })?;
        let header = decode_header(&mut Decoder::new(&buf, path))?;
        Ok(FrameReader {
            inner,
            header,
            read: 0,
            name: name.to_string(),
        })
    }

    pub fn header(&self) -> Header {
        self.header
    }

    /// Next frame, or `None` at the declared end (or EOF for a stream).
    pub fn next_frame<T: Scalar>(&mut self) -> Result<Option<Vector<T>>> {
        if Some(self.read) == self.header.frames {
            return Ok(None);
        }
        let path = Path::new(&self.name);
        let mut buf = vec![0u8; self.header.dim * 4];
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(io_err(path, e)),
            }
        }
        if got == 0 && self.header.frames.is_none() {
            return Ok(None);
        }
        if got < buf.len() {
            return Err(format_err(path, "frames", format!("truncated inside frame {}", self.read)));
        }
        let mut out = Vec::with_capacity(self.header.dim);
        for c in buf.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().expect("chunk of 4"));
            if !v.is_finite() {
                return Err(format_err(path, "frames", format!("non-finite value in frame {}", self.read)));
            }
            out.push(T::lit(v as f64));
        }
        self.read += 1;
        Ok(Some(out.into()))
    }
}

/// Writes an FSEQ header for a stream of `dim`-wide frames.
pub fn write_stream_header<W: Write>(w: &mut W, dim: usize, frames: Option<usize>) -> io::Result<()> {
    let mut e = Encoder::new();
    header(&mut e, dim, frames.map_or(STREAM_FRAMES, |t| t as u32), None, None);
    w.write_all(&e.finish())
}

pub fn write_frame<W: Write, T: Scalar>(w: &mut W, frame: &[T]) -> io::Result<()> {
    let mut e = Encoder::new();
    for &v in frame {
        e.f32(v.as_f64() as f32);
    }
    w.write_all(&e.finish())
}
