//! Single-file model container for the recurrent network and both baselines.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "APMD" | version u32 | type tag u32 | payload
//! ```
//!
//! Tag 1 is a recurrent model, tag 2 a per-class HMM set, tag 3 a window
//! classifier. All reals in the payload are 8-byte floats. Strings are a `u32`
//! byte length followed by UTF-8. The full byte layout is in `docs/formats.md`.

use std::path::Path;

use crate::baselines::{hmm_classify, GaussianHmm, WindowClassifier};
use crate::binio::{read_file, write_atomic, Decoder, Encoder};
use crate::error::{invalid, Result};
use crate::force::NormParams;
use crate::model::{Model, ModelParams, ModelShape};
use crate::numerics::{Matrix, PcaModel, Vector};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"APMD";
pub const VERSION: u32 = 1;

pub const TAG_RECURRENT: u32 = 1;
pub const TAG_HMM: u32 = 2;
pub const TAG_WINDOW: u32 = 3;

/// One Gaussian HMM per action, optionally behind a PCA reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmSet {
    pub pca: Option<PcaModel<f64>>,
    pub labels: Vec<String>,
    pub models: Vec<GaussianHmm>,
}

impl HmmSet {
    pub fn classify(&self, frames: &[Vector<f64>]) -> Result<usize> {
        match &self.pca {
            Some(p) => {
                let z: Vec<Vector<f64>> = frames.iter().map(|f| p.transform(f)).collect::<Result<_>>()?;
                hmm_classify(&self.models, &z)
            }
            None => hmm_classify(&self.models, frames),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowModel {
    pub classifier: WindowClassifier,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SavedModel {
    Recurrent(Model<f64>),
    Hmm(HmmSet),
    Window(WindowModel),
}

impl SavedModel {
    pub fn tag(&self) -> u32 {
        match self {
            SavedModel::Recurrent(_) => TAG_RECURRENT,
            SavedModel::Hmm(_) => TAG_HMM,
            SavedModel::Window(_) => TAG_WINDOW,
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            SavedModel::Recurrent(m) => &m.labels,
            SavedModel::Hmm(h) => &h.labels,
            SavedModel::Window(w) => &w.labels,
        }
    }
}

fn put_count(e: &mut Encoder, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| invalid(format!("count {n} does not fit the container")))?;
    e.u32(n);
    Ok(())
}

fn put_strings(e: &mut Encoder, names: &[String]) -> Result<()> {
    put_count(e, names.len())?;
    for n in names {
        e.str(n);
    }
    Ok(())
}

fn get_strings(d: &mut Decoder<'_>, field: &str) -> Result<Vec<String>> {
    let n = d.u32(field)? as usize;
    (0..n).map(|_| d.str(field)).collect()
}

fn put_matrix(e: &mut Encoder, m: &Matrix<f64>) -> Result<()> {
    put_count(e, m.rows())?;
    put_count(e, m.cols())?;
    e.f64s(m.as_slice());
    Ok(())
}

fn get_matrix(d: &mut Decoder<'_>, field: &str) -> Result<Matrix<f64>> {
    let r = d.u32(field)? as usize;
    let c = d.u32(field)? as usize;
    let n = r.checked_mul(c).ok_or_else(|| d.err(field, "size overflow"))?;
    let data = d.f64s(n, field)?;
    Matrix::from_vec(r, c, data).map_err(|e| d.err(field, e.to_string()))
}

fn put_vec(e: &mut Encoder, v: &[f64]) -> Result<()> {
    put_count(e, v.len())?;
    e.f64s(v);
    Ok(())
}

fn get_vec(d: &mut Decoder<'_>, field: &str) -> Result<Vec<f64>> {
    let n = d.u32(field)? as usize;
    d.f64s(n, field)
}

fn put_pca(e: &mut Encoder, p: &PcaModel<f64>) -> Result<()> {
    put_vec(e, &p.mean)?;
    put_matrix(e, &p.components)?;
    put_vec(e, &p.explained_variance)
}

fn get_pca(d: &mut Decoder<'_>) -> Result<PcaModel<f64>> {
    let mean = get_vec(d, "pca mean")?;
    let components = get_matrix(d, "pca components")?;
    let var = get_vec(d, "pca variance")?;
    if mean.len() != components.cols() || var.len() != components.rows() {
        return Err(d.err("pca", "mean, components and variance sizes disagree"));
    }
    Ok(PcaModel {
        mean: mean.into(),
        components,
        explained_variance: var.into(),
    })
}

fn encode_recurrent(e: &mut Encoder, m: &Model<f64>) -> Result<()> {
    m.validate()?;
    let s = m.params.shape();
    for n in [s.input_dim, s.projected_dim, s.hidden_dim, s.labels.unwrap_or(0), s.channels.unwrap_or(0)] {
        put_count(e, n)?;
    }
    for (_, t) in m.params.tensors() {
        e.f64s(t);
    }
    put_strings(e, &m.labels)?;
    put_strings(e, &m.channels)?;
    match &m.norm {
        Some(norm) => {
            e.u32(1);
            put_vec(e, &norm.min)?;
            put_vec(e, &norm.max)?;
        }
        None => {
            e.u32(0);
        }
    }
    Ok(())
}

fn decode_recurrent(d: &mut Decoder<'_>) -> Result<Model<f64>> {
    let mut dims = [0usize; 5];
    for (v, name) in dims.iter_mut().zip(["input dim", "projected dim", "hidden dim", "labels", "channels"]) {
        *v = d.u32(name)? as usize;
    }
    if dims[..3].contains(&0) {
        return Err(d.err("dims", "input, projected and hidden sizes must be positive"));
    }
    if dims[3] == 0 && dims[4] == 0 {
        return Err(d.err("dims", "model has neither a classifier nor a regressor"));
    }
    let nonzero = |n: usize| (n > 0).then_some(n);
    let shape = ModelShape {
        input_dim: dims[0],
        projected_dim: dims[1],
        hidden_dim: dims[2],
        labels: nonzero(dims[3]),
        channels: nonzero(dims[4]),
    };
    let mut params = ModelParams::<f64>::zeros(shape);
    for t in params.tensors_mut() {
        let vals = d.f64s(t.len(), "parameters")?;
        t.copy_from_slice(&vals);
    }
    if !params.all_finite() {
        return Err(d.err("parameters", "non-finite value"));
    }
    let labels = get_strings(d, "label names")?;
    let channels = get_strings(d, "channel names")?;
    let norm = match d.u32("normalization flag")? {
        0 => None,
        1 => Some(NormParams {
            min: get_vec(d, "normalization min")?,
            max: get_vec(d, "normalization max")?,
        }),
        f => return Err(d.err("normalization flag", format!("expected 0 or 1, found {f}"))),
    };
    let model = Model {
        params,
        labels,
        channels,
        norm,
    };
    model.validate().map_err(|e| d.err("model", e.to_string()))?;
    Ok(model)
}

fn encode_hmm(e: &mut Encoder, h: &HmmSet) -> Result<()> {
    if h.labels.len() != h.models.len() {
        return Err(invalid("hmm set: one label name per model required"));
    }
    match &h.pca {
        Some(p) => {
            e.u32(1);
            put_pca(e, p)?;
        }
        None => {
            e.u32(0);
        }
    }
    put_strings(e, &h.labels)?;
    for m in &h.models {
        m.validate()?;
        put_count(e, m.states())?;
        put_count(e, m.dim())?;
        e.f64s(&m.initial);
        for row in m.transition.iter().chain(&m.means).chain(&m.variances) {
            e.f64s(row);
        }
    }
    Ok(())
}

fn decode_hmm(d: &mut Decoder<'_>) -> Result<HmmSet> {
    let pca = match d.u32("pca flag")? {
        0 => None,
        1 => Some(get_pca(d)?),
        f => return Err(d.err("pca flag", format!("expected 0 or 1, found {f}"))),
    };
    let labels = get_strings(d, "label names")?;
    let mut models = Vec::with_capacity(labels.len());
    for _ in 0..labels.len() {
        let s = d.u32("hmm states")? as usize;
        let dim = d.u32("hmm dim")? as usize;
        let initial = d.f64s(s, "hmm initial")?;
        let mut rows = |n: usize, field: &str| (0..s).map(|_| d.f64s(n, field)).collect::<Result<Vec<_>>>();
        let transition = rows(s, "hmm transition")?;
        let means = rows(dim, "hmm means")?;
        let variances = rows(dim, "hmm variances")?;
        let m = GaussianHmm {
            initial,
            transition,
            means,
            variances,
        };
        m.validate().map_err(|e| d.err("hmm", e.to_string()))?;
        models.push(m);
    }
    Ok(HmmSet { pca, labels, models })
}

fn encode_window(e: &mut Encoder, w: &WindowModel) -> Result<()> {
    let c = &w.classifier;
    if w.labels.len() != c.labels() {
        return Err(invalid("window model: one label name per class required"));
    }
    put_count(e, c.window)?;
    put_count(e, c.stride)?;
    put_pca(e, &c.pca)?;
    put_matrix(e, &c.weights)?;
    put_vec(e, &c.bias)?;
    put_strings(e, &w.labels)
}

fn decode_window(d: &mut Decoder<'_>) -> Result<WindowModel> {
    let window = d.u32("window")? as usize;
    let stride = d.u32("stride")? as usize;
    if window == 0 || stride == 0 {
        return Err(d.err("window", "window and stride must be positive"));
    }
    let pca = get_pca(d)?;
    let weights = get_matrix(d, "window weights")?;
    let bias = get_vec(d, "window bias")?;
    if weights.cols() != pca.output_dim() || bias.len() != weights.rows() {
        return Err(d.err("window weights", "shape does not match pca width or bias"));
    }
    let labels = get_strings(d, "label names")?;
    if labels.len() != weights.rows() {
        return Err(d.err("label names", "one name per class required"));
    }
    Ok(WindowModel {
        classifier: WindowClassifier {
            window,
            stride,
            pca,
            weights,
            bias: bias.into(),
        },
        labels,
    })
}

pub fn encode_model(m: &SavedModel) -> Result<Vec<u8>> {
    let mut e = Encoder::new();
    e.bytes(MAGIC).u32(VERSION).u32(m.tag());
    match m {
        SavedModel::Recurrent(r) => encode_recurrent(&mut e, r)?,
        SavedModel::Hmm(h) => encode_hmm(&mut e, h)?,
        SavedModel::Window(w) => encode_window(&mut e, w)?,
    }
    Ok(e.finish())
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<SavedModel> {
    let mut d = Decoder::new(bytes, path);
    d.magic(MAGIC)?;
    let version = d.u32("version")?;
    if version != VERSION {
        return Err(d.err("version", format!("unsupported version {version}")));
    }
    let out = match d.u32("type tag")? {
        TAG_RECURRENT => SavedModel::Recurrent(decode_recurrent(&mut d)?),
        TAG_HMM => SavedModel::Hmm(decode_hmm(&mut d)?),
        TAG_WINDOW => SavedModel::Window(decode_window(&mut d)?),
        t => return Err(d.err("type tag", format!("unknown tag {t}"))),
    };
    d.expect_end()?;
    Ok(out)
}

pub fn save_model(path: &Path, m: &SavedModel) -> Result<()> {
    write_atomic(path, &encode_model(m)?)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    decode_model(&read_file(path)?, path)
}

/// Loads a file that must hold a recurrent model.
pub fn load_recurrent(path: &Path) -> Result<Model<f64>> {
    match load_model(path)? {
        SavedModel::Recurrent(m) => Ok(m),
        other => Err(crate::error::format_err(
            path,
            "type tag",
            format!("expected a recurrent model (tag {TAG_RECURRENT}), found tag {}", other.tag()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{hmm_fit, window_fit, HmmConfig, WindowConfig};
    use crate::data::FeatureSequence;
    use crate::numerics::rng::{normal, seeded_rng};

    fn recurrent() -> Model<f64> {
        let mut rng = seeded_rng(3);
        let shape = ModelShape {
            input_dim: 3,
            projected_dim: 2,
            hidden_dim: 4,
            labels: Some(3),
            channels: Some(2),
        };
        let mut m = Model::new(ModelParams::random(&mut rng, shape, 0.3, 1.0));
        m.labels = vec!["pour".into(), "stir".into(), "drink".into()];
        m.norm = Some(NormParams {
            min: vec![0.0, 0.1],
            max: vec![2.0, 3.5],
        });
        m
    }

    fn seqs() -> Vec<FeatureSequence<f64>> {
        let mut rng = seeded_rng(9);
        (0..6)
            .map(|i| {
                let frames = (0..8)
                    .map(|_| (0..3).map(|j| if j == i % 2 { 2.0 } else { 0.0 } + normal(&mut rng, 0.3)).collect())
                    .collect();
                FeatureSequence::new(frames).unwrap().with_label(i % 2)
            })
            .collect()
    }

    #[test]
    fn recurrent_roundtrip_is_exact() {
        let m = SavedModel::Recurrent(recurrent());
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(decode_model(&bytes, Path::new("m")).unwrap(), m);
    }

    #[test]
    fn baselines_roundtrip() {
        let data = seqs();
        let w = window_fit(&data, 2, &WindowConfig { window: 3, pca_dim: 2, ..Default::default() }).unwrap();
        let wm = SavedModel::Window(WindowModel {
            classifier: w,
            labels: vec!["a".into(), "b".into()],
        });
        assert_eq!(decode_model(&encode_model(&wm).unwrap(), Path::new("w")).unwrap(), wm);

        let cfg = HmmConfig { states: 2, ..Default::default() };
        let models = (0..2)
            .map(|c| {
                let xs: Vec<&[Vector<f64>]> =
                    data.iter().filter(|s| s.label == Some(c)).map(|s| s.frames.as_slice()).collect();
                hmm_fit(&xs, &cfg).map(|f| f.model)
            })
            .collect::<Result<Vec<_>>>()
            .unwrap();
        let hm = SavedModel::Hmm(HmmSet {
            pca: None,
            labels: vec!["a".into(), "b".into()],
            models,
        });
        let back = decode_model(&encode_model(&hm).unwrap(), Path::new("h")).unwrap();
        assert_eq!(back, hm);
        if let SavedModel::Hmm(h) = back {
            assert_eq!(h.classify(&data[1].frames).unwrap(), 1);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_model(&SavedModel::Recurrent(recurrent())).unwrap();
        let p = Path::new("bad.model");
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode_model(&b, p).unwrap_err().to_string().contains("magic"));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(decode_model(&b, p).unwrap_err().to_string().contains("version"));
        let mut b = bytes.clone();
        b[8] = 7;
        assert!(decode_model(&b, p).unwrap_err().to_string().contains("type tag"));
        assert!(decode_model(&bytes[..bytes.len() - 1], p).is_err());
        let mut b = bytes.clone();
        b.push(0);
        assert!(decode_model(&b, p).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn file_roundtrip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.model");
        let m = recurrent();
        save_model(&p, &SavedModel::Recurrent(m.clone())).unwrap();
        assert_eq!(load_recurrent(&p).unwrap(), m);
        let data = seqs();
        let w = window_fit(&data, 2, &WindowConfig { window: 3, pca_dim: 2, ..Default::default() }).unwrap();
        save_model(
            &p,
            &SavedModel::Window(WindowModel {
                classifier: w,
                labels: vec!["a".into(), "b".into()],
            }),
        )
        .unwrap();
        assert!(load_recurrent(&p).is_err());
    }
}
