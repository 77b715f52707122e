//! Plain-text dataset manifest.
//!
//! One directive per line; `#` starts a comment. Values are `key=value`
//! tokens separated by whitespace, double-quoted when they contain spaces.
//!
//! ```text
//! object cup labels=drink,pound,shake,move,pour
//! object knife labels="cut,chop,poke a hole,peel,spread"
//! record subject=s1 object=cup action=drink rep=1 features=s1/cup_drink_1.fseq forces=s1/cup_drink_1.frec touch=41
//! ```
//!
//! `forces` and `touch` are optional. Relative paths resolve against the
//! manifest's directory. A `touch` given here overrides the one stored in
//! the feature file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::fseq::{self, FeatureSequence};
use crate::binio::{read_file, write_atomic, Decoder};
use crate::error::{format_err, io_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectSpec {
    pub name: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub subject: String,
    pub object: String,
    pub action: String,
    /// Index of `action` in the object's label list.
    pub label: usize,
    pub rep: u32,
    pub features: PathBuf,
    pub forces: Option<PathBuf>,
    pub touch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub objects: Vec<ObjectSpec>,
    pub records: Vec<Record>,
}

fn tokenize(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut any = false;
    for ch in line.chars() {
        match ch {
            '"' => {
                quoted = !quoted;
                any = true;
            }
            c if c.is_whitespace() && !quoted => {
                if any {
                    out.push(std::mem::take(&mut cur));
                    any = false;
                }
            }
            c => {
                cur.push(c);
                any = true;
            }
        }
    }
    if quoted {
        return Err("unterminated quote".into());
    }
    if any {
        out.push(cur);
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    if s.chars().any(char::is_whitespace) || s.is_empty() {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

impl DatasetManifest {
    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Distinct subjects in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.subject.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Indices of the records for `object`, in manifest order.
    pub fn records_for(&self, object: &str) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].object == object).collect()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new(""));
        let mut objects: Vec<ObjectSpec> = Vec::new();
        let mut records = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let field = |f: &str| format!("line {}: {f}", no + 1);
            let line = raw.split('#').next().unwrap_or("");
            let toks = tokenize(line).map_err(|m| format_err(path, &field("syntax"), m))?;
            let Some((kind, rest)) = toks.split_first() else {
                continue;
            };
            let mut kv = Vec::new();
            let mut positional = Vec::new();
            for t in rest {
                match t.split_once('=') {
                    Some((k, v)) => kv.push((k.to_string(), v.to_string())),
                    None => positional.push(t.clone()),
                }
            }
            let get = |k: &str| kv.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
            match kind.as_str() {
                "object" => {
                    let [name] = positional.as_slice() else {
                        return Err(format_err(path, &field("object"), "expected exactly one object name"));
                    };
                    if let Some((k, _)) = kv.iter().find(|(k, _)| k != "labels") {
                        return Err(format_err(path, &field(k), "unknown key"));
                    }
                    let labels: Vec<String> = get("labels")
                        .ok_or_else(|| format_err(path, &field("labels"), "missing"))?
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .collect();
                    if labels.len() < 2 || labels.iter().any(|l| l.is_empty()) {
                        return Err(format_err(path, &field("labels"), "need at least two nonempty labels"));
                    }
                    if labels.iter().collect::<BTreeSet<_>>().len() != labels.len() {
                        return Err(format_err(path, &field("labels"), "duplicate label"));
                    }
                    if objects.iter().any(|o| &o.name == name) {
                        return Err(format_err(path, &field("object"), format!("{name} declared twice")));
                    }
                    objects.push(ObjectSpec {
                        name: name.clone(),
                        labels,
                    });
                }
                "record" => {
                    if !positional.is_empty() {
                        return Err(format_err(path, &field("record"), format!("stray token {:?}", positional[0])));
                    }
                    const KEYS: [&str; 7] = ["subject", "object", "action", "rep", "features", "forces", "touch"];
                    if let Some((k, _)) = kv.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
                        return Err(format_err(path, &field(k), "unknown key"));
                    }
                    let req = |k: &str| get(k).ok_or_else(|| format_err(path, &field(k), "missing"));
                    let object = req("object")?.to_string();
                    let spec = objects
                        .iter()
                        .find(|o| o.name == object)
                        .ok_or_else(|| format_err(path, &field("object"), format!("{object} not declared")))?;
                    let action = req("action")?.to_string();
                    let label = spec
                        .labels
                        .iter()
                        .position(|l| *l == action)
                        .ok_or_else(|| format_err(path, &field("action"), format!("{action} not a label of {object}")))?;
                    let rep = match get("rep") {
                        Some(v) => v.parse().map_err(|_| format_err(path, &field("rep"), format!("{v:?}")))?,
                        None => 0,
                    };
                    let touch = match get("touch") {
                        Some(v) => Some(v.parse().map_err(|_| format_err(path, &field("touch"), format!("{v:?}")))?),
                        None => None,
                    };
                    records.push(Record {
                        subject: req("subject")?.to_string(),
                        object,
                        action,
                        label,
                        rep,
                        features: root.join(req("features")?),
                        forces: get("forces").map(|p| root.join(p)),
                        touch,
                    });
                }
                other => return Err(format_err(path, &field("directive"), format!("unknown directive {other:?}"))),
            }
        }
        Ok(DatasetManifest { objects, records })
    }

    /// Serializes with paths made relative to `dir` where possible.
    pub fn to_text(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut s = String::new();
        for o in &self.objects {
            let _ = writeln!(s, "object {} labels={}", quote(&o.name), quote(&o.labels.join(",")));
        }
        for r in &self.records {
            let _ = write!(
                s,
                "record subject={} object={} action={} rep={} features={}",
                quote(&r.subject),
                quote(&r.object),
                quote(&r.action),
                r.rep,
                quote(&rel(&r.features))
            );
            if let Some(f) = &r.forces {
                let _ = write!(s, " forces={}", quote(&rel(f)));
            }
            if let Some(t) = r.touch {
                let _ = write!(s, " touch={t}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        write_atomic(path, self.to_text(dir).as_bytes())
    }
}

fn read_header(path: &Path) -> Result<fseq::Header> {
    let mut buf = [0u8; fseq::HEADER_LEN];
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    f.read_exact(&mut buf).map_err(|_| format_err(path, "header", "truncated"))?;
    let mut d = Decoder::new(&buf, path);
    fseq::decode_header(&mut d)
}

/// Parses the manifest and checks every referenced file: feature headers
/// must parse, share one dimension, and contain the touching point; force
/// files must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| format_err(path, "encoding", "not UTF-8"))?;
    let m = DatasetManifest::parse(&text, path)?;
    let mut dim = None;
    for r in &m.records {
        let h = read_header(&r.features)?;
        let t = h
            .frames
            .ok_or_else(|| format_err(&r.features, "frame count", "stream marker in a file"))?;
        match dim {
            None => dim = Some(h.dim),
            Some(d) if d != h.dim => {
                return Err(format_err(
                    &r.features,
                    "dimension",
                    format!("{} differs from the dataset dimension {d}", h.dim),
                ))
            }
            _ => {}
        }
        if let Some(tp) = r.touch {
            if tp >= t {
                return Err(format_err(&r.features, "touching point", format!("frame {tp} outside {t} frames")));
            }
        }
        if let Some(f) = &r.forces {
            if !f.is_file() {
                return Err(io_err(f, std::io::Error::new(std::io::ErrorKind::NotFound, "force file not found")));
            }
        }
    }
    Ok(m)
}

/// Reads a record's features, attaching its label and touching point.
pub fn load_record<T: Scalar>(r: &Record) -> Result<FeatureSequence<T>> {
    let mut seq: FeatureSequence<T> = fseq::read_features(&r.features)?;
    seq.label = Some(r.label);
    if r.touch.is_some() {
        seq.touch = r.touch;
    }
    if let Some(tp) = seq.touch {
        if tp >= seq.len() {
            return Err(format_err(&r.features, "touching point", format!("frame {tp} outside {} frames", seq.len())));
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fseq::write_features;
    use crate::numerics::Vector;

    const TEXT: &str = r#"
# two objects
object cup labels=drink,pound
object knife labels="cut,poke a hole"
record subject=s1 object=cup action=pound rep=2 features=a.fseq touch=1
record subject=s2 object=knife action="poke a hole" features=sub/b.fseq forces=b.frec
"#;

    #[test]
    fn parses_objects_and_records() {
        let m = DatasetManifest::parse(TEXT, Path::new("/data/m.txt")).unwrap();
        assert_eq!(m.objects[1].labels, vec!["cut", "poke a hole"]);
        let r = &m.records[0];
        assert_eq!((r.label, r.rep, r.touch), (1, 2, Some(1)));
        assert_eq!(r.features, Path::new("/data/a.fseq"));
        assert_eq!(m.records[1].label, 1);
        assert_eq!(m.records[1].forces.as_deref(), Some(Path::new("/data/b.frec")));
        assert_eq!(m.subjects(), vec!["s1", "s2"]);
        let again = DatasetManifest::parse(&m.to_text(Path::new("/data")), Path::new("/data/m.txt")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_bad_lines() {
        let p = Path::new("m.txt");
        for bad in [
            "object cup labels=a",
            "object cup labels=a,a",
            "object cup labels=a,b\nrecord subject=s object=cup action=z features=f",
            "record subject=s object=mug action=a features=f",
            "object cup labels=a,b\nrecord subject=s object=cup action=a features=f colour=red",
            "object cup labels=a,b\nrecord subject=s object=cup action=a features=f touch=x",
            "frobnicate",
            "object cup labels=\"a,b",
        ] {
            let e = DatasetManifest::parse(bad, p).unwrap_err().to_string();
            assert!(e.starts_with("m.txt: bad "), "{e}");
        }
    }

    #[test]
    fn load_checks_files() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.txt");
        std::fs::write(&mp, "object cup labels=a,b\nrecord subject=s object=cup action=a features=missing.fseq\n").unwrap();
        let e = load_manifest(&mp).unwrap_err().to_string();
        assert!(e.contains("missing.fseq"), "{e}");

        let seq = FeatureSequence::<f64>::new(vec![Vector::zeros(3); 4]).unwrap();
        write_features(&dir.path().join("x.fseq"), &seq).unwrap();
        std::fs::write(&mp, "object cup labels=a,b\nrecord subject=s object=cup action=b features=x.fseq touch=4\n").unwrap();
        let e = load_manifest(&mp).unwrap_err().to_string();
        assert!(e.contains("touching point"), "{e}");
        std::fs::write(&mp, "object cup labels=a,b\nrecord subject=s object=cup action=b features=x.fseq touch=3\n").unwrap();
        let m = load_manifest(&mp).unwrap();
        let s: FeatureSequence<f64> = load_record(&m.records[0]).unwrap();
        assert_eq!((s.label, s.touch), (Some(1), Some(3)));
    }
}
