use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use actpred::baselines::{window_fit, HmmConfig, WindowConfig};
use actpred::binio::write_atomic;
use actpred::container::{load_model, save_model, SavedModel, WindowModel};
use actpred::data::experiment::{evaluate_manifest, fit_hmm_set, force_targets, load_forces, EvalOptions};
use actpred::data::fseq::FrameReader;
use actpred::data::manifest::{load_manifest, load_record, DatasetManifest};
use actpred::data::synth::{synth_generate, write_dataset, SynthSpec};
use actpred::data::{FeatureSequence, ForceSequence};
use actpred::force::{normalize, Conditioning, ForceRecording};
use actpred::force::NormParams;
use actpred::model::Model;
use actpred::numerics::Vector;
use actpred::online::{record_header, Session};
use actpred::training::{train_classifier, train_regressor, TrainConfig};

use crate::{
    BaselineFlags, Command, EvalArgs, ForcesArgs, MethodArg, NotchFlags, PredictArgs, SynthArgs, TaskArg, TrainArgs,
    TrainFlags,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad flag values or combinations.
    Usage(String),
    Core(actpred::Error),
    Io(PathBuf, io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(actpred::Error::Diverged { .. }) => 3,
            CliError::Core(_) | CliError::Io(..) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl From<actpred::Error> for CliError {
    fn from(e: actpred::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Forces(a) => forces(a),
        Command::Synth(a) => synth(a),
    }
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?;
            toml::from_str::<TrainConfig>(&text)
                .map_err(|e| CliError::Core(actpred::Error::Format {
                    path: p.display().to_string(),
                    field: "config".into(),
                    msg: e.to_string(),
                }))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.hidden {
        cfg.hidden = Some(v);
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.rate {
        cfg.base_rate = v;
    }
    cfg.validate().map_err(|e| usage(format!("training settings: {e}")))?;
    Ok(cfg)
}

fn conditioning(n: &NotchFlags) -> Result<Conditioning> {
    if n.no_notch {
        return Ok(Conditioning { notch: None });
    }
    if !(n.notch_freq > 0.0) || !(n.notch_q > 0.0) {
        return Err(usage("--notch-freq and --notch-q must be positive"));
    }
    Ok(Conditioning {
        notch: Some((n.notch_freq, n.notch_q)),
    })
}

fn check_baseline(b: &BaselineFlags) -> Result<()> {
    if b.window == 0 || b.pca_dim == 0 {
        return Err(usage("--window and --pca-dim must be at least 1"));
    }
    Ok(())
}

fn pick_object(m: &DatasetManifest, requested: Option<&str>, path: &Path) -> Result<String> {
    match requested {
        Some(o) => m
            .object(o)
            .map(|s| s.name.clone())
            .ok_or_else(|| usage(format!("--object {o:?} is not declared in {}", path.display()))),
        None => {
            let used: Vec<&str> = m
                .objects
                .iter()
                .filter(|o| !m.records_for(&o.name).is_empty())
                .map(|o| o.name.as_str())
                .collect();
            match used.as_slice() {
                [one] => Ok(one.to_string()),
                [] => Err(CliError::Core(actpred::Error::Format {
                    path: path.display().to_string(),
                    field: "records".into(),
                    msg: "manifest has no records".into(),
                })),
                many => Err(usage(format!("--object is required; {} has objects {}", path.display(), many.join(", ")))),
            }
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = train_config(&a.train)?;
    check_baseline(&a.baseline)?;
    if a.task == TaskArg::Force && a.method != MethodArg::Lstm {
        return Err(usage("--task force is only available with --method lstm"));
    }
    let cond = conditioning(&a.notch)?;
    let manifest = load_manifest(&a.manifest)?;
    let object = pick_object(&manifest, a.object.as_deref(), &a.manifest)?;
    let spec = manifest.object(&object).expect("picked from manifest").clone();
    let idx = manifest.records_for(&object);
    let seqs: Vec<FeatureSequence<f64>> =
        idx.iter().map(|&i| load_record(&manifest.records[i])).collect::<actpred::Result<_>>()?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.model.clone().into_os_string();
        s.push(".log.csv");
        PathBuf::from(s)
    });
    if cfg.log_path.is_none() {
        cfg.log_path = Some(log_path);
    }
    let labels = spec.labels.len();

    let saved = match (a.task, a.method) {
        (TaskArg::Action, MethodArg::Lstm) => {
            let (mut model, log) = train_classifier(&seqs, &[], labels, &cfg)?;
            model.labels = spec.labels.clone();
            println!("trained {object}: {} sequences, final loss {:.6}", seqs.len(), log.final_loss().unwrap_or(log.initial_loss));
            SavedModel::Recurrent(model)
        }
        (TaskArg::Force, _) => {
            let mut notes = Vec::new();
            let raw = idx
                .iter()
                .map(|&i| {
                    let r = &manifest.records[i];
                    if r.forces.is_none() {
                        return Err(actpred::Error::Format {
                            path: a.manifest.display().to_string(),
                            field: "forces".into(),
                            msg: format!("record {} has no force file", r.features.display()),
                        });
                    }
                    load_forces(r, &cond, &mut notes)
                })
                .collect::<actpred::Result<Vec<_>>>()?;
            for n in &notes {
                eprintln!("note: {n}");
            }
            let channels = raw[0].0.clone();
            let norm = NormParams::fit_frames(raw.iter().flat_map(|r| r.1.iter().map(|v| v.as_slice())), channels.len());
            let data = seqs
                .iter()
                .zip(&raw)
                .map(|(s, r)| {
                    Ok(ForceSequence {
                        features: s.clone(),
                        forces: force_targets(&r.1, &norm, s.len())?,
                    })
                })
                .collect::<actpred::Result<Vec<_>>>()?;
            let (mut model, log) = train_regressor(&data, &[], &cfg)?;
            model.channels = channels;
            model.norm = Some(norm);
            println!("trained {object} forces: {} sequences, final loss {:.6}", data.len(), log.final_loss().unwrap_or(log.initial_loss));
            SavedModel::Recurrent(model)
        }
        (TaskArg::Action, MethodArg::Hmm) => {
            let refs: Vec<&FeatureSequence<f64>> = seqs.iter().collect();
            let hcfg = HmmConfig {
                seed: cfg.seed,
                ..Default::default()
            };
            let mut set = fit_hmm_set(&refs, labels, &hcfg, a.baseline.pca_dim)?;
            set.labels = spec.labels.clone();
            SavedModel::Hmm(set)
        }
        (TaskArg::Action, MethodArg::Svm) => {
            let wcfg = WindowConfig {
                window: a.baseline.window,
                pca_dim: a.baseline.pca_dim,
                seed: cfg.seed,
                ..Default::default()
            };
            SavedModel::Window(WindowModel {
                classifier: window_fit(&seqs, labels, &wcfg)?,
                labels: spec.labels.clone(),
            })
        }
    };
    save_model(&a.model, &saved)?;
    Ok(())
}

fn open_input(input: Option<&PathBuf>) -> Result<(Box<dyn Read>, String)> {
    match input {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::open(p).map_err(|e| CliError::Io(p.clone(), e))?;
            Ok((Box::new(BufReader::new(f)), p.display().to_string()))
        }
        _ => Ok((Box::new(io::stdin().lock()), "<stdin>".to_string())),
    }
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (reader, name) = open_input(a.input.as_ref())?;
    let mut frames = FrameReader::new(reader, &name)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let io_err = |e: io::Error| CliError::Io(PathBuf::from("<stdout>"), e);
    match &model {
        SavedModel::Recurrent(m) => predict_recurrent(m, &mut frames, &mut out).or_else(|e| match e {
            // the reader went away; nothing left to report to
            PredictError::Io(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            PredictError::Io(e) => Err(io_err(e)),
            PredictError::Core(e) => Err(CliError::Core(e)),
        }),
        SavedModel::Hmm(_) | SavedModel::Window(_) => {
            let mut xs: Vec<Vector<f64>> = Vec::new();
            while let Some(x) = frames.next_frame::<f64>()? {
                xs.push(x);
            }
            if xs.is_empty() {
                return Err(CliError::Core(actpred::Error::Format {
                    path: name,
                    field: "frames".into(),
                    msg: "no frames to classify".into(),
                }));
            }
            let label = match &model {
                SavedModel::Hmm(h) => h.classify(&xs)?,
                SavedModel::Window(w) => w.classifier.classify(&xs)?,
                SavedModel::Recurrent(_) => unreachable!(),
            };
            writeln!(out, "frames,label,name").map_err(io_err)?;
            writeln!(out, "{},{label},{}", xs.len(), model.labels()[label]).map_err(io_err)?;
            Ok(())
        }
    }
}

enum PredictError {
    Io(io::Error),
    Core(actpred::Error),
}

impl From<io::Error> for PredictError {
    fn from(e: io::Error) -> Self {
        PredictError::Io(e)
    }
}

impl From<actpred::Error> for PredictError {
    fn from(e: actpred::Error) -> Self {
        PredictError::Core(e)
    }
}

/// Emits and flushes one record per frame before reading the next.
fn predict_recurrent<R: Read, W: Write>(
    m: &Model<f64>,
    frames: &mut FrameReader<R>,
    out: &mut W,
) -> std::result::Result<(), PredictError> {
    let mut session = Session::new(&m.params);
    if let Some(n) = m.label_count() {
        writeln!(out, "{}", record_header(n))?;
        out.flush()?;
        let mut t = 0;
        while let Some(x) = frames.next_frame::<f64>()? {
            let b = session.feed_frame(&x)?;
            writeln!(out, "{}", b.record(t))?;
            out.flush()?;
            t += 1;
        }
        if let Some(k) = session.converged(actpred::online::DEFAULT_CONVERGENCE_WINDOW) {
            eprintln!("converged at frame {k}");
        }
    } else {
        let mut header = String::from("frame");
        for c in &m.channels {
            header.push(',');
            header.push_str(c);
        }
        if m.norm.is_some() {
            for c in &m.channels {
                header.push_str(&format!(",{c}_N"));
            }
        }
        writeln!(out, "{header}")?;
        out.flush()?;
        let mut t = 0;
        while let Some(x) = frames.next_frame::<f64>()? {
            let v = session.feed_force_frame(&x)?;
            let mut line = t.to_string();
            for p in v.iter() {
                line.push_str(&format!(",{p}"));
            }
            if let Some(norm) = &m.norm {
                for (c, &p) in v.iter().enumerate() {
                    line.push_str(&format!(",{}", norm.invert(c, p)));
                }
            }
            writeln!(out, "{line}")?;
            out.flush()?;
            t += 1;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let train = train_config(&a.train)?;
    check_baseline(&a.baseline)?;
    if a.lpre == 0 || a.lpost < 2 {
        return Err(usage("--lpre must be at least 1 and --lpost at least 2"));
    }
    if a.offsets.is_empty() {
        return Err(usage("--offsets needs at least one value"));
    }
    let mut force_train = train.clone();
    // the force regressor keeps its own default width unless --hidden is given
    force_train.hidden = a.train.hidden;
    force_train.log_path = None;
    let mut action_train = train;
    action_train.log_path = None;
    let seed = action_train.seed;
    let opts = EvalOptions {
        train: action_train,
        force_train,
        hmm: HmmConfig {
            seed,
            ..Default::default()
        },
        hmm_pca_dim: a.baseline.pca_dim,
        window: WindowConfig {
            window: a.baseline.window,
            pca_dim: a.baseline.pca_dim,
            seed,
            ..Default::default()
        },
        offsets: a.offsets.clone(),
        l_pre: a.lpre,
        l_post: a.lpost,
        conditioning: conditioning(&a.notch)?,
        baselines: !a.no_baselines,
        forces: !a.no_forces,
    };
    let manifest = load_manifest(&a.manifest)?;
    let report = evaluate_manifest(&manifest, &opts)?;
    let files = report.write(&a.out)?;
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    println!("LSTM sequence accuracy {:.4}", report.accuracy());
    println!("wrote {} files to {}", files.len(), a.out.display());
    Ok(())
}

fn forces(a: ForcesArgs) -> Result<()> {
    let cond = conditioning(&a.notch)?;
    let rec = ForceRecording::read(&a.input)?;
    let mut cond = cond;
    if let Some((f0, _)) = cond.notch {
        if f0 >= rec.sample_rate / 2.0 {
            eprintln!(
                "note: notch at {f0} Hz skipped: at or above the Nyquist frequency of {} Hz recordings",
                rec.sample_rate
            );
            cond.notch = None;
        }
    }
    let trace = cond.newtons(&rec)?;
    let (trace, norm) = if a.raw {
        (trace, None)
    } else {
        let (t, n) = normalize(&trace, None)?;
        (t, Some(n))
    };
    let mut buf = BufWriter::new(Vec::new());
    let io_err = |e: io::Error| CliError::Io(a.out.clone(), e);
    write!(buf, "frame").map_err(io_err)?;
    for c in &trace.channels {
        write!(buf, ",{c}").map_err(io_err)?;
    }
    writeln!(buf).map_err(io_err)?;
    for (t, row) in trace.values.iter().enumerate() {
        write!(buf, "{t}").map_err(io_err)?;
        for v in row {
            write!(buf, ",{v}").map_err(io_err)?;
        }
        writeln!(buf).map_err(io_err)?;
    }
    let bytes = buf.into_inner().map_err(|e| io_err(e.into_error()))?;
    write_atomic(&a.out, &bytes)?;
    if let Some(n) = norm {
        for (c, name) in trace.channels.iter().enumerate() {
            println!("{name}: min {} N, max {} N", n.min[c], n.max[c]);
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        subjects: a.subjects,
        t_min: a.t_min,
        t_max: a.t_max,
        noise: a.noise.unwrap_or(defaults.noise),
        separation: a.separation.unwrap_or(defaults.separation),
        force_channels: (a.forces > 0).then_some(a.forces),
        seed: a.seed,
        ..defaults
    };
    spec.validate().map_err(|e| usage(format!("synthetic dataset settings: {e}")))?;
    let samples = synth_generate(&spec)?;
    let (path, manifest) = write_dataset(&a.out, &samples, spec.classes)?;
    println!("wrote {} sequences and {}", manifest.records.len(), path.display());
    Ok(())
}
