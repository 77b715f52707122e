use actpred::baselines::{HmmConfig, WindowConfig};
use actpred::data::experiment::{evaluate_manifest, EvalOptions};
use actpred::data::manifest::load_manifest;
use actpred::data::synth::{synth_generate, write_dataset, SynthSpec};
use actpred::training::TrainConfig;

fn tiny_spec() -> SynthSpec {
    SynthSpec {
        classes: 3,
        dim: 12,
        per_class: 6,
        subjects: 3,
        t_min: 12,
        t_max: 16,
        noise: 0.1,
        force_channels: Some(4),
        seed: 11,
        ..Default::default()
    }
}

fn quick_opts() -> EvalOptions {
    let train = TrainConfig {
        epochs: 4,
        hidden: Some(6),
        ..Default::default()
    };
    EvalOptions {
        train: train.clone(),
        force_train: train,
        hmm: HmmConfig {
            states: 2,
            ..Default::default()
        },
        window: WindowConfig {
            window: 5,
            ..Default::default()
        },
        offsets: vec![-10, 0, 10, 25],
        l_pre: 5,
        l_post: 10,
        ..Default::default()
    }
}

#[test]
fn end_to_end_outputs_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(&tiny_spec()).unwrap();
    let (path, _) = write_dataset(dir.path(), &samples, 3).unwrap();
    let manifest = load_manifest(&path).unwrap();

    let report = evaluate_manifest(&manifest, &quick_opts()).unwrap();
    let obj = &report.objects[0];
    assert_eq!(obj.sequences.len(), 18);
    assert_eq!(obj.folds.len(), 3);
    assert!(obj.sequences.iter().all(|s| s.svm.is_some() && s.hmm.is_some()));
    let curves = obj.accuracy_curves.as_ref().unwrap();
    assert_eq!(curves.len(), 15);
    // offsets of -10 and +25 fall outside 12..16-frame sequences and are reported
    assert!(obj.offsets.as_ref().unwrap().skipped.iter().any(|s| s.offset == 25));
    assert!(report.notes.iter().any(|n| n.contains("Nyquist")));
    let forces = obj.forces.as_ref().unwrap();
    assert_eq!(forces.channels, ["ring", "middle", "pointer", "thumb"]);
    assert!(forces.per_channel.iter().all(|e| (0.0..=1.0).contains(e)));

    let names: Vec<String> = report.files().unwrap().into_iter().map(|f| f.0).collect();
    for want in [
        "accuracy.csv",
        "confusion_synth.csv",
        "curves_synth.csv",
        "offsets_synth.csv",
        "folds.csv",
        "skipped.csv",
        "force_channels.csv",
        "force_actions.csv",
        "fusion.csv",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
    let acc = &report.files().unwrap()[0].1;
    assert!(acc.starts_with("object/action,SVM,HMM,LSTM\n"));
    assert!(acc.lines().last().unwrap().starts_with("Avg.,"));

    let again = evaluate_manifest(&manifest, &quick_opts()).unwrap();
    assert_eq!(again.files().unwrap(), report.files().unwrap());

    let out = dir.path().join("out");
    report.write(&out).unwrap();
    assert!(out.join("fusion.csv").exists());
}

#[test]
fn single_subject_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        subjects: 1,
        force_channels: None,
        ..tiny_spec()
    };
    let (path, _) = write_dataset(dir.path(), &synth_generate(&spec).unwrap(), 3).unwrap();
    let err = evaluate_manifest(&load_manifest(&path).unwrap(), &quick_opts()).unwrap_err();
    assert!(err.to_string().contains("at least 2 subjects"), "{err}");
}
