use std::path::Path;
use std::process::{Command, Output};

fn valence(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_valence"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn valence")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(out: &Path) {
    let o = valence(&["synth", "--seed", "3", "--participants", "6", "--days", "14"], out);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for f in ["sensing.log", "ema.log", "diaries.tarc"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let again = valence(&["synth", "--seed", "3"], dir.path());
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
    let forced = valence(&["synth", "--seed", "3", "--participants", "6", "--days", "14", "--force"], dir.path());
    assert!(forced.status.success());
}

#[test]
fn featurize_without_weights_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = valence(&["featurize", "--mode", "audio-text"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--random-init"));
    let bad = valence(&["train", "--model", "nonsense"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn hybrid_without_parents_names_the_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = valence(&["train", "--model", "hybrid", "--question", "power"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("audio_text") && err.contains("valence train --model audio-text"), "{err}");
}

#[test]
fn staged_run_produces_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    let o = valence(&["featurize", "--seed", "3", "--mode", "audio-text", "--random-init", "--width-divisor", "16"], out);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = valence(&["featurize", "--seed", "3", "--mode", "sensing-vggish", "--random-init", "--width-divisor", "16"], out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("features/audio_text.tarc").exists());

    let o = valence(&["train", "--seed", "3", "--model", "all", "--question", "loudness", "--epochs", "3"], out);
    assert!(o.status.success(), "{}", stderr(&o));
    for kind in ["audio_text", "sensing_vggish", "hybrid_vggish", "overall_vggish"] {
        assert!(out.join("checkpoints").join(kind).join("loudness.tarc").exists(), "{kind}");
    }
    let o = valence(&["train", "--seed", "3", "--model", "audio-text", "--question", "loudness", "--epochs", "3"], out);
    assert_eq!(o.status.code(), Some(1), "retraining without --force must refuse");

    let o = valence(&["evaluate", "--model", "all", "--question", "loudness", "--split", "test"], out);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("chance") && table.contains("hybrid_vggish"), "{table}");

    let o = valence(&["report", "--seed", "3"], out);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let models = &report["questions"]["loudness"]["models"];
    assert_eq!(models.as_object().unwrap().len(), 4);
    let digest = &report["split_digest"];
    for m in models.as_object().unwrap().values() {
        assert_eq!(&m["split_digest"], digest);
        let f = m["top1"]["micro"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
}
