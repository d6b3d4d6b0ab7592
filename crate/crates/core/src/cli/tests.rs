use super::*;

fn args(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn flags_override_file_and_sections_override_plain_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "lr = 0.1\nengine.lr = 0.2\nepochs = 4\n").unwrap();
    let inv = Invocation::parse(&args(&format!(
        "train-engine --config {} --epochs 7 --length-beam 2",
        cfg.display()
    )))
    .unwrap();
    let plain = inv.settings(None);
    assert_eq!(plain.raw("lr"), Some("0.1"));
    assert_eq!(plain.raw("engine.lr"), Some("0.2"));
    assert_eq!(plain.raw("epochs"), Some("7"));
    assert_eq!(plain.raw("length_beam"), Some("2"));
    let engine = inv.settings(Some("engine"));
    assert_eq!(engine.raw("lr"), Some("0.2"));
    assert_eq!(inv.settings(Some("teacher")).raw("lr"), Some("0.1"));
}

#[test]
fn plain_flag_beats_file_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "engine.o1 = gx\n").unwrap();
    let inv = Invocation::parse(&args(&format!("grid --config {} --o1 stl", cfg.display()))).unwrap();
    assert_eq!(inv.settings(Some("engine")).raw("o1"), Some("stl"));
}

#[test]
fn malformed_command_lines_are_rejected() {
    assert!(Invocation::parse(&[]).is_err());
    assert!(Invocation::parse(&args("fly")).is_err());
    assert!(Invocation::parse(&args("grid --jobs")).is_err());
    assert!(Invocation::parse(&args("grid jobs 2")).is_err());
    let missing = Invocation::parse(&args("grid --config /nonexistent/run.cfg"));
    assert!(missing.is_err());
}

#[test]
fn bad_values_name_their_key() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().display();
    let err = run_args(&format!("gen-data --run-dir {run} --data-dir {run}/d --vocab-size lots")).unwrap_err();
    assert!(err.to_string().contains("vocab_size"), "{err}");
    let err = run_args(&format!("train-teacher --run-dir {run} --data-dir {run}/d --lr -1")).unwrap_err();
    assert!(err.to_string().contains("\"lr\""), "{err}");
}

fn run_args(s: &str) -> Result<RunManifest> {
    run(&args(s))
}

#[test]
fn gen_data_writes_splits_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().display();
    let m = run_args(&format!(
        "gen-data --run-dir {run} --data-dir {run}/data --n-train 30 --n-dev 5 --n-test 5 --seed 4"
    ))
    .unwrap();
    assert_eq!(m.seed, 4);
    assert_eq!(m.outputs.len(), 8);
    for o in &m.outputs {
        assert!(std::path::Path::new(o).exists(), "{o}");
    }
    let saved: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gen-data.manifest.json")).unwrap()).unwrap();
    assert_eq!(saved, m);
    let lines = std::fs::read_to_string(dir.path().join("data/train.src")).unwrap();
    assert_eq!(lines.lines().count(), 30);
}

#[test]
fn missing_checkpoint_fails_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().display();
    run_args(&format!("gen-data --run-dir {run} --data-dir {run}/data --n-train 10 --n-dev 3 --n-test 3")).unwrap();
    assert!(run_args(&format!("distill --run-dir {run} --data-dir {run}/data")).is_err());
    assert!(!dir.path().join("distill.manifest.json").exists());
}
