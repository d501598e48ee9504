use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn irispad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irispad"))
        .args(args)
        .env_remove("IRISPAD_CONFIG_DIR")
        .output()
        .expect("failed to spawn irispad")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    let o = irispad(&[
        "synth",
        "--out",
        p(dir),
        "--flat",
        "8",
        "--bumpy",
        "4",
        "--opaque",
        "4",
        "--size",
        "40",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(irispad(&["--help"]).status.code(), Some(0));
    assert_eq!(irispad(&["eval", "--help"]).status.code(), Some(0));
    assert_eq!(irispad(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let o = irispad(&["train", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest"), "{}", stderr(&o));
    assert_eq!(irispad(&[]).status.code(), Some(1));
    assert_eq!(irispad(&["frobnicate"]).status.code(), Some(1));
    let o = irispad(&["synth", "--out", "/tmp/x", "--light-angle", "95"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--light-angle"));
    let o = irispad(&["eval", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest"));
}

#[test]
fn missing_manifest_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = irispad(&[
        "train",
        "--manifest",
        "/nonexistent/m.csv",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/m.csv"));
}

#[test]
fn full_workflow_and_overlap_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth(&corpus);
    let manifest = corpus.join("manifest.csv");

    let models = tmp.path().join("models");
    let o = irispad(&["train", "--manifest", p(&manifest), "--out", p(&models)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(models.join("model3d.txt").is_file());
    assert!(models.join("model2d/ensemble.txt").is_file());
    assert!(models.join("train_scores.csv").is_file());

    let scored = tmp.path().join("scored");
    let o = irispad(&[
        "score",
        "--manifest",
        p(&manifest),
        "--models",
        p(&models),
        "--out",
        p(&scored),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let audit = fs::read_to_string(scored.join("audit.csv")).unwrap();
    assert!(audit.starts_with("sample_id,q,s2,d3,d2,fused,label,flags\n"));
    assert_eq!(audit.lines().count(), 17);

    let eval = tmp.path().join("eval");
    let o = irispad(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--out",
        p(&eval),
        "--plot",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "report_2d.json",
        "report_3d.json",
        "report_fusion.json",
        "summary.json",
        "scatter.csv",
        "scatter.svg",
        "audit.csv",
        "brand_table.csv",
    ] {
        assert!(eval.join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(eval.join("report_fusion.json")).unwrap();
    assert!(report.trim_start().starts_with("{\n  \"accuracy\""));

    // explicit manifests that share subjects
    let o = irispad(&[
        "eval",
        "--train",
        p(&manifest),
        "--test",
        p(&manifest),
        "--out",
        p(&eval),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("subj000"), "{}", stderr(&o));

    let o = irispad(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--split",
        "pattern",
        "--out",
        p(&tmp.path().join("pat")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let folds = tmp.path().join("folds");
    let o = irispad(&[
        "eval",
        "--manifest",
        p(&manifest),
        "--folds",
        "3",
        "--out",
        p(&folds),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(folds.join("folds.json")).unwrap();
    assert!(summary.contains("\"std\""));
    assert!(folds.join("fold2/report_fusion.json").is_file());
}

#[test]
fn custom_banks_and_hinge_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth(&corpus);
    let bank = tmp.path().join("tiny_3x3.txt");
    irispad::bsif::FilterBank::random_zero_mean("tiny", 3, 4, 1)
        .unwrap()
        .save(&bank)
        .unwrap();
    let out = tmp.path().join("models");
    let o = irispad(&[
        "train",
        "--manifest",
        p(&corpus.join("manifest.csv")),
        "--out",
        p(&out),
        "--banks",
        p(&bank),
        "--loss",
        "hinge",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = fs::read_to_string(out.join("model2d/ensemble.txt")).unwrap();
    assert!(index.contains("member tiny_3x3 "), "{index}");
}

#[test]
fn diverging_training_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth(&corpus);
    let o = irispad(&[
        "train",
        "--manifest",
        p(&corpus.join("manifest.csv")),
        "--out",
        p(&tmp.path().join("m")),
        "--loss",
        "hinge",
        "--lr",
        "1e308",
        "--l2",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
