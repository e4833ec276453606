use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adsr")).args(args).env("RUST_LOG", "warn").output().expect("run adsr")
}

fn ok(args: &[&str]) -> String {
    let out = adsr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_prepare_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    ok(&["synth", "--users", "60", "--out", p(&data)]);
    assert!(data.join("ratings.dat").is_file() && data.join("movies.dat").is_file());

    let ds = ["--dataset", "ml1m", "--ml1m-dir", p(&data), "--out", p(&out)];
    let first = ok(&[&["prepare"][..], &ds].concat());
    assert!(first.contains("fresh"));
    assert!(ok(&[&["prepare"][..], &ds].concat()).contains("cache hit"));

    let train = ["train", "--profile", "desk", "--variants", "BSR,ADSR", "--epochs", "1", "--dim", "8"];
    ok(&[&train[..], &ds].concat());
    for v in ["bsr", "adsr"] {
        assert!(out.join(v).join("best.ckpt").is_file());
    }
    assert!(out.join("experiment.json").is_file());

    let ck = out.join("adsr/best.ckpt");
    let text = ok(&[&["eval", "--checkpoint", p(&ck), "--add-mode", "classic"][..], &ds].concat());
    assert!(text.contains("AP_Acc"));
    let csv = fs::read_to_string(out.join("eval_adsr_add.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    // BSR cannot use the attribute-aware decoder
    let bsr = out.join("bsr/best.ckpt");
    let failed = adsr(&[&["eval", "--checkpoint", p(&bsr), "--reranker", "add"][..], &ds].concat());
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("attribute predictor"));
}

#[test]
fn rerank_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scores.csv"), "window_id,item,relevance\n1,0,0.5\n1,1,0.3\n1,2,0.2\n").unwrap();
    fs::write(d.join("prefs.csv"), "window_id,attribute,score\n1,0,0.6\n1,1,0.4\n").unwrap();
    fs::write(d.join("attrs.csv"), "item,attribute\n0,0\n1,0\n2,1\n").unwrap();
    let (scores, attrs, prefs) = (d.join("scores.csv"), d.join("attrs.csv"), d.join("prefs.csv"));
    let base = [
        "rerank",
        "--scores",
        p(&scores),
        "--item-attrs",
        p(&attrs),
        "--length",
        "2",
        "--pool-size",
        "3",
        "--lambda-s",
        "0.5",
        "--out",
        p(d),
    ];
    ok(&[&base[..], &["--prefs", p(&prefs), "--add-mode", "classic"]].concat());
    let csv = fs::read_to_string(d.join("reranked.csv")).unwrap();
    let items: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(items, ["0", "2"]);

    let missing = adsr(&base);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("preference file"));
}

#[test]
fn bad_flags_are_rejected() {
    assert!(!adsr(&["train", "--variants", "XYZ"]).status.success());
    assert!(!adsr(&["prepare", "--dataset", "ml1m", "--ml1m-dir", "/nonexistent"]).status.success());
}
