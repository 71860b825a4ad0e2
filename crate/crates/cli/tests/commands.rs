use std::path::Path;
use std::process::{Command, Output};

use mhenet::data::{io, synth_generate, Split, GT_DIR};

fn mhenet(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mhenet"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn train_tiny(out: &Path) {
    let o = mhenet(
        &["train", "--synthetic", "4", "--size", "32", "--channels", "4", "--epochs", "1", "--batch", "2", "--out"],
        &[out],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn predict(ckpt: &Path, input: &Path, out: &Path, flags: &[&str]) -> Output {
    let mut args = vec!["predict"];
    args.extend_from_slice(flags);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mhenet"));
    cmd.args(args).arg("--checkpoint").arg(ckpt).arg("--input").arg(input).arg("--out").arg(out);
    cmd.output().unwrap()
}

#[test]
fn predict_writes_one_mask_per_input_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_tiny(&run);
    let data = dir.path().join("data");
    synth_generate(&data, 3, 32, 77, Split::Test).unwrap();

    let ckpt = run.join("last.mhen");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = predict(&ckpt, &data, out, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in &names {
        let m = io::read_gray(a.join(n)).unwrap();
        let gt = io::read_gray(data.join(GT_DIR).join(n)).unwrap();
        assert_eq!(m.shape(), gt.shape());
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap());
    }

    let all = dir.path().join("all");
    assert!(predict(&ckpt, &data, &all, &["--all-heads"]).status.success());
    for sub in ["M1", "M3"] {
        assert_eq!(std::fs::read_dir(all.join(sub)).unwrap().count(), 3);
    }
}

#[test]
fn predict_rejects_channel_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_tiny(&run);
    let data = dir.path().join("data");
    synth_generate(&data, 1, 32, 5, Split::Test).unwrap();
    let o = predict(&run.join("last.mhen"), &data, &dir.path().join("p"), &["--channels", "8"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains('4') && err.contains('8'), "{err}");
}

#[test]
fn eval_reports_and_fails_on_missing_counterpart() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_generate(&data, 3, 32, 1, Split::Test).unwrap();
    let gt = data.join(GT_DIR);

    let ok = mhenet(&["eval", "--pred"], &[&gt, Path::new("--gt"), &gt]);
    assert!(ok.status.success());
    let tsv = String::from_utf8(ok.stdout).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("filename\tmae\twfm\tem\tsm"));
    assert!(tsv.lines().last().unwrap().starts_with("MEAN\t0.000000\t1.000000\t1.000000\t1.000000"));

    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    let first = std::fs::read_dir(&gt).unwrap().next().unwrap().unwrap().path();
    std::fs::copy(&first, pred.join(first.file_name().unwrap())).unwrap();
    let o = mhenet(&["eval", "--pred"], &[&pred, Path::new("--gt"), &gt]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no prediction"));
}

#[test]
fn dry_run_echoes_defaults() {
    let o = mhenet(&["train", "--dry-run"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("lr=5e-5") && text.contains("batch=8") && text.contains("epochs=100"), "{text}");
}

#[test]
fn bad_flags_exit_one() {
    assert_eq!(mhenet(&["train", "--batch", "x"], &[]).status.code(), Some(1));
    assert_eq!(mhenet(&["nonsense"], &[]).status.code(), Some(1));
}
