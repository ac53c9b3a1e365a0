//! End-to-end runs of the `fairface` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PROFILE: &str = "\
dim = 8
images_per_identity = 4
groups = 2
group.0.identities = 6
group.0.concentration = 0.5
group.0.intra_scale = 0.5
group.1.name = dense
group.1.identities = 6
group.1.concentration = 1.0
group.1.intra_scale = 0.5
";

fn fairface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairface"))
        .args(args)
        .env_remove("FAIRFACE_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let profile = write(dir, "p.cfg", PROFILE);
    let out = dir.join(name);
    let run = fairface(&[
        "synth",
        "--profile",
        s(&profile),
        "--seed",
        seed,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    out
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("valid json")
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.ffeb", "7");
    let b = synth(dir.path(), "b.ffeb", "7");
    let c = synth(dir.path(), "c.ffeb", "8");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn synth_rejects_bad_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = dir.path().join("x.ffeb");
    let run = fairface(&["synth", "--profile", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("nope.cfg"), "{}", stderr(&run));

    let empty = write(
        dir.path(),
        "empty.cfg",
        &PROFILE.replace("identities = 6", "identities = 0"),
    );
    let run = fairface(&["synth", "--profile", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&run), 2, "{}", stderr(&run));
    assert!(!out.exists());
}

#[test]
fn eval_writes_report_files_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "a.ffeb", "3");
    let out1 = dir.path().join("r1");
    let run = fairface(&[
        "eval",
        "--input",
        s(&data),
        "--target-fpr",
        "1e-2",
        "--k",
        "5",
        "--workers",
        "1",
        "--out-dir",
        s(&out1),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    for f in [
        "report.json",
        "identities.csv",
        "hist_intra.csv",
        "hist_inter.csv",
    ] {
        assert!(out1.join(f).exists(), "{f}");
    }
    let hist = std::fs::read_to_string(out1.join("hist_inter.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("group,bin_lo,bin_hi,density"));
    let report = json(&std::fs::read(out1.join("report.json")).unwrap());
    assert_eq!(report["identities"].as_array().unwrap().len(), 12);
    assert_eq!(report["config"]["k"], 5);

    let out3 = dir.path().join("r3");
    let run = Command::new(env!("CARGO_BIN_EXE_fairface"))
        .args([
            "eval",
            "--input",
            s(&data),
            "--target-fpr",
            "1e-2",
            "--k",
            "5",
            "--out-dir",
            s(&out3),
        ])
        .env("FAIRFACE_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&run), 0);
    assert_eq!(
        std::fs::read(out1.join("report.json")).unwrap(),
        std::fs::read(out3.join("report.json")).unwrap()
    );
}

#[test]
fn eval_prints_json_and_surfaces_degenerate_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "a.ffeb", "1");
    let run = fairface(&["eval", "--input", s(&data), "--target-fpr", "1", "--k", "3"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let report = json(&run.stdout);
    assert_eq!(report["threshold"]["degenerate"], true);
    assert!(report["threshold"]["value"].is_null());
    assert!(stderr(&run).contains("every pair is accepted"));
}

#[test]
fn eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = fairface(&["eval", "--input", s(&dir.path().join("missing.ffeb"))]);
    assert_eq!(code(&run), 3);
    let junk = write(dir.path(), "junk.ffeb", "not an embedding file");
    assert_eq!(code(&fairface(&["eval", "--input", s(&junk)])), 3);

    // one identity has no negative pairs
    let csv = write(dir.path(), "one.csv", "0,alice,a,1,0\n1,alice,a,0,1\n");
    let ffeb = dir.path().join("one.ffeb");
    assert_eq!(
        code(&fairface(&[
            "convert",
            "--input",
            s(&csv),
            "--output",
            s(&ffeb)
        ])),
        0
    );
    let run = fairface(&["eval", "--input", s(&ffeb)]);
    assert_eq!(code(&run), 4, "{}", stderr(&run));

    let data = synth(dir.path(), "a.ffeb", "1");
    assert_eq!(
        code(&fairface(&[
            "eval",
            "--input",
            s(&data),
            "--target-fpr",
            "0"
        ])),
        2
    );
}

#[test]
fn analyze_prints_similarity_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "a.ffeb", "2");
    let run = fairface(&["analyze", "--input", s(&data), "--k", "4"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let text = String::from_utf8(run.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("identity,name,s_intra,s_inter"));
    assert_eq!(lines.count(), 12);
    assert_eq!(
        code(&fairface(&["analyze", "--input", s(&data), "--k", "12"])),
        2
    );
}

#[test]
fn convert_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "a.ffeb", "4");
    let csv = dir.path().join("a.csv");
    let back = dir.path().join("b.ffeb");
    assert_eq!(
        code(&fairface(&[
            "convert",
            "--input",
            s(&data),
            "--output",
            s(&csv)
        ])),
        0
    );
    assert_eq!(
        code(&fairface(&[
            "convert",
            "--input",
            s(&csv),
            "--output",
            s(&back)
        ])),
        0
    );
    let run =
        |p: &Path| fairface(&["eval", "--input", s(p), "--target-fpr", "1e-2", "--k", "3"]).stdout;
    let (a, b) = (json(&run(&data)), json(&run(&back)));
    assert_eq!(a["identities"], b["identities"]);
    assert_eq!(a["threshold"], b["threshold"]);
}

#[test]
fn grad_check_passes_and_detects_a_broken_gradient() {
    let run = fairface(&["grad-check", "--configs", "6"]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let fine = json(&run.stdout)["max_error"].as_f64().unwrap();
    assert!(fine < 1e-5);

    let coarse = fairface(&["grad-check", "--configs", "6", "--step", "1e-2"]);
    let coarse_err = json(&coarse.stdout)["max_error"].as_f64().unwrap();
    assert!(coarse_err > fine, "{coarse_err} vs {fine}");

    let broken = fairface(&["grad-check", "--configs", "6", "--inject-sign-flip"]);
    assert_eq!(code(&broken), 1);
    assert_eq!(json(&broken.stdout)["passed"], false);
}

#[test]
fn train_toy_modes_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "p.cfg", PROFILE);
    let train = |mode: &str, name: &str| {
        let out = dir.path().join(name);
        let run = fairface(&[
            "train-toy",
            "--profile",
            s(&profile),
            "--mode",
            mode,
            "--epochs",
            "3",
            "--batch-size",
            "8",
            "--seed",
            "5",
            "--k",
            "5",
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        assert!(out.join("params.ffmp").exists() && out.join("report.json").exists());
        std::fs::read_to_string(out.join("trace.csv")).unwrap()
    };
    let a = train("mixfair", "a");
    let b = train("mixfair", "b");
    let c = train("cosface", "c");
    assert_eq!(a, b);
    assert_eq!(a.lines().next(), Some("iteration,mean_abs_eps,loss"));
    assert_eq!(a.lines().count(), c.lines().count());
    assert_ne!(a, c);
}

#[test]
fn train_toy_divergence_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "p.cfg", PROFILE);
    let out = dir.path().join("d");
    let run = fairface(&[
        "train-toy",
        "--profile",
        s(&profile),
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--lr",
        "1e12",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&run), 5, "{}", stderr(&run));
    assert!(stderr(&run).contains("iteration"));
}
