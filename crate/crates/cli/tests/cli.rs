use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SIX: &str = "Biden\tIsPresidentOf\tAmerica\nPutin\tIsPresidentOf\tRussia\nBiden\tIsA\tPerson\n\
Putin\tIsA\tPerson\nAmerica\tIsA\tCountry\nRussia\tIsA\tCountry\n";

fn gsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsnn")).args(args).env_remove("GSNN_CONFIG").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn encode_six(dir: &Path, name: &str) -> std::path::PathBuf {
    let triples = dir.join("six.tsv");
    fs::write(&triples, SIX).unwrap();
    let out = dir.join(name);
    let o = gsnn(&["encode", triples.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("engrams\t8"));
    out.join("snapshot.gsnn")
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsnn(&["encode", "/nonexistent/triples.tsv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gsnn(&["--set", "neurons=5", "induce", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn encoding_is_deterministic_and_described() {
    let dir = tempfile::tempdir().unwrap();
    let a = encode_six(dir.path(), "a");
    let b = encode_six(dir.path(), "b");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("a/config.echo").exists());

    let info = gsnn(&["snapshot-info", a.to_str().unwrap()]);
    assert!(info.status.success());
    let text = stdout(&info);
    assert!(text.contains("engrams\t8") && text.contains("neurons\t1000"));
}

#[test]
fn query_ranks_and_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let snap = encode_six(dir.path(), "enc");
    let trace = dir.path().join("q.csv");
    let o = gsnn(&["query", snap.to_str().unwrap(), "Biden", "IsPresidentOf", "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("rank\tlabel\tpeak"));
    assert!(text.lines().any(|l| l.starts_with("answers:") && l.contains("America")));
    assert!(fs::read_to_string(&trace).unwrap().starts_with("time_ms,label,sim\n"));
    assert!(trace.with_extension("json").exists());
}

#[test]
fn verify_expectation_sets_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let snap = encode_six(dir.path(), "enc");
    let s = snap.to_str().unwrap();
    assert!(gsnn(&["verify", s, "Putin", "IsA", "Person", "--expect", "true"]).status.success());
    assert_eq!(gsnn(&["verify", s, "Putin", "IsA", "Person", "--expect", "false"]).status.code(), Some(1));
}

#[test]
fn snapshot_layout_cannot_be_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let snap = encode_six(dir.path(), "enc");
    let o = gsnn(&["--set", "engram.neurons=2000", "query", snap.to_str().unwrap(), "Biden", "IsA"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_give_empty_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = gsnn(&["train-transitivity", "--out", out.to_str().unwrap(), "--epochs", "0"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap(), "epoch,accuracy,mean_reward\n");
    let o = gsnn(&["train-transitivity", "--out", out.to_str().unwrap(), "--epochs", "0", "--min-accuracy", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = gsnn(&[
        "sweep-inhibition",
        "--out",
        out.to_str().unwrap(),
        "--ratios",
        "0.1,0.3",
        "--seeds",
        "1",
        "--epochs",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("0.1,0,") && rows[1].starts_with("0.3,0,"));
}

#[test]
fn induction_reports_the_generalisation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("i");
    let o = gsnn(&["--set", "engram.neurons=1500", "induce", "--out", out.to_str().unwrap(), "--verify"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.tsv")).unwrap();
    assert!(report.lines().any(|l| l == "Person\tIsPresidentOf\tCountry"));
    assert!(out.join("traces/groups.csv").exists());
}
