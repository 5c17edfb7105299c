use std::path::Path;
use std::process::{Command, Output};

fn deepheart(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepheart"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
n_users = 12
weeks_per_user = 1
max_events = 64
split = 0.5,0.25,0.25
width = 8
conv_depth = 1
lstm_depth = 1
initial_filter = 5
max_epochs = 2
";

/// A tiny cache in `dir`, built through the binary.
fn tiny_cache(dir: &Path) {
    std::fs::write(dir.join("c.cfg"), TINY).unwrap();
    let gen = deepheart(dir, &["--config", "c.cfg", "generate", "--out", "r.jsonl", "--labels", "l.csv"]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    let enc = deepheart(
        dir,
        &["--config", "c.cfg", "encode", "--input", "r.jsonl", "--labels", "l.csv", "--out", "c.dhtc"],
    );
    assert!(enc.status.success(), "{}", stderr(&enc));
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"], &["train", "--help"]] {
        let o = deepheart(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = deepheart(dir.path(), &["train", "--out", "m.dhck"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--cache"));

    assert_eq!(deepheart(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(deepheart(dir.path(), &["--threads", "0", "grid", "--cache", "x", "--out", "y"]).status.code(), Some(1));

    std::fs::write(dir.path().join("bad.cfg"), "no_such_key = 3\n").unwrap();
    let o = deepheart(dir.path(), &["--config", "bad.cfg", "generate", "--out", "r", "--labels", "l"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = deepheart(dir.path(), &["features", "--cache", "missing.dhtc", "--out", "f.csv"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("junk.dhtc"), b"DHTC but not really").unwrap();
    let o = deepheart(dir.path(), &["features", "--cache", "junk.dhtc", "--out", "f.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("f.csv").exists());
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cache(dir.path());
    let p = dir.path();
    let o = deepheart(p, &["--config", "c.cfg", "train", "--cache", "c.dhtc", "--out", "m.dhck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut bytes = std::fs::read(p.join("m.dhck")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(p.join("m.dhck"), bytes).unwrap();
    let o = deepheart(p, &["evaluate", "--cache", "c.dhtc", "--model", "m.dhck", "--out", "r.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cache(dir.path());
    let p = dir.path();
    std::fs::write(p.join("hot.cfg"), format!("{TINY}lr = 1e300\n")).unwrap();
    let o = deepheart(p, &["--config", "hot.cfg", "train", "--cache", "c.dhtc", "--out", "m.dhck"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!p.join("m.dhck").exists());
}

#[test]
fn outputs_carry_the_manifest_hash() {
    let dir = tempfile::tempdir().unwrap();
    tiny_cache(dir.path());
    let p = dir.path();
    let o = deepheart(p, &["features", "--cache", "c.dhtc", "--out", "f.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("f.csv")).unwrap();
    let manifest = std::fs::read_to_string(p.join("f.csv.manifest")).unwrap();
    let hash = manifest.lines().next().unwrap().strip_prefix("manifest_hash = ").unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# manifest {hash}"));
    assert!(manifest.contains("input.cache.sha256"));
}
