use std::path::Path;
use std::process::{Command, Output};

use mtd_core::data::format_corpus;
use mtd_core::numerics::seeded_rng;
use mtd_core::synth::cycle_sessions;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtd")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Cycle walks over `n` items written as a raw corpus.
fn cycle_corpus(dir: &Path, n: usize, count: usize) {
    let mut rng = seeded_rng(11);
    let s = cycle_sessions(n, 5, count, &mut rng);
    std::fs::write(dir.join("raw.txt"), format_corpus(&s)).unwrap();
}

fn prepared(n: usize, count: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    cycle_corpus(dir.path(), n, count);
    ok(
        dir.path(),
        &["prepare", "--input", "raw.txt", "--train-out", "train.txt", "--test-out", "test.txt", "--min-freq", "1"],
    );
    dir
}

fn trained(n: usize, extra: &[&str]) -> tempfile::TempDir {
    let dir = prepared(n, 120);
    let mut args = vec!["train", "--train", "train.txt", "--ckpt-out", "m.ckpt", "--dim", "8", "--epochs", "2", "--seed", "3"];
    args.extend_from_slice(extra);
    ok(dir.path(), &args);
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
    assert_eq!(code(&run(dir.path(), &["train", "--help"])), 0);
    assert_eq!(code(&run(dir.path(), &[])), 1);
    assert_eq!(code(&run(dir.path(), &["bogus"])), 1);
}

#[test]
fn prepare_splits_by_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let lines: String = (0..100).map(|i| format!("{} {}\n", i % 3, (i + 1) % 3)).collect();
    std::fs::write(dir.path().join("raw.txt"), lines).unwrap();
    ok(
        dir.path(),
        &["prepare", "--input", "raw.txt", "--train-out", "tr.txt", "--test-out", "te.txt", "--split-frac", "0.9"],
    );
    assert_eq!(read(dir.path(), "tr.txt").lines().count(), 90);
    assert_eq!(read(dir.path(), "te.txt").lines().count(), 10);
    assert_eq!(read(dir.path(), "tr.txt.vocab").lines().count(), 3);
}

#[test]
fn prepare_drops_rare_items_before_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = "1 2\n".repeat(6);
    text.push_str("1 2 99\n");
    text.push_str("7 99\n");
    std::fs::write(dir.path().join("raw.txt"), text).unwrap();
    ok(
        dir.path(),
        &["prepare", "--input", "raw.txt", "--train-out", "tr.txt", "--test-out", "te.txt", "--split-frac", "1.0"],
    );
    let vocab = read(dir.path(), "tr.txt.vocab");
    assert!(!vocab.contains("99\t"));
    assert!(!vocab.contains("7\t"));
    assert_eq!(read(dir.path(), "tr.txt").lines().count(), 7);
}

#[test]
fn prepare_is_idempotent_on_its_output() {
    let dir = prepared(15, 80);
    let d = dir.path();
    ok(d, &["prepare", "--input", "raw.txt", "--train-out", "a.txt", "--test-out", "a_te.txt", "--min-freq", "1", "--split-frac", "1.0"]);
    ok(d, &["prepare", "--input", "a.txt", "--train-out", "b.txt", "--test-out", "b_te.txt", "--min-freq", "1", "--split-frac", "1.0"]);
    assert_eq!(read(d, "a.txt"), read(d, "b.txt"));
}

#[test]
fn prepare_reports_parse_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("raw.txt"), "1 2\n3 x 4\n").unwrap();
    let out = run(dir.path(), &["prepare", "--input", "raw.txt", "--train-out", "t", "--test-out", "u"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!dir.path().join("t").exists());
    let missing = run(dir.path(), &["prepare", "--input", "nope.txt", "--train-out", "t", "--test-out", "u"]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn train_writes_checkpoint_and_sidecars() {
    let dir = trained(12, &[]);
    let d = dir.path();
    let ckpt = std::fs::read(d.join("m.ckpt")).unwrap();
    assert_eq!(&ckpt[..4], b"MTDC");
    assert_eq!(read(d, "m.ckpt.vocab"), read(d, "train.txt.vocab"));
    let manifest = read(d, "m.ckpt.manifest");
    for key in ["dim=8", "epochs=2", "seed=3", "positional=decay", "no_graph=false", "run_id="] {
        assert!(manifest.contains(key), "{key} missing from {manifest}");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = trained(12, &[]);
    let d = dir.path();
    let out = ok(d, &["train", "--config", "m.ckpt.manifest", "--ckpt-out", "again.ckpt"]);
    assert!(out.contains("epoch   2"));
    assert_eq!(std::fs::read(d.join("m.ckpt")).unwrap(), std::fs::read(d.join("again.ckpt")).unwrap());
}

#[test]
fn flags_override_config_values() {
    let dir = prepared(12, 60);
    let d = dir.path();
    std::fs::write(d.join("cfg.txt"), "train=train.txt\nckpt_out=c.ckpt\ndim=6\nepochs=1\nseed=9\n").unwrap();
    ok(d, &["train", "--config", "cfg.txt", "--dim", "4"]);
    let manifest = read(d, "c.ckpt.manifest");
    assert!(manifest.contains("dim=4"));
    assert!(manifest.contains("seed=9"));
}

#[test]
fn invalid_training_flags_are_usage_errors() {
    let dir = prepared(12, 60);
    let d = dir.path();
    for bad in [["--freq", "0"], ["--dropout", "1.5"], ["--lr", "-1"], ["--dim", "0"]] {
        let mut args = vec!["train", "--train", "train.txt", "--ckpt-out", "x.ckpt"];
        args.extend_from_slice(&bad);
        assert_eq!(code(&run(d, &args)), 1, "{bad:?}");
    }
    assert!(!d.join("x.ckpt").exists());
    assert_eq!(code(&run(d, &["train", "--ckpt-out", "x.ckpt"])), 1);
    assert_eq!(code(&run(d, &["train", "--train", "train.txt", "--ckpt-out", "x.ckpt", "--positional", "sideways"])), 1);
}

#[test]
fn freq_sets_intra_passes_and_no_graph_skips_the_graph() {
    let dir = prepared(12, 60);
    let d = dir.path();
    let base = ["train", "--train", "train.txt", "--ckpt-out", "f.ckpt", "--dim", "4", "--epochs", "1", "--batch", "1000000"];
    let one = ok(d, &base);
    assert!(one.contains("intra_steps=1"), "{one}");
    let mut args = base.to_vec();
    args.extend_from_slice(&["--freq", "4", "--no-graph"]);
    let four = ok(d, &args);
    assert!(four.contains("intra_steps=4"), "{four}");
    assert!(four.contains("graph_loss=-"), "{four}");
    assert!(read(d, "f.ckpt.manifest").contains("no_graph=true"));
}

#[test]
fn eval_reports_every_cutoff() {
    let dir = trained(30, &[]);
    let d = dir.path();
    let out = ok(d, &["eval", "--ckpt", "m.ckpt", "--test", "test.txt", "--k", "5,10,20", "--report", "r.txt", "--ranks", "ranks.csv"]);
    assert!(out.contains("Pre@K"));
    let report = read(d, "r.txt");
    let values: Vec<f64> = report.lines().filter(|l| l.starts_with("pre@")).map(|l| l.split('=').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    let first = report.lines().next().unwrap();
    assert!(first.starts_with("pre@5=") && first.len() == "pre@5=0.0000".len(), "{first}");
    assert!(read(d, "ranks.csv").starts_with("instance_id,target,rank\n"));
}

#[test]
fn eval_with_k_equal_to_m_is_perfect() {
    let dir = trained(10, &[]);
    let out = ok(dir.path(), &["eval", "--ckpt", "m.ckpt", "--test", "train.txt", "--k", "10"]);
    assert!(out.contains("pre@10=1.0000"), "{out}");
    assert_eq!(code(&run(dir.path(), &["eval", "--ckpt", "m.ckpt", "--test", "train.txt", "--k", "11"])), 1);
    assert_eq!(code(&run(dir.path(), &["eval", "--ckpt", "m.ckpt", "--test", "train.txt", "--k", "0"])), 1);
}

#[test]
fn eval_names_both_sizes_on_vocabulary_mismatch() {
    let dir = trained(12, &[]);
    let d = dir.path();
    std::fs::write(d.join("small.vocab"), "1\t0\n2\t1\n").unwrap();
    let out = run(d, &["eval", "--ckpt", "m.ckpt", "--test", "test.txt", "--vocab", "small.vocab"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("M=2") && err.contains("M=12"), "{err}");
    std::fs::write(d.join("bad_test.txt"), "0 50\n").unwrap();
    let out = run(d, &["eval", "--ckpt", "m.ckpt", "--test", "bad_test.txt", "--k", "5"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("M=12"));
}

#[test]
fn eval_rejects_corrupt_checkpoints() {
    let dir = trained(12, &[]);
    let d = dir.path();
    let bytes = std::fs::read(d.join("m.ckpt")).unwrap();
    std::fs::write(d.join("cut.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&run(d, &["eval", "--ckpt", "cut.ckpt", "--test", "test.txt"])), 2);
}

#[test]
fn recommend_ranks_known_tokens() {
    let dir = trained(12, &[]);
    let d = dir.path();
    let tok = read(d, "m.ckpt.vocab").lines().next().unwrap().split('\t').next().unwrap().to_string();
    let out = ok(d, &["recommend", "--ckpt", "m.ckpt", "--session", &tok, "--topk", "3"]);
    assert_eq!(out.lines().count(), 3);
    let full = ok(d, &["recommend", "--ckpt", "m.ckpt", "--session", &tok, "--topk", "12"]);
    assert_eq!(full.lines().count(), 12);

    let out = run(d, &["recommend", "--ckpt", "m.ckpt", "--session", &format!("{tok} 123456"), "--topk", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("123456"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);

    let empty = run(d, &["recommend", "--ckpt", "m.ckpt", "--session", "123456"]);
    assert_eq!(code(&empty), 1);
}

#[test]
fn baselines_share_the_report_format() {
    let dir = prepared(30, 150);
    let d = dir.path();
    let mut shapes = Vec::new();
    for method in ["pop", "spop", "itemknn"] {
        let out = ok(d, &["baseline", "--method", method, "--train", "train.txt", "--test", "test.txt", "--k", "1,10"]);
        shapes.push(out.lines().map(|l| l.split('=').next().unwrap().to_string()).filter(|l| l.contains('@')).collect::<Vec<_>>());
    }
    assert!(shapes.windows(2).all(|w| w[0] == w[1]));
    let bad = run(d, &["baseline", "--method", "magic", "--train", "train.txt", "--test", "test.txt"]);
    assert_eq!(code(&bad), 1);
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("pop") && err.contains("spop") && err.contains("itemknn"));
}

fn pre_at(out: &str, k: usize) -> f64 {
    let key = format!("pre@{k}=");
    out.lines().find_map(|l| l.strip_prefix(&key)).unwrap().parse().unwrap()
}

#[test]
fn pop_is_near_chance_on_cycles_and_itemknn_is_not() {
    let dir = prepared(30, 300);
    let d = dir.path();
    let pop = ok(d, &["baseline", "--method", "pop", "--train", "train.txt", "--test", "test.txt", "--k", "1"]);
    let knn = ok(d, &["baseline", "--method", "itemknn", "--train", "train.txt", "--test", "test.txt", "--k", "1"]);
    assert!(pre_at(&pop, 1) <= 2.0 / 30.0 * 1.5, "{pop}");
    assert!(pre_at(&knn, 1) > 0.3, "{knn}");
}

#[test]
fn spop_beats_pop_on_repeat_heavy_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::new();
    for i in 0..200u64 {
        let a = 10 + i % 20;
        let b = 10 + (i * 7 + 3) % 20;
        text.push_str(&format!("{a} {b} {a} {b} {a}\n"));
    }
    std::fs::write(d.join("raw.txt"), text).unwrap();
    ok(d, &["prepare", "--input", "raw.txt", "--train-out", "train.txt", "--test-out", "test.txt", "--min-freq", "1"]);
    let pop = ok(d, &["baseline", "--method", "pop", "--train", "train.txt", "--test", "test.txt", "--k", "2"]);
    let spop = ok(d, &["baseline", "--method", "spop", "--train", "train.txt", "--test", "test.txt", "--k", "2"]);
    assert!(pre_at(&spop, 2) > pre_at(&pop, 2), "{spop} vs {pop}");
}
