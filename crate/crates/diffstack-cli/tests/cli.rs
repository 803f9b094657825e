//! End-to-end tests over the compiled `diffstack` binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffstack"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .env_remove("DIFFSTACK_OUT")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_writes_splits_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["gen", "--grammar", "d2", "--seed", "7", "--scale", "100", "--out", "a"];
    assert_ok(&run(&args, tmp.path()));
    let dir = tmp.path().join("a/data-d2-s7");
    for f in ["train.txt", "valid.txt", "test.txt", "long_test.txt", "train.meta", "manifest.json"]
    {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let mut args2 = args;
    args2[8] = "b";
    assert_ok(&run(&args2, tmp.path()));
    for f in ["train.txt", "valid.txt", "test.txt", "long_test.txt"] {
        let a = std::fs::read(dir.join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b/data-d2-s7").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical gen runs");
    }
}

#[test]
fn bad_grammar_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--grammar", "d9", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown grammar"));
    // unknown flag is also a usage error, not a crash
    let out = run(&["gen", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = [
        "train", "--family", "diffstk-rnn", "--grammar", "d2", "--scale", "100", "--trials",
        "1", "--seed", "5",
    ];
    let mut short = base.to_vec();
    short.extend(["--epochs", "2", "--out", "r"]);
    assert_ok(&run(&short, tmp.path()));
    let mut resumed = base.to_vec();
    resumed.extend(["--epochs", "4", "--out", "r", "--resume"]);
    assert_ok(&run(&resumed, tmp.path()));
    let mut full = base.to_vec();
    full.extend(["--epochs", "4", "--out", "f"]);
    assert_ok(&run(&full, tmp.path()));

    let trial = "train-diffstk-rnn-d2-s5/trial0";
    for f in ["epochs.csv", "last.ckpt", "best.ckpt", "trainer.state"] {
        let a = std::fs::read(tmp.path().join("r").join(trial).join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("f").join(trial).join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between resumed and uninterrupted runs");
    }
    let agg =
        std::fs::read_to_string(tmp.path().join("r/train-diffstk-rnn-d2-s5/aggregate.csv"))
            .unwrap();
    assert!(agg.starts_with("family,grammar,regime,split,mean,best,n_trials\n"));
    assert!(agg.contains("diffstk-rnn,d2,sequential,test,"));
}

#[test]
fn eval_round_trips_and_rejects_vocab_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let train = [
        "train", "--family", "rnn", "--grammar", "d2", "--scale", "100", "--trials", "1",
        "--seed", "5", "--epochs", "1", "--out", "t",
    ];
    assert_ok(&run(&train, tmp.path()));
    let ckpt = "t/train-rnn-d2-s5/trial0/best.ckpt";

    let eval = [
        "eval", "--checkpoint", ckpt, "--grammar", "d2", "--scale", "100", "--long", "--out",
        "e",
    ];
    let out = run(&eval, tmp.path());
    assert_ok(&out);
    let csv = std::fs::read_to_string(tmp.path().join("e/eval/eval.csv")).unwrap();
    // stdout and file agree; accuracy cell parses back to [0,1]
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
    let acc: f64 = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(tmp.path().join("e/eval/eval.md").exists());

    let bad = ["eval", "--checkpoint", ckpt, "--grammar", "d3", "--scale", "100", "--out", "x"];
    let out = run(&bad, tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn inspect_summarizes_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let train = [
        "train", "--family", "lstm", "--grammar", "d2", "--scale", "200", "--trials", "1",
        "--seed", "9", "--epochs", "1", "--out", "t",
    ];
    assert_ok(&run(&train, tmp.path()));
    let out = run(&["inspect", "t/train-lstm-d2-s9/trial0/best.ckpt"], tmp.path());
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("family lstm"), "got: {text}");
    assert!(text.contains("hidden 8"));
}

#[test]
fn repro_rejects_unknown_table_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["repro", "table99", "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(1));

    let args = [
        "repro", "table3", "--scale", "400", "--trials", "1", "--epochs", "1", "--out", "a",
    ];
    assert_ok(&run(&args, tmp.path()));
    let mut args2 = args;
    args2[9] = "b";
    assert_ok(&run(&args2, tmp.path()));
    let a = std::fs::read(tmp.path().join("a/repro-table3-s7/table3.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/repro-table3-s7/table3.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("family,incremental_mean,incremental_best,sequential_mean,sequential_best\n"));
}

#[test]
fn lm_mode_trains_and_reports_perplexity() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("toy.txt"),
        "the cat sat on the mat\nthe dog sat on the log\na cat and a dog\n",
    )
    .unwrap();
    let train = [
        "train", "--family", "diffstk-rnn", "--corpus", "toy.txt", "--trials", "1", "--epochs",
        "2", "--hidden", "6", "--seed", "3", "--out", "lm",
    ];
    assert_ok(&run(&train, tmp.path()));
    let eval = [
        "eval", "--checkpoint", "lm/train-lm-diffstk-rnn-s3/trial0/best.ckpt", "--grammar",
        "d2", "--corpus", "toy.txt", "--out", "lm",
    ];
    let out = run(&eval, tmp.path());
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    let ppl: f64 = text.trim().strip_prefix("perplexity,").unwrap().parse().unwrap();
    assert!(ppl >= 1.0);
}
