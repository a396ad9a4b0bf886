//! End-to-end tests driving the compiled binary through the full
//! split → train → predict → evaluate pipeline, plus exit-code contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conlid::corpus::{load_dataset, DataFormat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conlid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr(out)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}\nstdout: {}",
        stderr(out),
        stdout(out)
    );
}

/// Two artificial languages over disjoint alphabets, sentences built
/// deterministically from small word lists.
fn write_toy_corpus(path: &Path) {
    let langs: [(&str, &[&str]); 2] = [
        ("aaa_Latn", &["aba", "abab", "baba", "aab", "bab", "abba"]),
        ("bbb_Latn", &["cdc", "cdcd", "dcdc", "ccd", "dcd", "cddc"]),
    ];
    let mut lines = Vec::new();
    for (label, words) in langs {
        for i in 0..60 {
            let sentence: Vec<&str> = (0..4).map(|k| words[(i + k) % words.len()]).collect();
            lines.push(format!(
                "{{\"text\":\"{}\",\"label\":\"{label}\"}}",
                sentence.join(" ")
            ));
        }
    }
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn pipeline_split_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let corpus = PathBuf::from(p(dir, "corpus.jsonl"));
    write_toy_corpus(&corpus);

    // Split.
    let train_path = p(dir, "train.jsonl");
    let test_path = p(dir, "test.jsonl");
    let out = run(&[
        "split",
        corpus.to_str().unwrap(),
        &train_path,
        &test_path,
        "--seed",
        "7",
    ]);
    assert_ok(&out);
    assert!(stderr(&out).contains("config: fraction=0.85"));
    let (train_set, _) = load_dataset(Path::new(&train_path), DataFormat::Jsonl).unwrap();
    let (test_set, _) = load_dataset(Path::new(&test_path), DataFormat::Jsonl).unwrap();
    assert_eq!(train_set.len(), 102);
    assert_eq!(test_set.len(), 18);

    // Split is seed-deterministic: rerunning produces byte-identical files.
    let train2 = p(dir, "train2.jsonl");
    let test2 = p(dir, "test2.jsonl");
    assert_ok(&run(&[
        "split",
        corpus.to_str().unwrap(),
        &train2,
        &test2,
        "--seed",
        "7",
    ]));
    assert_eq!(fs::read(&train_path).unwrap(), fs::read(&train2).unwrap());
    assert_eq!(fs::read(&test_path).unwrap(), fs::read(&test2).unwrap());

    // Train model A (plain cross-entropy).
    let model_a = p(dir, "a.bin");
    let train_args = [
        "train",
        &train_path,
        "--variant",
        "ce",
        "--out",
        &model_a,
        "--dim",
        "16",
        "--bucket",
        "512",
        "--min-count",
        "1",
        "--batch",
        "8",
        "--epochs",
        "30",
        "--lr",
        "0.05",
        "--seed",
        "3",
    ];
    let out = run(&train_args);
    assert_ok(&out);
    assert!(stderr(&out).contains("config: batch=8"));

    // Same seed, same bytes.
    let model_a2 = p(dir, "a2.bin");
    let mut rerun: Vec<&str> = train_args.to_vec();
    rerun[5] = &model_a2;
    assert_ok(&run(&rerun));
    assert_eq!(fs::read(&model_a).unwrap(), fs::read(&model_a2).unwrap());

    // Train model B, exercising the contrastive path end to end.
    let model_b = p(dir, "b.bin");
    let telemetry = p(dir, "steps.csv");
    let out = run(&[
        "train",
        &train_path,
        "--variant",
        "conlid-s",
        "--out",
        &model_b,
        "--dim",
        "16",
        "--bucket",
        "512",
        "--min-count",
        "1",
        "--batch",
        "8",
        "--epochs",
        "30",
        "--lr",
        "0.05",
        "--tau",
        "0.05",
        "--bank",
        "64",
        "--seed",
        "4",
        "--telemetry",
        &telemetry,
    ]);
    assert_ok(&out);
    let csv = fs::read_to_string(&telemetry).unwrap();
    assert!(csv.starts_with("step,lr,ce_loss,scl_loss,total_loss"));
    assert!(csv.lines().count() > 30);

    // Predict the held-out texts.
    let input = p(dir, "input.txt");
    let texts: Vec<String> = test_set.examples.iter().map(|e| e.text.clone()).collect();
    fs::write(&input, texts.join("\n") + "\n").unwrap();
    let gold = p(dir, "gold.tsv");
    let gold_rows: Vec<String> = test_set
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{i}\t{}", e.label))
        .collect();
    fs::write(&gold, gold_rows.join("\n") + "\n").unwrap();

    let pred_a = p(dir, "pred_a.tsv");
    let out = run(&["predict", "--model", &model_a, "--input", &input, "--out", &pred_a]);
    assert_ok(&out);
    let rows = fs::read_to_string(&pred_a).unwrap();
    assert_eq!(rows.lines().count(), test_set.len());
    for line in rows.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        let prob: f64 = cols[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&prob));
    }

    let pred_b = p(dir, "pred_b.tsv");
    assert_ok(&run(&[
        "predict", "--model", &model_b, "--input", &input, "--out", &pred_b,
    ]));

    // Evaluate: macro F1 printed on stdout, report written to the file.
    let report = p(dir, "report.tsv");
    let out = run(&["evaluate", "--gold", &gold, "--pred", &pred_a, "--out", &report]);
    assert_ok(&out);
    let macro_line = stdout(&out);
    let macro_f1: f64 = macro_line
        .trim()
        .strip_prefix("macro_f1\t")
        .expect("macro_f1 line")
        .parse()
        .unwrap();
    assert!(macro_f1 >= 0.9, "macro F1 too low: {macro_f1}");
    assert!(fs::read_to_string(&report)
        .unwrap()
        .starts_with("label\tprecision\trecall\tf1\tfpr\tsupport"));

    // Evaluate with groups, JSON report to stdout.
    let groups = p(dir, "groups.tsv");
    fs::write(&groups, "aaa_Latn\tlow\n").unwrap();
    let out = run(&["evaluate", "--gold", &gold, "--pred", &pred_a, "--groups", &groups, "--json"]);
    assert_ok(&out);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(parsed["per_language"]["aaa_Latn"]["f1"].is_number());
    assert!(parsed["groups"]["low"]["languages"].is_number());
    assert!(parsed["groups"]["UNGROUPED"]["mean_f1"].is_number());

    // Ensemble from prediction files (max rule).
    let ens = p(dir, "ens.tsv");
    let out = run(&[
        "ensemble", "--mode", "max", "--pred-a", &pred_a, "--pred-b", &pred_b, "--out", &ens,
    ]);
    assert_ok(&out);
    assert_eq!(
        fs::read_to_string(&ens).unwrap().lines().count(),
        test_set.len()
    );

    // Ensemble from models (avg rule).
    let out = run(&[
        "ensemble", "--mode", "avg", "--model-a", &model_a, "--model-b", &model_b, "--input",
        &input,
    ]);
    assert_ok(&out);
    assert_eq!(stdout(&out).lines().count(), test_set.len());

    // Agreement between the two models' predictions.
    let out = run(&["agree", "--pred-a", &pred_a, "--pred-b", &pred_b, "--langs", &gold]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("agreement_macro\t"));
    assert!(text.contains("agreement_micro\t"));

    // Recovery filter over a mixed bucket.
    let bucket = p(dir, "bucket.txt");
    fs::write(&bucket, "aba abab baba aab\nA B C D E\nhello\n").unwrap();
    let verdicts = p(dir, "verdicts.tsv");
    let out = run(&[
        "recover-und",
        "--model",
        &model_a,
        "--input",
        &bucket,
        "--declared-script",
        "Latn",
        "--out",
        &verdicts,
    ]);
    assert_ok(&out);
    let lines: Vec<String> = fs::read_to_string(&verdicts)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 3);
    let alphabet_row: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(alphabet_row[1], "false");
    assert!(alphabet_row[2].split(',').any(|s| s == "4"));
    let single_word: Vec<&str> = lines[2].split('\t').collect();
    assert_eq!(single_word[1], "false");
    assert!(single_word[2].split(',').any(|s| s == "5"));

    // Config file fills gaps; explicit flags still win.
    let cfg = p(dir, "defaults.conf");
    fs::write(&cfg, "# defaults\ntopk = 2\n").unwrap();
    let out = run(&[
        "predict", "--config", &cfg, "--model", &model_a, "--input", &input,
    ]);
    assert_ok(&out);
    assert!(stderr(&out).contains("config: topk=2"));
    assert_eq!(stdout(&out).lines().count(), 2 * test_set.len());
    let out = run(&[
        "predict", "--config", &cfg, "--model", &model_a, "--input", &input, "--topk", "1",
    ]);
    assert_ok(&out);
    assert!(stderr(&out).contains("config: topk=1"));
    assert_eq!(stdout(&out).lines().count(), test_set.len());
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let model = p(dir.path(), "missing.bin");
    let input = p(dir.path(), "missing.txt");

    // Zero topk is rejected before any file is touched.
    let out = run(&["predict", "--model", &model, "--input", &input, "--topk", "0"]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("error:"));

    // Unknown flags are rejected by the parser.
    let out = run(&["split", "--bogus"]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("error:"));

    // Missing required settings.
    let out = run(&["train", &input]);
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("--variant"));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    // Unreadable input file.
    let out = run(&[
        "train",
        &p(dir, "nope.jsonl"),
        "--variant",
        "ce",
        "--out",
        &p(dir, "m.bin"),
    ]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("error:"));

    // Mismatched doc_id sets between gold and predictions.
    let gold = p(dir, "gold.tsv");
    let pred = p(dir, "pred.tsv");
    fs::write(&gold, "0\taaa_Latn\n1\tbbb_Latn\n").unwrap();
    fs::write(&pred, "0\taaa_Latn\t0.9\n2\tbbb_Latn\t0.8\n").unwrap();
    let out = run(&["evaluate", "--gold", &gold, "--pred", &pred]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("different document sets"));
}

#[test]
fn help_and_version_exit_0() {
    let out = run(&["--help"]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("split"));
    let out = run(&["--version"]);
    assert_exit(&out, 0);
}

#[test]
fn thread_env_var_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let gold = p(dir.path(), "gold.tsv");
    fs::write(&gold, "0\taaa_Latn\n").unwrap();
    let pred = p(dir.path(), "pred.tsv");
    fs::write(&pred, "0\taaa_Latn\t1\n").unwrap();

    let out = bin()
        .args(["evaluate", "--gold", &gold, "--pred", &pred])
        .env("CONLID_THREADS", "zero")
        .output()
        .unwrap();
    assert_exit(&out, 1);
    assert!(stderr(&out).contains("CONLID_THREADS"));

    let out = bin()
        .args(["evaluate", "--gold", &gold, "--pred", &pred])
        .env("CONLID_THREADS", "1")
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(stderr(&out).contains("config: threads=1"));
}
