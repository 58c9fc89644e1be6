use std::process::{Command, Output};

use csp_cli::output::parse_csv;

fn csp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Everything after the provenance block.
fn body(csv: &str) -> String {
    csv.lines()
        .filter(|l| !l.starts_with("# "))
        .map(|l| format!("{l}\n"))
        .collect()
}

#[test]
fn ot_check_full_run() {
    let o = csp(&["ot-check", "--trials", "1000", "--gmax", "6", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("1000/1000 agreements"));
    let parsed = parse_csv(&stdout(&o)).unwrap();
    assert_eq!(parsed.table.rows.len(), 1000);
    let holds = parsed.table.columns.iter().position(|c| c == "holds").unwrap();
    assert!(parsed.table.rows.iter().all(|r| r[holds] == "true"));
}

#[test]
fn rank_decay_fixture() {
    let o = csp(&["rank-decay", "--depth", "6", "--n", "64", "--c", "32", "--seed", "31"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let parsed = parse_csv(&stdout(&o)).unwrap();
    let t = &parsed.table;
    let col = |name: &str| t.columns.iter().position(|c| c == name).unwrap();
    let (method, r, bound) = (col("method"), col("residual_norm1inf"), col("bound"));
    for m in ["csp", "mha"] {
        assert_eq!(t.rows.iter().filter(|row| row[method] == m).count(), 7);
    }
    for row in t.rows.iter().filter(|row| row[method] == "csp") {
        let (r, b): (f64, f64) = (row[r].parse().unwrap(), row[bound].parse().unwrap());
        assert!(r <= b * (1.0 + 1e-9));
    }
    assert!(parsed.provenance.iter().any(|(k, v)| k == "seed" && v == "31"));
}

#[test]
fn config_file_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.conf");
    std::fs::write(&empty, "").unwrap();
    let unknown = dir.path().join("unknown.conf");
    std::fs::write(&unknown, "trials = 5\nwidth = 3\n").unwrap();
    let missing = dir.path().join("missing.conf");
    for path in [&empty, &unknown, &missing] {
        let o = csp(&["ot-check", "--config", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{}", path.display());
    }
    assert!(stderr(&csp(&["ot-check", "--config", unknown.to_str().unwrap()])).contains("width"));
}

#[test]
fn config_file_run_writes_report_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("ot.conf");
    std::fs::write(&conf, "# small run\ntrials = 20\ngmax = 4\nformat = json\n").unwrap();
    let out = dir.path().join("report.json");
    let o = csp(&[
        "ot-check",
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 20);
    assert_eq!(v["provenance"]["command"], "ot-check");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn invariant_failure_exits_one_with_record() {
    // An unreachable threshold makes the final-gap invariant fail.
    let o = csp(&[
        "sinkhorn-converge",
        "--sizes",
        "4",
        "--groups",
        "1",
        "--fixtures",
        "1",
        "--threshold",
        "1e-30",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let record = stderr(&o)
        .lines()
        .find_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .unwrap();
    assert_eq!(record["command"], "sinkhorn-converge");
    assert_eq!(record["failures"][0]["invariant"], "final_gap");
    assert!(parse_csv(&stdout(&o)).is_ok());
}

#[test]
fn reruns_and_parallel_runs_are_byte_identical() {
    let cases: &[&[&str]] = &[
        &["demo", "--seed", "3"],
        &["ot-check", "--trials", "100", "--seed", "5"],
        &[
            "rank-decay",
            "--depth",
            "3",
            "--n",
            "16",
            "--c",
            "8",
            "--k",
            "4",
            "--pointwise",
            "relu",
        ],
        &["sinkhorn-converge", "--sizes", "4,8", "--fixtures", "2"],
        &["spectra", "--depth", "2", "--n", "16", "--c", "4", "--k", "2"],
        &[
            "train",
            "--steps",
            "20",
            "--eval-every",
            "10",
            "--eval-size",
            "32",
            "--n",
            "8",
            "--c",
            "8",
            "--ffn",
            "8",
            "--k",
            "2",
            "--heads",
            "2",
        ],
    ];
    for args in cases {
        let a = body(&stdout(&csp(args)));
        let b = body(&stdout(&csp(args)));
        let mut par = args.to_vec();
        par.push("--parallel");
        let c = body(&stdout(&csp(&par)));
        assert!(a.lines().count() > 1, "{args:?}");
        assert_eq!(a, b, "{args:?}");
        assert_eq!(a, c, "{args:?} parallel");
    }
}

#[test]
fn train_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let o = csp(&[
        "train",
        "--model",
        "csp",
        "--steps",
        "5",
        "--n",
        "8",
        "--c",
        "8",
        "--ffn",
        "8",
        "--k",
        "2",
        "--checkpoint",
        prefix.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(dir.path().join("run.csp.ckpt")).unwrap();
    let store = csp_core::train::read_checkpoint(bytes.as_slice()).unwrap();
    assert!(store.scalar_count() > 0);
    let t = parse_csv(&stdout(&o)).unwrap().table;
    assert_eq!(t.columns.join(","), csp_core::train::METRICS_HEADER);
}

#[test]
fn bench_single_point() {
    let o = csp(&[
        "bench",
        "--sizes",
        "64",
        "--methods",
        "softmax",
        "--c",
        "4",
        "--repetitions",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = parse_csv(&stdout(&o)).unwrap().table;
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0][0], "softmax");
}
