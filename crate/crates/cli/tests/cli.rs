use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_mdl::cipherlab::synthetic_lines;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_causal-mdl"));
    c.env_remove("CAUSAL_MDL_OUT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn workspace(n: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("lines.txt"),
        synthetic_lines(n, 3).join("\n"),
    )
    .unwrap();
    dir
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn generate_writes_corpus_and_manifest() {
    let w = workspace(300);
    let d = w.path();
    let gen = [
        "generate",
        "--input",
        "lines.txt",
        "--noised-side",
        "ciphertext",
        "--p",
        "0.05",
        "--seed",
        "7",
    ];
    ok(d, &[&gen[..], &["--out", "a"]].concat());
    ok(d, &[&gen[..], &["--out", "b"]].concat());
    same_files(&d.join("a"), &d.join("b"));
    let m = json(d.join("a/manifest.json"));
    assert_eq!(m["counts"]["pairs"], 300);
    assert_eq!(m["noise"]["rng_seed"], 7);
    assert_eq!(m["global_seed"], 0);
    assert!(m["config_fingerprint"].as_str().unwrap().len() == 64);
    let corpus = fs::read_to_string(d.join("a/corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 300);
}

#[test]
fn config_file_overrides_flags() {
    let w = workspace(50);
    let d = w.path();
    fs::write(d.join("cfg.json"), r#"{"p": 0.0, "global_seed": 9}"#).unwrap();
    ok(
        d,
        &[
            "generate",
            "--input",
            "lines.txt",
            "--p",
            "0.5",
            "--config",
            "cfg.json",
            "--out",
            "o",
        ],
    );
    let m = json(d.join("o/manifest.json"));
    assert_eq!(m["config"]["p"], 0.0);
    assert_eq!(m["global_seed"], 9);
    let lines = synthetic_lines(50, 3);
    let first: Value = serde_json::from_str(
        fs::read_to_string(d.join("o/corpus.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(first["src"], lines[0].as_str());
    assert_eq!(
        first["tgt"],
        causal_mdl::cipherlab::rot13(&lines[0]).as_str()
    );

    fs::write(d.join("bad.json"), r#"{"no_such_flag": 1}"#).unwrap();
    let out = run(
        d,
        &[
            "generate",
            "--input",
            "lines.txt",
            "--config",
            "bad.json",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn output_directory_from_environment() {
    let w = workspace(40);
    let d = w.path();
    let out = bin()
        .current_dir(d)
        .env("CAUSAL_MDL_OUT", "from_env")
        .args(["generate", "--input", "lines.txt"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from_env/corpus.jsonl").is_file());
}

#[test]
fn missing_input_exits_2() {
    let w = workspace(10);
    let out = run(
        w.path(),
        &["generate", "--input", "absent.txt", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
    let out = run(
        w.path(),
        &["discover", "--corpus", "absent.jsonl", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn discover_is_reproducible_and_antisymmetric() {
    let w = workspace(400);
    let d = w.path();
    ok(
        d,
        &[
            "generate",
            "--input",
            "lines.txt",
            "--seed",
            "1",
            "--out",
            "g",
        ],
    );
    ok(
        d,
        &["discover", "--corpus", "g/corpus.jsonl", "--out", "r1"],
    );
    ok(
        d,
        &["discover", "--corpus", "g/corpus.jsonl", "--out", "r2"],
    );
    same_files(&d.join("r1"), &d.join("r2"));
    let v = json(d.join("r1/verdict.json"));
    assert_eq!(v["verdict"], "x_to_y");

    let swapped: String = fs::read_to_string(d.join("g/corpus.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let r: Value = serde_json::from_str(l).unwrap();
            format!(
                "{}\n",
                serde_json::json!({"src": r["tgt"], "tgt": r["src"], "direction": "y_to_x"})
            )
        })
        .collect();
    fs::write(d.join("swapped.jsonl"), swapped).unwrap();
    ok(d, &["discover", "--corpus", "swapped.jsonl", "--out", "s"]);
    let s = json(d.join("s/verdict.json"));
    assert_eq!(s["verdict"], "y_to_x");
    assert_eq!(
        s["margin_kbits"].as_f64().unwrap(),
        -v["margin_kbits"].as_f64().unwrap()
    );

    let csv = fs::read_to_string(d.join("r1/codelengths.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 10);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .ends_with("global_seed,config_fingerprint"));
}

#[test]
fn schedule_mismatch_exits_3() {
    let w = workspace(100);
    let d = w.path();
    ok(d, &["generate", "--input", "lines.txt", "--out", "g"]);
    let out = run(
        d,
        &[
            "discover",
            "--corpus",
            "g/corpus.jsonl",
            "--ends",
            "10,50",
            "--out",
            "r",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("n = 100") && msg.contains("t_K = 50"), "{msg}");
}

#[test]
fn mdl_reports_selected_components() {
    let w = workspace(200);
    let d = w.path();
    ok(d, &["generate", "--input", "lines.txt", "--out", "g"]);
    let args = [
        "mdl",
        "--corpus",
        "g/corpus.jsonl",
        "--components",
        "MARGINAL_X,COND_Y_GIVEN_X",
        "--uniform",
    ];
    ok(d, &[&args[..], &["--out", "a"]].concat());
    ok(d, &[&args[..], &["--out", "b"]].concat());
    same_files(&d.join("a"), &d.join("b"));
    let r = json(d.join("a/reports.json"));
    let reports = r["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["kind"], "MARGINAL_X");
    assert!(r.get("verdict").is_none());
}

#[test]
fn meta_reports_welch_and_rejects_bad_stats() {
    let w = workspace(1);
    let d = w.path();
    ok(
        d,
        &[
            "meta",
            "--a",
            "55,0.04,4.23",
            "--b",
            "50,1.70,2.05",
            "--out",
            "a",
        ],
    );
    ok(
        d,
        &[
            "meta",
            "--a",
            "55,0.04,4.23",
            "--b",
            "50,1.70,2.05",
            "--out",
            "b",
        ],
    );
    same_files(&d.join("a"), &d.join("b"));
    let m = json(d.join("a/meta.json"));
    assert!((m["p_two_sided"].as_f64().unwrap() - 0.011).abs() <= 0.002);

    ok(
        d,
        &[
            "meta", "--a", "8,-1.5,2", "--b", "8,-1.5,2", "--out", "same",
        ],
    );
    assert_eq!(json(d.join("same/meta.json"))["p_two_sided"], 1.0);

    fs::write(
        d.join("values.csv"),
        "group,value\ncausal,1\ncausal,2\nanti,3\nanti,5\n",
    )
    .unwrap();
    ok(d, &["meta", "--values", "values.csv", "--out", "v"]);
    assert_eq!(json(d.join("v/meta.json"))["groups"]["b"]["name"], "anti");

    for bad in [
        ["--a", "1,0,1", "--b", "5,1,1"],
        ["--a", "5,0,-1", "--b", "5,1,1"],
        ["--a", "5,0", "--b", "5,1,1"],
    ] {
        let out = run(d, &[&["meta"][..], &bad[..], &["--out", "x"]].concat());
        assert_eq!(out.status.code(), Some(4), "{bad:?}");
    }
}

#[test]
fn ssl_grid_and_report_agree() {
    let w = workspace(1);
    let d = w.path();
    let args = [
        "ssl",
        "--seeds",
        "2",
        "--k",
        "40",
        "--m",
        "80",
        "--test",
        "30",
        "--iterations",
        "1",
        "--global-seed",
        "5",
    ];
    ok(d, &[&args[..], &["--out", "a", "--jobs", "1"]].concat());
    ok(d, &[&args[..], &["--out", "b"]].concat());
    same_files(&d.join("a"), &d.join("b"));
    let csv = fs::read_to_string(d.join("a/ssl_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    let agg = json(d.join("a/ssl_aggregate.json"));
    assert_eq!(agg["aggregate"]["groups"].as_array().unwrap().len(), 4);

    ok(
        d,
        &["report", "--results", "a/ssl_results.csv", "--out", "r"],
    );
    let rep = json(d.join("r/report_aggregate.json"));
    assert_eq!(rep["aggregate"], agg["aggregate"]);
}

#[test]
fn ssl_single_cell() {
    let w = workspace(1);
    let d = w.path();
    let out = ok(
        d,
        &[
            "ssl",
            "--seeds",
            "1",
            "--families",
            "ciphertext",
            "--directions",
            "anticausal",
            "--k",
            "30",
            "--m",
            "30",
            "--test",
            "20",
            "--iterations",
            "1",
            "--out",
            "a",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("cell_seed="));
    let csv = fs::read_to_string(d.join("a/ssl_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn da_grid_is_reproducible() {
    let w = workspace(1);
    let d = w.path();
    let args = [
        "da",
        "--seeds",
        "2",
        "--n-source",
        "200",
        "--n-adapt",
        "40",
        "--n-test",
        "40",
        "--lambda-grid",
        "0.2,0.8",
    ];
    ok(d, &[&args[..], &["--out", "a"]].concat());
    ok(d, &[&args[..], &["--out", "b"]].concat());
    same_files(&d.join("a"), &d.join("b"));
    let csv = fs::read_to_string(d.join("a/da_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    ok(
        d,
        &["report", "--results", "a/da_results.csv", "--out", "r1"],
    );
    ok(
        d,
        &["report", "--results", "a/da_results.csv", "--out", "r2"],
    );
    same_files(&d.join("r1"), &d.join("r2"));
}

#[test]
fn report_rejects_malformed_csv() {
    let w = workspace(1);
    let d = w.path();
    fs::write(d.join("bad.csv"), "a,b\n1,2\n").unwrap();
    let out = run(d, &["report", "--results", "bad.csv", "--out", "r"]);
    assert_eq!(out.status.code(), Some(2));
}
