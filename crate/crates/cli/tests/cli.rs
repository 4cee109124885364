use std::path::Path;
use std::process::{Command, Output};

fn nerloop(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nerloop"));
    cmd.current_dir(dir).args(args).env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("NERLOOP_") {
            cmd.env_remove(k);
        }
    }
    cmd.output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nerloop(dir, args);
    assert!(
        out.status.success(),
        "nerloop {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Value of a `key\tvalue` line.
fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no {key} in\n{out}"))
}

const SMALL: &[&str] = &[
    "--n0", "30", "--n", "15", "--nt", "40", "--conf-min", "0.1", "--conf-max", "0.9",
    "--max-epochs", "3", "--features", "reduced",
];

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = ok(dir, &["synth", "--out", "data", "--paragraphs", "600", "--seed", "3"]);
    assert_eq!(field(&out, "paragraphs"), "600");
    assert_eq!(field(&out, "lexicon_terms"), "300");

    let out = ok(dir, &["lexicon", "load", "--terms", "data/lexicon.csv", "--filter", "has-code", "--out", "coded.csv"]);
    assert_eq!((field(&out, "rows"), field(&out, "kept"), field(&out, "filtered_out")), ("300", "270", "30"));
    assert!(dir.join("coded.csv").exists());

    let mut run = vec![
        "run", "--corpus", "data/corpus.jsonl", "--lexicon", "data/lexicon.csv", "--truth",
        "data/truth.jsonl", "--state", "state.json", "--error-rate", "0.1",
    ];
    run.extend_from_slice(SMALL);
    let first = ok(dir, &run);
    assert_eq!(field(&first, "phase"), "Done");
    assert_eq!(field(&first, "test"), "40");
    // A finished state resumes to the same summary.
    assert_eq!(ok(dir, &run), first);

    let out = ok(dir, &["export", "--state", "state.json", "--set", "labeled", "--out", "gold.jsonl"]);
    assert_eq!(field(&out, "paragraphs"), field(&first, "labeled"));
    ok(dir, &["export", "--state", "state.json", "--set", "test", "--out", "test.jsonl"]);
    ok(dir, &["export", "--in", "test.jsonl", "--out", "test.csv"]);
    assert!(std::fs::read_to_string(dir.join("test.csv")).unwrap().starts_with("tokens,labels\n"));

    let out = ok(dir, &["train", "--in", "gold.jsonl", "--out", "a.model", "--lexicon", "data/lexicon.csv", "--max-epochs", "5"]);
    assert!(field(&out, "epochs").parse::<usize>().unwrap() <= 5);
    ok(dir, &["train", "--in", "gold.jsonl", "--out", "b.model", "--features", "reduced", "--max-epochs", "5"]);

    let out = ok(dir, &["eval", "--model", "a.model", "--gold", "test.jsonl"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row.len(), 6);
    let f1: f64 = row[2].parse().unwrap();
    assert!((0.0..=100.0).contains(&f1));

    let out = ok(dir, &["eval", "--kfold", "4", "--train-set", "test.jsonl", "--gold", "test.jsonl", "--max-epochs", "2", "--features", "reduced"]);
    assert_eq!(out.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count(), 4);

    let out = ok(dir, &["analyze", "--model", "b.model", "--gold", "test.jsonl", "--window", "1", "--keep-stopwords", "--top", "5"]);
    assert!(out.starts_with("rank\ttoken\tcount\n"));
    assert!(out.lines().count() <= 6);

    let out = ok(dir, &["extract", "--corpus", "data/corpus.jsonl", "--model-a", "a.model", "--model-b", "b.model", "--workers", "3", "--out", "report.tsv"]);
    let entities: usize = field(&out, "entities").parse().unwrap();
    assert!(entities > 0);
    let single = ok(dir, &["extract", "--corpus", "data/corpus.jsonl", "--model-a", "a.model", "--model-b", "b.model"]);
    assert_eq!(single, std::fs::read_to_string(dir.join("report.tsv")).unwrap());

    let out = ok(dir, &["compare", "--report", "report.tsv", "--ref", "data/lexicon.csv", "--top-k", "10", "--pool", "all", "--show-unmatched"]);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "All");
    assert_eq!(row[1], "10");
}

#[test]
fn settings_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("cfg.toml"), "stream_seed = 5\n[params]\nn0 = 10\nn = 11\n").unwrap();
    let show = |extra_env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nerloop"));
        cmd.current_dir(dir).args(["--config", "cfg.toml", "run", "--print-config"]).args(extra);
        for (k, _) in std::env::vars() {
            if k.starts_with("NERLOOP_") {
                cmd.env_remove(k);
            }
        }
        if let Some(v) = extra_env {
            cmd.env("NERLOOP_N0", v);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        (v["params"]["n0"].as_u64().unwrap(), v["params"]["n"].as_u64().unwrap(), v["params"]["nt"].as_u64().unwrap(), v["stream_seed"].as_u64().unwrap())
    };
    assert_eq!(show(None, &[]), (10, 11, 500, 5));
    assert_eq!(show(Some("20"), &[]), (20, 11, 500, 5));
    assert_eq!(show(Some("20"), &["--n0", "30"]), (30, 11, 500, 5));
}

#[test]
fn builtin_defaults_without_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["run", "--print-config"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let p = &v["params"];
    assert_eq!((p["n0"].as_u64(), p["n"].as_u64(), p["nt"].as_u64()), (Some(278), Some(120), Some(500)));
    assert_eq!((p["epsilon"].as_f64(), p["conf_min"].as_f64(), p["conf_max"].as_f64()), (Some(0.0), Some(0.45), Some(0.55)));
    assert_eq!(v["train"]["max_epochs"].as_u64(), Some(64));
    assert_eq!(v["stream_seed"].as_u64(), Some(42));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = nerloop(dir, &["run", "--lexicon", "x.csv", "--state", "s.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));

    let out = nerloop(dir, &["lexicon", "load", "--terms", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    std::fs::write(dir.join("t.csv"), "name,aliases,code\nribavirin,,J05\n").unwrap();
    let out = nerloop(dir, &["lexicon", "load", "--terms", "t.csv", "--filter", "coded"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(dir.join("bad.toml"), "[params]\nn00 = 1\n").unwrap();
    let out = nerloop(dir, &["--config", "bad.toml", "run", "--print-config"]);
    assert_eq!(out.status.code(), Some(1));

    let out = nerloop(dir, &["run", "--print-config", "--conf-min", "0.7", "--corpus", "c", "--lexicon", "l", "--state", "s"]);
    assert!(out.status.success());
    let out = nerloop(dir, &["run", "--conf-min", "0.7", "--corpus", "c", "--lexicon", "l", "--state", "s"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conf_min"));
}

#[test]
fn serve_answers_progress() {
    use std::io::{Read, Write};
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let bind = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_nerloop"))
        .current_dir(tmp.path())
        .args(["serve", "--bind", &bind, "--journal", "events.jsonl"])
        .spawn()
        .unwrap();
    let mut response = String::new();
    for _ in 0..200 {
        if let Ok(mut s) = std::net::TcpStream::connect(&bind) {
            s.write_all(b"GET /api/progress HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n").unwrap();
            s.read_to_string(&mut response).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(25));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"round\":null"), "{response}");
    assert!(tmp.path().join("events.jsonl").exists());
}
