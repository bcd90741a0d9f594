use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use clap::CommandFactory;
use coknow_cli::Cli;
use coknow_core::knowledge::{cache_key, KnowledgeBank, PromptSet};

fn coknow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coknow"))
        .args(args)
        .current_dir(dir)
        .env_remove("COKNOW_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = coknow(&["synth", "--out", "ds"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let root = Cli::command();
    let mut checked = 0;
    for sub in root.get_subcommands() {
        let o = coknow(&[sub.get_name(), "--help"], dir.path());
        assert_eq!(code(&o), 0);
        let help = stdout(&o);
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" {
                continue;
            }
            assert!(
                help.contains(&format!("--{long}")),
                "`{} --help` does not mention --{long}",
                sub.get_name()
            );
            assert!(
                arg.get_help().is_some(),
                "--{long} of {} has no help text",
                sub.get_name()
            );
            checked += 1;
        }
    }
    assert!(checked > 40, "only {checked} flags checked");
    assert_eq!(code(&coknow(&["--version"], dir.path())), 0);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&coknow(&[], p)), 1);
    assert_eq!(code(&coknow(&["frobnicate"], p)), 1);
    assert_eq!(
        code(&coknow(&["train", "--out", "x.json", "--bogus"], p)),
        1
    );
    let o = coknow(&["train", "--out", "x.json", "--set", "model.betta=0.5"], p);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("model.betta"));
    assert_eq!(code(&coknow(&["eval", "--ckpt", "missing.json"], p)), 1);
    assert_eq!(code(&coknow(&["ablate", "--sweep", "gamma"], p)), 1);
    // Neither fixtures nor endpoint.
    std::fs::write(p.join("c.txt"), "a\nb\n").unwrap();
    assert_eq!(
        code(&coknow(
            &["gen-knowledge", "--classes", "c.txt", "--out", "b.json"],
            p
        )),
        1
    );
}

#[test]
fn fixture_generation_and_missing_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "ds/classes.txt",
            "--offline-fixtures",
            "ds/fixtures",
            "--out",
            "bank.json",
            "--model",
            "gpt-4",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bank = KnowledgeBank::load(&p.join("bank.json")).unwrap();
    assert_eq!(bank.description_count(), 24);
    assert_eq!(bank.model_id, "gpt-4");

    // Four classes -> twelve descriptions.
    std::fs::write(p.join("four.txt"), "class_0\nclass_1\nclass_2\nclass_3\n").unwrap();
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "four.txt",
            "--offline-fixtures",
            "ds/fixtures",
            "--out",
            "four.json",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("12 descriptions"));

    let prompt = PromptSet::default().nvk.render("class_1").unwrap();
    std::fs::remove_file(
        p.join("ds/fixtures")
            .join(format!("{}.json", cache_key("gpt-4", &prompt))),
    )
    .unwrap();
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "four.txt",
            "--offline-fixtures",
            "ds/fixtures",
            "--out",
            "partial.json",
        ],
        p,
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("class_1") && err.contains("NVK"), "{err}");
    let partial = KnowledgeBank::load(&p.join("partial.json")).unwrap();
    assert_eq!(partial.incomplete, vec!["class_1".to_string()]);
}

#[test]
fn unreachable_endpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    std::fs::write(p.join("c.txt"), "cat\ndog\n").unwrap();
    let url = format!("http://127.0.0.1:{port}/v1");
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "c.txt",
            "--out",
            "b.json",
            "--endpoint",
            &url,
            "--backoff-ms",
            "1",
        ],
        p,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

/// Minimal HTTP/1.1 server answering every POST with `status` and a chat
/// reply echoing the prompt. Records the Authorization headers it saw.
fn serve(status: u16) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let auth = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&auth);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    seen.lock().unwrap().push(line.trim().to_string());
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let prompt = req["messages"][0]["content"].as_str().unwrap();
            let reply = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": format!("About: {prompt}")}}]
            })
            .to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, auth)
}

#[test]
fn endpoint_mode_generates_and_never_persists_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.txt"), "cat\ndog\n").unwrap();
    let (url, auth) = serve(200);
    let o = Command::new(env!("CARGO_BIN_EXE_coknow"))
        .args([
            "gen-knowledge",
            "--classes",
            "c.txt",
            "--out",
            "b.json",
            "--endpoint",
            &url,
            "--cache",
            "cache",
        ])
        .current_dir(p)
        .env("COKNOW_API_KEY", "sk-test-secret")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bank_text = std::fs::read_to_string(p.join("b.json")).unwrap();
    let bank = KnowledgeBank::from_json(&bank_text).unwrap();
    assert_eq!(bank.description_count(), 6);
    assert!(bank.entries["cat"].vk.starts_with("About: "));
    let seen = auth.lock().unwrap().clone();
    assert_eq!(seen.len(), 6);
    assert!(seen.iter().all(|h| h.ends_with("Bearer sk-test-secret")));
    assert!(!bank_text.contains("sk-test-secret"));
    for entry in std::fs::read_dir(p.join("cache")).unwrap() {
        assert!(!std::fs::read_to_string(entry.unwrap().path())
            .unwrap()
            .contains("sk-test-secret"));
    }
}

#[test]
fn server_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.txt"), "cat\n").unwrap();
    let (url, _) = serve(503);
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "c.txt",
            "--out",
            "b.json",
            "--endpoint",
            &url,
            "--backoff-ms",
            "1",
        ],
        p,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("503"));
}

fn train(p: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out];
    args.extend_from_slice(extra);
    coknow(&args, p)
}

#[test]
fn train_then_eval_reproduces_golden_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = train(p, "ck.json", &["--report", "run.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("test top-1 62.50%"), "{}", stdout(&o));
    let o = coknow(&["eval", "--ckpt", "ck.json", "--report", "eval.json"], p);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["top1"], 0.625);
    assert_eq!(report["n"], 160);
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["epochs"].as_array().unwrap().len(), 100);
    assert_eq!(run["config"]["model.beta"], 0.6);
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let read = |f: &str| std::fs::read(p.join(f)).unwrap();
    for out in ["a.json", "b.json"] {
        assert_eq!(
            code(&train(p, out, &["--shots", "2", "--set", "train.epochs=5"])),
            0
        );
    }
    assert_eq!(read("a.json"), read("b.json"));

    synth(p);
    let first: Vec<Vec<u8>> = ["ds/train.features", "ds/test.features", "ds/classes.txt"]
        .iter()
        .map(|f| read(f))
        .collect();
    synth(p);
    let second: Vec<Vec<u8>> = ["ds/train.features", "ds/test.features", "ds/classes.txt"]
        .iter()
        .map(|f| read(f))
        .collect();
    assert_eq!(first, second);

    let strip = |f: &str| -> String {
        String::from_utf8(read(f))
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"created_at\""))
            .collect()
    };
    for out in ["k1.json", "k2.json"] {
        let o = coknow(
            &[
                "gen-knowledge",
                "--classes",
                "ds/classes.txt",
                "--offline-fixtures",
                "ds/fixtures",
                "--out",
                out,
            ],
            p,
        );
        assert_eq!(code(&o), 0);
    }
    assert_eq!(strip("k1.json"), strip("k2.json"));
}

#[test]
fn eval_with_mismatched_dimension_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&train(
            p,
            "ck.json",
            &["--shots", "1", "--set", "train.epochs=1"]
        )),
        0
    );
    let o = coknow(
        &[
            "synth",
            "--out",
            "small",
            "--set",
            "data.d_in=32",
            "--set",
            "encoder.d_in=32",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    let o = coknow(&["eval", "--ckpt", "ck.json", "--dataset", "small"], p);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension 32"), "{}", stderr(&o));

    // Same for predict on a feature file of the wrong width.
    let o = coknow(
        &[
            "predict",
            "--ckpt",
            "ck.json",
            "--features",
            "small/test.features",
        ],
        p,
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn train_on_imported_dataset_needs_a_fitting_bank() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    let o = coknow(&["train", "--dataset", "ds", "--out", "ck.json"], p);
    assert_eq!(code(&o), 1);
    std::fs::write(p.join("three.txt"), "class_0\nclass_1\nclass_2\n").unwrap();
    let o = coknow(
        &[
            "gen-knowledge",
            "--classes",
            "three.txt",
            "--offline-fixtures",
            "ds/fixtures",
            "--out",
            "small.json",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    let o = coknow(
        &[
            "train",
            "--dataset",
            "ds",
            "--bank",
            "small.json",
            "--out",
            "ck.json",
        ],
        p,
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("class_7"));
}

#[test]
fn predict_writes_class_confidence_probs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p);
    assert_eq!(
        code(&train(
            p,
            "ck.json",
            &["--shots", "2", "--set", "train.epochs=3"]
        )),
        0
    );
    let o = coknow(
        &[
            "predict",
            "--ckpt",
            "ck.json",
            "--features",
            "ds/test.features",
            "--out",
            "pred.json",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let preds: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(p.join("pred.json")).unwrap()).unwrap();
    assert_eq!(preds.len(), 160);
    for pr in &preds {
        let probs: Vec<f64> = pr["probs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        assert_eq!(probs.len(), 8);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pr["class"].as_str().unwrap().starts_with("class_"));
        let conf = pr["confidence"].as_f64().unwrap();
        assert_eq!(conf, probs.iter().cloned().fold(f64::MIN, f64::max));
    }
}

#[test]
fn ablate_beta_emits_exactly_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = coknow(
        &[
            "ablate",
            "--sweep",
            "beta",
            "--shots",
            "2",
            "--set",
            "train.epochs=2",
            "--set",
            "train.seeds=[0,1]",
            "--report",
            "r.json",
            "--table",
            "t.txt",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(p.join("t.txt")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("beta=")).collect();
    assert_eq!(rows.len(), 3, "{table}");
    for (row, b) in rows.iter().zip(["0.4", "0.6", "0.8"]) {
        assert!(row.starts_with(&format!("beta={b} ")), "{row}");
    }
    let reports: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 6);
}

#[test]
fn matrix_zeroshot_shift_export_and_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let quick = [
        "--set",
        "train.epochs=2",
        "--set",
        "train.seeds=[0]",
        "--set",
        "train.shots=[1,2]",
    ];
    let mut args = vec!["matrix", "--arms", "coknow,baseline", "--report", "m.json"];
    args.extend_from_slice(&quick);
    let o = coknow(&args, p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(p.join("m.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 4);

    let o = coknow(
        &[
            "zeroshot-demo",
            "--strategy",
            "oracle",
            "--report",
            "z.json",
        ],
        p,
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("rank flip on item 31"));

    let mut args = vec!["shift", "--shots", "1", "--sigmas", "0.7,1.4"];
    args.extend_from_slice(&quick);
    assert_eq!(code(&coknow(&args, p)), 0);

    assert_eq!(
        code(&train(
            p,
            "ck.json",
            &["--shots", "1", "--set", "train.epochs=1"]
        )),
        0
    );
    let o = coknow(
        &["export-embeddings", "--ckpt", "ck.json", "--out", "e.csv"],
        p,
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(p.join("e.csv")).unwrap();
    assert_eq!(csv.lines().count(), 161);

    std::fs::write(p.join("cfg.json"), r#"{"model.beta": 0.8}"#).unwrap();
    let o = coknow(
        &[
            "show-config",
            "--config",
            "cfg.json",
            "--set",
            "train.epochs=7",
        ],
        p,
    );
    let shown: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(
        (shown["model.beta"].as_f64(), shown["train.epochs"].as_u64()),
        (Some(0.8), Some(7))
    );
    std::fs::write(p.join("nested.json"), r#"{"model": {"beta": 0.8}}"#).unwrap();
    assert_eq!(
        code(&coknow(&["show-config", "--config", "nested.json"], p)),
        1
    );
}
