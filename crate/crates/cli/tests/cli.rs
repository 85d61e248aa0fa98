use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn imec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imec"))
        .args(args)
        .env_remove("STEGO_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus() -> String {
    format!("{}/../core/data/corpus.txt", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn keygen_is_deterministic_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.hex"), dir.path().join("b.hex"));
    for path in [&a, &b] {
        let out = imec(&["keygen", "--bits", "80", "--seed", "7", "--out", p(path)]);
        assert!(out.status.success());
    }
    let key = fs::read_to_string(&a).unwrap();
    assert_eq!(key, fs::read_to_string(&b).unwrap());
    assert_eq!(key.trim().len(), 20);
    assert!(key
        .trim()
        .chars()
        .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    assert!(key.ends_with('\n') && key.lines().count() == 1);
}

#[test]
fn seed_falls_back_to_env() {
    let run = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_imec"))
            .args(["keygen", "--bits", "16"])
            .env("STEGO_SEED", seed)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

fn round_trip(channel: &str, block_bits: &str) {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.hex");
    let msg = dir.path().join("msg.bin");
    let stego = dir.path().join("stego.json");
    let text = dir.path().join("stego.txt");
    let back = dir.path().join("back.bin");
    fs::write(&msg, b"attack@dawn").unwrap();

    assert!(
        imec(&["keygen", "--bits", "88", "--seed", "1", "--out", p(&key)])
            .status
            .success()
    );
    let out = imec(&[
        "encode",
        "--channel",
        channel,
        "--key",
        p(&key),
        "--message",
        p(&msg),
        "--out",
        p(&stego),
        "--text",
        p(&text),
        "--block-bits",
        block_bits,
        "--seed",
        "9",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = imec(&[
        "decode",
        "--key",
        p(&key),
        "--stegotext",
        p(&stego),
        "--out",
        p(&back),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(fs::read(&back).unwrap(), b"attack@dawn");

    let file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&stego).unwrap()).unwrap();
    for field in ["channel", "block_bits", "threshold", "n_blocks", "tokens"] {
        assert!(file.get(field).is_some(), "missing {field}");
    }

    // nothing secret leaks into the public artifacts
    let key_hex = fs::read_to_string(&key).unwrap();
    for artifact in [&stego, &text] {
        let body = fs::read_to_string(artifact).unwrap();
        assert!(!body.contains(key_hex.trim()));
        assert!(!body.contains("attack@dawn"));
    }
}

#[test]
fn encode_decode_round_trip_uniform() {
    round_trip("uniform:40", "10");
}

#[test]
fn encode_decode_round_trip_markov() {
    round_trip(&format!("markov:2:{}", corpus()), "8");
}

#[test]
fn encode_is_idempotent_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.hex");
    let msg = dir.path().join("msg.bin");
    fs::write(&msg, b"0123456789").unwrap();
    imec(&["keygen", "--seed", "2", "--out", p(&key)]);
    let outs: Vec<String> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("s{i}.json"));
            let o = imec(&[
                "encode",
                "--channel",
                "uniform:40",
                "--key",
                p(&key),
                "--message",
                p(&msg),
                "--out",
                p(&path),
                "--seed",
                "5",
            ]);
            assert!(o.status.success());
            fs::read_to_string(path).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(imec(&[]).status.code(), Some(1));
    assert_eq!(
        imec(&["encode", "--channel", "bogus:1"]).status.code(),
        Some(1)
    );
    assert_eq!(imec(&["keygen", "--bits", "12"]).status.code(), Some(1));
    let out = imec(&["audit", "--channel", "uniform:40", "--block-bits", "21"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(imec(&["--help"]).status.code(), Some(0));
}

#[test]
fn message_length_must_match_key() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.hex");
    let msg = dir.path().join("msg.bin");
    fs::write(&msg, b"short").unwrap();
    imec(&["keygen", "--seed", "2", "--out", p(&key)]);
    let out = imec(&[
        "encode",
        "--channel",
        "uniform:40",
        "--key",
        p(&key),
        "--message",
        p(&msg),
        "--out",
        p(&dir.path().join("s.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn codec_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.hex");
    let msg = dir.path().join("msg.bin");
    let stego = dir.path().join("s.json");
    fs::write(&msg, b"0123456789").unwrap();
    imec(&["keygen", "--seed", "2", "--out", p(&key)]);
    assert!(imec(&[
        "encode",
        "--channel",
        "uniform:40",
        "--key",
        p(&key),
        "--message",
        p(&msg),
        "--out",
        p(&stego),
        "--seed",
        "1"
    ])
    .status
    .success());

    let mut file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&stego).unwrap()).unwrap();
    file["tokens"] = serde_json::json!([1, 2]);
    fs::write(&stego, file.to_string()).unwrap();
    let out = imec(&["decode", "--key", p(&key), "--stegotext", p(&stego)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient-tokens"));

    let fixture = dir.path().join("point.json");
    fs::write(&fixture, r#"{"steps":[{"ids":[0],"probs":[1.0]}]}"#).unwrap();
    let channel = format!("scripted:{}", p(&fixture));
    let out = imec(&[
        "encode",
        "--channel",
        &channel,
        "--key",
        p(&key),
        "--message",
        p(&msg),
        "--out",
        p(&stego),
        "--max-tokens",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_reports_secure_audit_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("trials.jsonl");
    let csv = dir.path().join("sweep.csv");
    let summary = dir.path().join("summary.json");
    let out = imec(&[
        "bench",
        "--channel",
        "uniform:40",
        "--trials",
        "40",
        "--block-bits",
        "10",
        "--seed",
        "3",
        "--sweep",
        "1.0,0.1",
        "--speed",
        "--jsonl",
        p(&jsonl),
        "--csv",
        p(&csv),
        "--out",
        p(&summary),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["kl"]["max_kl"].as_f64().unwrap() <= 1e-9);
    assert_eq!(s["kl"]["secure"], true);
    assert!(s["summary"]["efficiency"]["mean"].as_f64().unwrap() <= 1.0);
    assert_eq!(s["sweep"].as_array().unwrap().len(), 2);
    assert!(s["speed"]["median_coupling_step_seconds"].as_f64().unwrap() > 0.0);
    assert_eq!(fs::read_to_string(&jsonl).unwrap().lines().count(), 40);
    let csv = fs::read_to_string(&csv).unwrap();
    assert!(csv.starts_with("threshold,error_rate,ci\n"));
    assert_eq!(csv.lines().count(), 3);

    // trial records carry no keys or plaintexts
    let line: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&jsonl).unwrap().lines().next().unwrap()).unwrap();
    let fields: Vec<&str> = line
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    assert!(fields
        .iter()
        .all(|f| !f.contains("key") && !f.contains("message_bits_value") && *f != "message"));
}

#[test]
fn audit_subcommand() {
    let out = imec(&[
        "audit",
        "--channel",
        "uniform:16",
        "--trials",
        "10",
        "--bits",
        "24",
        "--block-bits",
        "8",
    ]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["trials"], 10);
    assert_eq!(r["secure"], true);
}
