mod common;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relsum::convert::ConversionScheme;
use relsum::corpus::{REInstance, Span, TemplateSet, TemplateStyle};
use relsum::inference::Extractor;
use relsum::scoring::{BackendSpec, CountingBackend, MockScorer, ProtocolClient, ScorerBackend};
use relsum::ScoreVectorF64;

use common::fixture;

const BIN: &str = env!("CARGO_BIN_EXE_relsum");

fn relsum(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn data() -> String {
    fixture("e2e.jsonl").to_str().unwrap().to_string()
}

fn predict_to(dir: &Path, name: &str, backend: &str, workers: &str, extra: &[&str]) -> Vec<u8> {
    let data = data();
    let out = dir.join(name);
    let mut args = vec![
        "predict",
        "--templates",
        "semantic1",
        "--backend",
        backend,
        "--in",
        &data,
        "--type-map",
        &data,
        "--workers",
        workers,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = relsum(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    fs::read(out).unwrap()
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let one = predict_to(
        dir.path(),
        "a.jsonl",
        "mock:42",
        "1",
        &["--threshold-override", "0.5"],
    );
    let four = predict_to(
        dir.path(),
        "b.jsonl",
        "mock:42",
        "4",
        &["--threshold-override", "0.5"],
    );
    assert_eq!(one, four);
    let other_seed = predict_to(
        dir.path(),
        "c.jsonl",
        "mock:43",
        "1",
        &["--threshold-override", "0.5"],
    );
    assert_ne!(one, other_seed);
}

#[test]
fn subprocess_backend_matches_in_process_mock() {
    let dir = tempfile::tempdir().unwrap();
    let local = predict_to(
        dir.path(),
        "a.jsonl",
        "mock:42",
        "2",
        &["--threshold-override", "0.5"],
    );
    let cmd = format!("cmd:{BIN} serve-mock --seed 42");
    let remote = predict_to(
        dir.path(),
        "b.jsonl",
        &cmd,
        "2",
        &["--threshold-override", "0.5"],
    );
    assert_eq!(local, remote);
}

#[test]
fn threshold_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let never_na = predict_to(
        dir.path(),
        "a.jsonl",
        "mock:1",
        "1",
        &["--threshold-override", "+inf"],
    );
    let always_na = predict_to(
        dir.path(),
        "b.jsonl",
        "mock:1",
        "1",
        &["--threshold-override", "-inf"],
    );
    let rows = |bytes: &[u8]| -> Vec<(String, usize)> {
        String::from_utf8_lossy(bytes)
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                (
                    v["relation"].as_str().unwrap().to_string(),
                    v["scores"].as_object().unwrap().len(),
                )
            })
            .collect()
    };
    // Type pairs only ever seen with NA leave NA as the sole candidate.
    let never = rows(&never_na);
    assert!(never.iter().all(|(r, n)| r != "no_relation" || *n == 1));
    assert!(never.iter().any(|(_, n)| *n == 1));
    assert!(rows(&always_na).iter().all(|(r, _)| r == "no_relation"));
}

#[test]
fn evaluate_reports() {
    let data = data();
    let o = relsum(&["evaluate", "--pred", &data, "--gold", &data]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["gold_positive"], 16);

    let dir = tempfile::tempdir().unwrap();
    let to_records = |field: &str| -> String {
        fs::read_to_string(fixture("semeval_directed.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                format!(
                    "{}\n",
                    serde_json::json!({"id": v["id"], "relation": v[field]})
                )
            })
            .collect()
    };
    let (p, g) = (dir.path().join("p.jsonl"), dir.path().join("g.jsonl"));
    fs::write(&p, to_records("pred")).unwrap();
    fs::write(&g, to_records("gold")).unwrap();
    let o = relsum(&[
        "evaluate",
        "--metric",
        "macro",
        "--pred",
        p.to_str().unwrap(),
        "--gold",
        g.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["f1"].as_f64().unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let data = data();
    let bad_templates = relsum(&[
        "predict",
        "--templates",
        "nope",
        "--backend",
        "mock",
        "--in",
        &data,
        "--threshold-override",
        "0",
    ]);
    assert_eq!(bad_templates.status.code(), Some(1));
    assert!(!bad_templates.stderr.is_empty());

    let dead_backend = relsum(&[
        "predict",
        "--templates",
        "semantic1",
        "--backend",
        "cmd:true",
        "--in",
        &data,
        "--threshold-override",
        "0",
    ]);
    assert_eq!(dead_backend.status.code(), Some(2));

    let refused = relsum(&["probe-backend", "--backend", "tcp:127.0.0.1:1"]);
    assert_eq!(refused.status.code(), Some(2));

    let raw_calibration = relsum(&[
        "calibrate",
        "--templates",
        "semantic1",
        "--backend",
        "mock",
        "--mode",
        "raw",
        "--dev",
        &data,
    ]);
    assert_eq!(raw_calibration.status.code(), Some(1));

    let ok = relsum(&[
        "probe-backend",
        "--backend",
        &format!("cmd:{BIN} serve-mock --seed 5"),
    ]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let hello: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(hello["next_ok"], true);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let cfg = dir.path().join("relsum.toml");
    fs::write(
        &cfg,
        format!("templates = \"semantic1\"\nbackend = \"mock:42\"\ntype_map = \"{data}\"\nthreshold-override = \"0.5\"\n"),
    )
    .unwrap();
    let from_cfg = relsum(&["--config", cfg.to_str().unwrap(), "predict", "--in", &data]);
    assert!(
        from_cfg.status.success(),
        "{}",
        String::from_utf8_lossy(&from_cfg.stderr)
    );
    let flags = predict_to(
        dir.path(),
        "p.jsonl",
        "mock:42",
        "1",
        &["--threshold-override", "0.5"],
    );
    assert_eq!(from_cfg.stdout, flags);
    let overridden = relsum(&[
        "--config",
        cfg.to_str().unwrap(),
        "predict",
        "--in",
        &data,
        "--backend",
        "mock:7",
    ]);
    assert_ne!(overridden.stdout, flags);
}

#[test]
fn convert_without_gold_omits_target() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    fs::write(
        &input,
        r#"{"id":"q","tokens":["The","cup","holds","tea","."],"subj_start":1,"subj_end":2,"obj_start":3,"obj_end":4}"#,
    )
    .unwrap();
    let o = relsum(&[
        "convert",
        "--templates",
        "semeval",
        "--scheme",
        "marker",
        "--in",
        input.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["source"], "The <e1> cup </e1> holds <e2> tea </e2> .");
    assert!(v.get("target").is_none());

    let typed = relsum(&[
        "convert",
        "--templates",
        "semeval",
        "--scheme",
        "typed_marker",
        "--in",
        input.to_str().unwrap(),
    ]);
    assert_eq!(typed.status.code(), Some(1));
}

#[test]
fn protocol_round_trips_match_in_process_mock() {
    let local = MockScorer::seeded(11);
    let remote = ProtocolClient::spawn(&format!("{BIN} serve-mock --seed 11")).unwrap();
    assert_eq!(remote.vocab_size(), local.vocab_size());
    assert_eq!(remote.eos_id(), local.eos_id());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let words = [
        "the", "founder", "of", "Acme", "is", "Bob", "born", "in", ".", "city",
    ];
    for _ in 0..100 {
        let n = rng.gen_range(1..12);
        let text: Vec<&str> = (0..n)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        let text = text.join(" ");
        let ids = remote.tokenize(&text).unwrap();
        assert_eq!(ids, local.tokenize(&text).unwrap());
        let cut = rng.gen_range(0..=ids.len());
        let mut cands: Vec<u32> = (0..rng.gen_range(1..6))
            .map(|_| rng.gen_range(0..local.vocab_size() as u32))
            .collect();
        cands.push(local.eos_id());
        let got = remote.next_token_probs(&text, &ids[..cut], &cands).unwrap();
        assert_eq!(
            got,
            local.next_token_probs(&text, &ids[..cut], &cands).unwrap()
        );
    }
}

#[test]
fn tcp_backend() {
    let mut child = Command::new(BIN)
        .args(["serve-mock", "--seed", "4", "--tcp", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    let spec: BackendSpec = format!("tcp:{addr}").parse().unwrap();
    let backend = spec.connect(0).unwrap();
    let local = MockScorer::seeded(4);
    let ids = backend.tokenize("a b c").unwrap();
    assert_eq!(
        backend.next_token_probs("a b c", &ids, &[2, 3]).unwrap(),
        local.next_token_probs("a b c", &ids, &[2, 3]).unwrap()
    );
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn unseen_type_pair_scores_every_relation() {
    let (ontology, templates) = TemplateSet::bundled(TemplateStyle::Semantic1).unwrap();
    let train = relsum::corpus::load_instances(
        fixture("e2e.jsonl"),
        relsum::corpus::DataFormat::UnifiedJsonl,
    )
    .unwrap();
    let map = relsum::corpus::build_type_constraint_map(&train, &ontology).unwrap();
    let inst = REInstance {
        id: "u".into(),
        tokens: "Zed met the Board in Oslo"
            .split(' ')
            .map(String::from)
            .collect(),
        subj_span: Span::new(0, 1),
        obj_span: Span::new(5, 6),
        subj_type: Some("RELIGION".into()),
        obj_type: Some("CRIMINAL_CHARGE".into()),
        gold_relation: None,
    };
    let backend = CountingBackend::new(MockScorer::seeded(2));
    let ex = Extractor::new(&ontology, &templates, ConversionScheme::Verbalize).with_type_map(&map);
    let scores: ScoreVectorF64 = ex.score(&backend, &inst).unwrap();
    assert_eq!(scores.len(), 42);
    assert_eq!(backend.tokenize_calls(), 42);

    let seen = REInstance {
        subj_type: Some("PERSON".into()),
        obj_type: Some("NUMBER".into()),
        ..inst
    };
    let scores: ScoreVectorF64 = ex.score(&backend, &seen).unwrap();
    let labels: Vec<&str> = scores.labels().collect();
    assert_eq!(labels, ["no_relation", "per:age"]);
}
