use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use langshift::embedstore::load_dump;
use langshift::langrep::{compute_language_mean, LanguageMean};
use langshift::report::run_synthetic_pipeline;
use langshift::synthlab::SynthConfig;
use serde_json::Value;
use tempfile::TempDir;

fn langshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langshift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = langshift(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    String::from_utf8(o.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        dim: 16,
        n_pairs: 60,
        ..SynthConfig::reference(seed)
    }
}

/// Runs `synth` into a fresh directory and returns it.
fn synth(cfg: &SynthConfig) -> TempDir {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(cfg).unwrap()).unwrap();
    ok(&["synth", "--config", cfg_path.to_str().unwrap(), "--out", &p(dir.path(), "out")]);
    dir
}

fn mean_files(dir: &Path) {
    let out = dir.join("out");
    for lang in ["en", "de"] {
        ok(&[
            "mean",
            "--dump",
            &p(&out, &format!("{lang}.sample.l8.embd")),
            "--language",
            lang,
            "--out",
            &p(&out, &format!("{lang}.l8.mean")),
        ]);
    }
}

fn retrieve_config(dir: &Path, methods: &str) -> String {
    let cfg = format!(
        r#"{{"queries":"en.l8.embd","candidates":"de.l8.embd","gold":"gold.tsv",
            "source":"en","target":"de",
            "means":{{"en":{{"file":"en.l8.mean"}},"de":{{"file":"de.l8.mean"}}}},
            "methods":{methods},"metrics":["tatoeba","bucc"],"alpha":1.0}}"#
    );
    let path = dir.join("out").join("retrieve.json");
    fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_dump_exits_1_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let missing = p(dir.path(), "nope.embd");
    let o = langshift(&["mean", "--dump", &missing, "--language", "en", "--out", &p(dir.path(), "m")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
}

#[test]
fn malformed_config_exits_2_with_schema_message() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"dim": 4, "n_pairs": 2, "colour": "blue"}"#).unwrap();
    let o = langshift(&["synth", "--config", cfg.to_str().unwrap(), "--out", &p(dir.path(), "o")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid config"), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    fs::write(&cfg, serde_json::to_string(&SynthConfig { n_pairs: 0, ..small_config(1) }).unwrap()).unwrap();
    let o = langshift(&["sensitivity", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(langshift(&["sweep", "--alphas", "0:1:0.3"]).status.code(), Some(2));
    assert_eq!(langshift(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(langshift(&["--format", "csv", "validate", "--dump", "x"]).status.code(), Some(2));
}

#[test]
fn mean_file_round_trips_bit_exactly() {
    let dir = synth(&small_config(2));
    mean_files(dir.path());
    let out = dir.path().join("out");
    let ds = load_dump(&out.join("en.sample.l8.embd")).unwrap();
    let m = compute_language_mean(&ds, "en").unwrap();
    assert_eq!(LanguageMean::read(&out.join("en.l8.mean")).unwrap(), m);
}

#[test]
fn synth_mean_retrieve_matches_the_library_pipeline() {
    let cfg = small_config(42);
    let dir = synth(&cfg);
    mean_files(dir.path());
    let rcfg = retrieve_config(dir.path(), r#"["original","zero_mean","mds"]"#);
    let report: Value = serde_json::from_str(&ok(&["retrieve", "--config", &rcfg])).unwrap();
    let lib = run_synthetic_pipeline(&cfg).unwrap();
    assert_eq!(report["body"]["retrieval"], serde_json::to_value(&lib.retrieval).unwrap());
    assert_eq!(report["body"]["config"]["source"], "en");
    assert!(report["header"]["created_unix"].is_u64());

    let again: Value = serde_json::from_str(&ok(&["retrieve", "--config", &rcfg])).unwrap();
    assert_eq!(again["body"], report["body"]);

    let csv = ok(&["--format", "csv", "retrieve", "--config", &rcfg]);
    assert_eq!(csv.lines().next(), Some("metric,src,tgt,method,layer,score"));
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
}

#[test]
fn zero_offsets_give_identical_original_and_mds_rows() {
    let cfg = SynthConfig {
        offsets: langshift::synthlab::OffsetSpec::Random { norms: [0.0, 0.0] },
        ..small_config(5)
    };
    let dir = synth(&cfg);
    mean_files(dir.path());
    let rcfg = retrieve_config(dir.path(), r#"["original","mds"]"#);
    let report: Value = serde_json::from_str(&ok(&["retrieve", "--config", &rcfg])).unwrap();
    let rows = report["body"]["retrieval"]["rows"].as_array().unwrap();
    let score = |method: &str, metric: &str| {
        rows.iter()
            .find(|r| r["method"] == method && r["metric"] == metric)
            .unwrap()["score"]
            .clone()
    };
    // Means are estimated, so MDS moves queries by the small difference of
    // two sample means; with both offsets zero that is noise only.
    let orig = score("original", "tatoeba_accuracy").as_f64().unwrap();
    let mds = score("mds", "tatoeba_accuracy").as_f64().unwrap();
    assert!((orig - mds).abs() <= 0.05, "{orig} vs {mds}");

    // With the true means written as the mean files the shift is exactly zero.
    let out = dir.path().join("out");
    for lang in ["en", "de"] {
        fs::copy(out.join(format!("{lang}.l8.true.mean")), out.join(format!("{lang}.l8.mean"))).unwrap();
    }
    let report: Value = serde_json::from_str(&ok(&["retrieve", "--config", &rcfg])).unwrap();
    let rows = report["body"]["retrieval"]["rows"].as_array().unwrap();
    let by_method = |m: &str| -> Vec<Value> {
        rows.iter()
            .filter(|r| r["method"] == m)
            .map(|r| r["score"].clone())
            .collect()
    };
    assert_eq!(by_method("original"), by_method("mds"));
}

#[test]
fn one_point_sweep_equals_translate_eval() {
    let dir = synth(&small_config(7));
    mean_files(dir.path());
    let out = dir.path().join("out");
    // `{layer}` is filled in by sweep; translate-eval gets layer 8 directly.
    let args = |layer: &str| -> Vec<String> {
        let f = |name: &str| p(&out, &name.replace("{layer}", layer));
        vec![
            "--src".into(), "en".into(), "--tgt".into(), "de".into(),
            "--dump".into(), f("en.l{layer}.embd"),
            "--table".into(), f("joint.l{layer}.table"),
            "--mean".into(), f("en.l{layer}.mean"),
            "--mean".into(), f("de.l{layer}.mean"),
            "--refs".into(), f("refs.de.txt"),
            "--src-vocab".into(), f("en.vocab.tsv"),
            "--tgt-vocab".into(), f("de.vocab.tsv"),
        ]
    };
    let run = |head: &[&str], tail: Vec<String>| {
        let mut v: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        v.extend(tail);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let tr = run(&["--format", "csv", "translate-eval", "--alpha", "2", "--layer", "8"], args("8"));
    let sw = run(&["sweep", "--alphas", "2:2:1", "--layers", "8"], args("{layer}"));
    assert_eq!(tr, sw);
    assert!(tr.starts_with("src,tgt,alpha,layer,bleu1,conversion_rate,n_tokens\n"));
    assert_eq!(tr.lines().count(), 2);

    let json: Value = serde_json::from_str(&run(&["translate-eval", "--alpha", "2", "--layer", "8"], args("8"))).unwrap();
    assert_eq!(json["body"]["bleu_level"], "corpus");
    assert_eq!(json["body"]["reports"][0]["alpha"], 2.0);

    let grid = run(&["sweep", "--alphas", "0:3:0.5", "--layers", "8"], args("{layer}"));
    assert_eq!(grid.lines().count(), 8);
}

#[test]
fn validate_accepts_synth_outputs_and_rejects_corruption() {
    let dir = synth(&small_config(9));
    mean_files(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "validate",
        "--dump", &p(&out, "en.l8.embd"),
        "--table", &p(&out, "joint.l8.table"),
        "--mean", &p(&out, "en.l8.mean"),
        "--vocab", &p(&out, "de.vocab.tsv"),
    ]);
    let dump = out.join("de.l8.embd");
    let mut bytes = fs::read(&dump).unwrap();
    bytes[40] ^= 0x10;
    fs::write(&dump, bytes).unwrap();
    let o = langshift(&["validate", "--dump", dump.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("de.l8.embd"), "{}", stderr(&o));
}

#[test]
fn shift_writes_a_loadable_dump() {
    let dir = synth(&small_config(3));
    mean_files(dir.path());
    let out = dir.path().join("out");
    ok(&[
        "shift",
        "--dump", &p(&out, "en.l8.embd"),
        "--mean", &p(&out, "en.l8.mean"),
        "--mean", &p(&out, "de.l8.mean"),
        "--method", "mds", "--src", "en", "--tgt", "de", "--alpha", "1",
        "--out", &p(&out, "en2de.l8.embd"),
    ]);
    let shifted = load_dump(&out.join("en2de.l8.embd")).unwrap();
    let original = load_dump(&out.join("en.l8.embd")).unwrap();
    assert_eq!(shifted.token_count(), original.token_count());
    assert_ne!(shifted, original);
    let o = langshift(&["shift", "--dump", &p(&out, "en.l8.embd"), "--mean", &p(&out, "en.l8.mean"),
        "--method", "mds", "--out", &p(&out, "x")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sensitivity_reports_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::to_string(&small_config(0)).unwrap()).unwrap();
    let c = cfg.to_str().unwrap();
    let pairs = p(dir.path(), "pairs.csv");
    let a: Value = serde_json::from_str(&ok(&["--threads", "2", "sensitivity", "--config", c, "--seeds", "3", "--pairs-out", &pairs])).unwrap();
    let b: Value = serde_json::from_str(&ok(&["sensitivity", "--config", c, "--seeds", "3"])).unwrap();
    assert_eq!(a["body"], b["body"]);
    assert_eq!(a["body"]["seeds"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(pairs).unwrap().lines().count(), 61);
    let seeded: Value = serde_json::from_str(&ok(&["--seed", "77", "sensitivity", "--config", c, "--seeds", "1"])).unwrap();
    assert_eq!(seeded["body"]["config"]["seed"], 77);
}
