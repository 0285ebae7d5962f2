mod common;

use std::fs;

use common::*;
use serde_json::{json, Value};

fn measure(fx: &Fixture, out: &str, extra: &[&str]) -> std::process::Output {
    let out_dir = fx.out(out);
    let mut args = vec![
        "measure",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
        "--iterations",
        "200",
        "--out-dir",
        s(&out_dir),
    ];
    args.extend_from_slice(extra);
    cci(&args)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(cci(&["--help"]).status.code(), Some(0));
    assert_eq!(cci(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one_with_json() {
    let out = cci(&["measure", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "input");
    assert_eq!(err["error"]["exit_code"], 1);
}

#[test]
fn missing_input_exits_one() {
    let fx = Fixture::new(4, &[]);
    let out = cci(&["ingest", "validate", s(&fx.path("nope.jsonl")), "--out-dir", s(&fx.out("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("nope.jsonl"), "{msg}");
    assert_eq!(fs::read_dir(fx.path("o")).unwrap().count(), 0);
}

#[test]
fn ingest_validate_reports_incomplete_groups() {
    let fx = Fixture::new(6, &[]);
    let text = fs::read_to_string(&fx.dataset).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"s0003-fa\"")).collect();
    fs::write(&fx.dataset, kept.join("\n") + "\n").unwrap();
    let out_dir = fx.out("o");
    let out = cci(&["ingest", "validate", s(&fx.dataset), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("ingest_report.json"));
    assert_eq!(report["groups"], 6);
    assert_eq!(report["incomplete_groups"][0]["parallel_group_id"], "g0003");
    assert_eq!(report["incomplete_groups"][0]["missing_languages"], json!(["fa"]));
    let manifest = read_json(&out_dir.join("ingest-validate.manifest.json"));
    assert_eq!(manifest["outputs"][0]["path"], "ingest_report.json");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn measure_outputs_are_byte_identical_across_runs() {
    let fx = Fixture::new(30, &[]);
    for out in ["a", "b"] {
        let o = measure(&fx, out, &["--seed", "7"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["measure.json", "measure.tsv", "measure_aggregate.tsv"] {
        let a = fs::read(fx.path("a").join(name)).unwrap();
        let b = fs::read(fx.path("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let ma = read_json(&fx.path("a").join("measure.manifest.json"));
    let mb = read_json(&fx.path("b").join("measure.manifest.json"));
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
    assert_eq!(ma["seed"], 7);

    let m = read_json(&fx.path("a").join("measure.json"));
    assert_eq!(m["method"], "fixture-run");
    let slice = &m["groups"][0]["slices"][0];
    assert_eq!(slice["persona"], "none");
    assert!(slice["bootstrap"]["variance"].as_f64().unwrap() > 0.0);
    let soft = slice["report"]["soft"].as_f64().unwrap();
    assert!(soft > 0.3 && soft < 1.0, "{soft}");
}

#[test]
fn seed_changes_only_the_bootstrap() {
    let fx = Fixture::new(30, &[]);
    assert!(measure(&fx, "a", &["--seed", "7"]).status.success());
    assert!(measure(&fx, "b", &["--seed", "8"]).status.success());
    let a = read_json(&fx.path("a").join("measure.json"));
    let b = read_json(&fx.path("b").join("measure.json"));
    let (sa, sb) = (&a["groups"][0]["slices"][0], &b["groups"][0]["slices"][0]);
    assert_eq!(sa["report"], sb["report"]);
    assert_ne!(sa["bootstrap"], sb["bootstrap"]);
}

#[test]
fn groups_by_personas_aggregate() {
    let fx = Fixture::new(24, &COUNTRIES);
    let config = fx.path("config.json");
    fs::write(
        &config,
        json!({
            "language_groups": {
                "All": LANGS,
                "HigherResource": ["en", "es", "zh", "ar"],
                "LowerResource": ["id", "ko", "el", "fa"],
            },
            "bootstrap_iterations": 100,
        })
        .to_string(),
    )
    .unwrap();
    let out_dir = fx.out("o");
    let o = cci(&[
        "measure",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
        "--config",
        s(&config),
        "--method",
        "baseline",
        "--renormalize-valid",
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out_dir.join("measure.json"));
    assert_eq!(m["method"], "baseline");
    assert_eq!(m["bootstrap_iterations"], 100);
    let groups = m["groups"].as_array().unwrap();
    let names: Vec<&str> = groups.iter().map(|g| g["group"].as_str().unwrap()).collect();
    assert_eq!(names, ["All", "HigherResource", "LowerResource"]);
    for g in groups {
        let slices = g["slices"].as_array().unwrap();
        assert_eq!(slices.len(), 8);
        let personas: Vec<&str> = slices.iter().map(|s| s["persona"].as_str().unwrap()).collect();
        let mut sorted = personas.clone();
        sorted.sort();
        assert_eq!(personas, sorted);
        assert!(slices.iter().all(|s| s.get("kappa_valid_renormalized").is_some()));

        let softs: Vec<f64> = slices.iter().map(|s| s["report"]["soft"].as_f64().unwrap()).collect();
        let agg = &g["aggregate"]["soft"];
        let min = softs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = softs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = softs.iter().sum::<f64>() / 8.0;
        assert_eq!(agg["min"].as_f64().unwrap(), min);
        assert_eq!(agg["max"].as_f64().unwrap(), max);
        assert!((agg["avg"].as_f64().unwrap() - avg).abs() < 1e-12);
        assert_eq!(agg["total"], 8);
        assert!(g["aggregate"]["kappa_valid_renormalized"].is_object());
    }
    let tsv = fs::read_to_string(out_dir.join("measure.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 3 * 8);
    let agg = fs::read_to_string(out_dir.join("measure_aggregate.tsv")).unwrap();
    assert!(agg.lines().any(|l| l.starts_with("baseline\tLowerResource\tkappa_s\t")));
}

#[test]
fn unknown_config_field_is_an_input_error() {
    let fx = Fixture::new(4, &[]);
    let config = fx.path("config.json");
    fs::write(&config, r#"{"langauges": ["en"]}"#).unwrap();
    let o = measure(&fx, "o", &["--config", s(&config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("langauges"));
}

#[test]
fn report_merges_runs_and_checks_digests() {
    let fx = Fixture::new(20, &["US", "MX"]);
    assert!(measure(&fx, "a", &["--method", "base"]).status.success());
    assert!(measure(&fx, "b", &["--method", "tuned", "--missing-policy", "drop"]).status.success());
    let ma = fx.path("a").join("measure.manifest.json");
    let mb = fx.path("b").join("measure.manifest.json");
    let out_dir = fx.out("r");
    let o = cci(&["report", s(&ma), s(&mb), "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out_dir.join("report.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let methods: Vec<&str> = rows.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["base", "base", "tuned", "tuned"]);
    assert_eq!(report["artifacts"].as_array().unwrap().len(), 2);
    let text = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(text.contains("tuned"));

    let tsv = fx.path("b").join("measure.tsv");
    let mut bytes = fs::read(&tsv).unwrap();
    bytes.push(b'\n');
    fs::write(&tsv, bytes).unwrap();
    let stale_dir = fx.out("stale");
    let o = cci(&["report", s(&ma), s(&mb), "--out-dir", s(&stale_dir)]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("measure.tsv"), "{msg}");
    assert_eq!(fs::read_dir(&stale_dir).unwrap().count(), 0);

    fs::remove_file(&tsv).unwrap();
    let o = cci(&["report", s(&mb), "--out-dir", s(&stale_dir)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("measure.tsv"));
}

#[test]
fn empty_report_succeeds() {
    let fx = Fixture::new(2, &[]);
    let out_dir = fx.out("r");
    let o = cci(&["report", "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(0));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["rows"], json!([]));
    assert_eq!(report["artifacts"], json!([]));
}

#[test]
fn failed_commit_leaves_no_partial_outputs() {
    let fx = Fixture::new(10, &[]);
    let out_dir = fx.out("o");
    // A directory in the way of the last output makes its rename fail.
    fs::create_dir(out_dir.join("measure.json")).unwrap();
    let o = measure(&fx, "o", &[]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr_json(&o)["error"].is_object());
    let left: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(left, ["measure.json"]);
}

fn mine(fx: &Fixture, out: &str, extra: &[&str]) -> std::process::Output {
    let out_dir = fx.out(out);
    let mut args = vec![
        "mine",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
        "--seed",
        "3",
        "--out-dir",
        s(&out_dir),
    ];
    args.extend_from_slice(extra);
    cci(&args)
}

#[test]
fn mine_is_deterministic_and_accounts_for_orphans() {
    let fx = Fixture::new(60, &[]);
    assert!(mine(&fx, "a", &[]).status.success());
    assert!(mine(&fx, "b", &[]).status.success());
    let a = fs::read(fx.path("a").join("batches.jsonl")).unwrap();
    let b = fs::read(fx.path("b").join("batches.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());

    let report = read_json(&fx.path("a").join("mine_report.json"));
    assert_eq!(report["persona"], "none");
    assert_eq!(report["report"]["groups"], 60);
    let batches: Vec<Value> = String::from_utf8(a)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(report["report"]["batches"], batches.len());
    let orphans = read_json(&fx.path("a").join("orphans.json"));
    assert!(orphans["orphans"].is_array());
    assert!(orphans["skipped"].is_array());

    let nested = mine(&fx, "c", &["--out", "pairs/train.jsonl", "--balance", "per-group"]);
    assert!(nested.status.success(), "{}", String::from_utf8_lossy(&nested.stderr));
    assert!(fx.path("c").join("pairs/train.jsonl").is_file());
    let manifest = read_json(&fx.path("c").join("mine.manifest.json"));
    let paths: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["path"].as_str().unwrap())
        .collect();
    assert!(paths.contains(&"pairs/train.jsonl"), "{paths:?}");
}

#[test]
fn mine_needs_a_persona_for_multi_persona_logs() {
    let fx = Fixture::new(20, &["US", "KR"]);
    let o = mine(&fx, "a", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["error"]["message"].as_str().unwrap().contains("--persona"));
    let o = mine(&fx, "b", &["--persona", "KR"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&fx.path("b").join("mine_report.json"))["persona"], "KR");
    assert_eq!(mine(&fx, "c", &["--persona", "FR"]).status.code(), Some(1));
}

#[test]
fn split_and_parse() {
    let fx = Fixture::new(40, &[]);
    let out_dir = fx.out("o");
    let o = cci(&["split", "--dataset", s(&fx.dataset), "--seed", "1", "--out-dir", s(&out_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let split = read_json(&out_dir.join("split.json"));
    assert_eq!(split["assignment"].as_object().unwrap().len(), 20);
    let bad = cci(&["split", "--dataset", s(&fx.dataset), "--ratios", "0.5,0.5", "--out-dir", s(&out_dir)]);
    assert_eq!(bad.status.code(), Some(1));

    let o = cci(&[
        "parse",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
        "--out-dir",
        s(&out_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let verdicts = fs::read_to_string(out_dir.join("verdicts.jsonl")).unwrap();
    assert_eq!(verdicts.lines().count(), 40 * 8);
    let report = read_json(&out_dir.join("parse_report.json"));
    assert_eq!(report["metadata"]["run_tag"], "fixture-run");
    let en = &report["personas"][0]["accounting"]["en"];
    let total = en["valid"].as_u64().unwrap() + en["invalid"].as_u64().unwrap() + en["missing"].as_u64().unwrap();
    assert_eq!(total, 40);
}

#[test]
fn analyze_order_needs_a_full_ranking() {
    let fx = Fixture::new(20, &[]);
    let base = [
        "analyze-order",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
    ];
    let out_dir = fx.out("o");
    let mut args = base.to_vec();
    args.extend_from_slice(&["--out-dir", s(&out_dir)]);
    let o = cci(&args);
    assert_eq!(o.status.code(), Some(1));

    let config = fx.path("config.json");
    let shares: serde_json::Map<String, Value> = LANGS
        .iter()
        .enumerate()
        .map(|(i, l)| (l.to_string(), json!(50.0 / (i + 1) as f64)))
        .collect();
    fs::write(&config, json!({ "resource_ranking": shares }).to_string()).unwrap();
    let mut args = base.to_vec();
    args.extend_from_slice(&["--config", s(&config), "--direction", "low2high", "--out-dir", s(&out_dir)]);
    let o = cci(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = read_json(&out_dir.join("order_curve.json"));
    let points = curve["personas"][0]["curve"].as_array().unwrap();
    assert_eq!(points.len(), 7);
    assert_eq!(points[0]["pool_size"], 2);
    assert_eq!(points[0]["languages"], json!(["fa", "el"]));
}

#[test]
fn audit_with_gold_and_comparison() {
    let fx = Fixture::new(16, &["US", "CN"]);
    let gold = fx.path("gold.jsonl");
    write_lines(
        &gold,
        (0..16).flat_map(|g| {
            LANGS.iter().map(move |l| {
                json!({"sample_id": format!("s{g:04}-{l}"), "key": "A", "country": COUNTRIES[g % 8]})
            })
        }),
    );
    let other = fx.path("other.jsonl");
    write_responses(&other, 16, &["CN", "US"], "other");
    let out_dir = fx.out("o");
    let o = cci(&[
        "audit",
        "--dataset",
        s(&fx.dataset),
        "--responses",
        s(&fx.responses),
        "--personas",
        "--gold",
        s(&gold),
        "--compare",
        s(&other),
        "--out-dir",
        s(&out_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let audit = read_json(&out_dir.join("audit.json"));
    assert_eq!(audit["selection_rates"].as_array().unwrap().len(), 2);
    assert!(audit["persona_accuracy"].is_object());
    assert!(audit["knowledge"]["overall"]["total"].as_u64().unwrap() > 0);
    assert_eq!(audit["comparison"].as_array().unwrap().len(), 2);
    let manifest = read_json(&out_dir.join("audit.manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
}

#[test]
fn analyze_layers_and_steering() {
    let fx = Fixture::new(8, &[]);
    let dump = fx.path("dump.jsonl");
    let depth = 6;
    let header = json!({"model": "toy", "depth": depth, "format": "logit-lens"});
    let rows = (0..8).flat_map(|g| {
        LANGS.iter().enumerate().flat_map(move |(i, lang)| {
            (0..depth).map(move |layer| {
                // Late layers drift towards the option whose country is
                // the language's own.
                let native = (i + 8 - g % 8) % 8;
                let key = if layer >= 3 && native < 4 { native } else { g % 4 };
                json!({
                    "sample_id": format!("s{g:04}-{lang}"),
                    "language": lang,
                    "layer": layer,
                    "predicted_key": ((b'A' + key as u8) as char).to_string(),
                })
            })
        })
    });
    write_lines(&dump, std::iter::once(header).chain(rows));
    let out_dir = fx.out("o");
    let o = cci(&[
        "analyze-layers",
        "--dataset",
        s(&fx.dataset),
        "--dump",
        s(&dump),
        "--out-dir",
        s(&out_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let layers = read_json(&out_dir.join("layers.json"));
    assert_eq!(layers["depth"], depth);
    assert_eq!(layers["stereotype_frequency"].as_array().unwrap().len(), 8 * depth);
    assert_eq!(layers["kappa"].as_array().unwrap().len(), depth);
    for name in ["layers_frequency.tsv", "layers_slopes.tsv", "layers_kappa.tsv"] {
        assert!(out_dir.join(name).is_file(), "{name}");
    }

    let with = fx.path("with.jsonl");
    let without = fx.path("without.jsonl");
    let acts = |variant: &'static str, shift: f64| {
        (0..3).flat_map(move |p| {
            (0..2).map(move |layer| {
                json!({
                    "prompt_id": format!("p{p}"),
                    "variant": variant,
                    "layer": layer,
                    "activation": [shift + p as f64, layer as f64, 0.5],
                })
            })
        })
    };
    write_lines(&with, acts("with", 1.0));
    write_lines(&without, acts("without", 0.0));
    let o = cci(&["steering", "--with", s(&with), "--without", s(&without), "--out-dir", s(&out_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let steer = read_json(&out_dir.join("steering.json"));
    assert_eq!(steer["dimension"], 3);
    assert_eq!(steer["layers"]["0"], json!([1.0, 0.0, 0.0]));

    let o = cci(&["steering", "--with", s(&without), "--without", s(&with), "--out-dir", s(&out_dir)]);
    assert_eq!(o.status.code(), Some(1));
}
