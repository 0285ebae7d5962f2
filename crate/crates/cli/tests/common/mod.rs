#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const LANGS: [&str; 8] = ["en", "es", "zh", "ar", "id", "ko", "el", "fa"];
pub const COUNTRIES: [&str; 8] = ["US", "MX", "CN", "DZ", "ID", "KR", "GR", "IR"];
const OPTIONS: usize = 4;

pub fn cci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cci"))
        .args(args)
        .output()
        .expect("spawn cci")
}

pub fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON error on stderr: {text}"));
    serde_json::from_str(line).expect("error JSON")
}

pub fn write_lines(path: &Path, values: impl IntoIterator<Item = Value>) {
    let mut text = String::new();
    for v in values {
        text.push_str(&v.to_string());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn sample_id(g: usize, lang: &str) -> String {
    format!("s{g:04}-{lang}")
}

/// Parallel dataset over the eight default languages, four options per
/// question, two groups per supersample.
pub fn write_dataset(path: &Path, groups: usize) {
    let rows = (0..groups).flat_map(|g| {
        LANGS.iter().map(move |lang| {
            let options: Vec<Value> = (0..OPTIONS)
                .map(|k| {
                    json!({
                        "key": ((b'A' + k as u8) as char).to_string(),
                        "text": format!("[{lang}] option {g}/{k}"),
                        "country": COUNTRIES[(g + k) % 8],
                    })
                })
                .collect();
            json!({
                "sample_id": sample_id(g, lang),
                "supersample_id": format!("ss{:04}", g / 2),
                "parallel_group_id": format!("g{g:04}"),
                "language": lang,
                "question": format!("[{lang}] question {g}"),
                "options": options,
            })
        })
    });
    write_lines(path, rows);
}

/// Key chosen for group `g` in language `i` under persona index `p`.
/// Languages further down the list diverge from the latent key more often,
/// and a few cells are unparseable.
pub fn answer(g: usize, i: usize, p: usize) -> Option<char> {
    if (g * 13 + i * 5 + p * 3) % 23 == 0 {
        return None;
    }
    let latent = (g + p) % OPTIONS;
    let k = if (g * 7 + i * 3 + p) % 10 < i {
        (latent + 1 + (g + i) % (OPTIONS - 1)) % OPTIONS
    } else {
        latent
    };
    Some((b'A' + k as u8) as char)
}

/// Response log over [`write_dataset`] with one slice per persona; an
/// empty persona list gives a single persona-less slice.
pub fn write_responses(path: &Path, groups: usize, personas: &[&str], run_tag: &str) {
    let slices: Vec<Option<&str>> = if personas.is_empty() {
        vec![None]
    } else {
        personas.iter().map(|p| Some(*p)).collect()
    };
    let header = json!({"model": "fixture", "run_tag": run_tag});
    let rows = slices.into_iter().enumerate().flat_map(|(p, persona)| {
        (0..groups).flat_map(move |g| {
            LANGS.iter().enumerate().map(move |(i, lang)| {
                let raw = match answer(g, i, p) {
                    Some(key) if g % 2 == 0 => format!(r#"{{"answer_choice": "{key}"}}"#),
                    Some(key) => format!(" {key}\n"),
                    None => "I cannot choose.".to_string(),
                };
                let mut v = json!({
                    "sample_id": sample_id(g, lang),
                    "language": lang,
                    "raw_output": raw,
                });
                if let Some(c) = persona {
                    v["persona"] = json!(c);
                }
                v
            })
        })
    });
    write_lines(path, std::iter::once(header).chain(rows));
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub dataset: PathBuf,
    pub responses: PathBuf,
}

impl Fixture {
    pub fn new(groups: usize, personas: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let dataset = dir.path().join("dataset.jsonl");
        let responses = dir.path().join("responses.jsonl");
        write_dataset(&dataset, groups);
        write_responses(&responses, groups, personas, "fixture-run");
        Self {
            dir,
            dataset,
            responses,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        let p = self.path(name);
        fs::create_dir_all(&p).unwrap();
        p
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}
