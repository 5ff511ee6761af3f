#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

pub const SENTINEL_KEY: &str = "sk-live-SENTINEL-5f1d2c3b4a";

/// Question block in plain mode, answer block collaborating on the question
/// and the highlighted passages.
pub fn two_block_project(name: &str) -> Value {
    json!({
        "name": name,
        "description": "Frage-Antwort-Annotation auf einem deutschen Korpus",
        "tags": ["qa", "de"],
        "input_schema": {
            "role": "input",
            "fields": [
                {"name": "document_id", "kind": "string", "required": true},
                {"name": "subject_id", "kind": "string", "required": true},
                {"name": "text", "kind": "string", "required": true},
                {"name": "title", "kind": "string", "required": false}
            ]
        },
        "output_schema": {"role": "output", "fields": []},
        "levels": [
            {"level_id": "relevant", "label": "relevant", "color": "", "ordinal": 0},
            {"level_id": "context", "label": "context", "color": "", "ordinal": 1}
        ],
        "blocks": [
            {"block_id": "question", "name": "Question", "mode": "plain", "system_prompt": "", "input_sources": [], "display_order": 0},
            {
                "block_id": "answer",
                "name": "Answer",
                "mode": "collaborative",
                "system_prompt": "Beantworte die Frage nur anhand der markierten Passagen.",
                "input_sources": [
                    {"kind": "block_ref", "block_id": "question"},
                    {"kind": "highlights", "level_id": null}
                ],
                "display_order": 1
            }
        ]
    })
}

pub const TOPICS: [&str; 12] = [
    "Hochwasser", "Windkraft", "Schulreform", "Bahnstreik", "Museumsnacht", "Ärztemangel",
    "Radwege", "Wohnungsbau", "Stadtfest", "Brückensanierung", "Glasfaser", "Müllabfuhr",
];

pub fn doc_id(i: usize) -> String {
    format!("d{i:02}")
}

/// `n` documents, each about one topic and tagged with its own number.
pub fn synthetic_corpus(n: usize) -> Value {
    let docs: Vec<Value> = (1..=n)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            json!({
                "document_id": doc_id(i),
                "subject_id": format!("s{}", i % 4),
                "title": format!("Meldung {i}"),
                "text": format!(
                    "Meldung {i}: Im Bezirk {i} geht es um {topic}. Die Verwaltung prüft den Fall Nummer {i} bis Ende Mai. Bürger äußern sich über {topic}."
                ),
            })
        })
        .collect();
    Value::Array(docs)
}

/// Minimal OpenAI-compatible endpoint that always answers `content` and
/// counts requests.
pub struct StubLlm {
    pub base_url: String,
    pub hits: Arc<AtomicUsize>,
}

pub fn stub_llm(content: &'static str) -> StubLlm {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let payload = json!({"model": "stub", "choices": [{"message": {"content": content}}]}).to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
        }
    });
    StubLlm { base_url, hits }
}

/// Every file under `dir`, recursively, as lossy text.
pub fn read_tree(dir: &std::path::Path) -> Vec<(std::path::PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let text = String::from_utf8_lossy(&std::fs::read(&path).unwrap()).into_owned();
                out.push((path, text));
            }
        }
    }
    out
}

/// Removes `project_id` and timestamp keys everywhere in a JSON tree.
pub fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["project_id", "created_at", "updated_at", "at"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}
