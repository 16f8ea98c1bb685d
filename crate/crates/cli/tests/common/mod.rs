// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

/// Deterministic vector for a text: `[len, byte sum, first byte]`.
pub fn stub_vector(text: &str) -> Vec<f64> {
    let bytes = text.as_bytes();
    vec![
        bytes.len() as f64,
        bytes.iter().map(|&b| b as f64).sum(),
        bytes.first().copied().unwrap_or(0) as f64,
    ]
}

pub struct Request {
    pub authorization: Option<String>,
    pub body: Value,
}

/// Minimal HTTP/1.1 embedding service. Answers the first `failures.len()`
/// requests with the listed statuses, then echoes [`stub_vector`] for every input.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Request>>>,
}

impl StubServer {
    pub fn start(failures: Vec<u16>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let status = failures.get(served).copied().unwrap_or(200);
                served += 1;
                let _ = handle(stream, status, &log);
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn handle(stream: TcpStream, status: u16, log: &Mutex<Vec<Request>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim().to_string();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.parse().unwrap_or(0),
                "authorization" => authorization = Some(value),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let reply = if status == 200 {
        let data: Vec<Value> = body["input"]
            .as_array()
            .map(|a| a.iter().map(|t| json!({ "embedding": stub_vector(t.as_str().unwrap_or("")) })).collect())
            .unwrap_or_default();
        json!({ "data": data }).to_string()
    } else {
        json!({ "error": "unavailable" }).to_string()
    };
    log.lock().unwrap().push(Request { authorization, body });
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    stream.flush()
}
