//! A blocking one-request-per-connection HTTP stub for client tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use aen::rng::{fnv1a64, SplitMix64};
use serde_json::{json, Value};

pub struct Stub {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl Stub {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Serves `handler(hit, path, body) -> (status, body)` on a free local port.
pub fn serve<F>(handler: F) -> Stub
where
    F: Fn(usize, &str, &str) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0u8; length];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let hit = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(hit, &path, &String::from_utf8_lossy(&body));
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Stub { url, hits }
}

/// Deterministic per-token vectors, so equal words embed equally everywhere.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(fnv1a64(token.to_lowercase().as_bytes()));
    (0..dim).map(|_| rng.next_normal()).collect()
}

/// An embedding-service reply: whitespace tokens, padded to the longest text
/// with masked zero rows.
pub fn embed_reply(body: &str, dim: usize) -> String {
    let request: Value = serde_json::from_str(body).unwrap();
    let texts: Vec<&str> = request["texts"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    let longest = texts.iter().map(|t| t.split_whitespace().count()).max().unwrap_or(0).max(1);
    let mut embeddings = Vec::new();
    let mut masks = Vec::new();
    for text in texts {
        let mut rows: Vec<Vec<f64>> = text.split_whitespace().map(|w| token_vector(w, dim)).collect();
        let mut mask = vec![1u8; rows.len()];
        while rows.len() < longest {
            rows.push(vec![0.0; dim]);
            mask.push(0);
        }
        embeddings.push(rows);
        masks.push(mask);
    }
    json!({"dim": dim, "embeddings": embeddings, "masks": masks}).to_string()
}

pub fn embedding_service(dim: usize) -> Stub {
    serve(move |_, path, body| {
        if path == "/embed" {
            (200, embed_reply(body, dim))
        } else {
            (404, "{}".into())
        }
    })
}
