//! Test helpers shared by integration targets.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// How the mock external judge answers.
#[derive(Debug, Clone, Copy)]
pub enum JudgeBehaviour {
    /// Candidates in reverse index order.
    Reverse,
    /// Identity order, agreeing with any judge whose top-1 is candidate 0.
    Identity,
    /// An order with a repeated index.
    Duplicate,
    /// HTTP 503.
    Unavailable,
}

/// Minimal HTTP/1.1 judge on a real localhost port. Returns the endpoint URL
/// and a counter of handled requests.
pub fn spawn_judge(behaviour: JudgeBehaviour) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/rank", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            counter.fetch_add(1, Ordering::SeqCst);
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let k = req["candidates"].as_array().map_or(0, Vec::len);
            assert!(req["criterion_text"].as_str().is_some_and(|s| !s.is_empty()));
            let (status, payload) = match behaviour {
                JudgeBehaviour::Reverse => ("200 OK", serde_json::json!({"order": (0..k).rev().collect::<Vec<_>>()})),
                JudgeBehaviour::Identity => ("200 OK", serde_json::json!({"order": (0..k).collect::<Vec<_>>()})),
                JudgeBehaviour::Duplicate => ("200 OK", serde_json::json!({"order": vec![0; k]})),
                JudgeBehaviour::Unavailable => ("503 Service Unavailable", serde_json::json!({})),
            };
            let text = payload.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    (url, hits)
}
