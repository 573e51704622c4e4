//! A scripted OpenAI-style endpoint on a local port, for evaluator tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub struct StubRequest {
    pub body: serde_json::Value,
    pub authorization: Option<String>,
    /// How many requests carried this prompt before this one.
    pub prior_for_prompt: usize,
}

impl StubRequest {
    pub fn prompt(&self) -> String {
        self.body["messages"][0]["content"][1]["text"]
            .as_str()
            .unwrap_or_default()
            .to_string()
    }
}

type Handler = dyn Fn(&StubRequest) -> (u16, String) + Send + Sync;

#[derive(Default)]
pub struct StubStats {
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub requests: AtomicUsize,
    pub per_prompt: Mutex<std::collections::HashMap<String, usize>>,
}

pub struct Stub {
    pub base_url: String,
    pub stats: Arc<StubStats>,
}

/// A chat-completions body whose message content is `text`.
pub fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})
        .to_string()
}

impl Stub {
    /// Serves until the process exits. `delay` is held while a request is
    /// counted as in flight, so overlapping requests are observable.
    pub fn start<F>(delay: Duration, handler: F) -> Stub
    where
        F: Fn(&StubRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let stats = Arc::new(StubStats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let s = stats.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                let Ok(conn) = conn else { continue };
                let (s, h) = (s.clone(), handler.clone());
                std::thread::spawn(move || serve(conn, &s, &*h, delay));
            }
        });
        Stub { base_url, stats }
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }
}

fn serve(conn: TcpStream, stats: &StubStats, handler: &Handler, delay: Duration) {
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0usize;
        let mut authorization = None;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).unwrap_or(0) == 0 {
                return;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (name, value) = h.split_once(':').unwrap_or((h, ""));
            match name.to_ascii_lowercase().as_str() {
                "content-length" => length = value.trim().parse().unwrap_or(0),
                "authorization" => authorization = Some(value.trim().to_string()),
                _ => {}
            }
        }
        let mut body = vec![0u8; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        stats.requests.fetch_add(1, Ordering::SeqCst);
        let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
        let mut req = StubRequest {
            body,
            authorization,
            prior_for_prompt: 0,
        };
        {
            let mut per = stats.per_prompt.lock().unwrap();
            let n = per.entry(req.prompt()).or_default();
            req.prior_for_prompt = *n;
            *n += 1;
        }
        std::thread::sleep(delay);
        let (status, payload) = handler(&req);
        stats.in_flight.fetch_sub(1, Ordering::SeqCst);
        let response = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{payload}",
            payload.len()
        );
        let mut w = &conn;
        if w.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}
