//! Shared helpers for the integration tests: a minimal HTTP/1.1 mock server
//! and an end-to-end pipeline runner rooted in a scratch directory.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use scope_core::eval::MetricsReport;
use scope_core::pipeline::{self, Overrides, PipelineConfig};

#[derive(Debug, Clone)]
pub struct Recorded {
    pub path: String,
    pub headers: HashMap<String, String>,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Chat-completions response carrying `content` as the assistant message.
pub fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 1, "completion_tokens": 1}
    })
    .to_string()
}

#[derive(Debug, Default)]
pub struct Stats {
    pub requests: AtomicUsize,
    pub active: AtomicUsize,
    pub peak: AtomicUsize,
    pub last: Mutex<Option<Recorded>>,
}

pub struct MockServer {
    pub base_url: String,
    pub stats: Arc<Stats>,
}

type Handler = dyn Fn(usize, &Recorded) -> Reply + Send + Sync;

impl MockServer {
    /// Serves each connection on its own thread; `handler` receives the
    /// 1-based request number and the parsed request.
    pub fn start(handler: impl Fn(usize, &Recorded) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().unwrap();
        let stats = Arc::new(Stats::default());
        let handler: Arc<Handler> = Arc::new(handler);
        let st = Arc::clone(&stats);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let st = Arc::clone(&st);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &st, handler.as_ref()));
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            stats,
        }
    }

    pub fn requests(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.stats.peak.load(Ordering::SeqCst)
    }

    pub fn last(&self) -> Option<Recorded> {
        self.stats.last.lock().unwrap().clone()
    }
}

fn read_request(stream: &TcpStream) -> Option<Recorded> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut headers = HashMap::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).ok()? == 0 {
            return None;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(Recorded {
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn serve(mut stream: TcpStream, stats: &Stats, handler: &Handler) {
    let Some(req) = read_request(&stream) else { return };
    let n = stats.requests.fetch_add(1, Ordering::SeqCst) + 1;
    let now = stats.active.fetch_add(1, Ordering::SeqCst) + 1;
    stats.peak.fetch_max(now, Ordering::SeqCst);
    *stats.last.lock().unwrap() = Some(req.clone());
    let reply = handler(n, &req);
    thread::sleep(reply.delay);
    stats.active.fetch_sub(1, Ordering::SeqCst);
    let head = format!(
        "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reply.body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(reply.body.as_bytes());
    let _ = stream.flush();
}

/// Fresh, empty scratch directory under the cargo target tree.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("scope-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Default configuration with every artifact placed under `dir`.
pub fn config_in(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.corpus = dir.join("corpus.jsonl");
    cfg.paths.bank = dir.join("bank.bin");
    cfg.paths.model = dir.join("model.json");
    cfg.paths.tfidf = dir.join("tfidf.json");
    cfg.paths.output = dir.join("out");
    cfg.llm.stub = true;
    cfg.propagate_seed();
    cfg
}

/// synth → embed → train → calibrate.
pub fn prepare(cfg: &PipelineConfig) {
    pipeline::cmd_synth(cfg).expect("synth");
    pipeline::cmd_embed(cfg).expect("embed");
    pipeline::cmd_train(cfg).expect("train");
    pipeline::cmd_calibrate(cfg).expect("calibrate");
}

/// infer → evaluate, with `overrides` applied and outputs written to `out`.
pub fn infer_and_evaluate(base: &PipelineConfig, overrides: &Overrides, out: &Path) -> (PipelineConfig, MetricsReport) {
    let mut cfg = base.clone();
    overrides.apply(&mut cfg);
    cfg.paths.output = out.to_path_buf();
    cfg.validate().expect("valid config");
    pipeline::cmd_infer(&cfg).expect("infer");
    let metrics = pipeline::cmd_evaluate(&cfg).expect("evaluate");
    (cfg, metrics)
}

/// The whole stub-mode pipeline in `dir`.
pub fn full_run(dir: &Path) -> (PipelineConfig, MetricsReport) {
    let cfg = config_in(dir);
    prepare(&cfg);
    infer_and_evaluate(&cfg, &Overrides::default(), &cfg.paths.output)
}
