use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;
use webrecycle::clients::{
    rephrase_document, score_dataman, ServiceClient, ServiceEndpoint, ServiceKind, TransportKind,
};
use webrecycle::corpus::{Document, TokenCounter};

type Handler = dyn Fn(&Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server: one request per connection, replies via `handler`.
fn serve(handler: Box<Handler>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/service", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let body = read_request(&stream);
            let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, reply) = handler(&value);
            log.lock().unwrap().push(value);
            let mut s = stream;
            let _ = write!(
                s,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, seen)
}

fn read_request(stream: &TcpStream) -> Vec<u8> {
    let mut r = BufReader::new(stream);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body).unwrap();
    body
}

fn endpoint(kind: ServiceKind, transport: TransportKind, address: &str) -> ServiceEndpoint {
    let mut e = ServiceEndpoint::new(kind, transport, address);
    e.retries = 2;
    e.backoff_ms = 1;
    e.timeout_ms = 5_000;
    e
}

#[test]
fn http_request_carries_the_wire_schema() {
    let (url, seen) = serve(Box::new(|req| {
        let prompt = req["prompt"].as_str().unwrap_or("");
        (200, serde_json::json!({ "text": format!("Here is a paraphrased version:\n{}", prompt.len()) }).to_string())
    }));
    let client = ServiceClient::connect(endpoint(ServiceKind::Rephrase, TransportKind::HttpJson, &url)).unwrap();
    let doc = Document::new("d1", "one two three", TokenCounter::WhitespaceWords);
    let out = rephrase_document(&doc, &client, TokenCounter::WhitespaceWords, 2048).unwrap();
    assert_eq!(out.id, "d1#rec");
    assert!(out.text.parse::<usize>().unwrap() > 0);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    let req = &seen[0];
    assert_eq!(req["kind"], "rephrase");
    assert!(req["prompt"].as_str().unwrap().contains("one two three"));
    assert_eq!(req["params"]["temperature"], 1.0);
    assert_eq!(req["params"]["top_p"], 0.9);
    assert_eq!(req["params"]["max_tokens"], 2048);
}

#[test]
fn http_error_status_and_error_field_fail_after_retries() {
    let (url, seen) = serve(Box::new(|req| match req["prompt"].as_str() {
        Some("busy") => (200, r#"{"error":"overloaded"}"#.into()),
        _ => (500, "oops".into()),
    }));
    let client = ServiceClient::connect(endpoint(ServiceKind::Rephrase, TransportKind::HttpJson, &url)).unwrap();
    let e = client.complete("x".into()).unwrap_err().to_string();
    assert!(e.contains("after 2 attempts") && e.contains("500"), "{e}");
    let e = client.complete("busy".into()).unwrap_err().to_string();
    assert!(e.contains("overloaded"), "{e}");
    assert_eq!(seen.lock().unwrap().len(), 4);
}

#[test]
fn http_unreachable_is_a_service_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/");
    let client = ServiceClient::connect(endpoint(ServiceKind::Embed, TransportKind::HttpJson, &url)).unwrap();
    assert!(client.request("a b".into()).is_err());
}

const ECHO: &str = r#"python3 -u -c '
import json, os, sys
for line in sys.stdin:
    req = json.loads(line)
    p = req["prompt"]
    if req["kind"] == "score_dataman":
        body = "\n".join("[%d]C: 4/5" % i for i in range(1, 14)) + "\n[14]Overall Score: 4/5\nDomain: Other"
        out = {"text": body}
    elif p == "pid":
        out = {"text": str(os.getpid())}
    elif p == "sleep":
        import time; time.sleep(5); out = {"text": "late"}
    else:
        out = {"text": "echo:" + p}
    print(json.dumps(out))
'"#;

#[test]
fn stdio_round_trip_and_worker_reuse() {
    let client = ServiceClient::connect(endpoint(ServiceKind::Rephrase, TransportKind::StdioLines, ECHO)).unwrap();
    assert_eq!(client.complete("héllo\nworld".into()).unwrap(), "echo:héllo\nworld");
    let a = client.complete("pid".into()).unwrap();
    let b = client.complete("pid".into()).unwrap();
    assert_eq!(a, b, "an idle worker is reused");
}

#[test]
fn stdio_scores_through_the_judge_parser() {
    let client = ServiceClient::connect(endpoint(ServiceKind::ScoreDataman, TransportKind::StdioLines, ECHO)).unwrap();
    let s = score_dataman(&client, None, "some text").unwrap();
    assert_eq!(s.overall, 4);
    assert_eq!(s.domain.as_deref(), Some("Other"));
}

#[test]
fn stdio_timeout_discards_the_worker() {
    let mut e = endpoint(ServiceKind::Rephrase, TransportKind::StdioLines, ECHO);
    e.timeout_ms = 300;
    e.retries = 1;
    let client = ServiceClient::connect(e).unwrap();
    let before = client.complete("pid".into()).unwrap();
    let err = client.complete("sleep".into()).unwrap_err().to_string();
    assert!(err.contains("no response within 300 ms"), "{err}");
    // The sleeping worker was dropped, so the next call gets a fresh process.
    assert_ne!(client.complete("pid".into()).unwrap(), before);
}

#[test]
fn stdio_dead_process_is_reported() {
    let client = ServiceClient::connect(endpoint(ServiceKind::Rephrase, TransportKind::StdioLines, "exit 0")).unwrap();
    let e = client.complete("x".into()).unwrap_err().to_string();
    assert!(e.contains("failed after 2 attempts"), "{e}");
}
