//! Transports carrying [`ServiceRequest`]s to a model service.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::error::{Error, Result};

use super::builtin::Builtin;
use super::wire::{ServiceEndpoint, ServiceRequest, ServiceResponse, TransportKind};

/// Sends one request and waits for its response.
pub trait Transport: Send + Sync {
    fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse>;
}

pub fn connect(endpoint: &ServiceEndpoint) -> Result<Box<dyn Transport>> {
    endpoint.validate()?;
    let timeout = Duration::from_millis(endpoint.timeout_ms);
    Ok(match endpoint.transport {
        TransportKind::HttpJson => Box::new(HttpTransport::new(&endpoint.address, timeout)),
        TransportKind::StdioLines => Box::new(StdioTransport::new(&endpoint.address, timeout)),
        TransportKind::Builtin => Box::new(Builtin::from_mode(endpoint.kind, &endpoint.address)?),
    })
}

pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            url: url.to_string(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(request)
            .map_err(|e| Error::Service(format!("POST {}: {e}", self.url)))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Service(format!("reading response from {}: {e}", self.url)))?;
        match serde_json::from_str::<ServiceResponse>(&body) {
            Ok(r) if status.is_success() || r.error.is_some() => Ok(r),
            Err(e) if status.is_success() => Err(Error::Service(format!("malformed response from {}: {e}", self.url))),
            _ => Err(Error::Service(format!("{} answered HTTP {status}", self.url))),
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(command: &str) -> Result<Worker> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Service(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Worker {
            child,
            stdin,
            lines: rx,
        })
    }

    fn call(&mut self, line: &str, timeout: Duration) -> Result<ServiceResponse> {
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.write_all(b"\n"))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Service(format!("writing to service: {e}")))?;
        loop {
            let reply = match self.lines.recv_timeout(timeout) {
                Ok(Ok(reply)) => reply,
                Ok(Err(e)) => return Err(Error::Service(format!("reading from service: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Service(format!("no response within {} ms", timeout.as_millis())))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Service("service closed its output".into())),
            };
            if reply.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&reply)
                .map_err(|e| Error::Service(format!("malformed response line {reply:?}: {e}")));
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Line-delimited JSON over a subprocess's stdin and stdout. One request is
/// outstanding per process; concurrent callers get their own processes, which
/// are kept for reuse. A process that times out or misbehaves is discarded.
pub struct StdioTransport {
    command: String,
    timeout: Duration,
    idle: Mutex<Vec<Worker>>,
}

impl StdioTransport {
    pub fn new(command: &str, timeout: Duration) -> Self {
        StdioTransport {
            command: command.to_string(),
            timeout,
            idle: Mutex::new(Vec::new()),
        }
    }
}

impl Transport for StdioTransport {
    fn call(&self, request: &ServiceRequest) -> Result<ServiceResponse> {
        let line = serde_json::to_string(request).map_err(|e| Error::Service(e.to_string()))?;
        let worker = self.idle.lock().expect("worker pool poisoned").pop();
        let mut worker = match worker {
            Some(w) => w,
            None => Worker::spawn(&self.command)?,
        };
        let out = worker.call(&line, self.timeout);
        if out.is_ok() {
            self.idle.lock().expect("worker pool poisoned").push(worker);
        }
        out
    }
}
