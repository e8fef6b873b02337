//! Transports for external models: a long-lived child process speaking AGV1
//! over stdio, or an HTTP endpoint taking one frame per POST.

use std::io::{BufReader, BufWriter};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use parking_lot::Mutex;

use super::protocol::{read_frame, write_frame, Frame, ProtocolError};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("cannot start adapter {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("adapter i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed frame: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("adapter exited")]
    Exited,
    #[error("adapter reported: {0}")]
    Remote(String),
    #[error("unexpected response: {0}")]
    Unexpected(String),
    #[error("http: {0}")]
    Http(String),
}

struct Worker {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    frames: Receiver<Result<Frame, ProtocolError>>,
}

impl Worker {
    fn spawn(command: &[String]) -> Result<Self, AdapterError> {
        let spawn_err = |source| AdapterError::Spawn {
            command: command.join(" "),
            source,
        };
        let (program, args) = command
            .split_first()
            .ok_or_else(|| spawn_err(std::io::Error::other("empty command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(spawn_err)?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, frames) = mpsc::channel();
        // Blocking reads live on their own thread so requests can time out.
        std::thread::spawn(move || {
            let mut r = BufReader::new(stdout);
            loop {
                let f = read_frame(&mut r);
                let stop = f.is_err();
                if tx.send(f).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, frames })
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One child process per slot; requests on a slot are strictly sequential.
/// A slot whose child misbehaves is torn down and respawned on next use.
pub struct SubprocessAdapter {
    command: Vec<String>,
    timeout_ms: u64,
    slots: Vec<Mutex<Option<Worker>>>,
}

impl SubprocessAdapter {
    pub fn new(command: Vec<String>, timeout_ms: u64, workers: usize) -> Self {
        Self {
            command,
            timeout_ms,
            slots: (0..workers.max(1)).map(|_| Mutex::new(None)).collect(),
        }
    }

    pub fn exchange(&self, request: &Frame) -> Result<Frame, AdapterError> {
        let idx = rayon::current_thread_index().unwrap_or(0) % self.slots.len();
        let mut slot = self.slots[idx].lock();
        if slot.is_none() {
            *slot = Some(Worker::spawn(&self.command)?);
        }
        let worker = slot.as_mut().expect("spawned above");
        let result = match write_frame(&mut worker.stdin, request) {
            Err(e) => Err(AdapterError::Io(e)),
            Ok(()) => match worker.frames.recv_timeout(Duration::from_millis(self.timeout_ms)) {
                Ok(Ok(f)) => Ok(f),
                Ok(Err(ProtocolError::Closed)) | Err(RecvTimeoutError::Disconnected) => Err(AdapterError::Exited),
                Ok(Err(e)) => Err(AdapterError::Protocol(e)),
                Err(RecvTimeoutError::Timeout) => Err(AdapterError::Timeout(self.timeout_ms)),
            },
        };
        if result.is_err() {
            *slot = None;
        }
        result
    }
}

pub struct HttpAdapter {
    url: String,
    agent: ureq::Agent,
}

const MAX_HTTP_BODY: u64 = 1 << 30;

impl HttpAdapter {
    /// `endpoint` is the server base URL; frames go to `{endpoint}/infer`.
    pub fn new(endpoint: &str, timeout_ms: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: format!("{}/infer", endpoint.trim_end_matches('/')),
            agent,
        }
    }

    pub fn exchange(&self, request: &Frame) -> Result<Frame, AdapterError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/octet-stream")
            .send(&request.encode()[..])
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => AdapterError::Http(format!("timeout: {e}")),
                e => AdapterError::Http(e.to_string()),
            })?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_HTTP_BODY)
            .read_to_vec()
            .map_err(|e| AdapterError::Http(e.to_string()))?;
        match Frame::decode(&body) {
            Ok(f) => Ok(f),
            Err(_) if !status.is_success() => Err(AdapterError::Http(format!("status {status}"))),
            Err(e) => Err(AdapterError::Protocol(e)),
        }
    }
}

pub enum Adapter {
    Subprocess(SubprocessAdapter),
    Http(HttpAdapter),
}

impl Adapter {
    /// Send one request and return the peer's reply; error frames become
    /// [`AdapterError::Remote`].
    pub fn exchange(&self, request: &Frame) -> Result<Frame, AdapterError> {
        let reply = match self {
            Adapter::Subprocess(a) => a.exchange(request)?,
            Adapter::Http(a) => a.exchange(request)?,
        };
        match reply {
            Frame::Error(msg) => Err(AdapterError::Remote(msg)),
            f => Ok(f),
        }
    }
}
