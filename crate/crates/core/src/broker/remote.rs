//! Newline-delimited JSON transport to external models.
//!
//! Each request line is `{"id": u64, "inputs": [[f64, ..], ..]}` and must be
//! answered by exactly one line `{"id": u64, "logits": [[f64, ..], ..]}` with
//! the same id and one logit row per input, in order.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;

pub const MAX_CHUNK: usize = 64;
pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;
pub const MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Tcp {
        addr: String,
    },
    /// A child process speaking the protocol on its standard streams.
    Stdio {
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: Endpoint,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// The server returns probabilities; take their logarithm.
    #[serde(default)]
    pub probabilities: bool,
}

impl RemoteConfig {
    pub fn tcp(addr: impl Into<String>, input_dim: usize, num_classes: usize) -> Self {
        RemoteConfig {
            endpoint: Endpoint::Tcp { addr: addr.into() },
            input_dim,
            num_classes,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            probabilities: false,
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

enum Connection {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
    Stdio {
        child: Child,
        stdin: ChildStdin,
        lines: Receiver<io::Result<String>>,
    },
}

fn transport(e: impl std::fmt::Display) -> Error {
    Error::Transport(e.to_string())
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp { addr } => {
                let mut last = None;
                for sock in addr.to_socket_addrs().map_err(transport)? {
                    match TcpStream::connect_timeout(&sock, timeout) {
                        Ok(stream) => {
                            stream.set_read_timeout(Some(timeout)).map_err(transport)?;
                            stream.set_nodelay(true).map_err(transport)?;
                            let writer = stream.try_clone().map_err(transport)?;
                            return Ok(Connection::Tcp {
                                reader: BufReader::new(stream),
                                writer,
                            });
                        }
                        Err(e) => last = Some(e),
                    }
                }
                Err(match last {
                    Some(e) => transport(format!("connect to {addr}: {e}")),
                    None => transport(format!("{addr} resolves to no address")),
                })
            }
            Endpoint::Stdio { command, args } => {
                let mut child = Command::new(command)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| transport(format!("spawn {command}: {e}")))?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                let (tx, lines) = mpsc::channel();
                thread::spawn(move || {
                    for line in BufReader::new(stdout).lines() {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                });
                Ok(Connection::Stdio { child, stdin, lines })
            }
        }
    }

    fn send(&mut self, line: &str) -> Result<()> {
        let w: &mut dyn Write = match self {
            Connection::Tcp { writer, .. } => writer,
            Connection::Stdio { stdin, .. } => stdin,
        };
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(transport)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String> {
        match self {
            Connection::Tcp { reader, .. } => {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => Err(transport("connection closed by server")),
                    Ok(_) => Ok(line),
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                        Err(Error::Timeout(timeout))
                    }
                    Err(e) => Err(transport(e)),
                }
            }
            Connection::Stdio { lines, .. } => match lines.recv_timeout(timeout) {
                Ok(Ok(line)) => Ok(line),
                Ok(Err(e)) => Err(transport(e)),
                Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => Err(transport("server process closed its output")),
            },
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Stdio { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client for a model served over the line protocol. Batches are split into
/// chunks of at most [`MAX_CHUNK`] inputs; transport failures and timeouts are
/// retried on a fresh connection up to [`MAX_ATTEMPTS`] times per chunk.
pub struct RemoteClassifier {
    config: RemoteConfig,
    conn: Mutex<Option<Connection>>,
    next_id: AtomicU64,
}

impl RemoteClassifier {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::InvalidConfig("a classifier needs at least two classes".into()));
        }
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        Ok(RemoteClassifier {
            config,
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn round_trip(&self, conn: &mut Option<Connection>, request: &str, id: u64) -> Result<Response> {
        let timeout = self.config.timeout();
        if conn.is_none() {
            *conn = Some(Connection::open(&self.config.endpoint, timeout)?);
        }
        let c = conn.as_mut().expect("connection was just opened");
        c.send(request)?;
        let line = c.recv(timeout)?;
        let response: Response = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if response.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        Ok(response)
    }

    fn call(&self, inputs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        let n = inputs.len();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = serde_json::to_string(&Request { id, inputs })?;
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.round_trip(&mut conn, &request, id) {
                Ok(r) => break r,
                Err(e) => {
                    *conn = None;
                    if !e.is_retriable() || attempt >= MAX_ATTEMPTS {
                        return Err(e);
                    }
                }
            }
        };
        self.validate(response.logits, n)
    }

    fn validate(&self, mut logits: Vec<Vec<f64>>, n: usize) -> Result<Vec<Vec<f64>>> {
        if logits.len() != n {
            return Err(Error::Protocol(format!("expected {n} logit rows, got {}", logits.len())));
        }
        for row in &mut logits {
            if row.len() != self.config.num_classes {
                return Err(Error::Protocol(format!(
                    "expected {} logits per row, got {}",
                    self.config.num_classes,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Protocol("non-finite logit".into()));
            }
            if self.config.probabilities {
                for v in row.iter_mut() {
                    *v = v.max(f64::MIN_POSITIVE).ln();
                }
            }
        }
        Ok(logits)
    }
}

impl Classifier for RemoteClassifier {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, inputs: ArrayView2<'_, f64>, _exec: Execution) -> Result<Vec<Vec<f64>>> {
        ensure_dim(self.config.input_dim, inputs.ncols())?;
        let rows: Vec<Vec<f64>> = inputs.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(MAX_CHUNK) {
            out.extend(self.call(chunk.to_vec())?);
        }
        Ok(out)
    }
}

/// Maps the inputs of one request to its logit rows.
pub type Responder = dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + Send + Sync;

/// Returns every input row unchanged as its logit row.
pub fn echo_responder() -> Arc<Responder> {
    Arc::new(|inputs: &[Vec<f64>]| Ok(inputs.to_vec()))
}

pub fn classifier_responder(clf: Arc<dyn Classifier>) -> Arc<Responder> {
    Arc::new(move |inputs: &[Vec<f64>]| {
        let d = clf.input_dim();
        if inputs.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: inputs.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
            });
        }
        let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
        let view = ArrayView2::from_shape((inputs.len(), d), &flat).expect("rows have length d");
        clf.logits(view, Execution::Sequential)
    })
}

#[derive(Serialize)]
struct ErrorLine {
    error: String,
}

/// Serves requests line by line until the reader is exhausted. Requests that
/// cannot be answered get an `{"error": ..}` line. Returns the number of
/// requests answered successfully.
pub fn serve_lines<R: BufRead, W: Write>(reader: R, mut writer: W, respond: &Responder) -> io::Result<u64> {
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match respond(&req.inputs) {
                Ok(logits) => {
                    served += 1;
                    serde_json::to_string(&Response { id: req.id, logits })
                }
                Err(e) => serde_json::to_string(&ErrorLine { error: e.to_string() }),
            },
            Err(e) => serde_json::to_string(&ErrorLine { error: format!("bad request: {e}") }),
        }
        .expect("responses serialize");
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(served)
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp(listener: TcpListener, respond: Arc<Responder>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let respond = Arc::clone(&respond);
        thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            if let Ok(reader) = stream.try_clone() {
                let _ = serve_lines(BufReader::new(reader), stream, respond.as_ref());
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves in a background thread. Returns the bound address.
pub fn spawn_tcp_server(addr: &str, respond: Arc<Responder>) -> io::Result<std::net::SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || serve_tcp(listener, respond));
    Ok(local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn serve_lines_answers_in_order() {
        let input = "{\"id\":7,\"inputs\":[[1.0,2.0]]}\n\nnonsense\n{\"id\":8,\"inputs\":[]}\n";
        let mut out = Vec::new();
        let served = serve_lines(input.as_bytes(), &mut out, echo_responder().as_ref()).unwrap();
        assert_eq!(served, 2);
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        let r: Response = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(r, Response { id: 7, logits: vec![vec![1.0, 2.0]] });
        assert!(lines[1].contains("error"));
        let r: Response = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(r.id, 8);
    }

    #[test]
    fn echo_round_trip_over_tcp() {
        let addr = spawn_tcp_server("127.0.0.1:0", echo_responder()).unwrap();
        let clf = RemoteClassifier::new(RemoteConfig::tcp(addr.to_string(), 3, 3)).unwrap();
        let inputs = Array2::from_shape_fn((150, 3), |(i, j)| (i * 3 + j) as f64 / 450.0);
        let out = clf.logits(inputs.view(), Execution::Sequential).unwrap();
        assert_eq!(out.len(), 150);
        for (i, row) in out.iter().enumerate() {
            assert_eq!(row, &inputs.row(i).to_vec());
        }
        // 150 inputs take three chunks.
        assert_eq!(clf.next_id.load(Ordering::Relaxed), 4);
    }

    #[test]
    fn probability_outputs_are_logged() {
        let addr = spawn_tcp_server("127.0.0.1:0", echo_responder()).unwrap();
        let mut cfg = RemoteConfig::tcp(addr.to_string(), 2, 2);
        cfg.probabilities = true;
        let clf = RemoteClassifier::new(cfg).unwrap();
        let y = clf.logits_one(&[0.25, 0.75]).unwrap();
        assert!((y[0] - 0.25f64.ln()).abs() < 1e-15);
        assert!((y[1] - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn wrong_row_count_is_protocol_error() {
        let respond: Arc<Responder> = Arc::new(|_: &[Vec<f64>]| Ok(vec![vec![0.0, 1.0]; 2]));
        let addr = spawn_tcp_server("127.0.0.1:0", respond).unwrap();
        let clf = RemoteClassifier::new(RemoteConfig::tcp(addr.to_string(), 1, 2)).unwrap();
        assert!(matches!(clf.logits_one(&[0.5]), Err(Error::Protocol(_))));
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let clf = RemoteClassifier::new(RemoteConfig::tcp(addr.to_string(), 1, 2)).unwrap();
        let err = clf.logits_one(&[0.5]).unwrap_err();
        assert!(err.is_retriable(), "{err}");
    }
}
