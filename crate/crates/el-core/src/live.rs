//! Wall-clock environment with real command transports.
//!
//! Effects dispatched here actually run — either through a local shell
//! or over a line-oriented TCP connection to a remote executor.
//! Dispatch is asynchronous: `execute` hands the command to a worker
//! thread and returns immediately; the outcome comes back later as an
//! alert on the shared queue:
//!
//! * completion → atom `_EL_EXEC_RESP`, payload
//!   `command=<...>;stdout=<...>;stderr=<...>` (fields are raw, not
//!   escaped);
//! * transport failure (spawn error, unreachable endpoint, timeout) →
//!   atom `_EL_EXEC_FAIL`, payload `command=<...>;error=<...>`.
//!
//! Graphs gate on these atoms like any other: a watchpoint on
//! `_EL_EXEC_RESP` waits for the previous effect to land, and an OR
//! join over a `_EL_EXEC_FAIL` branch encodes a fallback procedure.
//!
//! Timestamps count wall-clock milliseconds since the environment was
//! created, so they are monotone even if the system clock steps. The
//! queue takes concurrent producers (worker threads, and whatever else
//! holds a [`LiveEnvironment::alert_sender`]) with the engine as sole
//! consumer.
//!
//! Known limitation of the shell transport: output is read only after
//! the command exits, so a command that fills the pipe buffer (≳64 KiB)
//! and keeps writing will stall until the timeout kills it.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::env::{Alert, DispatchStatus, Environment};
use crate::graph::NodeId;
use crate::time::{DurationMs, Timestamp};

/// Atom of the alert emitted when a dispatched command completes.
pub const EXEC_RESP_ATOM: &str = "_EL_EXEC_RESP";
/// Atom of the alert emitted when the transport fails to run a command.
pub const EXEC_FAIL_ATOM: &str = "_EL_EXEC_FAIL";

fn default_command_timeout() -> DurationMs {
    DurationMs::new(30_000)
}

/// Transport selection, read from a config file. See the module docs
/// for the TCP wire protocol.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case", deny_unknown_fields)]
pub enum LiveConfig {
    /// Run commands as `sh -c <command>` on this machine.
    LocalShell {
        #[serde(rename = "command_timeout_ms", default = "default_command_timeout")]
        command_timeout: DurationMs,
    },
    /// Send commands to a remote executor, one connection per command:
    /// optionally `AUTH <token>\n` (token read from the environment
    /// variable named by `credential_ref`), then `EXEC <command>\n`,
    /// then read the response until the peer closes the connection.
    Tcp {
        host: String,
        port: u16,
        /// Name of an environment variable holding the auth token. The
        /// config file carries only this reference, never the secret.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential_ref: Option<String>,
        #[serde(rename = "command_timeout_ms", default = "default_command_timeout")]
        command_timeout: DurationMs,
    },
}

impl LiveConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn command_timeout(&self) -> Duration {
        let ms = match self {
            LiveConfig::LocalShell { command_timeout } => command_timeout.millis(),
            LiveConfig::Tcp { command_timeout, .. } => command_timeout.millis(),
        };
        Duration::from_millis(ms)
    }
}

type SharedQueue = Arc<Mutex<VecDeque<Alert>>>;

/// Sending half of a live alert queue, for additional producers (extra
/// telemetry feeds, tests).
#[derive(Clone)]
pub struct AlertSender {
    queue: SharedQueue,
    started: Instant,
}

impl AlertSender {
    /// Enqueues an alert stamped with the current environment time.
    pub fn send(&self, atom: impl Into<String>, payload: impl Into<String>) {
        let now = Timestamp::Millis(self.started.elapsed().as_millis() as u64);
        push(&self.queue, Alert::new(atom, payload, now));
    }
}

fn push(queue: &SharedQueue, alert: Alert) {
    queue.lock().expect("alert queue poisoned").push_back(alert);
}

/// An [`Environment`] on the wall clock. Never exhausted: the world can
/// always produce another alert.
pub struct LiveEnvironment {
    cfg: LiveConfig,
    started: Instant,
    queue: SharedQueue,
}

impl LiveEnvironment {
    pub fn new(cfg: LiveConfig) -> Self {
        LiveEnvironment {
            cfg,
            started: Instant::now(),
            queue: Arc::new(Mutex::new(VecDeque::new())),
        }
    }

    /// A handle other threads can use to inject alerts into this
    /// environment's queue.
    pub fn alert_sender(&self) -> AlertSender {
        AlertSender { queue: Arc::clone(&self.queue), started: self.started }
    }

    fn now(&self) -> Timestamp {
        Timestamp::Millis(self.started.elapsed().as_millis() as u64)
    }
}

impl Environment for LiveEnvironment {
    fn get_alerts(&mut self) -> Vec<Alert> {
        let mut q = self.queue.lock().expect("alert queue poisoned");
        q.drain(..).collect()
    }

    fn get_time(&mut self) -> Timestamp {
        self.now()
    }

    fn execute(&mut self, command: &str, _node: &NodeId) -> DispatchStatus {
        let queue = Arc::clone(&self.queue);
        let started = self.started;
        let timeout = self.cfg.command_timeout();
        let command = command.to_string();
        match &self.cfg {
            LiveConfig::LocalShell { .. } => {
                std::thread::spawn(move || {
                    let outcome = run_shell(&command, timeout);
                    let now = Timestamp::Millis(started.elapsed().as_millis() as u64);
                    push(&queue, outcome.into_alert(&command, now));
                });
                DispatchStatus::Dispatched
            }
            LiveConfig::Tcp { host, port, credential_ref, .. } => {
                // Resolve the credential reference up front so a
                // misconfigured run fails at dispatch, not mid-flight.
                let token = match credential_ref {
                    None => None,
                    Some(var) => match std::env::var(var) {
                        Ok(v) => Some(v),
                        Err(_) => {
                            let now = self.now();
                            let payload = format!(
                                "command={command};error=credential variable {var} is not set"
                            );
                            push(&self.queue, Alert::new(EXEC_FAIL_ATOM, payload, now));
                            return DispatchStatus::Failed;
                        }
                    },
                };
                let endpoint = format!("{host}:{port}");
                std::thread::spawn(move || {
                    let outcome = run_tcp(&endpoint, token.as_deref(), &command, timeout);
                    let now = Timestamp::Millis(started.elapsed().as_millis() as u64);
                    push(&queue, outcome.into_alert(&command, now));
                });
                DispatchStatus::Dispatched
            }
        }
    }

    fn next_event_time(&self) -> Option<Timestamp> {
        let q = self.queue.lock().expect("alert queue poisoned");
        q.front().map(|a| a.emitted_at)
    }

    fn advance_to(&mut self, _t: Timestamp) {
        // The wall clock advances on its own.
    }

    fn is_exhausted(&self) -> bool {
        false
    }
}

enum ExecOutcome {
    Completed { stdout: String, stderr: String },
    TransportError(String),
}

impl ExecOutcome {
    fn into_alert(self, command: &str, now: Timestamp) -> Alert {
        match self {
            ExecOutcome::Completed { stdout, stderr } => Alert::new(
                EXEC_RESP_ATOM,
                format!("command={command};stdout={stdout};stderr={stderr}"),
                now,
            ),
            ExecOutcome::TransportError(error) => {
                Alert::new(EXEC_FAIL_ATOM, format!("command={command};error={error}"), now)
            }
        }
    }
}

fn run_shell(command: &str, timeout: Duration) -> ExecOutcome {
    let spawned = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn();
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => return ExecOutcome::TransportError(format!("spawn failed: {e}")),
    };
    let deadline = Instant::now() + timeout;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => {
                return match child.wait_with_output() {
                    Ok(out) => ExecOutcome::Completed {
                        stdout: String::from_utf8_lossy(&out.stdout).trim_end().to_string(),
                        stderr: String::from_utf8_lossy(&out.stderr).trim_end().to_string(),
                    },
                    Err(e) => ExecOutcome::TransportError(format!("output unreadable: {e}")),
                };
            }
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return ExecOutcome::TransportError(format!(
                        "timed out after {}ms",
                        timeout.as_millis()
                    ));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return ExecOutcome::TransportError(format!("wait failed: {e}")),
        }
    }
}

fn run_tcp(endpoint: &str, token: Option<&str>, command: &str, timeout: Duration) -> ExecOutcome {
    let deadline = Instant::now() + timeout;
    let remaining = |label: &str| -> Result<Duration, ExecOutcome> {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            Err(ExecOutcome::TransportError(format!("timed out before {label}")))
        } else {
            Ok(left)
        }
    };

    let addrs: Vec<SocketAddr> = match endpoint.to_socket_addrs() {
        Ok(a) => a.collect(),
        Err(e) => return ExecOutcome::TransportError(format!("cannot resolve {endpoint}: {e}")),
    };
    let Some(addr) = addrs.first() else {
        return ExecOutcome::TransportError(format!("{endpoint} resolves to no address"));
    };
    let budget = match remaining("connect") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let mut stream = match TcpStream::connect_timeout(addr, budget) {
        Ok(s) => s,
        Err(e) => return ExecOutcome::TransportError(format!("connect to {endpoint} failed: {e}")),
    };

    let mut request = String::new();
    if let Some(token) = token {
        request.push_str("AUTH ");
        request.push_str(token);
        request.push('\n');
    }
    request.push_str("EXEC ");
    request.push_str(command);
    request.push('\n');

    let write_budget = match remaining("send") {
        Ok(d) => d,
        Err(o) => return o,
    };
    let _ = stream.set_write_timeout(Some(write_budget));
    if let Err(e) = stream.write_all(request.as_bytes()) {
        return ExecOutcome::TransportError(format!("send failed: {e}"));
    }
    let _ = stream.shutdown(Shutdown::Write);

    // The response is everything until the executor closes the stream.
    let mut response = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        let read_budget = match remaining("response") {
            Ok(d) => d,
            Err(o) => return o,
        };
        let _ = stream.set_read_timeout(Some(read_budget));
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => response.extend_from_slice(&chunk[..n]),
            Err(e) => {
                return ExecOutcome::TransportError(format!(
                    "read failed after {} bytes: {e}",
                    response.len()
                ))
            }
        }
    }
    ExecOutcome::Completed {
        stdout: String::from_utf8_lossy(&response).trim_end().to_string(),
        stderr: String::new(),
    }
}
