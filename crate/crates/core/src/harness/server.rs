//! Live teleoperation over line-delimited JSON on TCP.
//!
//! One client per session. The client sends
//! `{"type":"activation","value":v}` with `v` in `[0, 1]`, or
//! `{"type":"stop"}`; the server streams one `state` message per control
//! tick and finishes with a `summary`. Malformed messages get an `error`
//! reply and the connection stays open. Unknown fields are ignored.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::control::{run_control_session, session_ticks, ActivationSource, ControlAssets};
use crate::harness::metrics::{MetricsReport, TrialRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    #[serde(rename = "target_N")]
    pub target: f64,
    #[serde(rename = "command_N")]
    pub command: f64,
    #[serde(rename = "applied_N")]
    pub applied: f64,
    #[serde(rename = "tension_N")]
    pub tension: f64,
    pub activation: f64,
}

impl From<&TrialRow> for StateMessage {
    fn from(r: &TrialRow) -> Self {
        StateMessage {
            t: r.t,
            target: r.target,
            command: r.command,
            applied: r.applied,
            tension: r.tension,
            activation: r.activation,
        }
    }
}

/// End-of-session summary, sent to the client and written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub ticks: usize,
    /// Set when the input went stale and the last activation was held.
    pub input_timeout: bool,
    pub held_ticks: usize,
    pub rejected_messages: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    Error { message: String },
    Summary(SessionSummary),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Activation { value: f64 },
    Stop,
}

impl ServerMessage {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }
}

/// Parses and range-checks one client line.
pub fn parse_client_line(line: &str) -> Result<ClientMessage> {
    let msg: ClientMessage =
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed message: {e}")))?;
    if let ClientMessage::Activation { value } = msg {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                value,
                low: 0.0,
                high: 1.0,
            });
        }
    }
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Ticks on the wall clock; the newest activation wins.
    #[default]
    Realtime,
    /// One tick per activation message, as fast as the client sends.
    Lockstep,
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub pacing: Pacing,
    /// Directory for `report.json`, `summary.json` and `trial.csv`.
    pub out: Option<PathBuf>,
}

enum Inbound {
    Activation(f64),
    Stop,
}

type SharedWriter = Arc<Mutex<TcpStream>>;

fn send(writer: &SharedWriter, msg: &ServerMessage) -> Result<()> {
    let line = msg.to_line()?;
    let mut w = writer.lock().expect("writer lock");
    w.write_all(line.as_bytes())?;
    Ok(())
}

struct LiveSource {
    rx: Receiver<Inbound>,
    pacing: Pacing,
    period: Duration,
    timeout: Duration,
    start: Instant,
    tick: u32,
    remaining: usize,
    last: f64,
    last_input: Instant,
    held_ticks: usize,
    gone: Arc<AtomicBool>,
}

impl ActivationSource for LiveSource {
    fn next(&mut self, _t: f64, _target: f64) -> Result<Option<f64>> {
        if self.remaining == 0 || self.gone.load(Ordering::SeqCst) {
            return Ok(None);
        }
        self.remaining -= 1;
        match self.pacing {
            Pacing::Realtime => {
                let due = self.start + self.period * self.tick;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
                loop {
                    match self.rx.try_recv() {
                        Ok(Inbound::Activation(v)) => {
                            self.last = v;
                            self.last_input = Instant::now();
                        }
                        Ok(Inbound::Stop) | Err(TryRecvError::Disconnected) => return Ok(None),
                        Err(TryRecvError::Empty) => break,
                    }
                }
                if self.last_input.elapsed() > self.timeout {
                    self.held_ticks += 1;
                }
            }
            Pacing::Lockstep => match self.rx.recv_timeout(self.timeout) {
                Ok(Inbound::Activation(v)) => self.last = v,
                Ok(Inbound::Stop) | Err(RecvTimeoutError::Disconnected) => return Ok(None),
                Err(RecvTimeoutError::Timeout) => self.held_ticks += 1,
            },
        }
        self.tick += 1;
        Ok(Some(self.last))
    }
}

fn read_client(
    stream: TcpStream,
    writer: SharedWriter,
    tx: mpsc::SyncSender<Inbound>,
    rejected: Arc<AtomicUsize>,
    gone: Arc<AtomicBool>,
) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let event = match parse_client_line(&line) {
            Ok(ClientMessage::Activation { value }) => Inbound::Activation(value),
            Ok(ClientMessage::Stop) => Inbound::Stop,
            Err(e) => {
                rejected.fetch_add(1, Ordering::SeqCst);
                let _ = send(&writer, &ServerMessage::Error { message: e.to_string() });
                continue;
            }
        };
        let stop = matches!(event, Inbound::Stop);
        if tx.send(event).is_err() || stop {
            return;
        }
    }
    gone.store(true, Ordering::SeqCst);
}

/// A bound, not yet running console endpoint.
pub struct ConsoleServer {
    listener: TcpListener,
}

impl ConsoleServer {
    /// Binds on localhost; port 0 picks a free port.
    pub fn bind(port: u16) -> Result<Self> {
        Ok(ConsoleServer {
            listener: TcpListener::bind(("127.0.0.1", port))?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts one client and runs a full control session with it.
    pub fn run(self, cfg: &ExperimentConfig, assets: &ControlAssets, opts: &ServeOptions) -> Result<SessionSummary> {
        cfg.validate()?;
        let (stream, _) = self.listener.accept()?;
        stream.set_nodelay(true)?;
        let writer: SharedWriter = Arc::new(Mutex::new(stream.try_clone()?));
        let rejected = Arc::new(AtomicUsize::new(0));
        let gone = Arc::new(AtomicBool::new(false));
        // Lockstep clients may run ahead of the loop; realtime drains each tick.
        let (tx, rx) = mpsc::sync_channel(1024);
        let reader = {
            let (writer, rejected, gone) = (writer.clone(), rejected.clone(), gone.clone());
            std::thread::spawn(move || read_client(stream, writer, tx, rejected, gone))
        };

        let now = Instant::now();
        let mut source = LiveSource {
            rx,
            pacing: opts.pacing,
            period: Duration::from_secs_f64(cfg.control.period),
            timeout: Duration::from_secs_f64(cfg.control.input_timeout),
            start: now,
            tick: 0,
            remaining: session_ticks(cfg),
            last: 0.0,
            last_input: now,
            held_ticks: 0,
            gone: gone.clone(),
        };
        let outcome = run_control_session(cfg, assets, &mut source, |row| {
            if send(&writer, &ServerMessage::State(row.into())).is_err() {
                gone.store(true, Ordering::SeqCst);
            }
            Ok(())
        })?;
        let summary = SessionSummary {
            ticks: outcome.record.rows.len(),
            input_timeout: source.held_ticks > 0,
            held_ticks: source.held_ticks,
            rejected_messages: rejected.load(Ordering::SeqCst),
            report: outcome.report.clone(),
        };
        let line = ServerMessage::Summary(summary.clone()).to_line()?;
        {
            let mut w = writer.lock().expect("writer lock");
            if !gone.load(Ordering::SeqCst) {
                let _ = w.write_all(line.as_bytes()).and_then(|_| w.flush());
            }
            // Unblocks the reader thread.
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        drop(source);
        let _ = reader.join();
        if let Some(dir) = &opts.out {
            std::fs::create_dir_all(dir)?;
            outcome.report.save(&dir.join("report.json"))?;
            std::fs::write(dir.join("summary.json"), &line)?;
            outcome.record.write_csv(std::fs::File::create(dir.join("trial.csv"))?)?;
        }
        Ok(summary)
    }
}

/// Binds `port`, serves one session and returns its summary.
pub fn serve_console(
    cfg: &ExperimentConfig,
    assets: &ControlAssets,
    port: u16,
    opts: &ServeOptions,
) -> Result<SessionSummary> {
    ConsoleServer::bind(port)?.run(cfg, assets, opts)
}
