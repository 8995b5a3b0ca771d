//! Client side of the adapter wire protocol.
//!
//! An adapter is a child process speaking newline-delimited JSON. After
//! loading its model it prints `{"id":0,"ready":true}`; then for every request
//!
//! ```json
//! {"id": 1, "image": "/data/img_0001.jpg", "prompt": "cattle muzzle",
//!  "box_threshold": 0.35, "text_threshold": 0.25, "seed": 7}
//! ```
//!
//! it answers exactly once, in any order, with
//!
//! ```json
//! {"id": 1, "detections": [{"bbox": [x, y, w, h], "score": 0.8, "phrase": "muzzle"}], "error": null}
//! ```
//!
//! Boxes are absolute-pixel `xywh` with a top-left origin. Up to
//! `max_in_flight` requests are outstanding at once.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

pub const ENV_ADAPTER_CMD: &str = "ZSD_ADAPTER_CMD";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("cannot launch adapter `{command}`: {reason}")]
    LaunchFailure { command: String, reason: String },
    #[error("adapter protocol error at output line {line}{}: {reason}", request_label(*.request_id))]
    ProtocolError {
        line: usize,
        request_id: Option<u64>,
        reason: String,
    },
    #[error("adapter did not answer request {request_id} (image {image_id}) in time")]
    Timeout { request_id: u64, image_id: u64 },
}

fn request_label(id: Option<u64>) -> String {
    id.map(|id| format!(" (request {id})")).unwrap_or_default()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Request {
    pub id: u64,
    pub image: String,
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default)]
    pub phrase: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
struct Response {
    id: u64,
    #[serde(default)]
    detections: Option<Vec<WireDetection>>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnedBox {
    pub bbox: BoundingBox,
    pub score: f64,
    pub phrase: String,
}

/// What came back for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageOutcome {
    Detections(Vec<ReturnedBox>),
    /// The adapter reported a per-image failure through the `error` field.
    Failed(String),
}

/// One unit of work: the image id is the harness's key, the rest goes on the wire.
#[derive(Debug, Clone)]
pub struct Job {
    pub image_id: u64,
    pub image: String,
}

#[derive(Debug, Clone)]
pub struct AdapterConfig {
    pub command: String,
    pub max_in_flight: usize,
    pub startup_timeout: Duration,
    pub request_timeout: Duration,
}

impl AdapterConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            max_in_flight: 4,
            startup_timeout: Duration::from_secs(300),
            request_timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RequestParams {
    pub prompt: String,
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub seed: u64,
}

enum ReaderEvent {
    Line(String),
    Eof,
    Failed(String),
}

/// Pulls the `"id"` number out of a line that is not valid JSON, so a
/// truncated response can still be attributed.
fn sniff_id(line: &str) -> Option<u64> {
    let rest = &line[line.find("\"id\"")? + 4..];
    let rest = rest.trim_start().strip_prefix(':')?.trim_start();
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<ReaderEvent>,
    line_no: usize,
}

impl Session {
    fn spawn(command: &str) -> Result<Self, AdapterError> {
        let launch = |reason: String| AdapterError::LaunchFailure {
            command: command.to_string(),
            reason,
        };
        if command.trim().is_empty() {
            return Err(launch("empty command".into()));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| launch(e.to_string()))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| launch("stdout unavailable".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                let event = match reader.read_line(&mut buf) {
                    Ok(0) => ReaderEvent::Eof,
                    Ok(_) => {
                        // a final line without '\n' is a truncated write
                        if !buf.ends_with('\n') {
                            let _ = tx.send(ReaderEvent::Line(buf));
                            let _ = tx.send(ReaderEvent::Eof);
                            return;
                        }
                        buf.pop();
                        if buf.ends_with('\r') {
                            buf.pop();
                        }
                        ReaderEvent::Line(buf)
                    }
                    Err(e) => ReaderEvent::Failed(e.to_string()),
                };
                let done = !matches!(event, ReaderEvent::Line(_));
                if tx.send(event).is_err() || done {
                    return;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            line_no: 0,
        })
    }

    fn protocol(&self, request_id: Option<u64>, reason: impl Into<String>) -> AdapterError {
        AdapterError::ProtocolError {
            line: self.line_no,
            request_id,
            reason: reason.into(),
        }
    }

    fn send(&mut self, req: &Request) -> Result<(), AdapterError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .expect("stdin open while requests remain");
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| AdapterError::ProtocolError {
                line: self.line_no,
                request_id: Some(req.id),
                reason: format!("adapter stopped accepting requests: {e}"),
            })
    }

    fn shutdown(mut self, kill: bool) {
        drop(self.stdin.take());
        if kill {
            let _ = self.child.kill();
            let _ = self.child.wait();
            return;
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn wait_ready(session: &mut Session, timeout: Duration) -> Result<(), AdapterError> {
    match session.lines.recv_timeout(timeout) {
        Ok(ReaderEvent::Line(line)) => {
            session.line_no += 1;
            let v: serde_json::Value = serde_json::from_str(&line)
                .map_err(|e| session.protocol(None, format!("bad handshake: {e}")))?;
            let ok = v.get("id").and_then(|x| x.as_u64()) == Some(0)
                && v.get("ready").and_then(|x| x.as_bool()) == Some(true);
            if ok {
                Ok(())
            } else {
                Err(session.protocol(None, format!("expected ready handshake, got {line}")))
            }
        }
        Ok(ReaderEvent::Eof) => Err(AdapterError::LaunchFailure {
            command: String::new(),
            reason: "adapter exited before the ready handshake".into(),
        }),
        Ok(ReaderEvent::Failed(e)) => Err(AdapterError::LaunchFailure {
            command: String::new(),
            reason: e,
        }),
        Err(_) => Err(AdapterError::LaunchFailure {
            command: String::new(),
            reason: format!("no ready handshake within {timeout:?}"),
        }),
    }
}

fn decode(session: &Session, line: &str) -> Result<(u64, ImageOutcome), AdapterError> {
    let resp: Response = serde_json::from_str(line)
        .map_err(|e| session.protocol(sniff_id(line), format!("malformed response: {e}")))?;
    if let Some(err) = resp.error {
        return Ok((resp.id, ImageOutcome::Failed(err)));
    }
    let dets = resp.detections.ok_or_else(|| {
        session.protocol(Some(resp.id), "response has neither detections nor error")
    })?;
    let mut out = Vec::with_capacity(dets.len());
    for (k, d) in dets.into_iter().enumerate() {
        let bbox = BoundingBox::from(d.bbox);
        if let Err(e) = bbox.check_shape() {
            return Err(session.protocol(Some(resp.id), format!("detection {k}: {e}")));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(session.protocol(
                Some(resp.id),
                format!("detection {k}: score {} outside [0, 1]", d.score),
            ));
        }
        out.push(ReturnedBox {
            bbox,
            score: d.score,
            phrase: d.phrase,
        });
    }
    Ok((resp.id, ImageOutcome::Detections(out)))
}

/// Runs every job through one adapter process. Results are keyed by image
/// id, so arrival order never matters. Any protocol violation aborts the
/// whole batch.
pub fn run_jobs(
    config: &AdapterConfig,
    params: &RequestParams,
    jobs: &[Job],
) -> Result<BTreeMap<u64, ImageOutcome>, AdapterError> {
    let mut session = Session::spawn(&config.command)?;
    let result = drive(&mut session, config, params, jobs);
    let failed = result.is_err();
    session.shutdown(failed);
    result.map_err(|e| match e {
        AdapterError::LaunchFailure { reason, .. } => AdapterError::LaunchFailure {
            command: config.command.clone(),
            reason,
        },
        other => other,
    })
}

fn drive(
    session: &mut Session,
    config: &AdapterConfig,
    params: &RequestParams,
    jobs: &[Job],
) -> Result<BTreeMap<u64, ImageOutcome>, AdapterError> {
    wait_ready(session, config.startup_timeout)?;
    let max_in_flight = config.max_in_flight.max(1);
    let mut pending: HashMap<u64, (usize, Instant)> = HashMap::new();
    let mut answered: HashSet<u64> = HashSet::new();
    let mut results = BTreeMap::new();
    let mut next = 0usize;

    loop {
        while pending.len() < max_in_flight && next < jobs.len() {
            let id = next as u64 + 1;
            let job = &jobs[next];
            session.send(&Request {
                id,
                image: job.image.clone(),
                prompt: params.prompt.clone(),
                box_threshold: params.box_threshold,
                text_threshold: params.text_threshold,
                seed: params.seed,
            })?;
            pending.insert(id, (next, Instant::now() + config.request_timeout));
            next += 1;
        }
        if pending.is_empty() {
            break;
        }
        if next == jobs.len() {
            // no more requests: let the adapter see end of input
            drop(session.stdin.take());
        }
        let (&oldest_id, &(oldest_job, deadline)) = pending
            .iter()
            .min_by_key(|(id, (_, d))| (*d, **id))
            .expect("pending is non-empty");
        let wait = deadline.saturating_duration_since(Instant::now());
        match session.lines.recv_timeout(wait) {
            Err(RecvTimeoutError::Timeout) => {
                return Err(AdapterError::Timeout {
                    request_id: oldest_id,
                    image_id: jobs[oldest_job].image_id,
                })
            }
            Err(RecvTimeoutError::Disconnected) | Ok(ReaderEvent::Eof) => {
                let mut missing: Vec<u64> = pending.keys().copied().collect();
                missing.sort_unstable();
                return Err(session.protocol(
                    missing.first().copied(),
                    format!("adapter closed its output with unanswered request ids {missing:?}"),
                ));
            }
            Ok(ReaderEvent::Failed(e)) => {
                return Err(session.protocol(None, format!("read failed: {e}")))
            }
            Ok(ReaderEvent::Line(line)) => {
                session.line_no += 1;
                let (id, outcome) = decode(session, &line)?;
                let Some((job_idx, _)) = pending.remove(&id) else {
                    let reason = if answered.contains(&id) {
                        format!("duplicate response for id {id}")
                    } else {
                        format!("response for unknown id {id}")
                    };
                    return Err(session.protocol(Some(id), reason));
                };
                answered.insert(id);
                results.insert(jobs[job_idx].image_id, outcome);
            }
        }
    }
    // Anything the adapter prints after the last answer is a violation too.
    drop(session.stdin.take());
    let deadline = Instant::now() + DRAIN_TIMEOUT;
    let wait = deadline.saturating_duration_since(Instant::now());
    // adapters that linger after end of input are shut down by the caller
    if let Ok(ReaderEvent::Line(line)) = session.lines.recv_timeout(wait) {
        session.line_no += 1;
        let id = serde_json::from_str::<Response>(&line)
            .map(|r| r.id)
            .ok()
            .or_else(|| sniff_id(&line));
        let reason = match id {
            Some(id) if answered.contains(&id) => format!("duplicate response for id {id}"),
            Some(id) => format!("response for unknown id {id}"),
            None => "unexpected output after the last response".to_string(),
        };
        return Err(session.protocol(id, reason));
    }
    Ok(results)
}

const DRAIN_TIMEOUT: Duration = Duration::from_secs(2);
