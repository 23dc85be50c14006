//! Client side of the trainer worker protocol.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use tracing::{debug, warn};

use super::protocol::{self, EvaluateRequest, EvaluateResponse};
use super::{digest_json, EvalContext, EvalError, Evaluator, FitnessRecord, TrainSpec};
use crate::shape::parameter_count;
use crate::space::HyperparamVector;

#[derive(Debug, Clone, Serialize)]
pub struct ExternalOptions {
    /// Shell command that starts a worker.
    pub command: String,
    pub spec: TrainSpec,
    pub num_classes: u64,
    /// Per-evaluation limit, also applied to the start-up handshake.
    pub timeout: Duration,
    /// Extra attempts after a timeout or a worker crash.
    pub retries: u32,
}

impl ExternalOptions {
    pub fn new(command: impl Into<String>, spec: TrainSpec) -> Self {
        let num_classes = spec.dataset.num_classes();
        Self {
            command: command.into(),
            spec,
            num_classes,
            timeout: Duration::from_secs(600),
            retries: 1,
        }
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    line_no: u64,
}

enum Wait {
    Line(String),
    TimedOut,
    Closed(String),
}

impl Worker {
    fn spawn(command: &str, timeout: Duration) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::Process(format!("cannot start {command:?}: {e}")))?;
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
        let mut worker = Worker {
            child,
            stdin,
            lines: rx,
            line_no: 0,
        };
        match worker.next_line(timeout) {
            Wait::Line(text) => {
                protocol::decode_handshake(worker.line_no, &text)?;
                debug!(command, "trainer worker ready");
                Ok(worker)
            }
            Wait::TimedOut => Err(EvalError::Timeout(timeout.as_secs_f64())),
            Wait::Closed(why) => Err(EvalError::Process(format!(
                "worker exited before handshake: {why}"
            ))),
        }
    }

    fn next_line(&mut self, timeout: Duration) -> Wait {
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Ok(text)) => {
                    self.line_no += 1;
                    if text.trim().is_empty() {
                        continue;
                    }
                    return Wait::Line(text);
                }
                Ok(Err(e)) => return Wait::Closed(e.to_string()),
                Err(RecvTimeoutError::Timeout) => return Wait::TimedOut,
                Err(RecvTimeoutError::Disconnected) => return Wait::Closed("stdout closed".into()),
            }
        }
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Attempt {
    Done(Result<FitnessRecord, EvalError>),
    /// The worker is unusable; the evaluation may be retried on a fresh one.
    Retry(EvalError),
}

/// Evaluates vectors by sending them to trainer worker processes.
///
/// Idle workers are pooled; concurrent callers each get their own process.
pub struct ExternalEvaluator {
    opts: ExternalOptions,
    idle: Mutex<Vec<Worker>>,
    next_id: AtomicU64,
}

impl ExternalEvaluator {
    pub fn new(opts: ExternalOptions) -> Self {
        Self {
            opts,
            idle: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
        }
    }

    /// Starts one worker eagerly so start-up problems surface early.
    pub fn start(opts: ExternalOptions) -> Result<Self, EvalError> {
        let worker = Worker::spawn(&opts.command, opts.timeout)?;
        let ev = Self::new(opts);
        ev.idle.lock().unwrap().push(worker);
        Ok(ev)
    }

    pub fn options(&self) -> &ExternalOptions {
        &self.opts
    }

    fn checkout(&self) -> Result<Worker, EvalError> {
        if let Some(w) = self.idle.lock().unwrap().pop() {
            return Ok(w);
        }
        Worker::spawn(&self.opts.command, self.opts.timeout)
    }

    fn attempt(&self, v: &HyperparamVector, ctx: &EvalContext, expected: u64) -> Attempt {
        let mut worker = match self.checkout() {
            Ok(w) => w,
            Err(e @ (EvalError::Timeout(_) | EvalError::Process(_))) => return Attempt::Retry(e),
            Err(e) => return Attempt::Done(Err(e)),
        };
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let request = EvaluateRequest::new(id, v, &self.opts.spec, ctx.trainer_seed);
        let started = Instant::now();
        if let Err(e) = worker.send(&protocol::encode_request(&request)) {
            return Attempt::Retry(EvalError::Process(format!("write to worker failed: {e}")));
        }
        let text = match worker.next_line(self.opts.timeout) {
            Wait::Line(text) => text,
            Wait::TimedOut => {
                return Attempt::Retry(EvalError::Timeout(self.opts.timeout.as_secs_f64()))
            }
            Wait::Closed(why) => {
                return Attempt::Retry(EvalError::Process(format!("worker exited: {why}")))
            }
        };
        let elapsed = started.elapsed().as_secs_f64();
        let response = match protocol::decode_response(worker.line_no, &text) {
            Ok(r) => r,
            Err(e) => return Attempt::Done(Err(e)),
        };
        if response.id() != id {
            return Attempt::Done(Err(EvalError::MalformedMessage {
                line: worker.line_no,
                reason: format!(
                    "response id {} does not match request id {id}",
                    response.id()
                ),
            }));
        }
        // the worker answered in protocol; keep it for the next request
        self.idle.lock().unwrap().push(worker);
        let result = match response {
            EvaluateResponse::Err { error, .. } => Err(EvalError::Trainer(error)),
            EvaluateResponse::Ok {
                accuracy,
                param_count,
                ..
            } if param_count == expected => Ok(FitnessRecord {
                fitness: accuracy,
                eval_time: elapsed,
                evaluator_id: self.id(),
                cached: false,
                param_count,
            }),
            EvaluateResponse::Ok { param_count, .. } => Err(EvalError::ParamCountMismatch {
                vector: v.to_string(),
                expected,
                reported: param_count,
            }),
        };
        Attempt::Done(result)
    }
}

impl Evaluator for ExternalEvaluator {
    fn id(&self) -> String {
        format!("external:{}", self.opts.command)
    }

    fn spec_digest(&self) -> String {
        digest_json(&(
            "external",
            &self.opts.command,
            &self.opts.spec,
            self.opts.num_classes,
        ))
    }

    fn evaluate(
        &self,
        v: &HyperparamVector,
        ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        let input = self.opts.spec.dataset.input_shape();
        let expected = parameter_count(v, &input, self.opts.num_classes)?;
        let mut last = None;
        for attempt in 0..=self.opts.retries {
            match self.attempt(v, ctx, expected) {
                Attempt::Done(result) => return result,
                Attempt::Retry(e) => {
                    warn!(attempt, error = %e, vector = %v, "trainer attempt failed");
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
