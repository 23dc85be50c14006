//! Stand-in trainer worker for end-to-end tests. Speaks the evaluation
//! protocol but scores vectors with the separable surrogate instead of
//! training anything.
//!
//! `SWARMTUNE_MOCK_FAIL_AFTER=N` makes the worker exit instead of answering
//! once N requests have been answered. The count is per process unless
//! `SWARMTUNE_MOCK_COUNTER` names a file shared by all workers.

use std::fs;
use std::io::{self, BufRead, Write};

use swarmtune_core::evaluation::protocol::{
    decode_request, encode_handshake, encode_response, EvaluateResponse, Handshake,
};
use swarmtune_core::evaluation::surrogate_separable;
use swarmtune_core::{baseline_vector, parameter_count};

fn main() -> io::Result<()> {
    let fail_after: Option<u64> = std::env::var("SWARMTUNE_MOCK_FAIL_AFTER")
        .ok()
        .and_then(|s| s.parse().ok());
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    writeln!(out, "{}", encode_handshake(&Handshake::current()))?;
    out.flush()?;

    let counter = std::env::var_os("SWARMTUNE_MOCK_COUNTER");
    let mut answered = counter
        .as_ref()
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0u64);
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if fail_after.is_some_and(|k| answered >= k) {
            std::process::exit(1);
        }
        let resp = match decode_request(n as u64 + 1, &line) {
            Err(e) => EvaluateResponse::Err {
                id: 0,
                error: e.to_string(),
            },
            Ok(req) => {
                let v = req.hyperparams();
                let input = req.dataset.input_shape();
                match parameter_count(&v, &input, req.dataset.num_classes()) {
                    Ok(param_count) => EvaluateResponse::Ok {
                        id: req.id,
                        accuracy: surrogate_separable(&v, &baseline_vector(), &input)
                            .clamp(0.0, 1.0),
                        train_time_s: 0.001 * f64::from(req.epochs.max(1)),
                        param_count,
                    },
                    Err(e) => EvaluateResponse::Err {
                        id: req.id,
                        error: e.to_string(),
                    },
                }
            }
        };
        writeln!(out, "{}", encode_response(&resp))?;
        out.flush()?;
        answered += 1;
        if let Some(p) = &counter {
            fs::write(p, answered.to_string())?;
        }
    }
    Ok(())
}
