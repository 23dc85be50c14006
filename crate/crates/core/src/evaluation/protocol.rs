//! Newline-delimited JSON messages exchanged with a trainer worker over its
//! standard input and output.
//!
//! The worker announces itself with `{"op":"ready","protocol":1}`, then
//! answers each `evaluate` request with exactly one response carrying the
//! same `id`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Dataset, EvalError, FitnessSplit, TrainSpec};
use crate::space::{HyperparamVector, NUM_VARS};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub id: u64,
    pub op: String,
    pub dataset: Dataset,
    pub vector: [i64; NUM_VARS],
    pub epochs: u32,
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub activation: String,
    pub classifier: String,
    pub loss: String,
    pub train_subset: Option<u64>,
    pub test_subset: Option<u64>,
    pub seed: u64,
    /// Only sent when scoring a validation split instead of the test set.
    #[serde(default, skip_serializing_if = "is_test_split")]
    pub split: FitnessSplit,
}

fn is_test_split(s: &FitnessSplit) -> bool {
    *s == FitnessSplit::Test
}

impl EvaluateRequest {
    pub fn new(id: u64, v: &HyperparamVector, spec: &TrainSpec, seed: u64) -> Self {
        Self {
            id,
            op: "evaluate".into(),
            dataset: spec.dataset,
            vector: *v.values(),
            epochs: spec.epochs,
            optimizer: spec.optimizer_name.clone(),
            lr: spec.learning_rate,
            momentum: spec.momentum,
            activation: spec.activation_name.clone(),
            classifier: spec.classifier_name.clone(),
            loss: spec.loss_name.clone(),
            train_subset: spec.train_subset,
            test_subset: spec.test_subset,
            seed,
            split: spec.fitness_split,
        }
    }

    pub fn hyperparams(&self) -> HyperparamVector {
        HyperparamVector::from_values(self.vector)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluateResponse {
    Ok {
        id: u64,
        accuracy: f64,
        train_time_s: f64,
        param_count: u64,
    },
    Err {
        id: u64,
        error: String,
    },
}

impl EvaluateResponse {
    pub fn id(&self) -> u64 {
        match self {
            EvaluateResponse::Ok { id, .. } | EvaluateResponse::Err { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub op: ReadyOp,
    pub protocol: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadyOp {
    Ready,
}

impl Handshake {
    pub fn current() -> Self {
        Self {
            op: ReadyOp::Ready,
            protocol: PROTOCOL_VERSION,
        }
    }
}

fn malformed(line: u64, reason: impl Into<String>) -> EvalError {
    EvalError::MalformedMessage {
        line,
        reason: reason.into(),
    }
}

pub fn encode_request(req: &EvaluateRequest) -> String {
    serde_json::to_string(req).expect("request is serializable")
}

pub fn decode_request(line: u64, text: &str) -> Result<EvaluateRequest, EvalError> {
    let req: EvaluateRequest =
        serde_json::from_str(text.trim_end()).map_err(|e| malformed(line, e.to_string()))?;
    if req.op != "evaluate" {
        return Err(malformed(line, format!("unknown op {:?}", req.op)));
    }
    Ok(req)
}

pub fn encode_response(resp: &EvaluateResponse) -> String {
    let value = match resp {
        EvaluateResponse::Ok {
            id,
            accuracy,
            train_time_s,
            param_count,
        } => serde_json::json!({
            "id": id,
            "ok": true,
            "accuracy": accuracy,
            "train_time_s": train_time_s,
            "param_count": param_count,
        }),
        EvaluateResponse::Err { id, error } => serde_json::json!({
            "id": id,
            "ok": false,
            "error": error,
        }),
    };
    value.to_string()
}

fn field<'a>(obj: &'a Map<String, Value>, line: u64, name: &str) -> Result<&'a Value, EvalError> {
    obj.get(name)
        .ok_or_else(|| malformed(line, format!("missing {name:?}")))
}

fn unsigned(obj: &Map<String, Value>, line: u64, name: &str) -> Result<u64, EvalError> {
    field(obj, line, name)?
        .as_u64()
        .ok_or_else(|| malformed(line, format!("{name:?} must be an unsigned integer")))
}

fn finite(obj: &Map<String, Value>, line: u64, name: &str) -> Result<f64, EvalError> {
    field(obj, line, name)?
        .as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| malformed(line, format!("{name:?} must be a finite number")))
}

/// Parses and schema-checks one response line. Out-of-range accuracies are
/// rejected rather than clamped.
pub fn decode_response(line: u64, text: &str) -> Result<EvaluateResponse, EvalError> {
    let value: Value =
        serde_json::from_str(text.trim_end()).map_err(|e| malformed(line, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line, "response is not a JSON object"))?;
    let id = unsigned(obj, line, "id")?;
    let ok = field(obj, line, "ok")?
        .as_bool()
        .ok_or_else(|| malformed(line, "\"ok\" must be a boolean"))?;
    if !ok {
        let error = field(obj, line, "error")?
            .as_str()
            .ok_or_else(|| malformed(line, "\"error\" must be a string"))?;
        return Ok(EvaluateResponse::Err {
            id,
            error: error.to_string(),
        });
    }
    let accuracy = finite(obj, line, "accuracy")?;
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(malformed(
            line,
            format!("accuracy {accuracy} outside [0, 1]"),
        ));
    }
    let train_time_s = finite(obj, line, "train_time_s")?;
    if train_time_s < 0.0 {
        return Err(malformed(
            line,
            format!("negative train_time_s {train_time_s}"),
        ));
    }
    let param_count = unsigned(obj, line, "param_count")?;
    Ok(EvaluateResponse::Ok {
        id,
        accuracy,
        train_time_s,
        param_count,
    })
}

pub fn encode_handshake(h: &Handshake) -> String {
    serde_json::to_string(h).expect("handshake is serializable")
}

/// Parses the worker's first line and checks the protocol version.
pub fn decode_handshake(line: u64, text: &str) -> Result<Handshake, EvalError> {
    let h: Handshake = serde_json::from_str(text.trim_end())
        .map_err(|e| malformed(line, format!("bad handshake: {e}")))?;
    if h.protocol != PROTOCOL_VERSION {
        return Err(malformed(
            line,
            format!(
                "protocol {} unsupported, expected {PROTOCOL_VERSION}",
                h.protocol
            ),
        ));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::baseline_vector;

    #[test]
    fn request_round_trip() {
        let mut spec = TrainSpec::new(Dataset::Mnist);
        spec.train_subset = Some(2000);
        let req = EvaluateRequest::new(3, &baseline_vector(), &spec, 99);
        let text = encode_request(&req);
        assert!(!text.contains('\n'));
        assert_eq!(decode_request(1, &text).unwrap(), req);
        assert_eq!(req.hyperparams(), baseline_vector());
    }

    #[test]
    fn request_wire_layout() {
        let spec = TrainSpec::new(Dataset::Cifar10);
        let text = encode_request(&EvaluateRequest::new(1, &baseline_vector(), &spec, 5));
        assert_eq!(
            text,
            concat!(
                r#"{"id":1,"op":"evaluate","dataset":"cifar10","#,
                r#""vector":[32,5,5,1,1,2,2,64,5,5,1,1,2,2,100,10],"#,
                r#""epochs":10,"optimizer":"sgd","lr":0.01,"momentum":0.0,"#,
                r#""activation":"relu","classifier":"softmax","loss":"cross_entropy","#,
                r#""train_subset":null,"test_subset":null,"seed":5}"#
            )
        );
    }

    #[test]
    fn validation_split_is_sent_only_when_enabled() {
        let mut spec = TrainSpec::new(Dataset::Mnist);
        spec.fitness_split = FitnessSplit::Validation;
        let text = encode_request(&EvaluateRequest::new(1, &baseline_vector(), &spec, 5));
        assert!(text.ends_with(r#""seed":5,"split":"validation"}"#));
    }

    #[test]
    fn response_round_trip() {
        for resp in [
            EvaluateResponse::Ok {
                id: 4,
                accuracy: 0.9923,
                train_time_s: 12.5,
                param_count: 155_606,
            },
            EvaluateResponse::Err {
                id: 5,
                error: "out of memory".into(),
            },
        ] {
            assert_eq!(decode_response(1, &encode_response(&resp)).unwrap(), resp);
        }
    }

    #[test]
    fn missing_accuracy_is_malformed() {
        let err = decode_response(
            7,
            r#"{"id":1,"ok":true,"train_time_s":1.0,"param_count":3}"#,
        )
        .unwrap_err();
        assert_eq!(
            err,
            EvalError::MalformedMessage {
                line: 7,
                reason: "missing \"accuracy\"".into()
            }
        );
    }

    #[test]
    fn out_of_range_accuracy_is_malformed() {
        let err = decode_response(
            2,
            r#"{"id":1,"ok":true,"accuracy":1.2,"train_time_s":1.0,"param_count":3}"#,
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::MalformedMessage { line: 2, .. }));
        assert!(decode_response(
            2,
            r#"{"id":1,"ok":true,"accuracy":-0.1,"train_time_s":1.0,"param_count":3}"#
        )
        .is_err());
    }

    #[test]
    fn other_schema_violations() {
        assert!(decode_response(1, "not json").is_err());
        assert!(decode_response(1, "[1,2]").is_err());
        assert!(decode_response(1, r#"{"ok":true}"#).is_err());
        assert!(decode_response(1, r#"{"id":-1,"ok":false,"error":"x"}"#).is_err());
        assert!(decode_response(1, r#"{"id":1,"ok":false}"#).is_err());
        assert!(decode_response(1, r#"{"id":1,"ok":"yes"}"#).is_err());
    }

    #[test]
    fn handshake() {
        let text = encode_handshake(&Handshake::current());
        assert_eq!(text, r#"{"op":"ready","protocol":1}"#);
        assert!(decode_handshake(1, &text).is_ok());
        assert!(decode_handshake(1, r#"{"op":"ready","protocol":2}"#).is_err());
        assert!(decode_handshake(1, r#"{"op":"hello","protocol":1}"#).is_err());
    }

    #[test]
    fn unknown_request_op_is_rejected() {
        let spec = TrainSpec::new(Dataset::Mnist);
        let text = encode_request(&EvaluateRequest::new(1, &baseline_vector(), &spec, 5))
            .replace("evaluate", "train");
        assert!(decode_request(1, &text).is_err());
    }
}
