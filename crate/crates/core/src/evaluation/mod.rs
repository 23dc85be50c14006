//! Fitness evaluation: test-set accuracy, the evaluator contract, and the
//! evaluators shipped with the crate.

mod cache;
mod external;
pub mod protocol;
mod surrogate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::shape::{ImageShape, ShapeError, DEFAULT_NUM_CLASSES};
use crate::space::HyperparamVector;

pub use cache::CachedEvaluator;
pub use external::{ExternalEvaluator, ExternalOptions};
pub use surrogate::{surrogate_param_target, surrogate_separable, ParamTarget, Separable};

/// Learning rate both sides of the trainer protocol agree on.
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    ZeroTestSet,
    #[error("{correct} correct predictions out of {total} is impossible")]
    InvalidCounts { correct: u64, total: u64 },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("malformed message at line {line}: {reason}")]
    MalformedMessage { line: u64, reason: String },
    #[error("trainer reported param_count {reported}, expected {expected} for {vector}")]
    ParamCountMismatch {
        vector: String,
        expected: u64,
        reported: u64,
    },
    #[error("trainer failed: {0}")]
    Trainer(String),
    #[error("evaluation timed out after {0:.1} s")]
    Timeout(f64),
    #[error("trainer process error: {0}")]
    Process(String),
}

/// Classification accuracy `correct / total` on the test set.
pub fn accuracy(correct: u64, total: u64) -> Result<f64, EvalError> {
    if total == 0 {
        return Err(EvalError::ZeroTestSet);
    }
    if correct > total {
        return Err(EvalError::InvalidCounts { correct, total });
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    /// Test accuracy in [0, 1].
    pub fitness: f64,
    /// Seconds spent evaluating; zero for cache hits and surrogates.
    pub eval_time: f64,
    pub evaluator_id: String,
    pub cached: bool,
    pub param_count: u64,
}

/// Identifies one evaluation within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub run: u32,
    pub generation: u32,
    pub index: u32,
    /// Seed handed to a stochastic trainer.
    pub trainer_seed: u64,
}

impl EvalContext {
    pub fn new(run: u32, generation: u32, index: u32, run_seed: u64, ordinal: u64) -> Self {
        Self {
            run,
            generation,
            index,
            trainer_seed: derive_trainer_seed(run_seed, ordinal),
        }
    }
}

/// Mixes a run seed and an evaluation ordinal (splitmix64 finalizer).
pub fn derive_trainer_seed(run_seed: u64, ordinal: u64) -> u64 {
    let mut z = run_seed
        .wrapping_add(ordinal.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps a feasible hyperparameter vector to a fitness in [0, 1].
pub trait Evaluator: Send + Sync {
    fn id(&self) -> String;

    /// Digest of everything besides the vector that determines fitness.
    fn spec_digest(&self) -> String;

    fn evaluate(&self, v: &HyperparamVector, ctx: &EvalContext)
        -> Result<FitnessRecord, EvalError>;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn id(&self) -> String {
        (**self).id()
    }
    fn spec_digest(&self) -> String {
        (**self).spec_digest()
    }
    fn evaluate(
        &self,
        v: &HyperparamVector,
        ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        (**self).evaluate(v, ctx)
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn spec_digest(&self) -> String {
        (**self).spec_digest()
    }
    fn evaluate(
        &self,
        v: &HyperparamVector,
        ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        (**self).evaluate(v, ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl Dataset {
    pub fn input_shape(&self) -> ImageShape {
        match self {
            Dataset::Mnist | Dataset::FashionMnist => ImageShape {
                width_x: 28,
                height_y: 28,
                channels: 1,
            },
            Dataset::Cifar10 => ImageShape {
                width_x: 32,
                height_y: 32,
                channels: 3,
            },
        }
    }

    pub fn num_classes(&self) -> u64 {
        DEFAULT_NUM_CLASSES
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::FashionMnist => "fashion_mnist",
            Dataset::Cifar10 => "cifar10",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mnist" => Ok(Dataset::Mnist),
            "fashion_mnist" | "fashionmnist" => Ok(Dataset::FashionMnist),
            "cifar10" | "cifar_10" => Ok(Dataset::Cifar10),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}

/// Which held-out split the trainer scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessSplit {
    #[default]
    Test,
    Validation,
}

/// Training settings forwarded to the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub epochs: u32,
    pub optimizer_name: String,
    pub activation_name: String,
    pub classifier_name: String,
    pub loss_name: String,
    pub dataset: Dataset,
    pub train_subset: Option<u64>,
    pub test_subset: Option<u64>,
    pub learning_rate: f64,
    pub momentum: f64,
    #[serde(default)]
    pub fitness_split: FitnessSplit,
}

impl TrainSpec {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            epochs: 10,
            optimizer_name: "sgd".into(),
            activation_name: "relu".into(),
            classifier_name: "softmax".into(),
            loss_name: "cross_entropy".into(),
            dataset,
            train_subset: None,
            test_subset: None,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            fitness_split: FitnessSplit::Test,
        }
    }

    pub fn digest(&self) -> String {
        digest_json(self)
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(10_000, 10_000).unwrap(), 1.0);
        assert_eq!(accuracy(0, 10_000).unwrap(), 0.0);
        assert_eq!(accuracy(9923, 10_000).unwrap(), 0.9923);
        assert_eq!(accuracy(1, 0), Err(EvalError::ZeroTestSet));
        assert!(matches!(
            accuracy(5, 4),
            Err(EvalError::InvalidCounts { .. })
        ));
    }

    #[test]
    fn train_spec_defaults() {
        let spec = TrainSpec::new(Dataset::Mnist);
        assert_eq!(spec.epochs, 10);
        assert_eq!(spec.optimizer_name, "sgd");
        assert_eq!(spec.activation_name, "relu");
        assert_eq!(spec.classifier_name, "softmax");
        assert_eq!(spec.loss_name, "cross_entropy");
        assert_eq!(spec.learning_rate, 0.01);
        assert_eq!(spec.momentum, 0.0);
        assert_eq!(spec.fitness_split, FitnessSplit::Test);
    }

    #[test]
    fn dataset_shapes() {
        assert_eq!(Dataset::Mnist.input_shape().to_string(), "28x28x1");
        assert_eq!(Dataset::FashionMnist.input_shape().to_string(), "28x28x1");
        assert_eq!(Dataset::Cifar10.input_shape().to_string(), "32x32x3");
        assert_eq!(
            "fashion-mnist".parse::<Dataset>().unwrap(),
            Dataset::FashionMnist
        );
        assert!("imagenet".parse::<Dataset>().is_err());
    }

    #[test]
    fn trainer_seeds_differ_by_ordinal() {
        let a = derive_trainer_seed(7, 0);
        let b = derive_trainer_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_trainer_seed(7, 0));
        assert_ne!(derive_trainer_seed(8, 0), a);
    }

    #[test]
    fn digest_changes_with_spec() {
        let a = TrainSpec::new(Dataset::Mnist);
        let mut b = a.clone();
        b.epochs = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
