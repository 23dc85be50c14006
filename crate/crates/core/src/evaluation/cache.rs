use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{EvalContext, EvalError, Evaluator, FitnessRecord};
use crate::space::HyperparamVector;

type Slot = Arc<Mutex<Option<FitnessRecord>>>;

/// Memoizes an evaluator by (vector text form, spec digest).
///
/// Each key is evaluated at most once even under concurrent callers: the
/// first caller holds the key's slot lock while the inner evaluator runs.
/// Failed evaluations are not cached.
pub struct CachedEvaluator<E> {
    inner: E,
    digest: String,
    slots: Mutex<HashMap<(String, String), Slot>>,
    invocations: AtomicU64,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        let digest = inner.spec_digest();
        Self {
            inner,
            digest,
            slots: Mutex::new(HashMap::new()),
            invocations: AtomicU64::new(0),
        }
    }

    /// Number of calls that reached the inner evaluator.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn spec_digest(&self) -> String {
        self.digest.clone()
    }

    fn evaluate(
        &self,
        v: &HyperparamVector,
        ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        let key = (v.to_string(), self.digest.clone());
        let slot = self.slots.lock().unwrap().entry(key).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some(hit) = guard.as_ref() {
            return Ok(FitnessRecord {
                eval_time: 0.0,
                cached: true,
                ..hit.clone()
            });
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let record = self.inner.evaluate(v, ctx)?;
        *guard = Some(record.clone());
        Ok(record)
    }
}
