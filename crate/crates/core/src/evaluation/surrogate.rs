//! Deterministic stand-in objectives so the optimizer can be exercised
//! without training networks.

use serde::Serialize;

use super::{digest_json, EvalContext, EvalError, Evaluator, FitnessRecord};
use crate::shape::{parameter_count, ImageShape, ShapeError};
use crate::space::{HyperparamVector, KERNEL_COUNTS, NUM_VARS};

/// `1 / (1 + |params - target| / target)`.
pub fn surrogate_param_target(
    v: &HyperparamVector,
    input: &ImageShape,
    num_classes: u64,
    target: u64,
) -> Result<f64, ShapeError> {
    let count = parameter_count(v, input, num_classes)?;
    Ok(param_target_score(count, target))
}

fn param_target_score(count: u64, target: u64) -> f64 {
    let gap = count.abs_diff(target) as f64 / target as f64;
    1.0 / (1.0 + gap)
}

/// Mean over the 16 variables of `1 - ((x - t) / w)^2`, where `w` exceeds
/// the widest distance any admissible value can sit from the target.
/// Equals 1 exactly at the target.
pub fn surrogate_separable(
    v: &HyperparamVector,
    target: &HyperparamVector,
    input: &ImageShape,
) -> f64 {
    let widths = envelope_widths(input);
    let total: f64 = (1..=NUM_VARS)
        .map(|j| {
            let d = (v.get(j) - target.get(j)) as f64 / widths[j - 1] as f64;
            (1.0 - d * d).max(0.0)
        })
        .sum();
    total / NUM_VARS as f64
}

/// Span + 1 of the static envelope of each variable's dynamic bound.
fn envelope_widths(input: &ImageShape) -> [i64; NUM_VARS] {
    let (w, h) = (input.width_x, input.height_y);
    let kc = KERNEL_COUNTS[KERNEL_COUNTS.len() - 1] - KERNEL_COUNTS[0] + 1;
    [
        kc,
        w.min(11) - 1,
        h.min(11) - 1,
        4,
        4,
        w,
        h,
        kc,
        w,
        h,
        4,
        4,
        w,
        h,
        101,
        21,
    ]
    .map(|x: i64| x.max(1))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamTarget {
    pub input: ImageShape,
    pub num_classes: u64,
    pub target: u64,
}

impl ParamTarget {
    pub fn new(input: ImageShape, num_classes: u64, target: u64) -> Self {
        assert!(target > 0, "parameter target must be positive");
        Self {
            input,
            num_classes,
            target,
        }
    }
}

impl Evaluator for ParamTarget {
    fn id(&self) -> String {
        format!("surrogate:param_target(T={})", self.target)
    }

    fn spec_digest(&self) -> String {
        digest_json(&("param_target", self))
    }

    fn evaluate(
        &self,
        v: &HyperparamVector,
        _ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        let count = parameter_count(v, &self.input, self.num_classes)?;
        Ok(FitnessRecord {
            fitness: param_target_score(count, self.target),
            eval_time: 0.0,
            evaluator_id: self.id(),
            cached: false,
            param_count: count,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Separable {
    pub input: ImageShape,
    pub num_classes: u64,
    pub target: HyperparamVector,
}

impl Separable {
    pub fn new(input: ImageShape, num_classes: u64, target: HyperparamVector) -> Self {
        Self {
            input,
            num_classes,
            target,
        }
    }
}

impl Evaluator for Separable {
    fn id(&self) -> String {
        format!("surrogate:separable(target={})", self.target)
    }

    fn spec_digest(&self) -> String {
        digest_json(&("separable", self))
    }

    fn evaluate(
        &self,
        v: &HyperparamVector,
        _ctx: &EvalContext,
    ) -> Result<FitnessRecord, EvalError> {
        let count = parameter_count(v, &self.input, self.num_classes)?;
        Ok(FitnessRecord {
            fitness: surrogate_separable(v, &self.target, &self.input),
            eval_time: 0.0,
            evaluator_id: self.id(),
            cached: false,
            param_count: count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::DEFAULT_NUM_CLASSES;
    use crate::space::{baseline_vector, SearchSpace};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mnist() -> ImageShape {
        ImageShape::new(28, 28, 1).unwrap()
    }

    #[test]
    fn param_target_peaks_at_target() {
        let f = surrogate_param_target(&baseline_vector(), &mnist(), 10, 155_606).unwrap();
        assert_eq!(f, 1.0);
        assert_eq!(param_target_score(200, 100), 0.5);
        assert_eq!(param_target_score(100, 100), 1.0);
        assert!(param_target_score(150, 100) > param_target_score(160, 100));
        assert_eq!(param_target_score(50, 100), param_target_score(150, 100));
    }

    #[test]
    fn param_target_is_in_unit_interval() {
        let space = SearchSpace::new(mnist());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let v = space.sample_vector(&mut rng);
            let f = surrogate_param_target(&v, &mnist(), DEFAULT_NUM_CLASSES, 100_000).unwrap();
            assert!(f > 0.0 && f <= 1.0);
        }
    }

    #[test]
    fn separable_is_one_only_at_target() {
        let target = baseline_vector();
        assert_eq!(surrogate_separable(&target, &target, &mnist()), 1.0);
        let mut off = target;
        off.set(15, 150);
        let s = surrogate_separable(&off, &target, &mnist());
        assert!(s < 1.0 && s > 0.0);
    }

    #[test]
    fn separable_strictly_decreases_per_variable() {
        let target = baseline_vector();
        let mut prev = 1.0;
        for units in 101..=150 {
            let mut v = target;
            v.set(15, units);
            let s = surrogate_separable(&v, &target, &mnist());
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn separable_stays_positive_over_sampled_space() {
        let space = SearchSpace::new(mnist());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = baseline_vector();
        for _ in 0..2000 {
            let v = space.sample_vector(&mut rng);
            let s = surrogate_separable(&v, &target, &mnist());
            assert!(s > 0.0 && s <= 1.0);
        }
    }
}
