//! The 16-variable hyperparameter encoding and its dynamic bounds.
//!
//! Variables are generated and repaired strictly left to right: the bound of
//! a pooling, conv2 kernel, conv2 stride or pool2 variable depends only on
//! variables with a smaller index and on the input image shape.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shape::{self, layer_output_size, Axis, ImageShape, ShapeError};

/// Number of encoded variables.
pub const NUM_VARS: usize = 16;

/// Allowed kernel counts for conv1 (x1) and conv2 (x8).
pub const KERNEL_COUNTS: [i64; 7] = [16, 24, 32, 40, 48, 52, 64];

const BASELINE: [i64; NUM_VARS] = [32, 5, 5, 1, 1, 2, 2, 64, 5, 5, 1, 1, 2, 2, 100, 10];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("variable index {0} is outside 1..=16")]
    InvalidIndex(usize),
    #[error("bound of x{index} needs x{missing}, but the prefix has only {len} values")]
    IncompletePrefix {
        index: usize,
        missing: usize,
        len: usize,
    },
    #[error("prefix is infeasible: {0}")]
    InfeasiblePrefix(#[from] ShapeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid hyperparameter vector {input:?}: {reason}")]
pub struct ParseVectorError {
    pub input: String,
    pub reason: String,
}

/// One CNN configuration: the values x1..x16.
///
/// Text form is 16 dash-separated decimal integers, e.g.
/// `32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HyperparamVector([i64; NUM_VARS]);

impl HyperparamVector {
    pub const fn from_values(values: [i64; NUM_VARS]) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[i64; NUM_VARS] {
        &self.0
    }

    /// Value of variable `j` (1-based).
    pub fn get(&self, j: usize) -> i64 {
        self.0[j - 1]
    }

    pub fn set(&mut self, j: usize, value: i64) {
        self.0[j - 1] = value;
    }

    pub fn filters1(&self) -> i64 {
        self.0[0]
    }
    pub fn kernel1_x(&self) -> i64 {
        self.0[1]
    }
    pub fn kernel1_y(&self) -> i64 {
        self.0[2]
    }
    pub fn stride1_x(&self) -> i64 {
        self.0[3]
    }
    pub fn stride1_y(&self) -> i64 {
        self.0[4]
    }
    pub fn pool1_x(&self) -> i64 {
        self.0[5]
    }
    pub fn pool1_y(&self) -> i64 {
        self.0[6]
    }
    pub fn filters2(&self) -> i64 {
        self.0[7]
    }
    pub fn kernel2_x(&self) -> i64 {
        self.0[8]
    }
    pub fn kernel2_y(&self) -> i64 {
        self.0[9]
    }
    pub fn stride2_x(&self) -> i64 {
        self.0[10]
    }
    pub fn stride2_y(&self) -> i64 {
        self.0[11]
    }
    pub fn pool2_x(&self) -> i64 {
        self.0[12]
    }
    pub fn pool2_y(&self) -> i64 {
        self.0[13]
    }
    pub fn fc_units(&self) -> i64 {
        self.0[14]
    }
    /// Training batch size. Forwarded to the trainer; never affects shapes.
    pub fn batch_size(&self) -> i64 {
        self.0[15]
    }
}

impl fmt::Display for HyperparamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("-")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for HyperparamVector {
    type Err = ParseVectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| ParseVectorError {
            input: s.to_string(),
            reason,
        };
        let parts: Vec<&str> = s.trim().split('-').collect();
        if parts.len() != NUM_VARS {
            return Err(err(format!("expected 16 values, found {}", parts.len())));
        }
        let mut values = [0i64; NUM_VARS];
        for (k, (slot, part)) in values.iter_mut().zip(&parts).enumerate() {
            if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(format!(
                    "x{} is not a decimal integer: {part:?}",
                    k + 1
                )));
            }
            *slot = part
                .parse()
                .map_err(|_| err(format!("x{} out of range: {part:?}", k + 1)))?;
        }
        Ok(Self(values))
    }
}

impl Serialize for HyperparamVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HyperparamVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The encoded original LeNet configuration.
pub fn baseline_vector() -> HyperparamVector {
    HyperparamVector(BASELINE)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    /// Inclusive integer interval.
    Range { lo: i64, hi: i64 },
    /// Sorted, non-empty set of allowed values.
    Set { members: Vec<i64> },
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundKind::Range { lo, hi } => write!(f, "[{lo}, {hi}]"),
            BoundKind::Set { members } => {
                f.write_str("{")?;
                for (k, m) in members.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{m}")?;
                }
                f.write_str("}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableBounds {
    pub index: usize,
    pub kind: BoundKind,
    /// Earlier variables that shaped this bound.
    pub depends_on: Vec<usize>,
}

impl VariableBounds {
    fn range(index: usize, lo: i64, hi: i64, depends_on: &[usize]) -> Self {
        debug_assert!(lo <= hi, "empty range for x{index}: [{lo}, {hi}]");
        Self {
            index,
            kind: BoundKind::Range { lo, hi },
            depends_on: depends_on.to_vec(),
        }
    }

    fn set(index: usize, members: Vec<i64>, depends_on: &[usize]) -> Self {
        Self {
            index,
            kind: BoundKind::Set { members },
            depends_on: depends_on.to_vec(),
        }
    }

    pub fn contains(&self, value: i64) -> bool {
        match &self.kind {
            BoundKind::Range { lo, hi } => (*lo..=*hi).contains(&value),
            BoundKind::Set { members } => members.contains(&value),
        }
    }

    /// Number of admissible values.
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            BoundKind::Range { lo, hi } => (hi - lo + 1) as usize,
            BoundKind::Set { members } => members.len(),
        }
    }

    /// Uniform draw over the admissible values.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match &self.kind {
            BoundKind::Range { lo, hi } => rng.gen_range(*lo..=*hi),
            BoundKind::Set { members } => members[rng.gen_range(0..members.len())],
        }
    }

    /// Maps `value` into the bound: clamp for ranges, nearest member for sets
    /// (ties go to the smaller member).
    pub fn repair(&self, value: i64) -> i64 {
        match &self.kind {
            BoundKind::Range { lo, hi } => value.clamp(*lo, *hi),
            BoundKind::Set { members } => {
                let mut best = members[0];
                for &m in members {
                    let d = (m - value).abs();
                    let db = (best - value).abs();
                    if d < db || (d == db && m < best) {
                        best = m;
                    }
                }
                best
            }
        }
    }
}

fn dependencies(index: usize) -> &'static [usize] {
    match index {
        6 => &[2, 4],
        7 => &[3, 5],
        9 | 11 => &[2, 4, 6],
        10 | 12 => &[3, 5, 7],
        13 => &[2, 4, 6, 9, 11],
        14 => &[3, 5, 7, 10, 12],
        _ => &[],
    }
}

/// Feature-map size along one axis after conv1 (1), pool1 (2) or conv2 (3),
/// computed from a prefix.
fn stage_dim(prefix: &[i64], input: &ImageShape, axis: Axis, stage: u8) -> Result<i64, ShapeError> {
    use shape::Layer;
    // 0-based offsets of (kernel1, stride1, pool1, kernel2, stride2) per axis
    let (k1, s1, p1, k2, s2) = match axis {
        Axis::X => (1, 3, 5, 8, 10),
        Axis::Y => (2, 4, 6, 9, 11),
    };
    let check = |size: i64, layer: Layer| {
        if size < 1 {
            Err(ShapeError::InfeasibleShape { layer, axis, size })
        } else {
            Ok(size)
        }
    };
    let o1 = check(
        layer_output_size(input.dim(axis), prefix[k1], 0, prefix[s1]),
        Layer::Conv1,
    )?;
    if stage == 1 {
        return Ok(o1);
    }
    let o2 = check(
        layer_output_size(o1, prefix[p1], 0, prefix[p1]),
        Layer::Pool1,
    )?;
    if stage == 2 {
        return Ok(o2);
    }
    check(
        layer_output_size(o2, prefix[k2], 0, prefix[s2]),
        Layer::Conv2,
    )
}

fn check_positive_prefix(prefix: &[i64], deps: &[usize]) -> Result<(), ShapeError> {
    // kernel sizes and strides must be >= 1 before the size formula applies
    for &d in deps {
        if prefix[d - 1] < 1 {
            return Err(ShapeError::InfeasibleShape {
                layer: match d {
                    2..=5 => shape::Layer::Conv1,
                    6 | 7 => shape::Layer::Pool1,
                    _ => shape::Layer::Conv2,
                },
                axis: if d % 2 == 0 { Axis::X } else { Axis::Y },
                size: prefix[d - 1],
            });
        }
    }
    Ok(())
}

/// The search space over one input shape, with optional pinned variables.
///
/// A pinned variable has a single admissible value: the pin, repaired into
/// its dynamic bound.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub input: ImageShape,
    #[serde(default)]
    pub pins: [Option<i64>; NUM_VARS],
}

impl SearchSpace {
    pub fn new(input: ImageShape) -> Self {
        Self {
            input,
            pins: [None; NUM_VARS],
        }
    }

    /// Pins every variable of `base` except the listed (1-based) indices.
    pub fn freeze_except(input: ImageShape, base: &HyperparamVector, free: &[usize]) -> Self {
        let mut space = Self::new(input);
        for j in 1..=NUM_VARS {
            if !free.contains(&j) {
                space.pins[j - 1] = Some(base.get(j));
            }
        }
        space
    }

    pub fn pin(mut self, index: usize, value: i64) -> Self {
        self.pins[index - 1] = Some(value);
        self
    }

    pub fn bounds_for(&self, index: usize, partial: &[i64]) -> Result<VariableBounds, SpaceError> {
        let dynamic = dynamic_bounds(index, partial, &self.input)?;
        Ok(match self.pins[index - 1] {
            Some(pin) => {
                let value = dynamic.repair(pin);
                VariableBounds::set(index, vec![value], &dynamic.depends_on)
            }
            None => dynamic,
        })
    }

    /// Draws x1..x16 left to right, each uniformly within its dynamic bound.
    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperparamVector {
        let mut values = [0i64; NUM_VARS];
        for j in 1..=NUM_VARS {
            let bounds = self
                .bounds_for(j, &values[..j - 1])
                .expect("left-to-right prefixes are always feasible");
            values[j - 1] = bounds.sample(rng);
        }
        HyperparamVector(values)
    }

    pub fn repair(&self, value: i64, index: usize, partial: &[i64]) -> Result<i64, SpaceError> {
        Ok(self.bounds_for(index, partial)?.repair(value))
    }

    /// Repairs a whole vector left to right against the bounds of its
    /// already-repaired prefix.
    pub fn repair_vector(&self, v: &HyperparamVector) -> HyperparamVector {
        let mut values = [0i64; NUM_VARS];
        for j in 1..=NUM_VARS {
            values[j - 1] = self
                .repair(v.get(j), j, &values[..j - 1])
                .expect("repaired prefixes are always feasible");
        }
        HyperparamVector(values)
    }

    pub fn validate(&self, v: &HyperparamVector) -> Vec<Violation> {
        let mut violations = Vec::new();
        for j in 1..=NUM_VARS {
            // an Err here means an earlier variable is already out of bounds
            if let Ok(bounds) = self.bounds_for(j, &v.values()[..j - 1]) {
                if !bounds.contains(v.get(j)) {
                    violations.push(Violation::OutOfBounds {
                        index: j,
                        value: v.get(j),
                        bounds: bounds.kind,
                    });
                }
            }
        }
        // every lower bound is >= 1, so non-positive values are reported above
        if v.values().iter().all(|&x| x >= 1) {
            if let Err(e) = shape::propagate_shapes(v, &self.input) {
                violations.push(Violation::Infeasible(e));
            }
        }
        violations
    }

    pub fn is_feasible(&self, v: &HyperparamVector) -> bool {
        self.validate(v).is_empty()
    }
}

fn dynamic_bounds(
    index: usize,
    partial: &[i64],
    input: &ImageShape,
) -> Result<VariableBounds, SpaceError> {
    if !(1..=NUM_VARS).contains(&index) {
        return Err(SpaceError::InvalidIndex(index));
    }
    let deps = dependencies(index);
    if let Some(&missing) = deps.iter().find(|&&d| d > partial.len()) {
        return Err(SpaceError::IncompletePrefix {
            index,
            missing,
            len: partial.len(),
        });
    }
    check_positive_prefix(partial, deps)?;
    let dim = |axis, stage| stage_dim(partial, input, axis, stage);
    let b = match index {
        1 | 8 => VariableBounds::set(index, KERNEL_COUNTS.to_vec(), deps),
        2 => VariableBounds::range(index, 2.min(input.width_x), 11.min(input.width_x), deps),
        3 => VariableBounds::range(index, 2.min(input.height_y), 11.min(input.height_y), deps),
        4 | 5 => VariableBounds::range(index, 1, 4, deps),
        6 => VariableBounds::range(index, 1, dim(Axis::X, 1)?, deps),
        7 => VariableBounds::range(index, 1, dim(Axis::Y, 1)?, deps),
        9 => {
            let o2 = dim(Axis::X, 2)?;
            VariableBounds::range(index, 2.min(o2), o2, deps)
        }
        10 => {
            let o2 = dim(Axis::Y, 2)?;
            VariableBounds::range(index, 2.min(o2), o2, deps)
        }
        11 => VariableBounds::range(index, 1, 4.min(dim(Axis::X, 2)?), deps),
        12 => VariableBounds::range(index, 1, 4.min(dim(Axis::Y, 2)?), deps),
        13 => VariableBounds::range(index, 1, dim(Axis::X, 3)?, deps),
        14 => VariableBounds::range(index, 1, dim(Axis::Y, 3)?, deps),
        15 => VariableBounds::range(index, 50, 150, deps),
        16 => VariableBounds::range(index, 10, 30, deps),
        _ => unreachable!(),
    };
    Ok(b)
}

/// Dynamic bound of variable `index` (1-based) given the values of the
/// variables before it.
pub fn bounds_for(
    index: usize,
    partial: &[i64],
    input: &ImageShape,
) -> Result<VariableBounds, SpaceError> {
    dynamic_bounds(index, partial, input)
}

pub fn sample_vector<R: Rng + ?Sized>(rng: &mut R, input: &ImageShape) -> HyperparamVector {
    SearchSpace::new(*input).sample_vector(rng)
}

pub fn repair(
    value: i64,
    index: usize,
    partial: &[i64],
    input: &ImageShape,
) -> Result<i64, SpaceError> {
    Ok(dynamic_bounds(index, partial, input)?.repair(value))
}

pub fn validate(v: &HyperparamVector, input: &ImageShape) -> Vec<Violation> {
    SearchSpace::new(*input).validate(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfBounds {
        index: usize,
        value: i64,
        bounds: BoundKind,
    },
    Infeasible(ShapeError),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds {
                index,
                value,
                bounds,
            } => {
                write!(f, "x{index} = {value} is outside {bounds}")
            }
            Violation::Infeasible(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mnist() -> ImageShape {
        ImageShape::new(28, 28, 1).unwrap()
    }

    fn cifar() -> ImageShape {
        ImageShape::new(32, 32, 3).unwrap()
    }

    #[test]
    fn pool1_bound_from_prefix() {
        let b = bounds_for(6, &[52, 8, 11, 1, 1], &mnist()).unwrap();
        assert_eq!(b.kind, BoundKind::Range { lo: 1, hi: 21 });
        assert_eq!(b.depends_on, vec![2, 4]);
    }

    #[test]
    fn kernel_count_bound_is_a_set() {
        for prefix in [&[][..], &[16, 2, 2, 1, 1, 1, 1][..]] {
            let idx = if prefix.is_empty() { 1 } else { 8 };
            let b = bounds_for(idx, prefix, &mnist()).unwrap();
            assert_eq!(
                b.kind,
                BoundKind::Set {
                    members: vec![16, 24, 32, 40, 48, 52, 64]
                }
            );
        }
    }

    #[test]
    fn conv2_stride_bound_limited_by_pooled_height() {
        // y-chain: kernel 11 stride 1 -> 18, pool 8 -> 2
        let prefix = [52, 7, 11, 1, 1, 2, 8, 48, 7, 2, 1];
        let b = bounds_for(12, &prefix, &mnist()).unwrap();
        assert_eq!(b.kind, BoundKind::Range { lo: 1, hi: 2 });
    }

    #[test]
    fn conv2_kernel_lower_bound_degrades_on_unit_map() {
        // pool1 = whole conv1 output -> pooled size 1
        let prefix = [32, 5, 5, 1, 1, 24, 24, 64];
        let b = bounds_for(9, &prefix, &mnist()).unwrap();
        assert_eq!(b.kind, BoundKind::Range { lo: 1, hi: 1 });
    }

    #[test]
    fn missing_dependency_is_reported() {
        let err = bounds_for(13, &[32, 5, 5, 1, 1, 2, 2, 64], &mnist()).unwrap_err();
        assert_eq!(
            err,
            SpaceError::IncompletePrefix {
                index: 13,
                missing: 9,
                len: 8
            }
        );
        assert_eq!(
            bounds_for(0, &[], &mnist()).unwrap_err(),
            SpaceError::InvalidIndex(0)
        );
        assert_eq!(
            bounds_for(17, &[], &mnist()).unwrap_err(),
            SpaceError::InvalidIndex(17)
        );
    }

    #[test]
    fn repair_examples() {
        let set = bounds_for(1, &[], &mnist()).unwrap();
        assert_eq!(set.repair(30), 32);
        assert_eq!(set.repair(28), 24);
        assert_eq!(set.repair(1000), 64);
        let r = VariableBounds::range(6, 1, 5, &[]);
        assert_eq!(r.repair(7), 5);
        assert_eq!(r.repair(-3), 1);
        assert_eq!(repair(30, 8, &[0; 7], &mnist()).unwrap(), 32);
    }

    #[test]
    fn baseline_is_feasible() {
        assert_eq!(
            baseline_vector().to_string(),
            "32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10"
        );
        assert!(validate(&baseline_vector(), &mnist()).is_empty());
        assert!(validate(&baseline_vector(), &cifar()).is_empty());
    }

    #[test]
    fn validate_flags_oversized_kernel() {
        let mut v = baseline_vector();
        v.set(2, 12);
        let violations = validate(&v, &mnist());
        assert_eq!(
            violations[0],
            Violation::OutOfBounds {
                index: 2,
                value: 12,
                bounds: BoundKind::Range { lo: 2, hi: 11 }
            }
        );
        assert_eq!(violations[0].to_string(), "x2 = 12 is outside [2, 11]");
    }

    #[test]
    fn validate_flags_conv2_kernel_beyond_pooled_map() {
        // x6 = 4 -> O2^x = 6 ... use pool 4 on 24 -> 6; then kernel 7 > 6
        let v: HyperparamVector = "32-5-5-1-1-4-2-64-7-5-1-1-1-1-100-10".parse().unwrap();
        let violations = validate(&v, &mnist());
        assert!(violations.iter().any(|x| matches!(
            x,
            Violation::OutOfBounds {
                index: 9,
                value: 7,
                ..
            }
        )));
        assert!(violations
            .iter()
            .any(|x| matches!(x, Violation::Infeasible(_))));
    }

    #[test]
    fn validate_catches_zero_values() {
        let v: HyperparamVector = "32-5-5-0-1-2-2-64-5-5-1-1-2-2-100-10".parse().unwrap();
        assert!(!validate(&v, &mnist()).is_empty());
    }

    #[test]
    fn sampling_is_deterministic_and_feasible() {
        let a = sample_vector(&mut ChaCha8Rng::seed_from_u64(11), &mnist());
        let b = sample_vector(&mut ChaCha8Rng::seed_from_u64(11), &mnist());
        assert_eq!(a, b);
        assert!(validate(&a, &mnist()).is_empty());
    }

    #[test]
    fn pins_fix_values() {
        let base = baseline_vector();
        let space = SearchSpace::freeze_except(mnist(), &base, &[15, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v = space.sample_vector(&mut rng);
            assert_eq!(&v.values()[..14], &base.values()[..14]);
            assert!((50..=150).contains(&v.fc_units()));
            assert!((10..=30).contains(&v.batch_size()));
        }
    }

    #[test]
    fn vector_text_form() {
        let v: HyperparamVector = "52-7-11-1-1-2-8-48-7-2-1-1-1-1-103-11".parse().unwrap();
        assert_eq!(v.to_string(), "52-7-11-1-1-2-8-48-7-2-1-1-1-1-103-11");
        assert_eq!(v.get(15), 103);
        assert!("1-2-3".parse::<HyperparamVector>().is_err());
        assert!("32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-x"
            .parse::<HyperparamVector>()
            .is_err());
        assert!("32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-"
            .parse::<HyperparamVector>()
            .is_err());
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, "\"52-7-11-1-1-2-8-48-7-2-1-1-1-1-103-11\"");
        assert_eq!(serde_json::from_str::<HyperparamVector>(&json).unwrap(), v);
    }
}
