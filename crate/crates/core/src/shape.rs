//! Feature-map shape calculus for the encoded conv-pool-conv-pool stack.
//!
//! Every evolved layer uses zero padding. Pooling windows are
//! non-overlapping: the pooling stride equals the pooling size on each axis.
//! All arithmetic is integer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::HyperparamVector;

/// Number of output classes for every supported dataset.
pub const DEFAULT_NUM_CLASSES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum ShapeError {
    #[error("infeasible shape after {layer} on the {axis}-axis (size {size})")]
    InfeasibleShape { layer: Layer, axis: Axis, size: i64 },
    #[error("invalid image shape {given:?}: expected WxHxC with every dimension >= 1")]
    InvalidImageShape { given: String },
}

/// Layers of the encoded network that change the feature-map size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Conv1,
    Pool1,
    Conv2,
    Pool2,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Conv1 => "conv1",
            Layer::Pool1 => "pool1",
            Layer::Conv2 => "conv2",
            Layer::Pool2 => "pool2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
        })
    }
}

/// Width (x-axis), height (y-axis) and channel count of an image or feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawImageShape")]
pub struct ImageShape {
    pub width_x: i64,
    pub height_y: i64,
    pub channels: i64,
}

#[derive(Deserialize)]
struct RawImageShape {
    width_x: i64,
    height_y: i64,
    channels: i64,
}

impl TryFrom<RawImageShape> for ImageShape {
    type Error = ShapeError;

    fn try_from(raw: RawImageShape) -> Result<Self, Self::Error> {
        ImageShape::new(raw.width_x, raw.height_y, raw.channels)
    }
}

impl ImageShape {
    pub fn new(width_x: i64, height_y: i64, channels: i64) -> Result<Self, ShapeError> {
        if width_x < 1 || height_y < 1 || channels < 1 {
            return Err(ShapeError::InvalidImageShape {
                given: format!("{width_x}x{height_y}x{channels}"),
            });
        }
        Ok(Self {
            width_x,
            height_y,
            channels,
        })
    }

    pub fn dim(&self, axis: Axis) -> i64 {
        match axis {
            Axis::X => self.width_x,
            Axis::Y => self.height_y,
        }
    }

    pub fn aspect(&self) -> Aspect {
        classify_aspect(self)
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width_x, self.height_y, self.channels)
    }
}

impl FromStr for ImageShape {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ShapeError::InvalidImageShape {
            given: s.to_string(),
        };
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut dims = [0i64; 3];
        for (slot, part) in dims.iter_mut().zip(&parts) {
            *slot = part.trim().parse().map_err(|_| bad())?;
        }
        ImageShape::new(dims[0], dims[1], dims[2]).map_err(|_| bad())
    }
}

/// Orientation of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aspect {
    /// x > y
    Wider,
    /// x < y
    Taller,
    /// x = y
    Square,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Wider, Aspect::Taller, Aspect::Square];

    pub fn label(&self) -> &'static str {
        match self {
            Aspect::Wider => "x>y",
            Aspect::Taller => "x<y",
            Aspect::Square => "x=y",
        }
    }
}

pub fn classify_aspect(s: &ImageShape) -> Aspect {
    use std::cmp::Ordering::*;
    match s.width_x.cmp(&s.height_y) {
        Greater => Aspect::Wider,
        Less => Aspect::Taller,
        Equal => Aspect::Square,
    }
}

/// Output size of a convolution or pooling window along one axis:
/// `floor((input - kernel + 2 * padding) / stride) + 1`.
///
/// The result may be zero or negative for infeasible inputs; callers check.
pub fn layer_output_size(input: i64, kernel: i64, padding: i64, stride: i64) -> i64 {
    debug_assert!(kernel >= 1 && stride >= 1);
    (input - kernel + 2 * padding).div_euclid(stride) + 1
}

/// Feature-map dimensions after every layer, plus the flattened size and
/// the trainable parameter count of the whole network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub input: ImageShape,
    /// After conv1.
    pub o1: ImageShape,
    /// After pool1.
    pub o2: ImageShape,
    /// After conv2.
    pub o3: ImageShape,
    /// After pool2.
    pub o4: ImageShape,
    pub flatten: u64,
    pub param_count: u64,
}

impl ShapeTrace {
    /// Input followed by the four layer outputs, in network order.
    pub fn stages(&self) -> [(&'static str, ImageShape); 5] {
        [
            ("input", self.input),
            ("conv1", self.o1),
            ("pool1", self.o2),
            ("conv2", self.o3),
            ("pool2", self.o4),
        ]
    }
}

fn checked_dim(size: i64, layer: Layer, axis: Axis) -> Result<i64, ShapeError> {
    if size < 1 {
        Err(ShapeError::InfeasibleShape { layer, axis, size })
    } else {
        Ok(size)
    }
}

/// Conv layer over both axes; the result carries `filters` channels.
pub(crate) fn conv_output(
    input: &ImageShape,
    kernel: (i64, i64),
    stride: (i64, i64),
    filters: i64,
    layer: Layer,
) -> Result<ImageShape, ShapeError> {
    let x = checked_dim(
        layer_output_size(input.width_x, kernel.0, 0, stride.0),
        layer,
        Axis::X,
    )?;
    let y = checked_dim(
        layer_output_size(input.height_y, kernel.1, 0, stride.1),
        layer,
        Axis::Y,
    )?;
    Ok(ImageShape {
        width_x: x,
        height_y: y,
        channels: filters,
    })
}

/// Non-overlapping pooling: stride equals window size on each axis.
pub(crate) fn pool_output(
    input: &ImageShape,
    window: (i64, i64),
    layer: Layer,
) -> Result<ImageShape, ShapeError> {
    let x = checked_dim(
        layer_output_size(input.width_x, window.0, 0, window.0),
        layer,
        Axis::X,
    )?;
    let y = checked_dim(
        layer_output_size(input.height_y, window.1, 0, window.1),
        layer,
        Axis::Y,
    )?;
    Ok(ImageShape {
        width_x: x,
        height_y: y,
        channels: input.channels,
    })
}

/// Propagates `input` through the network encoded by `v`, assuming the
/// default class count.
pub fn propagate_shapes(
    v: &HyperparamVector,
    input: &ImageShape,
) -> Result<ShapeTrace, ShapeError> {
    propagate_shapes_with_classes(v, input, DEFAULT_NUM_CLASSES)
}

pub fn propagate_shapes_with_classes(
    v: &HyperparamVector,
    input: &ImageShape,
    num_classes: u64,
) -> Result<ShapeTrace, ShapeError> {
    let o1 = conv_output(
        input,
        (v.kernel1_x(), v.kernel1_y()),
        (v.stride1_x(), v.stride1_y()),
        v.filters1(),
        Layer::Conv1,
    )?;
    let o2 = pool_output(&o1, (v.pool1_x(), v.pool1_y()), Layer::Pool1)?;
    let o3 = conv_output(
        &o2,
        (v.kernel2_x(), v.kernel2_y()),
        (v.stride2_x(), v.stride2_y()),
        v.filters2(),
        Layer::Conv2,
    )?;
    let o4 = pool_output(&o3, (v.pool2_x(), v.pool2_y()), Layer::Pool2)?;
    let flatten = (o4.width_x * o4.height_y * o4.channels) as u64;
    let param_count = count_params(v, input, flatten, num_classes);
    Ok(ShapeTrace {
        input: *input,
        o1,
        o2,
        o3,
        o4,
        flatten,
        param_count,
    })
}

fn count_params(v: &HyperparamVector, input: &ImageShape, flatten: u64, num_classes: u64) -> u64 {
    // saturating: out-of-bounds vectors may carry arbitrarily large values
    let n1 = v.filters1() as u64;
    let n3 = v.filters2() as u64;
    let units = v.fc_units() as u64;
    let k1 = (v.kernel1_x() as u64).saturating_mul(v.kernel1_y() as u64);
    let k2 = (v.kernel2_x() as u64).saturating_mul(v.kernel2_y() as u64);
    let conv1 = n1.saturating_mul(k1.saturating_mul(input.channels as u64).saturating_add(1));
    let conv2 = n3.saturating_mul(k2.saturating_mul(n1).saturating_add(1));
    let dense = flatten.saturating_mul(units).saturating_add(units);
    let output = units
        .saturating_mul(num_classes)
        .saturating_add(num_classes);
    conv1
        .saturating_add(conv2)
        .saturating_add(dense)
        .saturating_add(output)
}

/// Trainable parameters of the encoded network. Pooling layers have none.
pub fn parameter_count(
    v: &HyperparamVector,
    input: &ImageShape,
    num_classes: u64,
) -> Result<u64, ShapeError> {
    propagate_shapes_with_classes(v, input, num_classes).map(|t| t.param_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(s: &str) -> HyperparamVector {
        s.parse().unwrap()
    }

    fn shape(w: i64, h: i64, c: i64) -> ImageShape {
        ImageShape::new(w, h, c).unwrap()
    }

    #[test]
    fn output_size_examples() {
        assert_eq!(layer_output_size(5, 3, 1, 1), 5);
        assert_eq!(layer_output_size(7, 1, 0, 1), 7);
        assert_eq!(layer_output_size(28, 5, 0, 1), 24);
        assert_eq!(layer_output_size(18, 8, 0, 8), 2);
    }

    #[test]
    fn output_size_floors_toward_negative_infinity() {
        assert_eq!(layer_output_size(3, 5, 0, 1), -1);
        assert_eq!(layer_output_size(3, 5, 0, 4), 0);
    }

    #[test]
    fn baseline_trace_on_mnist() {
        let t = propagate_shapes(
            &vec("32-5-5-1-1-2-2-64-5-5-1-1-2-2-100-10"),
            &shape(28, 28, 1),
        )
        .unwrap();
        assert_eq!(t.o1, shape(24, 24, 32));
        assert_eq!(t.o2, shape(12, 12, 32));
        assert_eq!(t.o3, shape(8, 8, 64));
        assert_eq!(t.o4, shape(4, 4, 64));
        assert_eq!(t.flatten, 1024);
        assert_eq!(t.param_count, 155_606);
    }

    #[test]
    fn cifar_best_trace() {
        let t = propagate_shapes(
            &vec("64-6-6-1-1-2-5-64-2-3-1-1-1-1-125-14"),
            &shape(32, 32, 3),
        )
        .unwrap();
        assert_eq!(t.o1, shape(27, 27, 64));
        assert_eq!(t.o2, shape(13, 5, 64));
        assert_eq!(t.o3, shape(12, 3, 64));
        assert_eq!(t.o4, shape(12, 3, 64));
        assert_eq!(t.flatten, 2304);
        assert_eq!(t.param_count, 321_001);
    }

    #[test]
    fn identity_pooling_keeps_conv2_output() {
        let t = propagate_shapes(
            &vec("32-5-5-1-1-1-2-64-6-2-1-1-1-1-113-10"),
            &shape(28, 28, 1),
        )
        .unwrap();
        assert_eq!(t.o3, t.o4);
        assert_eq!(t.param_count, 1_538_213);
    }

    #[test]
    fn infeasible_layer_is_named() {
        // conv2 kernel 13 on a 12-wide pooled map
        let err = propagate_shapes(
            &vec("32-5-5-1-1-2-2-64-13-5-1-1-2-2-100-10"),
            &shape(28, 28, 1),
        )
        .unwrap_err();
        assert_eq!(
            err,
            ShapeError::InfeasibleShape {
                layer: Layer::Conv2,
                axis: Axis::X,
                size: 0
            }
        );
    }

    #[test]
    fn aspects() {
        assert_eq!(classify_aspect(&shape(22, 18, 1)), Aspect::Wider);
        assert_eq!(classify_aspect(&shape(28, 28, 1)), Aspect::Square);
        assert_eq!(classify_aspect(&shape(3, 5, 1)), Aspect::Taller);
    }

    #[test]
    fn image_shape_parsing() {
        assert_eq!("28x28x1".parse::<ImageShape>().unwrap(), shape(28, 28, 1));
        assert_eq!("32X32X3".parse::<ImageShape>().unwrap(), shape(32, 32, 3));
        assert!("28x28".parse::<ImageShape>().is_err());
        assert!("0x28x1".parse::<ImageShape>().is_err());
        assert!("axbxc".parse::<ImageShape>().is_err());
    }

    #[test]
    fn image_shape_deserialize_rejects_zero() {
        let r: Result<ImageShape, _> =
            serde_json::from_str(r#"{"width_x":0,"height_y":1,"channels":1}"#);
        assert!(r.is_err());
    }
}
