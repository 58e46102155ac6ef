//! Typed n-dimensional tensors.
//!
//! Three element precisions are supported: FP32, FP16 (stored as IEEE 754
//! binary16 bit patterns) and INT8 with symmetric linear quantization
//! (zero point fixed at 0, integer range `[-127, 127]`).

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest magnitude of a quantized value. `-128` is never produced.
pub const QMAX: i32 = 127;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("buffer of {len} elements does not match shape {shape:?}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Vec<usize>),
    #[error("unsupported cast from {from} to {to}")]
    UnsupportedCast { from: DType, to: DType },
    #[error("invalid quantization parameters: {0}")]
    InvalidQuantParams(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("expected a {expected} tensor, got {actual}")]
    DTypeMismatch { expected: DType, actual: DType },
}

/// Element precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Fp32,
    Fp16,
    Int8,
}

impl DType {
    pub const fn byte_width(self) -> usize {
        match self {
            DType::Fp32 => 4,
            DType::Fp16 => 2,
            DType::Int8 => 1,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            DType::Fp32 => "fp32",
            DType::Fp16 => "fp16",
            DType::Int8 => "int8",
        }
    }

    pub const fn is_float(self) -> bool {
        !matches!(self, DType::Int8)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "float32" | "f32" => Ok(DType::Fp32),
            "fp16" | "float16" | "f16" | "half" => Ok(DType::Fp16),
            "int8" | "i8" => Ok(DType::Int8),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

/// Symmetric quantization parameters. The zero point is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantParams {
    PerTensor { scale: f32 },
    PerChannel { axis: usize, scales: Vec<f32> },
}

fn check_scale(scale: f32) -> Result<(), TensorError> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(TensorError::InvalidQuantParams(format!(
            "scale must be positive and finite, got {scale}"
        )))
    }
}

impl QuantParams {
    pub fn per_tensor(scale: f32) -> Result<Self, TensorError> {
        check_scale(scale)?;
        Ok(QuantParams::PerTensor { scale })
    }

    pub fn per_channel(axis: usize, scales: Vec<f32>) -> Result<Self, TensorError> {
        if scales.is_empty() {
            return Err(TensorError::InvalidQuantParams("empty scale list".into()));
        }
        for &s in &scales {
            check_scale(s)?;
        }
        Ok(QuantParams::PerChannel { axis, scales })
    }

    pub const fn zero_point(&self) -> i32 {
        0
    }

    pub fn axis(&self) -> Option<usize> {
        match self {
            QuantParams::PerTensor { .. } => None,
            QuantParams::PerChannel { axis, .. } => Some(*axis),
        }
    }

    /// Scale list: one entry for per-tensor, one per channel otherwise.
    pub fn scales(&self) -> &[f32] {
        match self {
            QuantParams::PerTensor { scale } => std::slice::from_ref(scale),
            QuantParams::PerChannel { scales, .. } => scales,
        }
    }

    /// Per-tensor scale, if this is a per-tensor scheme.
    pub fn tensor_scale(&self) -> Option<f32> {
        match self {
            QuantParams::PerTensor { scale } => Some(*scale),
            QuantParams::PerChannel { .. } => None,
        }
    }

    pub fn validate(&self, shape: &[usize]) -> Result<(), TensorError> {
        match self {
            QuantParams::PerTensor { scale } => check_scale(*scale),
            QuantParams::PerChannel { axis, scales } => {
                let extent = shape.get(*axis).ok_or_else(|| {
                    TensorError::InvalidQuantParams(format!(
                        "axis {axis} out of range for rank {}",
                        shape.len()
                    ))
                })?;
                if *extent != scales.len() {
                    return Err(TensorError::InvalidQuantParams(format!(
                        "{} scales for extent {extent} along axis {axis}",
                        scales.len()
                    )));
                }
                scales.iter().try_for_each(|&s| check_scale(s))
            }
        }
    }

    /// Scale applying to every element, in row-major order.
    fn element_scales<'a>(&'a self, shape: &[usize]) -> Box<dyn Iterator<Item = f32> + 'a> {
        match self {
            QuantParams::PerTensor { scale } => Box::new(std::iter::repeat(*scale)),
            QuantParams::PerChannel { axis, scales } => {
                let inner: usize = shape[axis + 1..].iter().product();
                let n = scales.len();
                Box::new((0..).map(move |i: usize| scales[(i / inner) % n]))
            }
        }
    }
}

/// Flat element storage.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::Fp32,
            TensorData::F16(_) => DType::Fp16,
            TensorData::I8(_) => DType::Int8,
        }
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// An immutable n-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
    quant: Option<QuantParams>,
}

impl Tensor {
    pub fn new(
        shape: Vec<usize>,
        data: TensorData,
        quant: Option<QuantParams>,
    ) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroDim(shape));
        }
        if numel(&shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        match (&data, &quant) {
            (TensorData::I8(_), None) => {
                return Err(TensorError::InvalidTensor(
                    "INT8 tensor without quantization parameters".into(),
                ))
            }
            (TensorData::I8(_), Some(q)) => q.validate(&shape)?,
            (_, Some(_)) => {
                return Err(TensorError::InvalidTensor(
                    "floating-point tensor carries quantization parameters".into(),
                ))
            }
            _ => {}
        }
        Ok(Tensor { shape, data, quant })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data), None)
    }

    pub fn from_f16(shape: Vec<usize>, data: Vec<f16>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F16(data), None)
    }

    pub fn from_i8(shape: Vec<usize>, data: Vec<i8>, quant: QuantParams) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::I8(data), Some(quant))
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: TensorData::F32(vec![value]),
            quant: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n = numel(&shape);
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn quant(&self) -> Option<&QuantParams> {
        self.quant.as_ref()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f16(&self) -> Option<&[f16]> {
        match &self.data {
            TensorData::F16(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            _ => None,
        }
    }

    /// Real values of every element regardless of storage precision.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
            TensorData::I8(v) => {
                let q = self.quant.as_ref().expect("INT8 tensor always carries params");
                v.iter()
                    .zip(q.element_scales(&self.shape))
                    .map(|(&x, s)| dequantize_value(x, s))
                    .collect()
            }
        }
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let quant = match &self.quant {
            Some(QuantParams::PerChannel { .. }) => {
                return Err(TensorError::InvalidTensor(
                    "cannot reshape a per-channel quantized tensor".into(),
                ))
            }
            other => other.clone(),
        };
        Self::new(shape, self.data.clone(), quant)
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData, Option<QuantParams>) {
        (self.shape, self.data, self.quant)
    }
}

/// FP32 → FP16 with round-to-nearest-even; finite values beyond the FP16
/// range saturate to the largest finite magnitude.
pub fn f32_to_f16_saturating(x: f32) -> f16 {
    let h = f16::from_f32(x);
    if h.is_infinite() && x.is_finite() {
        if x > 0.0 {
            f16::MAX
        } else {
            f16::MIN
        }
    } else {
        h
    }
}

/// Rounds an FP32 value to the nearest FP16-representable value, kept in FP32.
pub fn round_to_f16(x: f32) -> f32 {
    f32_to_f16_saturating(x).to_f32()
}

/// Converts between the floating-point precisions.
pub fn cast(t: &Tensor, target: DType) -> Result<Tensor, TensorError> {
    let from = t.dtype();
    if !from.is_float() || !target.is_float() {
        return Err(TensorError::UnsupportedCast { from, to: target });
    }
    let data = match (&t.data, target) {
        (TensorData::F32(v), DType::Fp16) => {
            TensorData::F16(v.iter().map(|&x| f32_to_f16_saturating(x)).collect())
        }
        (TensorData::F16(v), DType::Fp32) => TensorData::F32(v.iter().map(|h| h.to_f32()).collect()),
        (data, _) => data.clone(),
    };
    Tensor::new(t.shape.clone(), data, None)
}

/// `clamp(round_half_even(x / scale), -127, 127)`.
#[inline]
pub fn quantize_value(x: f32, scale: f32) -> i8 {
    let q = (f64::from(x) / f64::from(scale)).round_ties_even();
    q.clamp(-f64::from(QMAX), f64::from(QMAX)) as i8
}

#[inline]
pub fn dequantize_value(q: i8, scale: f32) -> f32 {
    (f64::from(q) * f64::from(scale)) as f32
}

pub fn quantize_linear(t: &Tensor, q: &QuantParams) -> Result<Tensor, TensorError> {
    q.validate(&t.shape)?;
    let values = t.as_f32().ok_or(TensorError::DTypeMismatch {
        expected: DType::Fp32,
        actual: t.dtype(),
    })?;
    let data = values
        .iter()
        .zip(q.element_scales(&t.shape))
        .map(|(&x, s)| quantize_value(x, s))
        .collect();
    Tensor::from_i8(t.shape.clone(), data, q.clone())
}

pub fn dequantize_linear(t: &Tensor) -> Result<Tensor, TensorError> {
    if t.dtype() != DType::Int8 || t.quant.is_none() {
        return Err(TensorError::InvalidTensor(
            "dequantize requires an INT8 tensor with quantization parameters".into(),
        ));
    }
    Tensor::from_f32(t.shape.clone(), t.to_f32_vec())
}
