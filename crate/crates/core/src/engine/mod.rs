//! Graph execution and classification.
//!
//! Each op computes in the precision of its inputs:
//!
//! * FP32 inputs run the FP32 kernels.
//! * FP16 inputs are widened, run through the FP32 kernels, and every output
//!   element is rounded back to FP16.
//! * INT8 inputs accumulate in i32 and are requantized with round-half-even
//!   to the node's `scale` attribute. A Conv2D/DepthwiseConv2D/MatMul
//!   without `scale` yields a raw i32 accumulator that must be consumed by
//!   an AddV2 with an INT32 bias Const at the accumulator's scale.
//!
//! Mixing precisions inside one op is a dtype error; precision changes go
//! through Cast nodes.

pub mod kernels;
pub mod preprocess;

use std::collections::BTreeMap;
use std::time::Instant;

use half::f16;
use thiserror::Error;

use crate::bundle::{Metadata, ModelBundle, Weight};
use crate::graph::{Node, OpKind, Padding};
use crate::tensor::{
    self, f32_to_f16_saturating, DType, QuantParams, Tensor, TensorData, TensorError, QMAX,
};
use kernels::ConvGeom;

pub use preprocess::{
    decode_image, image_to_tensor, preprocess, stack_batch, PreprocessError, PreprocessSpec,
    Resize, ValueRange,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("node `{node}`: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        node: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("node `{node}`: dtype mismatch: {detail}")]
    DTypeMismatch { node: String, detail: String },
    #[error("node `{0}`: INT8 result needs a `scale` attribute")]
    MissingScale(String),
    #[error("graph must have exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("node `{node}`: {source}")]
    Tensor {
        node: String,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("cannot classify: {0}")]
    Classify(String),
}

/// Raw INT8 accumulator: real value = `data[i] * scales[channel(i)]`,
/// channel being the last axis.
#[derive(Debug, Clone, PartialEq)]
struct Accumulator {
    shape: Vec<usize>,
    data: Vec<i32>,
    scales: Vec<f64>,
}

impl Accumulator {
    fn to_tensor(&self) -> Tensor {
        let c = self.scales.len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &q)| (f64::from(q) * self.scales[i % c]) as f32)
            .collect();
        Tensor::from_f32(self.shape.clone(), data).expect("accumulator shape is consistent")
    }
}

enum Value<'a> {
    Ref(&'a Tensor),
    Owned(Tensor),
    Acc(Accumulator),
    Bias(&'a [usize], &'a [i32]),
}

impl Value<'_> {
    fn tensor(&self) -> Option<&Tensor> {
        match self {
            Value::Ref(t) => Some(t),
            Value::Owned(t) => Some(t),
            _ => None,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Value::Ref(t) => t.shape(),
            Value::Owned(t) => t.shape(),
            Value::Acc(a) => &a.shape,
            Value::Bias(s, _) => s,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Value::Acc(_) => "int32 accumulator",
            Value::Bias(..) => "int32 bias",
            v => match v.tensor().map(Tensor::dtype) {
                Some(DType::Fp32) => "fp32",
                Some(DType::Fp16) => "fp16",
                _ => "int8",
            },
        }
    }

    fn into_tensor(self) -> Option<Tensor> {
        match self {
            Value::Ref(t) => Some(t.clone()),
            Value::Owned(t) => Some(t),
            Value::Acc(a) => Some(a.to_tensor()),
            Value::Bias(..) => None,
        }
    }
}

#[inline]
fn requantize(real_over_scale: f64) -> i8 {
    real_over_scale
        .round_ties_even()
        .clamp(-f64::from(QMAX), f64::from(QMAX)) as i8
}

fn round_f16_vec(v: Vec<f32>) -> Vec<f16> {
    v.into_iter().map(f32_to_f16_saturating).collect()
}

fn widen(v: &[f16]) -> Vec<f32> {
    v.iter().map(|h| h.to_f32()).collect()
}

struct Ctx<'n> {
    node: &'n Node,
}

impl Ctx<'_> {
    fn mismatch(&self, lhs: &[usize], rhs: &[usize]) -> EngineError {
        EngineError::ShapeMismatch {
            node: self.node.id.clone(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    fn dtype(&self, detail: impl Into<String>) -> EngineError {
        EngineError::DTypeMismatch {
            node: self.node.id.clone(),
            detail: detail.into(),
        }
    }

    fn tensor_err(&self, source: TensorError) -> EngineError {
        EngineError::Tensor {
            node: self.node.id.clone(),
            source,
        }
    }

    fn out_scale(&self) -> Result<f32, EngineError> {
        self.node
            .attrs
            .scale
            .ok_or_else(|| EngineError::MissingScale(self.node.id.clone()))
    }

    fn tensor<'v>(&self, v: &'v Value<'_>) -> Result<&'v Tensor, EngineError> {
        v.tensor()
            .ok_or_else(|| self.dtype(format!("{} operand not accepted by {}", v.describe(), self.node.op)))
    }

    fn activation_scale(&self, t: &Tensor) -> Result<f64, EngineError> {
        t.quant()
            .and_then(QuantParams::tensor_scale)
            .map(f64::from)
            .ok_or_else(|| self.dtype("INT8 activation must be quantized per tensor"))
    }

    fn owned(&self, shape: Vec<usize>, data: TensorData, quant: Option<QuantParams>) -> Result<Value<'static>, EngineError> {
        Tensor::new(shape, data, quant)
            .map(Value::Owned)
            .map_err(|e| self.tensor_err(e))
    }

    /// INT8 tensor at the node's output scale.
    fn quantized(&self, shape: Vec<usize>, data: Vec<i8>, scale: f32) -> Result<Value<'static>, EngineError> {
        let q = QuantParams::per_tensor(scale).map_err(|e| self.tensor_err(e))?;
        self.owned(shape, TensorData::I8(data), Some(q))
    }
}

/// Per-output-channel weight scales for an INT8 kernel.
fn kernel_channel_scales(
    ctx: &Ctx,
    w: &Tensor,
    axis: usize,
    out_channels: usize,
    group: usize,
) -> Result<Vec<f64>, EngineError> {
    let q = w.quant().ok_or_else(|| ctx.dtype("INT8 kernel without params"))?;
    match q {
        QuantParams::PerTensor { scale } => Ok(vec![f64::from(*scale); out_channels]),
        QuantParams::PerChannel { axis: a, scales } if *a == axis => {
            Ok((0..out_channels).map(|oc| f64::from(scales[oc / group])).collect())
        }
        QuantParams::PerChannel { axis: a, .. } => Err(ctx.dtype(format!(
            "kernel quantized along axis {a}, expected {axis}"
        ))),
    }
}

/// Shared epilogue of the INT8 contraction kernels.
fn finish_int8(
    ctx: &Ctx,
    shape: Vec<usize>,
    acc: Vec<i32>,
    scales: Vec<f64>,
) -> Result<Value<'static>, EngineError> {
    match ctx.node.attrs.scale {
        None => Ok(Value::Acc(Accumulator {
            shape,
            data: acc,
            scales,
        })),
        Some(out) => {
            let out = f64::from(out);
            let c = scales.len();
            let mult: Vec<f64> = scales.iter().map(|s| s / out).collect();
            let data = acc
                .iter()
                .enumerate()
                .map(|(i, &a)| requantize(f64::from(a) * mult[i % c]))
                .collect();
            ctx.quantized(shape, data, out as f32)
        }
    }
}

fn conv(ctx: &Ctx, x: &Tensor, w: &Tensor, depthwise: bool) -> Result<Value<'static>, EngineError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] {
        return Err(ctx.mismatch(xs, ws));
    }
    let attrs = &ctx.node.attrs;
    let geom = ConvGeom::new(
        xs,
        ws[0],
        ws[1],
        attrs.strides_or_default(),
        attrs.padding.unwrap_or(Padding::Valid),
    )
    .ok_or_else(|| ctx.mismatch(xs, ws))?;
    let (co, group) = if depthwise { (ws[2] * ws[3], ws[3]) } else { (ws[3], 1) };
    let shape = vec![geom.n, geom.oh, geom.ow, co];
    let run_f32 = |xv: &[f32], wv: &[f32]| {
        if depthwise {
            kernels::depthwise(xv, wv, &geom, ws[3])
        } else {
            kernels::conv2d(xv, wv, &geom, co)
        }
    };
    match (x.data(), w.data()) {
        (TensorData::F32(xv), TensorData::F32(wv)) => {
            ctx.owned(shape, TensorData::F32(run_f32(xv, wv)), None)
        }
        (TensorData::F16(xv), TensorData::F16(wv)) => ctx.owned(
            shape,
            TensorData::F16(round_f16_vec(run_f32(&widen(xv), &widen(wv)))),
            None,
        ),
        (TensorData::I8(xv), TensorData::I8(wv)) => {
            let sx = ctx.activation_scale(x)?;
            let (axis, per) = if depthwise { (2, group) } else { (3, 1) };
            let scales = kernel_channel_scales(ctx, w, axis, co, per)?
                .into_iter()
                .map(|s| s * sx)
                .collect();
            let acc = if depthwise {
                kernels::depthwise(xv, wv, &geom, ws[3])
            } else {
                kernels::conv2d(xv, wv, &geom, co)
            };
            finish_int8(ctx, shape, acc, scales)
        }
        _ => Err(ctx.dtype(format!("{} input with {} kernel", x.dtype(), w.dtype()))),
    }
}

fn matmul(ctx: &Ctx, a: &Tensor, b: &Tensor) -> Result<Value<'static>, EngineError> {
    let (as_, bs) = (a.shape(), b.shape());
    if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
        return Err(ctx.mismatch(as_, bs));
    }
    let (n, f, o) = (as_[0], as_[1], bs[1]);
    let shape = vec![n, o];
    match (a.data(), b.data()) {
        (TensorData::F32(av), TensorData::F32(bv)) => {
            ctx.owned(shape, TensorData::F32(kernels::matmul(av, bv, n, f, o)), None)
        }
        (TensorData::F16(av), TensorData::F16(bv)) => ctx.owned(
            shape,
            TensorData::F16(round_f16_vec(kernels::matmul(&widen(av), &widen(bv), n, f, o))),
            None,
        ),
        (TensorData::I8(av), TensorData::I8(bv)) => {
            let sa = ctx.activation_scale(a)?;
            let scales = kernel_channel_scales(ctx, b, 1, o, 1)?
                .into_iter()
                .map(|s| s * sa)
                .collect();
            finish_int8(ctx, shape, kernels::matmul(av, bv, n, f, o), scales)
        }
        _ => Err(ctx.dtype(format!("{} × {}", a.dtype(), b.dtype()))),
    }
}

/// Exact real values of an INT8 tensor in f64.
fn int8_reals(t: &Tensor) -> Vec<f64> {
    let q = t.quant().expect("INT8 tensors carry params");
    let data = t.as_i8().expect("INT8 data");
    match q {
        QuantParams::PerTensor { scale } => data.iter().map(|&v| f64::from(v) * f64::from(*scale)).collect(),
        QuantParams::PerChannel { axis, scales } => {
            let inner: usize = t.shape()[axis + 1..].iter().product();
            data.iter()
                .enumerate()
                .map(|(i, &v)| f64::from(v) * f64::from(scales[(i / inner) % scales.len()]))
                .collect()
        }
    }
}

fn binary(ctx: &Ctx, a: &Value, b: &Value) -> Result<Value<'static>, EngineError> {
    let is_add = ctx.node.op == OpKind::AddV2;
    let f = |x: f32, y: f32| if is_add { x + y } else { x * y };
    let (shape, pairs) =
        kernels::broadcast_pairs(a.shape(), b.shape()).ok_or_else(|| ctx.mismatch(a.shape(), b.shape()))?;

    // Accumulator plus INT32 bias.
    let acc_bias = match (a, b) {
        (Value::Acc(acc), Value::Bias(_, bias)) | (Value::Bias(_, bias), Value::Acc(acc)) if is_add => {
            Some((acc, *bias))
        }
        _ => None,
    };
    if let Some((acc, bias)) = acc_bias {
        if shape != acc.shape {
            return Err(ctx.mismatch(&acc.shape, &shape));
        }
        let out = f64::from(ctx.out_scale()?);
        let c = acc.scales.len();
        let lb = bias.len();
        let data = acc
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let sum = i64::from(v) + i64::from(bias[if lb == 1 { 0 } else { i % lb }]);
                requantize(sum as f64 * acc.scales[i % c] / out)
            })
            .collect();
        return ctx.quantized(shape, data, out as f32);
    }

    let (ta, tb) = (ctx.tensor(a)?, ctx.tensor(b)?);
    match (ta.data(), tb.data()) {
        (TensorData::F32(x), TensorData::F32(y)) => {
            let data = pairs.iter().map(|&(i, j)| f(x[i], y[j])).collect();
            ctx.owned(shape, TensorData::F32(data), None)
        }
        (TensorData::F16(x), TensorData::F16(y)) => {
            let data = pairs
                .iter()
                .map(|&(i, j)| f32_to_f16_saturating(f(x[i].to_f32(), y[j].to_f32())))
                .collect();
            ctx.owned(shape, TensorData::F16(data), None)
        }
        (TensorData::I8(_), TensorData::I8(_)) => {
            let out = f64::from(ctx.out_scale()?);
            let (x, y) = (int8_reals(ta), int8_reals(tb));
            let data = pairs
                .iter()
                .map(|&(i, j)| {
                    let r = if is_add { x[i] + y[j] } else { x[i] * y[j] };
                    requantize(r / out)
                })
                .collect();
            ctx.quantized(shape, data, out as f32)
        }
        _ => Err(ctx.dtype(format!("{} and {} operands", ta.dtype(), tb.dtype()))),
    }
}

fn relu6(ctx: &Ctx, x: &Tensor) -> Result<Value<'static>, EngineError> {
    let shape = x.shape().to_vec();
    match x.data() {
        TensorData::F32(v) => ctx.owned(shape, TensorData::F32(v.iter().map(|&a| kernels::relu6(a)).collect()), None),
        TensorData::F16(v) => ctx.owned(
            shape,
            TensorData::F16(v.iter().map(|h| f32_to_f16_saturating(kernels::relu6(h.to_f32()))).collect()),
            None,
        ),
        TensorData::I8(_) => {
            let sx = ctx.activation_scale(x)?;
            let out = ctx.node.attrs.scale.map_or(sx, f64::from);
            let data = int8_reals(x)
                .into_iter()
                .map(|r| requantize(r.clamp(0.0, 6.0) / out))
                .collect();
            ctx.quantized(shape, data, out as f32)
        }
    }
}

fn mean(ctx: &Ctx, x: &Tensor) -> Result<Value<'static>, EngineError> {
    let axes = ctx.node.attrs.axes.clone().unwrap_or_default();
    let keep = ctx.node.attrs.keep_dims.unwrap_or(false);
    if axes.iter().any(|&a| a >= x.rank()) {
        return Err(ctx.mismatch(x.shape(), &axes));
    }
    let float_mean = |v: &[f32]| {
        let (sums, count, shape) = kernels::reduce_sum(v, x.shape(), &axes, keep, f64::from);
        let means: Vec<f32> = sums.into_iter().map(|s| (s / count as f64) as f32).collect();
        (means, shape)
    };
    match x.data() {
        TensorData::F32(v) => {
            let (m, shape) = float_mean(v);
            ctx.owned(shape, TensorData::F32(m), None)
        }
        TensorData::F16(v) => {
            let (m, shape) = float_mean(&widen(v));
            ctx.owned(shape, TensorData::F16(round_f16_vec(m)), None)
        }
        TensorData::I8(v) => {
            let sx = ctx.activation_scale(x)?;
            let out = ctx.node.attrs.scale.map_or(sx, f64::from);
            let (sums, count, shape) = kernels::reduce_sum(v, x.shape(), &axes, keep, i64::from);
            let mult = sx / (count as f64 * out);
            let data = sums.into_iter().map(|s| requantize(s as f64 * mult)).collect();
            ctx.quantized(shape, data, out as f32)
        }
    }
}

fn pad(ctx: &Ctx, x: &Tensor) -> Result<Value<'static>, EngineError> {
    let pads = ctx.node.attrs.pads.clone().unwrap_or_default();
    if pads.len() != x.rank() {
        return Err(ctx.mismatch(x.shape(), &[pads.len()]));
    }
    match x.data() {
        TensorData::F32(v) => {
            let (out, shape) = kernels::pad(v, x.shape(), &pads, 0.0);
            ctx.owned(shape, TensorData::F32(out), None)
        }
        TensorData::F16(v) => {
            let (out, shape) = kernels::pad(v, x.shape(), &pads, f16::ZERO);
            ctx.owned(shape, TensorData::F16(out), None)
        }
        TensorData::I8(v) => {
            let (out, shape) = kernels::pad(v, x.shape(), &pads, 0i8);
            ctx.owned(shape, TensorData::I8(out), x.quant().cloned())
        }
    }
}

fn cast_node(ctx: &Ctx, x: &Tensor) -> Result<Value<'static>, EngineError> {
    let to = ctx.node.attrs.to.ok_or_else(|| ctx.dtype("Cast without target"))?;
    let from = x.dtype();
    let err = |e| ctx.tensor_err(e);
    let t = match (from, to) {
        _ if from == to => x.clone(),
        (DType::Int8, _) => {
            let real = tensor::dequantize_linear(x).map_err(err)?;
            tensor::cast(&real, to).map_err(err)?
        }
        (_, DType::Int8) => {
            let scale = ctx.out_scale()?;
            let q = QuantParams::per_tensor(scale).map_err(err)?;
            let real = tensor::cast(x, DType::Fp32).map_err(err)?;
            tensor::quantize_linear(&real, &q).map_err(err)?
        }
        _ => tensor::cast(x, to).map_err(err)?,
    };
    Ok(Value::Owned(t))
}

fn eval_node<'a>(
    bundle: &'a ModelBundle,
    node: &Node,
    input: &'a Tensor,
    ins: &[&Value<'a>],
) -> Result<Value<'a>, EngineError> {
    let ctx = Ctx { node };
    match node.op {
        OpKind::Input => {
            let spec = bundle
                .graph()
                .input_spec(&node.id)
                .expect("validated graphs carry input specs");
            let s = input.shape();
            if s.len() != spec.shape.len() || s[1..] != spec.shape[1..] {
                return Err(ctx.mismatch(&spec.shape, s));
            }
            if input.dtype() != spec.dtype {
                return Err(ctx.dtype(format!("input is {}, model expects {}", input.dtype(), spec.dtype)));
            }
            Ok(Value::Ref(input))
        }
        OpKind::Const => match bundle.weight(node) {
            Some(Weight::Tensor(t)) => Ok(Value::Ref(t)),
            Some(Weight::Int32 { shape, values }) => Ok(Value::Bias(shape, values)),
            None => Err(ctx.dtype("Const without weight")),
        },
        OpKind::Conv2D | OpKind::DepthwiseConv2D => conv(
            &ctx,
            ctx.tensor(ins[0])?,
            ctx.tensor(ins[1])?,
            node.op == OpKind::DepthwiseConv2D,
        ),
        OpKind::MatMul => matmul(&ctx, ctx.tensor(ins[0])?, ctx.tensor(ins[1])?),
        OpKind::AddV2 | OpKind::Mul => binary(&ctx, ins[0], ins[1]),
        OpKind::Relu6 => relu6(&ctx, ctx.tensor(ins[0])?),
        OpKind::Mean => mean(&ctx, ctx.tensor(ins[0])?),
        OpKind::Pad => pad(&ctx, ctx.tensor(ins[0])?),
        OpKind::Cast => cast_node(&ctx, ctx.tensor(ins[0])?),
        OpKind::Identity => Ok(match ins[0] {
            Value::Ref(t) => Value::Ref(t),
            Value::Owned(t) => Value::Owned(t.clone()),
            Value::Acc(a) => Value::Acc(a.clone()),
            Value::Bias(s, v) => Value::Bias(s, v),
        }),
    }
}

fn execute<'a>(
    bundle: &'a ModelBundle,
    input: &'a Tensor,
    retain_all: bool,
) -> Result<Vec<Option<Value<'a>>>, EngineError> {
    let graph = bundle.graph();
    let inputs = graph.nodes.iter().filter(|n| n.op == OpKind::Input).count();
    if inputs != 1 {
        return Err(EngineError::InputCount(inputs));
    }
    let index = graph.index_of();
    let n = graph.nodes.len();
    let mut last_use = vec![usize::MAX; n];
    let mut keep = vec![retain_all; n];
    for (i, node) in graph.nodes.iter().enumerate() {
        for inp in &node.inputs {
            last_use[index[inp.as_str()]] = i;
        }
    }
    for o in &graph.outputs {
        keep[index[o.as_str()]] = true;
    }
    let mut values: Vec<Option<Value<'a>>> = Vec::with_capacity(n);
    values.resize_with(n, || None);
    for (i, node) in graph.nodes.iter().enumerate() {
        let (done, rest) = values.split_at_mut(i);
        let ins: Vec<&Value<'a>> = node
            .inputs
            .iter()
            .map(|id| done[index[id.as_str()]].as_ref().expect("inputs evaluated in topological order"))
            .collect();
        rest[0] = Some(eval_node(bundle, node, input, &ins)?);
        for inp in &node.inputs {
            let j = index[inp.as_str()];
            if last_use[j] == i && !keep[j] {
                values[j] = None;
            }
        }
    }
    Ok(values)
}

/// Runs the graph and returns the value of every non-Const node. INT8
/// accumulators are reported dequantized.
pub fn run_forward(bundle: &ModelBundle, input: &Tensor) -> Result<BTreeMap<String, Tensor>, EngineError> {
    let values = execute(bundle, input, true)?;
    Ok(bundle
        .graph()
        .nodes
        .iter()
        .zip(values)
        .filter(|(node, _)| node.op != OpKind::Const)
        .filter_map(|(node, v)| Some((node.id.clone(), v?.into_tensor()?)))
        .collect())
}

/// Runs the graph and returns its outputs in declaration order.
pub fn run_outputs(bundle: &ModelBundle, input: &Tensor) -> Result<Vec<Tensor>, EngineError> {
    let mut values = execute(bundle, input, false)?;
    let index = bundle.graph().index_of();
    bundle
        .graph()
        .outputs
        .iter()
        .map(|o| {
            values[index[o.as_str()]]
                .take()
                .and_then(Value::into_tensor)
                .ok_or_else(|| EngineError::DTypeMismatch {
                    node: o.clone(),
                    detail: "output is not a tensor".into(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub class_index: usize,
    pub confidence: f32,
    /// Raw head output (logit or logits).
    pub output: Vec<f32>,
    pub latency_ms: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (f64::from(l) - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Maps a head output row to `(class index, confidence)`. A single logit is
/// a sigmoid score for the positive class; ties at 0.5 go to the positive
/// class. Wider outputs use softmax and the first maximal class.
pub fn classify(output: &[f32], meta: &Metadata) -> Result<(usize, f32), EngineError> {
    let k = meta.classes.len();
    match output {
        [logit] => {
            let pos = meta
                .positive_class
                .filter(|&p| p < k && k == 2)
                .ok_or_else(|| EngineError::Classify("single-logit head needs two classes and a positive class".into()))?;
            let p = sigmoid(f64::from(*logit));
            Ok(if p >= 0.5 { (pos, p as f32) } else { (1 - pos, (1.0 - p) as f32) })
        }
        _ if output.len() == k && k >= 2 => {
            let probs = softmax(output);
            let (best, p) = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
            Ok((best, p as f32))
        }
        _ => Err(EngineError::Classify(format!(
            "output width {} does not fit {k} classes",
            output.len()
        ))),
    }
}

/// Classifies every row of a batched input; latency is the forward time
/// divided evenly across rows.
pub fn predict_batch(bundle: &ModelBundle, input: &Tensor) -> Result<Vec<Prediction>, EngineError> {
    let start = Instant::now();
    let outputs = run_outputs(bundle, input)?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let out = outputs
        .into_iter()
        .next()
        .ok_or_else(|| EngineError::Classify("model has no outputs".into()))?;
    let rows = out.shape().first().copied().unwrap_or(1).max(1);
    let values = out.to_f32_vec();
    let width = values.len() / rows;
    values
        .chunks(width.max(1))
        .map(|row| {
            let (class_index, confidence) = classify(row, &bundle.metadata)?;
            Ok(Prediction {
                label: bundle.metadata.classes[class_index].clone(),
                class_index,
                confidence,
                output: row.to_vec(),
                latency_ms: latency_ms / rows as f64,
            })
        })
        .collect()
}

pub fn predict_tensor(bundle: &ModelBundle, input: &Tensor) -> Result<Prediction, EngineError> {
    predict_batch(bundle, input)?
        .into_iter()
        .next()
        .ok_or_else(|| EngineError::Classify("empty batch".into()))
}

/// Decodes, preprocesses and classifies one image. Latency covers the
/// forward pass only.
pub fn predict(bundle: &ModelBundle, image_bytes: &[u8]) -> Result<Prediction, EngineError> {
    let input = preprocess(image_bytes, &bundle.metadata.preprocess)?;
    predict_tensor(bundle, &input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{GraphBuilder, Variant};
    use crate::graph::Attrs;

    fn meta(classes: &[&str], positive: Option<usize>) -> Metadata {
        let mut m = Metadata::new("t", Variant::Fp32, PreprocessSpec::new(2, 2, ValueRange::ZeroOne));
        m.classes = classes.iter().map(|s| s.to_string()).collect();
        m.positive_class = positive;
        m
    }

    #[test]
    fn binary_classification_rules() {
        let m = meta(&["Monkeypox", "Others"], Some(0));
        assert_eq!(classify(&[0.0], &m).unwrap(), (0, 0.5));
        let (c, p) = classify(&[4.0], &m).unwrap();
        assert_eq!(c, 0);
        assert!((p - 0.982_013_8).abs() < 1e-6);
        let (c, p) = classify(&[-4.0], &m).unwrap();
        assert_eq!(c, 1);
        assert!((p - 0.982_013_8).abs() < 1e-6);
    }

    #[test]
    fn multiclass_argmax() {
        let m = meta(&["a", "b", "c"], None);
        let logits: Vec<f32> = [0.1f32, 0.7, 0.2].iter().map(|p| p.ln()).collect();
        let (c, p) = classify(&logits, &m).unwrap();
        assert_eq!(c, 1);
        assert!((p - 0.7).abs() < 1e-6);
        assert!(classify(&[1.0, 2.0], &m).is_err());
    }

    #[test]
    fn relu6_graph() {
        let mut b = GraphBuilder::new();
        b.input("x", vec![1, 3]);
        b.op("r", OpKind::Relu6, &["x"], Attrs::default());
        b.output("r");
        let bundle = b.build(meta(&[], None)).unwrap();
        let x = Tensor::from_f32(vec![1, 3], vec![-1.0, 3.0, 7.0]).unwrap();
        let out = run_outputs(&bundle, &x).unwrap();
        assert_eq!(out[0].to_f32_vec(), vec![0.0, 3.0, 6.0]);
    }

    #[test]
    fn input_shape_is_checked_but_batch_is_free() {
        let mut b = GraphBuilder::new();
        b.input("x", vec![1, 3]);
        b.op("r", OpKind::Identity, &["x"], Attrs::default());
        b.output("r");
        let bundle = b.build(meta(&[], None)).unwrap();
        let batch = Tensor::from_f32(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(run_outputs(&bundle, &batch).unwrap()[0].shape(), &[2, 3]);
        let wrong = Tensor::from_f32(vec![1, 4], vec![0.0; 4]).unwrap();
        assert!(matches!(
            run_outputs(&bundle, &wrong),
            Err(EngineError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn fp32_into_int8_kernel_is_dtype_error() {
        let mut b = GraphBuilder::new();
        b.input("x", vec![1, 2]);
        let w = b.constant(
            "w",
            Tensor::from_i8(vec![2, 1], vec![1, 1], QuantParams::per_tensor(1.0).unwrap()).unwrap(),
        );
        b.op("mm", OpKind::MatMul, &["x", &w], Attrs::default());
        b.output("mm");
        let bundle = b.build(meta(&[], None)).unwrap();
        let x = Tensor::from_f32(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            run_outputs(&bundle, &x),
            Err(EngineError::DTypeMismatch { node, .. }) if node == "mm"
        ));
    }

    #[test]
    fn int8_matmul_with_bias_accumulator() {
        // x = [1, 2] quantized at 1/127; w = [[1],[1]] at 1/127 per column;
        // bias 0.5 stored at x_scale * w_scale.
        let sx = 1.0f32 / 127.0;
        let mut b = GraphBuilder::new();
        b.input("x", vec![1, 2]);
        b.op(
            "q",
            OpKind::Cast,
            &["x"],
            Attrs {
                to: Some(DType::Int8),
                scale: Some(2.0 / 127.0),
                ..Default::default()
            },
        );
        let w = b.constant(
            "w",
            Tensor::from_i8(vec![2, 1], vec![127, 127], QuantParams::per_channel(1, vec![sx]).unwrap()).unwrap(),
        );
        b.op("mm", OpKind::MatMul, &["q", &w], Attrs::default());
        let acc_scale = f64::from(2.0f32 / 127.0) * f64::from(sx);
        let bias = (0.5 / acc_scale).round_ties_even() as i32;
        let bc = b.weight("b", Weight::Int32 { shape: vec![1], values: vec![bias] });
        b.op(
            "add",
            OpKind::AddV2,
            &["mm", &bc],
            Attrs {
                scale: Some(4.0 / 127.0),
                ..Default::default()
            },
        );
        b.op("dq", OpKind::Cast, &["add"], Attrs::cast(DType::Fp32));
        b.output("dq");
        let bundle = b.build(meta(&[], None)).unwrap();
        let x = Tensor::from_f32(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let out = run_outputs(&bundle, &x).unwrap()[0].to_f32_vec();
        assert!((out[0] - 3.5).abs() <= 4.0 / 127.0, "{out:?}");
        let all = run_forward(&bundle, &x).unwrap();
        assert!(all.contains_key("mm"));
        assert!(!all.contains_key("b"));
    }
}
