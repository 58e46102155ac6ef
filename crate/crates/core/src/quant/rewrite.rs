//! Mixed-precision rewriting. Every non-Const node is assigned FP32 (Input
//! nodes and excluded nodes) or the low precision; a Cast is inserted on
//! each edge whose endpoints disagree (one per producer and target), and
//! every low-precision graph output gets a Cast back to FP32.

use std::collections::{HashMap, HashSet};

use super::{rebuild, CalibrationProfile, PrecisionPlan, QuantError};
use crate::bundle::{ModelBundle, Variant, Weight};
use crate::graph::{Attrs, Graph, Node, OpKind};
use crate::tensor::{cast, quantize_linear, DType, QuantParams, Tensor, QMAX};

fn weight_scale(max_abs: f32) -> f32 {
    max_abs.max(1e-8) / QMAX as f32
}

/// Per-channel symmetric scales along `axis`.
pub fn channel_scales(t: &Tensor, axis: usize) -> Vec<f32> {
    let shape = t.shape();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut max = vec![0.0f32; shape[axis]];
    for (i, v) in t.to_f32_vec().into_iter().enumerate() {
        let c = (i / inner) % shape[axis];
        max[c] = max[c].max(v.abs());
    }
    max.into_iter().map(weight_scale).collect()
}

fn kernel_axis(op: OpKind) -> Option<usize> {
    match op {
        OpKind::Conv2D => Some(3),
        OpKind::DepthwiseConv2D => Some(2),
        OpKind::MatMul => Some(1),
        _ => None,
    }
}

/// Output-channel scales of an INT8 kernel, expanded for depthwise multipliers.
fn output_channel_scales(op: OpKind, kernel: &Tensor, scales: &[f32]) -> Vec<f32> {
    match op {
        OpKind::DepthwiseConv2D => {
            let mult = kernel.shape()[3];
            scales.iter().flat_map(|&s| std::iter::repeat_n(s, mult)).collect()
        }
        _ => scales.to_vec(),
    }
}

struct Rewriter<'a> {
    src: &'a ModelBundle,
    low: DType,
    plan: &'a PrecisionPlan,
    profile: Option<&'a CalibrationProfile>,
    /// Kernels whose raw accumulator feeds an INT32 bias add.
    acc: HashSet<&'a str>,
    nodes: Vec<Node>,
    weights: Vec<Weight>,
    casts: HashMap<(String, DType), String>,
    used: HashSet<String>,
}

impl<'a> Rewriter<'a> {
    fn graph(&self) -> &'a Graph {
        self.src.graph()
    }

    fn node(&self, id: &str) -> &'a Node {
        self.graph().node(id).expect("validated reference")
    }

    fn precision(&self, n: &Node) -> DType {
        if n.op == OpKind::Input || self.plan.is_excluded(&n.id) {
            DType::Fp32
        } else {
            self.low
        }
    }

    fn src_tensor(&self, id: &str) -> Result<&'a Tensor, QuantError> {
        self.src
            .weight(self.node(id))
            .and_then(Weight::as_tensor)
            .filter(|t| t.dtype() == DType::Fp32)
            .ok_or_else(|| QuantError::Unsupported(format!("const `{id}` is not FP32")))
    }

    fn profile_scale(&self, id: &str) -> Result<f32, QuantError> {
        self.profile
            .and_then(|p| p.get(id))
            .map(|r| r.scale())
            .ok_or_else(|| QuantError::MissingCalibration(id.to_string()))
    }

    /// Scale of the INT8 tensor a low-precision node produces.
    fn activation_scale(&self, id: &str) -> Result<f32, QuantError> {
        let n = self.node(id);
        if self.precision(n) == self.low && matches!(n.op, OpKind::Pad | OpKind::Identity) {
            return self.activation_scale(&n.inputs[0]);
        }
        self.profile_scale(id)
    }

    /// Unused node id derived from `base`; `own` allows `base` itself to be
    /// an id of the source graph.
    fn fresh_id(&mut self, base: &str, suffix: &str, own: bool) -> String {
        let mut id = base.to_string();
        let mut k = 0;
        while self.used.contains(&id) || (!(own && id == base) && self.graph().node(&id).is_some()) {
            k += 1;
            id = if k == 1 { format!("{base}/{suffix}") } else { format!("{base}/{suffix}{k}") };
        }
        self.used.insert(id.clone());
        id
    }

    fn push_const(&mut self, base: &str, consumer: &str, w: Weight) -> String {
        let id = self.fresh_id(base, consumer.rsplit('/').next().unwrap_or(consumer), true);
        self.weights.push(w);
        let mut node = Node::new(id.clone(), OpKind::Const, vec![], Attrs::default());
        node.weight = Some(self.weights.len() - 1);
        self.nodes.push(node);
        id
    }

    /// Value of `producer` in precision `to`, inserting a Cast if needed.
    fn edge(&mut self, producer: &str, to: DType) -> Result<String, QuantError> {
        let from = self.precision(self.node(producer));
        if from == to {
            return Ok(producer.to_string());
        }
        if let Some(id) = self.casts.get(&(producer.to_string(), to)) {
            return Ok(id.clone());
        }
        let (suffix, attrs) = match (from, to) {
            (DType::Fp32, DType::Int8) => (
                "quantize",
                Attrs {
                    to: Some(DType::Int8),
                    scale: Some(self.profile_scale(producer)?),
                    ..Default::default()
                },
            ),
            (DType::Int8, _) => ("dequantize", Attrs::cast(to)),
            _ => (if to == DType::Fp16 { "to_fp16" } else { "to_fp32" }, Attrs::cast(to)),
        };
        let id = self.fresh_id(&format!("{producer}/{suffix}"), "cast", false);
        self.nodes.push(Node::new(id.clone(), OpKind::Cast, vec![producer.to_string()], attrs));
        self.casts.insert((producer.to_string(), to), id.clone());
        Ok(id)
    }

    fn constant(&mut self, c: &str, consumer: &Node, pos: usize) -> Result<String, QuantError> {
        let prec = self.precision(consumer);
        let src = self.src.weight(self.node(c)).expect("const weight");
        let w = match prec {
            DType::Fp32 => src.clone(),
            DType::Fp16 => match src {
                Weight::Tensor(t) => Weight::Tensor(cast(t, DType::Fp16)?),
                Weight::Int32 { .. } => return Err(QuantError::Unsupported(format!("INT32 const `{c}`"))),
            },
            DType::Int8 => self.int8_const(c, consumer, pos)?,
        };
        Ok(self.push_const(c, &consumer.id, w))
    }

    fn int8_const(&self, c: &str, consumer: &Node, pos: usize) -> Result<Weight, QuantError> {
        let t = self.src_tensor(c)?;
        if pos == 1 {
            if let Some(axis) = kernel_axis(consumer.op) {
                let q = QuantParams::per_channel(axis, channel_scales(t, axis))?;
                return Ok(Weight::Tensor(quantize_linear(t, &q)?));
            }
        }
        if consumer.op == OpKind::AddV2 {
            let other = &consumer.inputs[1 - pos];
            if self.acc.contains(other.as_str()) {
                return self.int32_bias(t, other);
            }
        }
        let max = t.to_f32_vec().into_iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let q = QuantParams::per_tensor(weight_scale(max))?;
        Ok(Weight::Tensor(quantize_linear(t, &q)?))
    }

    /// Bias at the accumulator scale `s_in · s_w[c]` of `kernel_node`.
    fn int32_bias(&self, bias: &Tensor, kernel_node: &str) -> Result<Weight, QuantError> {
        let k = self.node(kernel_node);
        let kernel = self.src_tensor(&k.inputs[1])?;
        let axis = kernel_axis(k.op).expect("accumulating kernel");
        let s_in = f64::from(self.activation_scale(&k.inputs[0])?);
        let scales = output_channel_scales(k.op, kernel, &channel_scales(kernel, axis));
        let b = bias.as_f32().expect("fp32 bias");
        let values = scales
            .iter()
            .enumerate()
            .map(|(ch, &s_w)| {
                let v = f64::from(b[if b.len() == 1 { 0 } else { ch }]) / (s_in * f64::from(s_w));
                v.round_ties_even().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
            })
            .collect();
        Ok(Weight::Int32 {
            shape: vec![scales.len()],
            values,
        })
    }

    fn int8_attrs(&self, n: &Node) -> Result<Attrs, QuantError> {
        let mut attrs = n.attrs.clone();
        let scaled = match n.op {
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::MatMul => !self.acc.contains(n.id.as_str()),
            OpKind::AddV2 | OpKind::Mul | OpKind::Relu6 | OpKind::Mean => true,
            _ => false,
        };
        if scaled {
            attrs.scale = Some(self.profile_scale(&n.id)?);
        }
        Ok(attrs)
    }

    fn run(mut self, variant: Variant) -> Result<ModelBundle, QuantError> {
        let g = self.graph();
        for n in &g.nodes {
            if n.op == OpKind::Const {
                continue;
            }
            let prec = self.precision(n);
            let mut inputs = Vec::with_capacity(n.inputs.len());
            for (pos, inp) in n.inputs.iter().enumerate() {
                let p = self.node(inp);
                inputs.push(if p.op == OpKind::Const {
                    self.constant(inp, n, pos)?
                } else {
                    self.edge(inp, prec)?
                });
            }
            let attrs = if prec == DType::Int8 { self.int8_attrs(n)? } else { n.attrs.clone() };
            self.used.insert(n.id.clone());
            self.nodes.push(Node {
                id: n.id.clone(),
                op: n.op,
                inputs,
                attrs,
                weight: None,
            });
        }
        let mut outputs = Vec::new();
        for o in &g.outputs {
            outputs.push(self.edge(o, DType::Fp32)?);
        }
        let mut metadata = self.src.metadata.clone();
        metadata.variant = variant;
        let graph = Graph {
            inputs: g.inputs.clone(),
            nodes: self.nodes,
            outputs,
            output_dtype: DType::Fp32,
        };
        rebuild(metadata, graph, self.weights)
    }
}

fn check_source(b: &ModelBundle, plan: &PrecisionPlan) -> Result<(), QuantError> {
    if !matches!(b.variant(), Variant::Fp32 | Variant::Fp32Opt) {
        return Err(QuantError::NotFp32(b.variant()));
    }
    if let Some(id) = plan.excluded.iter().find(|id| b.graph().node(id).is_none()) {
        return Err(QuantError::UnknownNode(id.clone()));
    }
    Ok(())
}

fn rewriter<'a>(
    b: &'a ModelBundle,
    low: DType,
    plan: &'a PrecisionPlan,
    profile: Option<&'a CalibrationProfile>,
) -> Rewriter<'a> {
    Rewriter {
        src: b,
        low,
        plan,
        profile,
        acc: HashSet::new(),
        nodes: Vec::new(),
        weights: Vec::new(),
        casts: HashMap::new(),
        used: HashSet::new(),
    }
}

/// FP16 variant: weights of low-precision nodes stored as FP16.
pub fn convert_fp16(b: &ModelBundle, plan: &PrecisionPlan) -> Result<ModelBundle, QuantError> {
    check_source(b, plan)?;
    rewriter(b, DType::Fp16, plan, None).run(Variant::Fp16)
}

/// INT8 variant: per-output-channel weights, per-tensor activations from
/// the profile, INT32 biases for kernel → AddV2(const) pairs.
pub fn quantize_int8(
    b: &ModelBundle,
    profile: &CalibrationProfile,
    plan: &PrecisionPlan,
) -> Result<ModelBundle, QuantError> {
    check_source(b, plan)?;
    let mut rw = rewriter(b, DType::Int8, plan, Some(profile));
    let g = b.graph();
    let consumers = g.consumers();
    for n in &g.nodes {
        if kernel_axis(n.op).is_none() || g.outputs.contains(&n.id) {
            continue;
        }
        let Ok(kernel) = rw.src_tensor(&n.inputs[1]) else { continue };
        let co = match n.op {
            OpKind::DepthwiseConv2D => kernel.shape()[2] * kernel.shape()[3],
            _ => kernel.shape()[kernel.rank() - 1],
        };
        let Some([add]) = consumers.get(n.id.as_str()).map(Vec::as_slice) else { continue };
        let add = g.node(add).expect("consumer exists");
        let Some(bias) = add.inputs.iter().find(|i| **i != n.id) else { continue };
        let bias_ok = g.node(bias).is_some_and(|c| c.op == OpKind::Const)
            && rw
                .src_tensor(bias)
                .is_ok_and(|t| t.rank() <= 1 && (t.len() == 1 || t.len() == co));
        let low = |m: &Node| rw.precision(m) == DType::Int8;
        if add.op == OpKind::AddV2 && bias_ok && low(n) && low(add) {
            rw.acc.insert(n.id.as_str());
        }
    }
    rw.run(Variant::Int8)
}
