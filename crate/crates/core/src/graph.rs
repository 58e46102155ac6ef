//! Dataflow graph IR: nodes, validation, shape inference and op census.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::DType;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node `{node}`: unknown op `{op}`")]
    UnknownOp { node: String, op: String },
    #[error("dangling reference to `{missing}` from node `{node}`")]
    DanglingReference { node: String, missing: String },
    #[error("node `{node}` ({op}): expected {expected} inputs, got {actual}")]
    Arity {
        node: String,
        op: OpKind,
        expected: &'static str,
        actual: usize,
    },
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("cycle through node `{0}`")]
    Cycle(String),
    #[error("node `{node}`: missing attribute `{attr}`")]
    MissingAttr { node: String, attr: &'static str },
    #[error("node `{node}`: invalid attribute: {reason}")]
    InvalidAttr { node: String, reason: String },
    #[error("node `{node}`: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        node: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("Input node `{0}` has no input spec")]
    MissingInputSpec(String),
    #[error("Const node `{0}` has no resolvable weight")]
    MissingWeight(String),
}

/// The supported operator set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Input,
    Const,
    Conv2D,
    DepthwiseConv2D,
    MatMul,
    AddV2,
    Mul,
    Relu6,
    Mean,
    Pad,
    Cast,
    Identity,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Input,
        OpKind::Const,
        OpKind::Conv2D,
        OpKind::DepthwiseConv2D,
        OpKind::MatMul,
        OpKind::AddV2,
        OpKind::Mul,
        OpKind::Relu6,
        OpKind::Mean,
        OpKind::Pad,
        OpKind::Cast,
        OpKind::Identity,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            OpKind::Input => "Input",
            OpKind::Const => "Const",
            OpKind::Conv2D => "Conv2D",
            OpKind::DepthwiseConv2D => "DepthwiseConv2D",
            OpKind::MatMul => "MatMul",
            OpKind::AddV2 => "AddV2",
            OpKind::Mul => "Mul",
            OpKind::Relu6 => "Relu6",
            OpKind::Mean => "Mean",
            OpKind::Pad => "Pad",
            OpKind::Cast => "Cast",
            OpKind::Identity => "Identity",
        }
    }

    pub const fn arity(self) -> usize {
        match self {
            OpKind::Input | OpKind::Const => 0,
            OpKind::Relu6 | OpKind::Mean | OpKind::Pad | OpKind::Cast | OpKind::Identity => 1,
            OpKind::Conv2D | OpKind::DepthwiseConv2D | OpKind::MatMul | OpKind::AddV2 | OpKind::Mul => 2,
        }
    }

    const fn arity_text(self) -> &'static str {
        match self.arity() {
            0 => "0",
            1 => "1",
            _ => "2",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = ();

    /// Accepts canonical names plus the foreign aliases `Placeholder` and
    /// `DepthwiseConv2dNative`.
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Placeholder" => Ok(OpKind::Input),
            "DepthwiseConv2dNative" => Ok(OpKind::DepthwiseConv2D),
            _ => OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Padding {
    Same,
    Valid,
}

/// Op-specific attributes. Absent fields are omitted from the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strides: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    /// `[before, after]` per dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pads: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_dims: Option<bool>,
    /// Cast target precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<DType>,
    /// Scale of this node's INT8 output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f32>,
}

impl Attrs {
    pub fn is_empty(&self) -> bool {
        *self == Attrs::default()
    }

    pub fn conv(strides: [usize; 2], padding: Padding) -> Self {
        Attrs {
            strides: Some(strides),
            padding: Some(padding),
            ..Default::default()
        }
    }

    pub fn mean(axes: Vec<usize>, keep_dims: bool) -> Self {
        Attrs {
            axes: Some(axes),
            keep_dims: Some(keep_dims),
            ..Default::default()
        }
    }

    pub fn pad(pads: Vec<[usize; 2]>) -> Self {
        Attrs {
            pads: Some(pads),
            ..Default::default()
        }
    }

    pub fn cast(to: DType) -> Self {
        Attrs {
            to: Some(to),
            ..Default::default()
        }
    }

    pub fn strides_or_default(&self) -> [usize; 2] {
        self.strides.unwrap_or([1, 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Attrs::is_empty")]
    pub attrs: Attrs,
    /// Index into the bundle's weight table (Const only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<usize>,
}

impl Node {
    pub fn new(id: impl Into<String>, op: OpKind, inputs: Vec<String>, attrs: Attrs) -> Self {
        Node {
            id: id.into(),
            op,
            inputs,
            attrs,
            weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub id: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub inputs: Vec<InputSpec>,
    pub nodes: Vec<Node>,
    pub outputs: Vec<String>,
    pub output_dtype: DType,
}

impl Graph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    pub fn input_spec(&self, id: &str) -> Option<&InputSpec> {
        self.inputs.iter().find(|s| s.id == id)
    }

    /// Ids of nodes consuming each node's value, in node order.
    pub fn consumers(&self) -> HashMap<&str, Vec<&str>> {
        let mut map: HashMap<&str, Vec<&str>> = HashMap::new();
        for n in &self.nodes {
            for i in &n.inputs {
                map.entry(i.as_str()).or_default().push(n.id.as_str());
            }
        }
        map
    }

    /// Structural validation: unique ids, resolvable references, arities,
    /// required attributes and acyclicity. On success the nodes are put in
    /// a stable topological order and dead non-Input nodes are dropped.
    pub fn validate(mut self) -> Result<Graph, GraphError> {
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id.as_str()) {
                return Err(GraphError::DuplicateId(n.id.clone()));
            }
        }
        for n in &self.nodes {
            for i in &n.inputs {
                if !seen.contains(i.as_str()) {
                    return Err(GraphError::DanglingReference {
                        node: n.id.clone(),
                        missing: i.clone(),
                    });
                }
            }
            check_node(n)?;
            if n.op == OpKind::Input && self.input_spec(&n.id).is_none() {
                return Err(GraphError::MissingInputSpec(n.id.clone()));
            }
        }
        for o in &self.outputs {
            if !seen.contains(o.as_str()) {
                return Err(GraphError::DanglingReference {
                    node: "<outputs>".into(),
                    missing: o.clone(),
                });
            }
        }
        self.nodes = topo_sort(self.nodes)?;
        self.prune_dead();
        Ok(self)
    }

    /// Drops nodes that no output depends on. Input nodes are always kept.
    pub fn prune_dead(&mut self) {
        let index = self.index_of();
        let mut live = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = self
            .outputs
            .iter()
            .filter_map(|o| index.get(o.as_str()).copied())
            .collect();
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut live[i], true) {
                continue;
            }
            for inp in &self.nodes[i].inputs {
                if let Some(&j) = index.get(inp.as_str()) {
                    stack.push(j);
                }
            }
        }
        let mut keep = live.into_iter();
        self.nodes
            .retain(|n| keep.next().unwrap_or(false) || n.op == OpKind::Input);
    }

    pub fn census(&self) -> OpCensus {
        op_census(self)
    }
}

fn check_node(n: &Node) -> Result<(), GraphError> {
    if n.inputs.len() != n.op.arity() {
        return Err(GraphError::Arity {
            node: n.id.clone(),
            op: n.op,
            expected: n.op.arity_text(),
            actual: n.inputs.len(),
        });
    }
    let missing = |attr| GraphError::MissingAttr {
        node: n.id.clone(),
        attr,
    };
    let invalid = |reason: String| GraphError::InvalidAttr {
        node: n.id.clone(),
        reason,
    };
    match n.op {
        OpKind::Const if n.weight.is_none() => return Err(GraphError::MissingWeight(n.id.clone())),
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            if n.attrs.padding.is_none() {
                return Err(missing("padding"));
            }
            if n.attrs.strides_or_default().contains(&0) {
                return Err(invalid("strides must be positive".into()));
            }
        }
        OpKind::Mean if n.attrs.axes.is_none() => return Err(missing("axes")),
        OpKind::Pad if n.attrs.pads.is_none() => return Err(missing("pads")),
        OpKind::Cast if n.attrs.to.is_none() => return Err(missing("to")),
        _ => {}
    }
    if let Some(s) = n.attrs.scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(invalid(format!("scale must be positive, got {s}")));
        }
    }
    Ok(())
}

fn topo_sort(nodes: Vec<Node>) -> Result<Vec<Node>, GraphError> {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut pending: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            users[index[inp.as_str()]].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &u in &users[i] {
            pending[u] -= 1;
            if pending[u] == 0 {
                ready.insert(u);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len()).find(|&i| pending[i] > 0).unwrap_or(0);
        return Err(GraphError::Cycle(nodes[stuck].id.clone()));
    }
    drop(index);
    let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

/// Per-kind node counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCensus {
    pub counts: BTreeMap<OpKind, usize>,
}

impl OpCensus {
    pub fn get(&self, op: OpKind) -> usize {
        self.counts.get(&op).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

impl fmt::Display for OpCensus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (op, n) in &self.counts {
            writeln!(f, "{:<16} {:>5}", op.name(), n)?;
        }
        write!(f, "{:<16} {:>5}", "total", self.total())
    }
}

pub fn op_census(g: &Graph) -> OpCensus {
    let mut counts = BTreeMap::new();
    for n in &g.nodes {
        *counts.entry(n.op).or_insert(0) += 1;
    }
    OpCensus { counts }
}

/// Output spatial size of a strided window. SAME yields `ceil(in / stride)`.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => (input >= kernel).then(|| (input - kernel) / stride + 1),
    }
}

/// Leading padding for SAME convolution (the extra row/column goes after).
pub fn same_pad_before(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    ((out - 1) * stride + kernel).saturating_sub(input) / 2
}

/// Result shape of an elementwise binary op under trailing-axis broadcasting:
/// equal shapes, a single-element operand, or a rank-1 operand matching the
/// other's last dimension.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let single = |s: &[usize]| s.len() <= 1 && s.iter().product::<usize>() == 1;
    let vector_of = |v: &[usize], full: &[usize]| v.len() == 1 && full.last() == Some(&v[0]);
    if a == b || single(b) || vector_of(b, a) {
        Some(a.to_vec())
    } else if single(a) || vector_of(a, b) {
        Some(b.to_vec())
    } else {
        None
    }
}

/// Shape of every node given the shapes of the Const weights.
pub fn infer_shapes(
    g: &Graph,
    const_shape: impl Fn(&Node) -> Option<Vec<usize>>,
) -> Result<BTreeMap<String, Vec<usize>>, GraphError> {
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for n in &g.nodes {
        let ins: Vec<&Vec<usize>> = n
            .inputs
            .iter()
            .map(|i| {
                shapes.get(i).ok_or_else(|| GraphError::DanglingReference {
                    node: n.id.clone(),
                    missing: i.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let shape = node_shape(g, n, &ins, &const_shape)?;
        shapes.insert(n.id.clone(), shape);
    }
    Ok(shapes)
}

fn node_shape(
    g: &Graph,
    n: &Node,
    ins: &[&Vec<usize>],
    const_shape: &impl Fn(&Node) -> Option<Vec<usize>>,
) -> Result<Vec<usize>, GraphError> {
    let mismatch = |lhs: &[usize], rhs: &[usize]| GraphError::ShapeMismatch {
        node: n.id.clone(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    Ok(match n.op {
        OpKind::Input => g
            .input_spec(&n.id)
            .ok_or_else(|| GraphError::MissingInputSpec(n.id.clone()))?
            .shape
            .clone(),
        OpKind::Const => const_shape(n).ok_or_else(|| GraphError::MissingWeight(n.id.clone()))?,
        OpKind::Conv2D | OpKind::DepthwiseConv2D => {
            let (x, k) = (ins[0], ins[1]);
            if x.len() != 4 || k.len() != 4 || x[3] != k[2] {
                return Err(mismatch(x, k));
            }
            let [sh, sw] = n.attrs.strides_or_default();
            let pad = n.attrs.padding.unwrap_or(Padding::Valid);
            let oh = conv_out_dim(x[1], k[0], sh, pad).ok_or_else(|| mismatch(x, k))?;
            let ow = conv_out_dim(x[2], k[1], sw, pad).ok_or_else(|| mismatch(x, k))?;
            let oc = if n.op == OpKind::Conv2D { k[3] } else { k[2] * k[3] };
            vec![x[0], oh, ow, oc]
        }
        OpKind::MatMul => {
            let (a, b) = (ins[0], ins[1]);
            if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
                return Err(mismatch(a, b));
            }
            vec![a[0], b[1]]
        }
        OpKind::AddV2 | OpKind::Mul => {
            broadcast_shape(ins[0], ins[1]).ok_or_else(|| mismatch(ins[0], ins[1]))?
        }
        OpKind::Relu6 | OpKind::Cast | OpKind::Identity => ins[0].clone(),
        OpKind::Mean => {
            let x = ins[0];
            let axes = n.attrs.axes.as_deref().unwrap_or(&[]);
            if axes.iter().any(|&a| a >= x.len()) {
                return Err(GraphError::InvalidAttr {
                    node: n.id.clone(),
                    reason: format!("mean axes {axes:?} out of range for {x:?}"),
                });
            }
            let keep = n.attrs.keep_dims.unwrap_or(false);
            x.iter()
                .enumerate()
                .filter_map(|(i, &d)| match (axes.contains(&i), keep) {
                    (false, _) => Some(d),
                    (true, true) => Some(1),
                    (true, false) => None,
                })
                .collect()
        }
        OpKind::Pad => {
            let x = ins[0];
            let pads = n.attrs.pads.as_deref().unwrap_or(&[]);
            if pads.len() != x.len() {
                return Err(GraphError::InvalidAttr {
                    node: n.id.clone(),
                    reason: format!("{} pad pairs for rank {}", pads.len(), x.len()),
                });
            }
            x.iter().zip(pads).map(|(d, [b, a])| d + b + a).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, shape: Vec<usize>) -> InputSpec {
        InputSpec {
            id: id.into(),
            shape,
            dtype: DType::Fp32,
        }
    }

    fn graph(nodes: Vec<Node>, outputs: &[&str], inputs: Vec<InputSpec>) -> Graph {
        Graph {
            inputs,
            nodes,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            output_dtype: DType::Fp32,
        }
    }

    fn konst(id: &str, w: usize) -> Node {
        Node {
            weight: Some(w),
            ..Node::new(id, OpKind::Const, vec![], Attrs::default())
        }
    }

    #[test]
    fn parses_foreign_aliases() {
        assert_eq!("Placeholder".parse::<OpKind>(), Ok(OpKind::Input));
        assert_eq!(
            "DepthwiseConv2dNative".parse::<OpKind>(),
            Ok(OpKind::DepthwiseConv2D)
        );
        assert!("NoOp".parse::<OpKind>().is_err());
        assert!("Softmax".parse::<OpKind>().is_err());
    }

    #[test]
    fn validate_sorts_topologically() {
        let g = graph(
            vec![
                Node::new("b", OpKind::Identity, vec!["a".into()], Attrs::default()),
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                Node::new("a", OpKind::Relu6, vec!["x".into()], Attrs::default()),
            ],
            &["b"],
            vec![spec("x", vec![1, 2])],
        )
        .validate()
        .unwrap();
        let ids: Vec<_> = g.nodes.iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["x", "a", "b"]);
    }

    #[test]
    fn validate_reports_dangling_and_arity() {
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                Node::new("y", OpKind::AddV2, vec!["x".into(), "w7".into()], Attrs::default()),
            ],
            &["y"],
            vec![spec("x", vec![1])],
        );
        assert_eq!(
            g.validate().unwrap_err(),
            GraphError::DanglingReference {
                node: "y".into(),
                missing: "w7".into()
            }
        );
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                Node::new("y", OpKind::Relu6, vec!["x".into(), "x".into()], Attrs::default()),
            ],
            &["y"],
            vec![spec("x", vec![1])],
        );
        assert!(matches!(g.validate(), Err(GraphError::Arity { node, .. }) if node == "y"));
    }

    #[test]
    fn validate_detects_cycles() {
        let g = graph(
            vec![
                Node::new("a", OpKind::Identity, vec!["b".into()], Attrs::default()),
                Node::new("b", OpKind::Identity, vec!["a".into()], Attrs::default()),
            ],
            &["a"],
            vec![],
        );
        assert!(matches!(g.validate(), Err(GraphError::Cycle(_))));
    }

    #[test]
    fn validate_prunes_dead_nodes_but_keeps_inputs() {
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                Node::new("dead", OpKind::Relu6, vec!["x".into()], Attrs::default()),
            ],
            &[],
            vec![spec("x", vec![1])],
        )
        .validate()
        .unwrap();
        assert_eq!(g.nodes.len(), 1);
        let census = g.census();
        assert_eq!(census.get(OpKind::Input), 1);
        assert_eq!(census.total(), 1);
    }

    #[test]
    fn conv_same_shape() {
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                konst("w", 0),
                Node::new(
                    "c",
                    OpKind::Conv2D,
                    vec!["x".into(), "w".into()],
                    Attrs::conv([1, 1], Padding::Same),
                ),
            ],
            &["c"],
            vec![spec("x", vec![1, 8, 8, 3])],
        );
        let shapes = infer_shapes(&g, |_| Some(vec![3, 3, 3, 4])).unwrap();
        assert_eq!(shapes["c"], vec![1, 8, 8, 4]);
    }

    #[test]
    fn mean_and_broadcast_shapes() {
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                Node::new("m", OpKind::Mean, vec!["x".into()], Attrs::mean(vec![1, 2], false)),
                Node::new("k", OpKind::Mean, vec!["x".into()], Attrs::mean(vec![1, 2], true)),
            ],
            &["m", "k"],
            vec![spec("x", vec![1, 8, 8, 3])],
        );
        let shapes = infer_shapes(&g, |_| None).unwrap();
        assert_eq!(shapes["m"], vec![1, 3]);
        assert_eq!(shapes["k"], vec![1, 1, 1, 3]);

        assert_eq!(broadcast_shape(&[1, 8, 8, 4], &[4]), Some(vec![1, 8, 8, 4]));
        assert_eq!(broadcast_shape(&[4], &[1, 8, 8, 4]), Some(vec![1, 8, 8, 4]));
        assert_eq!(broadcast_shape(&[1, 8, 8, 4], &[]), Some(vec![1, 8, 8, 4]));
        assert_eq!(broadcast_shape(&[1, 8, 8, 4], &[8]), None);
        assert_eq!(broadcast_shape(&[2, 4], &[1, 4]), None);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let g = graph(
            vec![
                Node::new("x", OpKind::Input, vec![], Attrs::default()),
                konst("b", 0),
                Node::new("add", OpKind::AddV2, vec!["x".into(), "b".into()], Attrs::default()),
            ],
            &["add"],
            vec![spec("x", vec![1, 4, 4, 3])],
        );
        let err = infer_shapes(&g, |_| Some(vec![5])).unwrap_err();
        assert_eq!(
            err,
            GraphError::ShapeMismatch {
                node: "add".into(),
                lhs: vec![1, 4, 4, 3],
                rhs: vec![5]
            }
        );
    }

    #[test]
    fn valid_and_same_output_dims() {
        assert_eq!(conv_out_dim(8, 3, 1, Padding::Same), Some(8));
        assert_eq!(conv_out_dim(7, 3, 2, Padding::Same), Some(4));
        assert_eq!(conv_out_dim(33, 3, 2, Padding::Valid), Some(16));
        assert_eq!(conv_out_dim(2, 3, 1, Padding::Valid), None);
        assert_eq!(same_pad_before(8, 3, 1), 1);
        assert_eq!(same_pad_before(8, 3, 2), 0);
    }
}
