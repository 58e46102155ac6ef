//! On-disk model bundle: a directory holding `manifest.json` (UTF-8 JSON)
//! and `weights.bin` (little-endian weight payload).
//!
//! Payload layout, per weight-table entry in order, with no padding:
//!
//! | type    | bytes                                                        |
//! |---------|--------------------------------------------------------------|
//! | `fp32`  | `n` × f32                                                    |
//! | `fp16`  | `n` × binary16 bit pattern (u16)                             |
//! | `int8`  | `n` × i8, then `k` × f32 scales (`k` = 1 or channel extent)  |
//! | `int32` | `n` × i32                                                    |
//!
//! The manifest records each entry's offset and length and the SHA-256
//! digest of the whole payload, which is verified on load. The format
//! version is `MAJOR.MINOR`; loaders reject unknown majors.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use half::f16;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::PreprocessSpec;
use crate::graph::{infer_shapes, Attrs, Graph, GraphError, InputSpec, Node, OpCensus, OpKind};
use crate::tensor::{numel, DType, QuantParams, Tensor, TensorData, TensorError};

pub const FORMAT_NAME: &str = "edgeclass-bundle";
pub const FORMAT_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("unsupported bundle version `{0}`")]
    UnsupportedVersion(String),
    #[error("checksum mismatch: manifest says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("node `{node}`: weight reference {index} does not resolve")]
    WeightOutOfRange { node: String, index: usize },
    #[error("weight entry {index}: {reason}")]
    BadWeight { index: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl BundleError {
    fn io(path: &Path, source: io::Error) -> Self {
        BundleError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Precision variant of a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fp32,
    Fp32Opt,
    Fp16,
    Int8,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Fp32, Variant::Fp32Opt, Variant::Fp16, Variant::Int8];

    /// Name used by the model registry; the unoptimized FP32 model is the "original".
    pub const fn id(self) -> &'static str {
        match self {
            Variant::Fp32 => "original",
            Variant::Fp32Opt => "fp32opt",
            Variant::Fp16 => "fp16",
            Variant::Int8 => "int8",
        }
    }

    pub const fn tag(self) -> &'static str {
        match self {
            Variant::Fp32 => "fp32",
            Variant::Fp32Opt => "fp32opt",
            Variant::Fp16 => "fp16",
            Variant::Int8 => "int8",
        }
    }

    /// Directory suffix appended to the source bundle's path.
    pub const fn suffix(self) -> &'static str {
        match self {
            Variant::Fp32 => "",
            Variant::Fp32Opt => "-fp32opt",
            Variant::Fp16 => "-fp16",
            Variant::Int8 => "-int8",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.id() == s || v.tag() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    pub variant: Variant,
    #[serde(default)]
    pub classes: Vec<String>,
    /// Class scored by a single-logit sigmoid head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class: Option<usize>,
    pub preprocess: PreprocessSpec,
    pub created: String,
    /// Pooled-feature node a classifier head attaches to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_node: Option<String>,
}

impl Metadata {
    pub fn new(name: impl Into<String>, variant: Variant, preprocess: PreprocessSpec) -> Self {
        Metadata {
            name: name.into(),
            variant,
            classes: Vec::new(),
            positive_class: None,
            preprocess,
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            feature_node: None,
        }
    }
}

/// A stored weight. 32-bit integers only appear as INT8-graph biases.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Tensor(Tensor),
    Int32 { shape: Vec<usize>, values: Vec<i32> },
}

impl Weight {
    pub fn shape(&self) -> &[usize] {
        match self {
            Weight::Tensor(t) => t.shape(),
            Weight::Int32 { shape, .. } => shape,
        }
    }

    pub fn as_tensor(&self) -> Option<&Tensor> {
        match self {
            Weight::Tensor(t) => Some(t),
            Weight::Int32 { .. } => None,
        }
    }

    pub fn element_count(&self) -> usize {
        numel(self.shape())
    }

    fn storage(&self) -> WeightType {
        match self {
            Weight::Tensor(t) => match t.dtype() {
                DType::Fp32 => WeightType::Fp32,
                DType::Fp16 => WeightType::Fp16,
                DType::Int8 => WeightType::Int8,
            },
            Weight::Int32 { .. } => WeightType::Int32,
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Weight::Tensor(t) => match t.data() {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F16(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
                TensorData::I8(v) => {
                    out.extend(v.iter().map(|&x| x as u8));
                    let q = t.quant().expect("INT8 weights carry params");
                    q.scales()
                        .iter()
                        .for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
                }
            },
            Weight::Int32 { values, .. } => {
                values.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum WeightType {
    Fp32,
    Fp16,
    Int8,
    Int32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QuantLayout {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis: Option<usize>,
    scales: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightEntry {
    #[serde(rename = "type")]
    storage: WeightType,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quant: Option<QuantLayout>,
}

#[derive(Debug, Serialize)]
struct ManifestOut<'a> {
    format: &'static str,
    version: &'static str,
    metadata: &'a Metadata,
    graph: &'a Graph,
    weights: Vec<WeightEntry>,
    payload_bytes: usize,
    checksum: String,
}

#[derive(Debug, Deserialize)]
struct ManifestIn {
    format: String,
    version: String,
    metadata: Metadata,
    graph: RawGraph,
    weights: Vec<WeightEntry>,
    payload_bytes: usize,
    checksum: String,
}

#[derive(Debug, Deserialize)]
struct RawGraph {
    inputs: Vec<InputSpec>,
    nodes: Vec<RawNode>,
    outputs: Vec<String>,
    output_dtype: DType,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    op: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    attrs: Attrs,
    #[serde(default)]
    weight: Option<usize>,
}

impl RawGraph {
    /// Maps op names, dropping `NoOp` nodes.
    fn resolve(self) -> Result<Graph, GraphError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for raw in self.nodes {
            if raw.op == "NoOp" {
                continue;
            }
            let op = raw.op.parse::<OpKind>().map_err(|_| GraphError::UnknownOp {
                node: raw.id.clone(),
                op: raw.op.clone(),
            })?;
            nodes.push(Node {
                id: raw.id,
                op,
                inputs: raw.inputs,
                attrs: raw.attrs,
                weight: raw.weight,
            });
        }
        Ok(Graph {
            inputs: self.inputs,
            nodes,
            outputs: self.outputs,
            output_dtype: self.output_dtype,
        })
    }
}

/// Container and weight-payload sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub container_bytes: usize,
    pub payload_bytes: usize,
}

/// A validated graph plus its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub metadata: Metadata,
    graph: Graph,
    weights: Vec<Weight>,
    checksum: [u8; 32],
}

impl ModelBundle {
    pub fn new(metadata: Metadata, graph: Graph, weights: Vec<Weight>) -> Result<Self, BundleError> {
        let graph = graph.validate()?;
        for n in &graph.nodes {
            if let Some(index) = n.weight {
                if index >= weights.len() {
                    return Err(BundleError::WeightOutOfRange {
                        node: n.id.clone(),
                        index,
                    });
                }
            }
        }
        infer_shapes(&graph, |n| n.weight.map(|w| weights[w].shape().to_vec()))?;
        let checksum = digest(&encode_weights(&weights).0);
        Ok(ModelBundle {
            metadata,
            graph,
            weights,
            checksum,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> &[Weight] {
        &self.weights
    }

    pub fn weight(&self, node: &Node) -> Option<&Weight> {
        node.weight.and_then(|i| self.weights.get(i))
    }

    pub fn variant(&self) -> Variant {
        self.metadata.variant
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.checksum
    }

    pub fn checksum_hex(&self) -> String {
        to_hex(&self.checksum)
    }

    pub fn census(&self) -> OpCensus {
        self.graph.census()
    }

    pub fn shapes(&self) -> Result<std::collections::BTreeMap<String, Vec<usize>>, GraphError> {
        infer_shapes(&self.graph, |n| self.weight(n).map(|w| w.shape().to_vec()))
    }

    pub fn into_parts(self) -> (Metadata, Graph, Vec<Weight>) {
        (self.metadata, self.graph, self.weights)
    }

    /// Encoded `(manifest, payload)` byte pair exactly as written to disk.
    pub fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let (blob, weights) = encode_weights(&self.weights);
        let doc = ManifestOut {
            format: FORMAT_NAME,
            version: FORMAT_VERSION,
            metadata: &self.metadata,
            graph: &self.graph,
            weights,
            payload_bytes: blob.len(),
            checksum: to_hex(&digest(&blob)),
        };
        let mut manifest = serde_json::to_vec_pretty(&doc).expect("manifest serializes");
        manifest.push(b'\n');
        (manifest, blob)
    }

    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self, BundleError> {
        let doc: ManifestIn =
            serde_json::from_slice(manifest).map_err(|e| BundleError::Manifest(e.to_string()))?;
        if doc.format != FORMAT_NAME {
            return Err(BundleError::Manifest(format!("unknown format `{}`", doc.format)));
        }
        let major = doc.version.split('.').next().unwrap_or("");
        if major != FORMAT_VERSION.split('.').next().unwrap() {
            return Err(BundleError::UnsupportedVersion(doc.version));
        }
        let actual = to_hex(&digest(blob));
        if !actual.eq_ignore_ascii_case(&doc.checksum) {
            return Err(BundleError::ChecksumMismatch {
                expected: doc.checksum,
                actual,
            });
        }
        if doc.payload_bytes != blob.len() {
            return Err(BundleError::Manifest(format!(
                "payload is {} bytes, manifest says {}",
                blob.len(),
                doc.payload_bytes
            )));
        }
        let weights = doc
            .weights
            .iter()
            .enumerate()
            .map(|(i, e)| decode_weight(i, e, blob))
            .collect::<Result<Vec<_>, _>>()?;
        ModelBundle::new(doc.metadata, doc.graph.resolve()?, weights)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), BundleError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| BundleError::io(dir, e))?;
        let (manifest, blob) = self.to_bytes();
        let wpath = dir.join(WEIGHTS_FILE);
        fs::write(&wpath, blob).map_err(|e| BundleError::io(&wpath, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest).map_err(|e| BundleError::io(&mpath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BundleError> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = fs::read(&mpath).map_err(|e| BundleError::io(&mpath, e))?;
        let wpath = dir.join(WEIGHTS_FILE);
        let blob = fs::read(&wpath).map_err(|e| BundleError::io(&wpath, e))?;
        Self::from_bytes(&manifest, &blob)
    }

    pub fn size(&self) -> SizeReport {
        let (manifest, blob) = self.to_bytes();
        SizeReport {
            container_bytes: manifest.len() + blob.len(),
            payload_bytes: blob.len(),
        }
    }
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle, BundleError> {
    ModelBundle::load(path)
}

pub fn save_bundle(b: &ModelBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    b.save(path)
}

/// Total container bytes and weight-payload bytes.
pub fn size_of(b: &ModelBundle) -> SizeReport {
    b.size()
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_weights(weights: &[Weight]) -> (Vec<u8>, Vec<WeightEntry>) {
    let mut blob = Vec::new();
    let entries = weights
        .iter()
        .map(|w| {
            let offset = blob.len();
            w.encode(&mut blob);
            let quant = match w {
                Weight::Tensor(t) => t.quant().map(|q| QuantLayout {
                    axis: q.axis(),
                    scales: q.scales().len(),
                }),
                Weight::Int32 { .. } => None,
            };
            WeightEntry {
                storage: w.storage(),
                shape: w.shape().to_vec(),
                offset,
                length: blob.len() - offset,
                quant,
            }
        })
        .collect();
    (blob, entries)
}

fn decode_weight(index: usize, e: &WeightEntry, blob: &[u8]) -> Result<Weight, BundleError> {
    let bad = |reason: String| BundleError::BadWeight { index, reason };
    let bytes = e
        .offset
        .checked_add(e.length)
        .and_then(|end| blob.get(e.offset..end))
        .ok_or_else(|| bad(format!("range {}+{} outside payload", e.offset, e.length)))?;
    let n = numel(&e.shape);
    let scale_count = e.quant.as_ref().map_or(0, |q| q.scales);
    let expected = match e.storage {
        WeightType::Fp32 | WeightType::Int32 => n * 4,
        WeightType::Fp16 => n * 2,
        WeightType::Int8 => n + scale_count * 4,
    };
    if bytes.len() != expected {
        return Err(bad(format!("length {} but {expected} expected", bytes.len())));
    }
    if (e.storage == WeightType::Int8) != e.quant.is_some() {
        return Err(bad("quantization layout present iff type is int8".into()));
    }
    let words = |b: &[u8]| -> Vec<[u8; 4]> { b.chunks_exact(4).map(|c| c.try_into().unwrap()).collect() };
    let shape = e.shape.clone();
    Ok(match e.storage {
        WeightType::Fp32 => Weight::Tensor(Tensor::from_f32(
            shape,
            words(bytes).into_iter().map(f32::from_le_bytes).collect(),
        )?),
        WeightType::Fp16 => Weight::Tensor(Tensor::from_f16(
            shape,
            bytes
                .chunks_exact(2)
                .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        )?),
        WeightType::Int8 => {
            let layout = e.quant.as_ref().unwrap();
            let scales: Vec<f32> = words(&bytes[n..]).into_iter().map(f32::from_le_bytes).collect();
            let q = match layout.axis {
                None if scales.len() == 1 => QuantParams::per_tensor(scales[0])?,
                None => return Err(bad("per-tensor layout with several scales".into())),
                Some(axis) => QuantParams::per_channel(axis, scales)?,
            };
            Weight::Tensor(Tensor::from_i8(
                shape,
                bytes[..n].iter().map(|&b| b as i8).collect(),
                q,
            )?)
        }
        WeightType::Int32 => Weight::Int32 {
            shape,
            values: words(bytes).into_iter().map(i32::from_le_bytes).collect(),
        },
    })
}

/// Incremental construction of a bundle's graph and weight table.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    inputs: Vec<InputSpec>,
    nodes: Vec<Node>,
    outputs: Vec<String>,
    weights: Vec<Weight>,
    ids: HashSet<String>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            inputs: Vec::new(),
            nodes: Vec::new(),
            outputs: Vec::new(),
            weights: Vec::new(),
            ids: HashSet::new(),
        }
    }

    fn push(&mut self, node: Node) -> String {
        assert!(self.ids.insert(node.id.clone()), "duplicate node id `{}`", node.id);
        let id = node.id.clone();
        self.nodes.push(node);
        id
    }

    pub fn input(&mut self, id: &str, shape: Vec<usize>) -> String {
        self.inputs.push(InputSpec {
            id: id.into(),
            shape,
            dtype: DType::Fp32,
        });
        self.push(Node::new(id, OpKind::Input, vec![], Attrs::default()))
    }

    pub fn constant(&mut self, id: &str, value: Tensor) -> String {
        self.weight(id, Weight::Tensor(value))
    }

    pub fn weight(&mut self, id: &str, value: Weight) -> String {
        self.weights.push(value);
        let mut node = Node::new(id, OpKind::Const, vec![], Attrs::default());
        node.weight = Some(self.weights.len() - 1);
        self.push(node)
    }

    pub fn op(&mut self, id: &str, op: OpKind, inputs: &[&str], attrs: Attrs) -> String {
        self.push(Node::new(
            id,
            op,
            inputs.iter().map(|s| s.to_string()).collect(),
            attrs,
        ))
    }

    pub fn output(&mut self, id: &str) {
        self.outputs.push(id.into());
    }

    pub fn finish(self) -> (Graph, Vec<Weight>) {
        (
            Graph {
                inputs: self.inputs,
                nodes: self.nodes,
                outputs: self.outputs,
                output_dtype: DType::Fp32,
            },
            self.weights,
        )
    }

    pub fn build(self, metadata: Metadata) -> Result<ModelBundle, BundleError> {
        let (graph, weights) = self.finish();
        ModelBundle::new(metadata, graph, weights)
    }
}
