//! On-device image classification: model bundles, a reference graph
//! executor, post-training quantization, dataset tooling, head training,
//! evaluation and benchmarking.

pub mod bench;
pub mod bundle;
pub mod data;
pub mod eval;
pub mod engine;
pub mod fixture;
pub mod graph;
pub mod quant;
pub mod tensor;
pub mod train;

pub use bundle::{load_bundle, save_bundle, size_of, BundleError, Metadata, ModelBundle, Variant, Weight};
pub use engine::{predict, run_forward, run_outputs, EngineError, Prediction, PreprocessSpec, ValueRange};
pub use graph::{Graph, Node, OpCensus, OpKind};
pub use tensor::{DType, QuantParams, Tensor, TensorError};
